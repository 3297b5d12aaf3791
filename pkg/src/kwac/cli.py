"""Command-line pipeline: corpus prep, training, sweeps, evaluation, serving."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .baselines import BaselineConfig, sweep_baseline
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import CorpusConfig, load_split, make_split
from .decoder import DecoderFitConfig
from .deskcorpus import generate_desk_corpus
from .encoder import LearnedEncoder
from .evaluation import (
    exact_match_accuracy,
    points_to_csv,
    retention_rate,
    robustness_matrix,
    token_retention_stats,
)
from .experiments import run_scheme, sweep_constrained, sweep_linear, unif_runs
from .postag import RuleTagger
from .service import CompletionRequest, ModelBundle, analyze_sessions, complete
from .service import SessionStore
from .training import TrainingConfig, write_history


def _write_manifest(out_path: Path, command: str, config: dict, artifacts: list[str]):
    manifest = {
        "command": command,
        "config": config,
        "artifacts": artifacts,
    }
    path = out_path.with_suffix(out_path.suffix + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def _corpus_config(max_len, vocab_size, seed, test_size) -> CorpusConfig:
    return CorpusConfig(
        max_sentence_length=max_len, vocab_size=vocab_size, seed=seed, test_size=test_size
    )


def _get_split(corpus, synthesize, max_len, vocab_size, seed, test_size):
    config = _corpus_config(max_len, vocab_size, seed, test_size)
    if synthesize:
        return make_split(generate_desk_corpus(n=synthesize, seed=seed), config)
    if not corpus:
        raise click.UsageError("provide --corpus FILE or --synthesize N")
    return load_split(corpus, config)


corpus_options = [
    click.option("--corpus", type=click.Path(), default=None, help="one sentence per line"),
    click.option("--synthesize", type=int, default=0, help="generate N synthetic sentences"),
    click.option("--max-len", type=int, default=16, show_default=True),
    click.option("--vocab-size", type=int, default=2000, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--test-size", type=int, default=500, show_default=True),
]


def with_corpus_options(fn):
    for opt in reversed(corpus_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Keyword-based autocomplete: train, evaluate, and serve schemes."""


@main.command("prepare-corpus")
@with_corpus_options
@click.option("--out", type=click.Path(), required=True, help="output directory")
def prepare_corpus(corpus, synthesize, max_len, vocab_size, seed, test_size, out):
    """Tokenize, filter, split, and index a corpus; write the artifacts."""
    split = _get_split(corpus, synthesize, max_len, vocab_size, seed, test_size)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train.txt").write_text(
        "".join(s.surface + "\n" for s in split.train), encoding="utf-8"
    )
    (out_dir / "test.txt").write_text(
        "".join(s.surface + "\n" for s in split.test), encoding="utf-8"
    )
    split.vocab.save(out_dir / "vocab.tsv")
    _write_manifest(
        out_dir / "corpus",
        "prepare-corpus",
        {
            "corpus": corpus, "synthesize": synthesize, "max_len": max_len,
            "vocab_size": vocab_size, "seed": seed, "test_size": test_size,
            "fingerprint": split.fingerprint, "vocab_fingerprint": split.vocab.fingerprint,
            "n_train": len(split.train), "n_test": len(split.test),
        },
        ["train.txt", "test.txt", "vocab.tsv"],
    )
    click.echo(
        f"prepared corpus: {len(split.train)} train / {len(split.test)} test, "
        f"vocab {len(split.vocab)}, fingerprint {split.fingerprint}"
    )


@main.command("train")
@with_corpus_options
@click.option("--objective", type=click.Choice(["constrained", "linear"]), default="constrained",
              show_default=True)
@click.option("--epsilon", type=float, default=0.6, show_default=True)
@click.option("--lam", "--lambda", "lam", type=float, default=1.0, show_default=True,
              help="fixed weight for the linear objective")
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--emb-dim", type=int, default=64, show_default=True)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="checkpoint path")
def train_cmd(corpus, synthesize, max_len, vocab_size, seed, test_size, objective,
              epsilon, lam, epochs, batch_size, emb_dim, hidden, out):
    """Jointly train an encoder/decoder scheme and write a checkpoint."""
    split = _get_split(corpus, synthesize, max_len, vocab_size, seed, test_size)
    config = TrainingConfig(
        mode=objective, epsilon=epsilon, lambda_fixed=lam, epochs=epochs,
        batch_size=batch_size, emb_dim=emb_dim, hidden=hidden, seed=seed,
    )
    run = run_scheme(split, config)
    out_path = Path(out)
    history_path = out_path.with_suffix(".history.jsonl")
    write_history(run.result.history, history_path)
    ckpt = Checkpoint.from_models(
        run.result.encoder, run.result.decoder, split.vocab,
        hyperparams={"emb_dim": emb_dim, "hidden": hidden, "mode": objective,
                     "epsilon": epsilon, "lambda_fixed": lam},
        dual={"lambda": run.result.dual.lam, "baseline": run.result.dual.baseline},
        fingerprint=split.vocab.fingerprint,
        history_path=str(history_path),
    )
    save_checkpoint(out_path, ckpt)
    _write_manifest(
        out_path, "train",
        {"objective": objective, "epsilon": epsilon, "lambda": lam, "epochs": epochs,
         "seed": seed, "corpus_fingerprint": split.fingerprint,
         "vocab_fingerprint": split.vocab.fingerprint,
         "retention": run.point.retention, "exact_match": run.point.exact_match},
        [str(out_path), str(history_path)],
    )
    click.echo(
        f"trained {run.name}: retention {run.point.retention:.3f}, "
        f"exact match {run.point.exact_match:.3f} -> {out_path}"
    )


@main.command("sweep")
@with_corpus_options
@click.option("--objective", type=click.Choice(["constrained", "linear", "unif", "stopword"]),
              required=True)
@click.option("--epsilons", default="", help="comma-separated epsilon grid")
@click.option("--lambdas", default="", help="comma-separated lambda grid")
@click.option("--deltas", default="", help="comma-separated delta grid")
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--emb-dim", type=int, default=64, show_default=True)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="tradeoff CSV path")
def sweep_cmd(corpus, synthesize, max_len, vocab_size, seed, test_size, objective,
              epsilons, lambdas, deltas, epochs, emb_dim, hidden, out):
    """Sweep an objective knob, training one scheme per grid value."""
    split = _get_split(corpus, synthesize, max_len, vocab_size, seed, test_size)
    base = TrainingConfig(epochs=epochs, emb_dim=emb_dim, hidden=hidden, seed=seed)
    fit = DecoderFitConfig(epochs=epochs, emb_dim=emb_dim, hidden=hidden, seed=seed)

    def grid(text):
        return [float(v) for v in text.split(",") if v.strip()]

    if objective == "constrained":
        points = [r.point for r in sweep_constrained(split, grid(epsilons), base)]
    elif objective == "linear":
        points = [r.point for r in sweep_linear(split, grid(lambdas), base)]
    else:
        configs = [BaselineConfig(kind=objective, delta=d) for d in grid(deltas)]
        points = sweep_baseline(split, configs, fit_config=fit)
    out_path = Path(out)
    out_path.write_text(points_to_csv(points), encoding="utf-8")
    _write_manifest(
        out_path, "sweep",
        {"objective": objective, "epsilons": epsilons, "lambdas": lambdas, "deltas": deltas,
         "epochs": epochs, "seed": seed, "corpus_fingerprint": split.fingerprint},
        [str(out_path)],
    )
    click.echo(points_to_csv(points))


@main.command("evaluate")
@with_corpus_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
def evaluate_cmd(corpus, synthesize, max_len, vocab_size, seed, test_size, checkpoint_path):
    """Report retention and exact match of a checkpoint, both encoding modes."""
    split = _get_split(corpus, synthesize, max_len, vocab_size, seed, test_size)
    ckpt = load_checkpoint(checkpoint_path, expect_fingerprint=split.vocab.fingerprint)
    enc_model, dec_model = ckpt.build_models()
    encoder = LearnedEncoder(enc_model)
    for mode in ("sampled", "thresholded"):
        r = retention_rate(encoder, split.test, mode, seed)
        a = exact_match_accuracy(encoder, dec_model, split.test, split.vocab, mode, seed)
        click.echo(f"{mode}: retention {r:.4f}, exact match {a:.4f}")


@main.command("robustness")
@with_corpus_options
@click.option("--deltas", default="0.2,0.5,0.8", show_default=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="matrix CSV path")
def robustness_cmd(corpus, synthesize, max_len, vocab_size, seed, test_size, deltas,
                   epochs, out):
    """Cross-evaluate uniform-baseline decoders against mismatched encoders."""
    split = _get_split(corpus, synthesize, max_len, vocab_size, seed, test_size)
    grid = [float(v) for v in deltas.split(",") if v.strip()]
    fit = DecoderFitConfig(epochs=epochs, seed=seed)
    encoders, decoders, _ = unif_runs(split, grid, fit)
    matrix = robustness_matrix(encoders, decoders, split.test, split.vocab, seed=seed)
    lines = ["encoder,retention," + ",".join(matrix.decoder_names)]
    for i, name in enumerate(matrix.encoder_names):
        row = ",".join(f"{matrix.accuracy[i, j]:.6f}" for j in range(len(matrix.decoder_names)))
        lines.append(f"{name},{matrix.retention[i]:.6f},{row}")
    out_path = Path(out)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out_path, "robustness",
                    {"deltas": deltas, "epochs": epochs, "seed": seed,
                     "corpus_fingerprint": split.fingerprint}, [str(out_path)])
    click.echo("\n".join(lines))


@main.command("analyze-tokens")
@with_corpus_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True, help="token stats JSONL path")
def analyze_tokens_cmd(corpus, synthesize, max_len, vocab_size, seed, test_size,
                       checkpoint_path, out):
    """Per-token keep rates and part-of-speech retention for a checkpoint."""
    split = _get_split(corpus, synthesize, max_len, vocab_size, seed, test_size)
    ckpt = load_checkpoint(checkpoint_path, expect_fingerprint=split.vocab.fingerprint)
    enc_model, _ = ckpt.build_models()
    stats = token_retention_stats(
        LearnedEncoder(enc_model), split.test, RuleTagger(), seed=seed,
        fingerprint=split.fingerprint,
    )
    out_path = Path(out)
    with open(out_path, "w", encoding="utf-8") as fh:
        for token in sorted(stats.freq):
            fh.write(json.dumps({
                "token": token, "freq": stats.freq[token],
                "keep_rate": stats.keep_rate[token], "pos": stats.tag[token],
            }, sort_keys=True) + "\n")
    _write_manifest(out_path, "analyze-tokens",
                    {"seed": seed, "corpus_fingerprint": split.fingerprint}, [str(out_path)])
    for tag, rate in sorted(stats.pos_rates().items(), key=lambda kv: kv[1]):
        click.echo(f"{tag:14s} kept {100 * rate:6.2f}%")


@main.command("serve")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(),
              default=lambda: os.environ.get("KWAC_MODEL"), help="defaults to $KWAC_MODEL")
@click.option("--port", type=int, default=lambda: int(os.environ.get("KWAC_PORT", "8000")),
              help="defaults to $KWAC_PORT or 8000")
@click.option("--store", type=click.Path(), default="sessions.jsonl", show_default=True)
def serve_cmd(checkpoint_path, port, store):
    """Serve the autocomplete HTTP API."""
    import uvicorn

    from .service import create_app

    if not checkpoint_path:
        raise click.UsageError("provide --checkpoint or set KWAC_MODEL")
    app = create_app(model_path=checkpoint_path, store_path=store)
    uvicorn.run(app, host="127.0.0.1", port=port)


@main.command("complete")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--keywords", required=True)
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--beam-width", type=int, default=None)
def complete_cmd(checkpoint_path, keywords, k, beam_width):
    """Print top-k completions for a keyword string."""
    bundle = ModelBundle.from_path(checkpoint_path)
    response = complete(bundle, CompletionRequest(keywords=keywords, k=k, beam_width=beam_width))
    for s in response.suggestions:
        click.echo(f"{s.score:9.4f}  {s.sentence}")


@main.command("analyze-sessions")
@click.option("--store", type=click.Path(exists=True), required=True)
def analyze_sessions_cmd(store):
    """Apply the study filtering rules and summarize a session store."""
    summary = analyze_sessions(SessionStore(store))
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    sys.exit(main())
