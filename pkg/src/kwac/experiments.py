"""Experiment drivers: desk-scale sweeps over objective knobs and baselines.

These wrap training and evaluation into the runs behind the tradeoff-curve,
stability, and robustness analyses, at a scale that fits on one machine.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .baselines import BaselineConfig, sweep_baseline
from .corpus import CorpusConfig, CorpusSplit, make_split
from .decoder import DecoderFitConfig
from .deskcorpus import generate_desk_corpus
from .encoder import LearnedEncoder
from .evaluation import TradeoffPoint, measure_tradeoff_point
from .training import TrainingConfig, TrainResult, train


def make_desk_split(
    n: int = 5000,
    seed: int = 0,
    vocab_size: int = 2000,
    test_size: int = 500,
    max_sentence_length: int = 16,
) -> CorpusSplit:
    """Deterministic synthetic corpus split for desk experiments."""
    lines = generate_desk_corpus(n=n, seed=seed)
    config = CorpusConfig(
        max_sentence_length=max_sentence_length,
        vocab_size=vocab_size,
        seed=seed,
        test_size=test_size,
    )
    return make_split(lines, config)


@dataclass
class DeskRun:
    """One trained scheme plus its measured tradeoff point."""

    name: str
    knob: str
    knob_value: float
    result: TrainResult
    point: TradeoffPoint

    @property
    def encoder(self) -> LearnedEncoder:
        return LearnedEncoder(self.result.encoder, name=self.name)


def run_scheme(
    split: CorpusSplit, config: TrainingConfig, eval_seed: int = 0, mode: str = "sampled"
) -> DeskRun:
    result = train(split, config)
    if config.mode == "constrained":
        name, knob, value = f"constr({config.epsilon:g})", "epsilon", config.epsilon
    else:
        name, knob, value = f"linear({config.lambda_fixed:g})", "lambda", config.lambda_fixed
    encoder = LearnedEncoder(result.encoder, name=name)
    point = measure_tradeoff_point(
        name, knob, value, encoder, result.decoder, split, mode=mode, seed=eval_seed
    )
    return DeskRun(name=name, knob=knob, knob_value=value, result=result, point=point)


def sweep_constrained(
    split: CorpusSplit, epsilons, base: TrainingConfig, eval_seed: int = 0
) -> list[DeskRun]:
    return [
        run_scheme(split, replace(base, mode="constrained", epsilon=eps), eval_seed)
        for eps in epsilons
    ]


def sweep_linear(
    split: CorpusSplit, lambdas, base: TrainingConfig, eval_seed: int = 0
) -> list[DeskRun]:
    return [
        run_scheme(split, replace(base, mode="linear", lambda_fixed=lam), eval_seed)
        for lam in lambdas
    ]


def sweep_unif(
    split: CorpusSplit, deltas, fit: DecoderFitConfig, eval_seed: int = 0
) -> list[TradeoffPoint]:
    configs = [BaselineConfig(kind="unif", delta=d) for d in deltas]
    return sweep_baseline(split, configs, fit_config=fit, eval_seed=eval_seed)


# Tuned desk-scale grids: the epsilon grid spans high-to-low retention; the
# lambda grid brackets the region where small weight changes swing retention
# sharply; the delta grid gives evenly spaced reference retentions.
DESK_EPSILONS = (0.2, 0.4, 0.6, 3.0)
DESK_LAMBDAS = (0.5, 4.2, 4.4, 6.0)
DESK_DELTAS = (0.3, 0.5, 0.7, 0.9)


def desk_training_config(epochs: int = 300, **overrides) -> TrainingConfig:
    """Training recipe that keeps the dual dynamics stable at 5K-sentence scale.

    Two deviations from the module defaults, both needed because a small
    corpus stretches the early weak-decoder transient over tens of epochs:
    a decoder-only warm-up, and a slower encoder learning rate so the keep
    probabilities cannot saturate (killing Bernoulli exploration for good)
    before the decoder is competent and the multiplier has decayed.
    """
    base = dict(
        batch_size=128,
        emb_dim=64,
        hidden=64,
        seed=0,
        epochs=epochs,
        warmup_epochs=20,
        lr_alpha=3e-4,
    )
    base.update(overrides)
    return TrainingConfig(**base)


def desk_fit_config(epochs: int = 40) -> DecoderFitConfig:
    """Decoder-only fit recipe for the rule-based reference encoders."""
    return DecoderFitConfig(epochs=epochs, batch_size=128, emb_dim=64, hidden=64, seed=0)


@dataclass
class DeskSuite:
    """Everything the desk-scale trend analyses consume."""

    split: CorpusSplit
    constrained: list[DeskRun]
    linear: list[DeskRun]
    unif_points: list[TradeoffPoint]
    unif_encoders: list
    unif_decoders: list


def run_desk_suite(
    split: CorpusSplit | None = None,
    epsilons=DESK_EPSILONS,
    lambdas=DESK_LAMBDAS,
    deltas=DESK_DELTAS,
    constrained_epochs: int = 250,
    linear_epochs: int = 120,
    fit_epochs: int = 40,
    eval_seed: int = 0,
) -> DeskSuite:
    split = split or make_desk_split()
    constrained = sweep_constrained(
        split, epsilons, desk_training_config(epochs=constrained_epochs), eval_seed
    )
    linear = sweep_linear(
        split, lambdas, desk_training_config(epochs=linear_epochs), eval_seed
    )
    encoders, decoders, unif_points = unif_runs(
        split, deltas, desk_fit_config(fit_epochs), eval_seed
    )
    return DeskSuite(
        split=split,
        constrained=constrained,
        linear=linear,
        unif_points=unif_points,
        unif_encoders=encoders,
        unif_decoders=decoders,
    )


def unif_runs(
    split: CorpusSplit, deltas, fit: DecoderFitConfig, eval_seed: int = 0
):
    """Train matched decoders for uniform encoders; returns (encoders, decoders, points)."""
    from .baselines import UnifEncoder
    from .decoder import KeywordDecoder, fit_decoder

    encoders, decoders, points = [], [], []
    for delta in deltas:
        encoder = UnifEncoder(delta)
        torch.manual_seed(fit.seed)
        decoder = KeywordDecoder(len(split.vocab), fit.emb_dim, fit.hidden)
        fit_decoder(decoder, encoder, split, fit)
        point = measure_tradeoff_point(
            encoder.name, "delta", delta, encoder, decoder, split, seed=eval_seed
        )
        encoders.append((encoder.name, encoder))
        decoders.append((encoder.name, decoder))
        points.append(point)
    return encoders, decoders, points
