"""Joint optimization of the encoder/decoder pair.

The decoder is updated by backpropagation through its reconstruction
likelihood; the encoder through a score-function (REINFORCE) estimate with
a single mask sample per sentence and a moving-average reward baseline; in
constrained mode the multiplier follows projected gradient ascent on the
batch-mean reconstruction loss.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .corpus import CorpusSplit, Sentence, Vocabulary
from .decoder import KeywordDecoder, TrainingDivergence, sequence_log_probs
from .encoder import (
    KeywordEncoder,
    KeywordSequence,
    extract_keywords,
    mask_log_prob_t,
)

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    mode: str = "constrained"           # "linear" or "constrained"
    lambda_fixed: float = 1.0           # linear-mode weight
    epsilon: float = 0.6                # constrained-mode loss bound, nats/sentence
    lr_alpha: float = 1e-3
    lr_beta: float = 1e-3
    lr_lambda: float = 1e-2
    lambda_init: float = 5.0
    batch_size: int = 128
    epochs: int = 20
    baseline_decay: float = 0.95
    warmup_epochs: int = 0              # decoder-only epochs before joint updates
    initial_keep_bias: float = 0.0      # encoder output-bias init (0 => p ~= 0.5)
    seed: int = 0
    emb_dim: int = 300
    hidden: int = 300
    collapse_low: float = 0.01
    collapse_high: float = 0.99

    def __post_init__(self):
        if self.mode not in ("linear", "constrained"):
            raise ValueError(f"unknown objective mode: {self.mode}")
        if self.mode == "constrained" and self.epsilon <= 0:
            raise ValueError("epsilon must be > 0 in constrained mode")
        if min(self.lr_alpha, self.lr_beta, self.lr_lambda) <= 0:
            raise ValueError("learning rates must be > 0")
        if not (0.0 < self.baseline_decay < 1.0):
            raise ValueError("baseline decay must lie in (0, 1)")


@dataclass
class DualState:
    lam: float
    baseline: float | None = None       # set from the first batch's mean reward

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def per_example_reward(
    n_keywords: int, decoder_log_prob: float, lam: float, epsilon: float
) -> float:
    """G(x, z): keyword count plus lam * (reconstruction loss - epsilon)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return n_keywords + lam * ((-decoder_log_prob) - epsilon)


def dual_update(dual: DualState, batch_mean_loss: float, epsilon: float, lr: float) -> DualState:
    """Projected gradient ascent on the multiplier: stays non-negative."""
    return DualState(
        lam=max(0.0, dual.lam + lr * (batch_mean_loss - epsilon)),
        baseline=dual.baseline,
    )


def pad_batch(batch: list[Sentence], device="cpu"):
    """Pad sentence ids into (B, T) long tensor plus lengths."""
    T = max(len(s) for s in batch)
    ids = torch.full((len(batch), T), Vocabulary.pad_id, dtype=torch.long, device=device)
    lengths = torch.zeros(len(batch), dtype=torch.long, device=device)
    for b, s in enumerate(batch):
        ids[b, : len(s)] = torch.tensor(s.ids, device=device)
        lengths[b] = len(s)
    return ids, lengths


def score_function_surrogate(
    encoder: KeywordEncoder,
    ids: torch.Tensor,
    lengths: torch.Tensor,
    masks: torch.Tensor,
    centered_rewards: torch.Tensor,
) -> torch.Tensor:
    """Surrogate whose gradient is the REINFORCE estimate for the encoder.

    mean over the batch of log q(z|x) * (G - b); rewards are treated as
    constants, so autograd of this scalar yields the score-function gradient.
    """
    probs = encoder(ids)
    logq = mask_log_prob_t(probs, masks.to(probs.dtype), lengths)
    return (logq * centered_rewards.to(probs.dtype)).mean()


def encoder_gradient_step(
    encoder: KeywordEncoder,
    decoder: KeywordDecoder,
    batch: list[Sentence],
    vocab: Vocabulary,
    dual: DualState,
    config: TrainingConfig,
    rng: np.random.Generator,
):
    """Sample one mask per sentence and accumulate the REINFORCE gradient.

    Leaves the gradient estimate in the encoder's .grad fields, updates the
    reward baseline, and returns per-batch statistics.
    """
    device = next(encoder.parameters()).device
    ids, lengths = pad_batch(batch, device)
    with torch.no_grad():
        probs = encoder(ids)
    p = probs.cpu().numpy()
    valid = np.arange(p.shape[1])[None, :] < lengths.cpu().numpy()[:, None]
    masks_np = ((rng.random(p.shape) < p) & valid).astype(np.int64)
    keywords = [extract_keywords(s, masks_np[b, : len(s)]) for b, s in enumerate(batch)]
    with torch.no_grad():
        logp = sequence_log_probs(decoder, keywords, batch, vocab)
    losses = (-logp).cpu().numpy().astype(np.float64)
    lam = dual.lam if config.mode == "constrained" else config.lambda_fixed
    eps = config.epsilon if config.mode == "constrained" else 0.0
    rewards = np.array(
        [per_example_reward(len(kw), -losses[i], lam, eps) for i, kw in enumerate(keywords)]
    )
    if not np.all(np.isfinite(rewards)):
        raise TrainingDivergence("non-finite reward in encoder gradient step")
    b = dual.baseline if dual.baseline is not None else float(rewards.mean())
    masks_t = torch.tensor(masks_np, device=device)
    centered = torch.tensor(rewards - b, device=device)
    surrogate = score_function_surrogate(encoder, ids, lengths, masks_t, centered)
    surrogate.backward()
    rho = config.baseline_decay
    dual.baseline = rho * b + (1.0 - rho) * float(rewards.mean())
    kept = masks_np[valid]
    return {
        "cost": float(masks_np.sum(axis=1).mean()),
        "loss": float(losses.mean()),
        "reward": float(rewards.mean()),
        "retention": float(kept.mean()) if kept.size else 0.0,
        "mean_prob": float(p[valid].mean()),
        "keywords": keywords,
        "losses": losses,
    }


@dataclass
class TrainResult:
    encoder: KeywordEncoder
    decoder: KeywordDecoder
    dual: DualState
    history: list[dict] = field(default_factory=list)
    config: TrainingConfig | None = None


def train(split: CorpusSplit, config: TrainingConfig) -> TrainResult:
    """Run minibatch epochs of joint (encoder, decoder, multiplier) updates."""
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    vocab = split.vocab
    encoder = KeywordEncoder(
        len(vocab), config.emb_dim, config.hidden, config.initial_keep_bias
    )
    decoder = KeywordDecoder(len(vocab), config.emb_dim, config.hidden)
    dual = DualState(lam=config.lambda_init if config.mode == "constrained" else config.lambda_fixed)
    opt_alpha = torch.optim.Adam(encoder.parameters(), lr=config.lr_alpha)
    opt_beta = torch.optim.Adam(decoder.parameters(), lr=config.lr_beta)
    data = list(split.train)
    history: list[dict] = []
    for _ in range(config.warmup_epochs):
        # Decoder-only warm-up: masks still come from the (frozen) encoder, but
        # neither the encoder nor the multiplier moves until the decoder can
        # reconstruct well enough for the dual dynamics to be informative.
        order = rng.permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            ids, lengths = pad_batch(batch)
            with torch.no_grad():
                probs = encoder(ids).cpu().numpy()
            valid = np.arange(probs.shape[1])[None, :] < lengths.cpu().numpy()[:, None]
            masks = ((rng.random(probs.shape) < probs) & valid).astype(np.int64)
            keywords = [extract_keywords(s, masks[b, : len(s)]) for b, s in enumerate(batch)]
            logp = sequence_log_probs(decoder, keywords, batch, vocab)
            dec_loss = -logp.mean()
            if not torch.isfinite(dec_loss):
                raise TrainingDivergence("non-finite decoder loss during warm-up")
            opt_beta.zero_grad()
            dec_loss.backward()
            opt_beta.step()
    for epoch in range(config.epochs):
        t0 = time.monotonic()
        order = rng.permutation(len(data))
        sums = {"cost": 0.0, "loss": 0.0, "retention": 0.0, "mean_prob": 0.0}
        n_batches = 0
        for start in range(0, len(data), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            opt_alpha.zero_grad()
            stats = encoder_gradient_step(encoder, decoder, batch, vocab, dual, config, rng)
            _check_finite(encoder, epoch)
            opt_alpha.step()

            logp = sequence_log_probs(decoder, stats["keywords"], batch, vocab)
            dec_loss = -logp.mean()
            if not torch.isfinite(dec_loss):
                raise TrainingDivergence(f"non-finite decoder loss at epoch {epoch}")
            opt_beta.zero_grad()
            dec_loss.backward()
            opt_beta.step()

            if config.mode == "constrained":
                dual = dual_update(dual, stats["loss"], config.epsilon, config.lr_lambda)
            for key in sums:
                sums[key] += stats[key]
            n_batches += 1
        mean_prob = sums["mean_prob"] / n_batches
        record = {
            "epoch": epoch,
            "cost": sums["cost"] / n_batches,
            "loss": sums["loss"] / n_batches,
            "lambda": dual.lam,
            "retention": sums["retention"] / n_batches,
            "wall_time": time.monotonic() - t0,
            "collapsed": bool(
                mean_prob < config.collapse_low or mean_prob > config.collapse_high
            ),
        }
        if record["collapsed"]:
            log.warning(
                "degenerate keep-probability collapse at epoch %d (mean prob %.4f)",
                epoch, mean_prob,
            )
        history.append(record)
    return TrainResult(encoder=encoder, decoder=decoder, dual=dual, history=history, config=config)


def _check_finite(model, epoch):
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
            raise TrainingDivergence(f"non-finite gradient in {name} at epoch {epoch}")


def write_history(history: list[dict], path):
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
