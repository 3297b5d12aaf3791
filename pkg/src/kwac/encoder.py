"""The user-side model: per-token keep probabilities and Bernoulli masks.

An embedding + unidirectional LSTM + linear head assigns every token of a
sentence a keep probability; a sampled binary mask selects the keyword
subsequence that gets sent to the decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .corpus import Sentence, Vocabulary

LOGPROB_CLAMP = 1e-6


def init_uniform_(module: nn.Module, bound: float = 0.1):
    """Initialize every parameter elementwise uniform in [-bound, bound]."""
    with torch.no_grad():
        for p in module.parameters():
            p.uniform_(-bound, bound)


@dataclass(frozen=True)
class KeywordSequence:
    """The kept-token subsequence of a sentence, in original order."""

    tokens: tuple[str, ...]
    ids: tuple[int, ...] | None
    mask: tuple[int, ...]

    def __len__(self):
        return len(self.tokens)


class KeywordEncoder(nn.Module):
    """q(z|x): embedding -> uni-LSTM -> linear -> sigmoid keep probability."""

    def __init__(
        self,
        vocab_size: int,
        emb_dim: int = 300,
        hidden: int = 300,
        initial_keep_bias: float = 0.0,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.embedding = nn.Embedding(vocab_size, emb_dim)
        self.lstm = nn.LSTM(emb_dim, hidden, batch_first=True)
        self.proj = nn.Linear(hidden, 1)
        init_uniform_(self)
        if initial_keep_bias:
            # Start in a keep-most (or keep-few) regime instead of p ~= 0.5.
            with torch.no_grad():
                self.proj.bias.fill_(initial_keep_bias)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """Keep probabilities for a padded id batch (B, T) -> (B, T)."""
        if ids.max().item() >= self.vocab_size:
            raise IndexError(f"token id {ids.max().item()} out of embedding range")
        emb = self.embedding(ids)
        states, _ = self.lstm(emb)
        return torch.sigmoid(self.proj(states)).squeeze(-1)


def keep_probabilities(model: KeywordEncoder, sentence: Sentence) -> np.ndarray:
    """Per-token keep probabilities for one sentence (no grad)."""
    if sentence.ids is None:
        raise ValueError("sentence has no vocabulary ids")
    with torch.no_grad():
        ids = torch.tensor([sentence.ids], dtype=torch.long)
        probs = model(ids)[0]
    return probs.numpy().astype(np.float64)


def sample_mask(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw each mask bit independently Bernoulli(p_i)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size and (probs.min() < 0 or probs.max() > 1):
        raise ValueError("probabilities outside [0, 1]")
    return (rng.random(probs.shape) < probs).astype(np.int64)


def threshold_mask(probs: np.ndarray) -> np.ndarray:
    """Deterministic test-time mask: keep iff p_i >= 0.5."""
    return (np.asarray(probs, dtype=np.float64) >= 0.5).astype(np.int64)


def extract_keywords(sentence: Sentence, mask) -> KeywordSequence:
    """Select the kept-token subsequence (possibly empty)."""
    mask = tuple(int(m) for m in mask)
    if len(mask) != len(sentence):
        raise ValueError(f"mask length {len(mask)} != sentence length {len(sentence)}")
    kept = [i for i, m in enumerate(mask) if m]
    return KeywordSequence(
        tokens=tuple(sentence.tokens[i] for i in kept),
        ids=tuple(sentence.ids[i] for i in kept) if sentence.ids is not None else None,
        mask=mask,
    )


def mask_log_prob(probs, mask, clamp: float = LOGPROB_CLAMP) -> float:
    """log q(z|x) of a mask under factorized Bernoulli keep probabilities.

    Probabilities are clamped to [clamp, 1-clamp] so the score function
    stays finite at degenerate p.
    """
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if probs.shape != mask.shape:
        raise ValueError("probs/mask length mismatch")
    p = np.clip(probs, clamp, 1.0 - clamp)
    return float(np.sum(mask * np.log(p) + (1.0 - mask) * np.log1p(-p)))


def mask_log_prob_t(
    probs: torch.Tensor, mask: torch.Tensor, lengths: torch.Tensor, clamp: float = LOGPROB_CLAMP
) -> torch.Tensor:
    """Batched differentiable log q(z|x): (B, T) probs/mask -> (B,) sums.

    Positions at or beyond each sentence length contribute nothing.
    """
    p = probs.clamp(clamp, 1.0 - clamp)
    terms = mask * torch.log(p) + (1.0 - mask) * torch.log1p(-p)
    pos = torch.arange(probs.shape[1], device=probs.device).unsqueeze(0)
    valid = (pos < lengths.unsqueeze(1)).to(terms.dtype)
    return (terms * valid).sum(dim=1)


def expected_cost(probs) -> float:
    """Exact expected keyword count: sum of keep probabilities."""
    return float(np.sum(np.asarray(probs, dtype=np.float64)))


class ProbabilityEncoder:
    """Interface shared by the learned encoder and rule-based baselines.

    Any encoder is fully described by its per-token keep probabilities;
    sampled and thresholded masks then come from the shared helpers.
    """

    def probabilities(self, sentence: Sentence) -> np.ndarray:
        raise NotImplementedError

    def mask_for(self, sentence: Sentence, mode: str, rng: np.random.Generator | None):
        probs = self.probabilities(sentence)
        if mode == "sampled":
            if rng is None:
                raise ValueError("sampled mode requires an rng")
            return sample_mask(probs, rng)
        if mode == "thresholded":
            return threshold_mask(probs)
        raise ValueError(f"unknown encoding mode: {mode}")

    def encode(self, sentence: Sentence, mode: str = "sampled", rng=None) -> KeywordSequence:
        return extract_keywords(sentence, self.mask_for(sentence, mode, rng))


class LearnedEncoder(ProbabilityEncoder):
    """Wraps a trained KeywordEncoder for evaluation-time use."""

    def __init__(self, model: KeywordEncoder, name: str = "learned"):
        self.model = model
        self.name = name

    def probabilities(self, sentence: Sentence) -> np.ndarray:
        return keep_probabilities(self.model, sentence)


def enumerate_masks(length: int):
    """All 2^length binary masks, lexicographic; for oracle enumeration."""
    for bits in range(2**length):
        yield np.array([(bits >> i) & 1 for i in range(length)], dtype=np.int64)


def mask_probability(probs, mask) -> float:
    """Exact (unclamped) product-form probability of a mask."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    return float(np.prod(np.where(mask > 0.5, probs, 1.0 - probs)))
