"""Metrics and analyses: retention, exact match, tradeoff curves,
cross-encoder robustness, and token-level retention statistics.

Evaluation is deterministic: in sampled mode every sentence gets its own
random stream derived from (seed, sentence index), so parallel evaluation
and repeated runs produce identical masks.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .corpus import Sentence, Vocabulary, detokenize
from .decoder import KeywordDecoder, greedy_decode_batch
from .encoder import ProbabilityEncoder, extract_keywords
from .postag import RuleTagger, Tagger

EVAL_BATCH = 64


def _sentence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def masks_for(
    encoder: ProbabilityEncoder, data: list[Sentence], mode: str = "sampled", seed: int = 0
) -> list[np.ndarray]:
    """One mask per sentence under the given encoding mode."""
    if not data:
        raise ValueError("empty dataset")
    return [
        encoder.mask_for(s, mode, _sentence_rng(seed, i) if mode == "sampled" else None)
        for i, s in enumerate(data)
    ]


def retention_rate(
    encoder: ProbabilityEncoder, data: list[Sentence], mode: str = "sampled", seed: int = 0
) -> float:
    """Micro-averaged fraction of tokens kept across the dataset."""
    masks = masks_for(encoder, data, mode, seed)
    kept = sum(int(m.sum()) for m in masks)
    total = sum(len(s) for s in data)
    return kept / total


def exact_match_accuracy(
    encoder: ProbabilityEncoder,
    decoder: KeywordDecoder,
    data: list[Sentence],
    vocab: Vocabulary,
    mode: str = "sampled",
    seed: int = 0,
    max_len: int = 20,
) -> float:
    """Fraction of sentences whose greedy reconstruction detokenizes to the
    exact target surface string."""
    masks = masks_for(encoder, data, mode, seed)
    keywords = [extract_keywords(s, m) for s, m in zip(data, masks)]
    hits = 0
    for start in range(0, len(data), EVAL_BATCH):
        preds = greedy_decode_batch(
            decoder, keywords[start : start + EVAL_BATCH], vocab, max_len
        )
        for pred, target in zip(preds, data[start : start + EVAL_BATCH]):
            if detokenize(pred.tokens) == target.surface:
                hits += 1
    return hits / len(data)


@dataclass(frozen=True)
class TradeoffPoint:
    scheme: str
    knob: str                  # "epsilon" | "lambda" | "delta"
    knob_value: float
    retention: float
    exact_match: float
    mode: str
    fingerprint: str

    def __post_init__(self):
        if not (0.0 <= self.retention <= 1.0 and 0.0 <= self.exact_match <= 1.0):
            raise ValueError("retention and accuracy must lie in [0, 1]")


def measure_tradeoff_point(
    scheme: str,
    knob: str,
    knob_value: float,
    encoder: ProbabilityEncoder,
    decoder: KeywordDecoder,
    split,
    mode: str = "sampled",
    seed: int = 0,
) -> TradeoffPoint:
    return TradeoffPoint(
        scheme=scheme,
        knob=knob,
        knob_value=knob_value,
        retention=retention_rate(encoder, split.test, mode, seed),
        exact_match=exact_match_accuracy(encoder, decoder, split.test, split.vocab, mode, seed),
        mode=mode,
        fingerprint=split.fingerprint,
    )


def pareto_subset(points: list[TradeoffPoint]) -> list[TradeoffPoint]:
    """Points not dominated by any other (lower retention, higher accuracy)."""
    out = []
    for p in points:
        dominated = any(
            (q.retention <= p.retention and q.exact_match >= p.exact_match)
            and (q.retention < p.retention or q.exact_match > p.exact_match)
            for q in points
        )
        if not dominated:
            out.append(p)
    return out


def tradeoff_curve(schemes, split, mode: str = "sampled", seed: int = 0):
    """Evaluate each (name, knob, value, encoder, decoder) scheme.

    Returns (points sorted by retention, their Pareto subset).
    """
    if len(schemes) < 2:
        raise ValueError("need at least two schemes for a tradeoff curve")
    points = [
        measure_tradeoff_point(name, knob, value, enc, dec, split, mode, seed)
        for name, knob, value, enc, dec in schemes
    ]
    points.sort(key=lambda p: p.retention)
    return points, pareto_subset(points)


def accuracy_at_retention(points: list[TradeoffPoint], retention: float) -> float:
    """Linearly interpolated accuracy of a curve at a retention level.

    Clamps to the end points outside the covered retention range.
    """
    pts = sorted(points, key=lambda p: p.retention)
    xs = [p.retention for p in pts]
    ys = [p.exact_match for p in pts]
    return float(np.interp(retention, xs, ys))


def knob_spread(points: list[TradeoffPoint]) -> float:
    """Coefficient of variation of consecutive retention gaps (lower = more
    evenly spaced knob grid)."""
    if len(points) < 3:
        raise ValueError("need at least three points from one knob sweep")
    retentions = sorted(p.retention for p in points)
    gaps = np.diff(retentions)
    mean = gaps.mean()
    if mean == 0:
        return 0.0
    return float(gaps.std() / mean)


@dataclass
class RobustnessMatrix:
    encoder_names: list[str]
    decoder_names: list[str]
    accuracy: np.ndarray          # (n_encoders, n_decoders)
    retention: list[float]        # per encoder

    def __post_init__(self):
        if self.accuracy.shape != (len(self.encoder_names), len(self.decoder_names)):
            raise ValueError("grid dimensions do not match name lists")


def robustness_matrix(
    encoders: list[tuple[str, ProbabilityEncoder]],
    decoders: list[tuple[str, KeywordDecoder]],
    data: list[Sentence],
    vocab: Vocabulary,
    mode: str = "sampled",
    seed: int = 0,
) -> RobustnessMatrix:
    """Cross-evaluate every decoder against every encoder."""
    grid = np.zeros((len(encoders), len(decoders)))
    for i, (_, enc) in enumerate(encoders):
        for j, (_, dec) in enumerate(decoders):
            grid[i, j] = exact_match_accuracy(enc, dec, data, vocab, mode, seed)
    return RobustnessMatrix(
        encoder_names=[n for n, _ in encoders],
        decoder_names=[n for n, _ in decoders],
        accuracy=grid,
        retention=[retention_rate(enc, data, mode, seed) for _, enc in encoders],
    )


@dataclass
class TokenRetentionStats:
    """Per-token-type frequency, empirical keep rate, and POS tag."""

    freq: dict[str, int]
    keep_rate: dict[str, float]
    tag: dict[str, str]
    fingerprint: str = ""

    def pos_rates(self) -> dict[str, float]:
        """Frequency-weighted mean keep rate per POS tag."""
        weight: dict[str, float] = {}
        mass: dict[str, float] = {}
        for token, f in self.freq.items():
            t = self.tag[token]
            weight[t] = weight.get(t, 0.0) + f
            mass[t] = mass.get(t, 0.0) + f * self.keep_rate[token]
        return {t: mass[t] / weight[t] for t in weight}

    def group_rate(self, tags) -> float:
        tags = set(tags)
        w = sum(f for tok, f in self.freq.items() if self.tag[tok] in tags)
        m = sum(
            f * self.keep_rate[tok]
            for tok, f in self.freq.items()
            if self.tag[tok] in tags
        )
        return m / w if w else 0.0


def token_retention_stats(
    encoder: ProbabilityEncoder,
    data: list[Sentence],
    tagger: Tagger | None = None,
    mode: str = "sampled",
    seed: int = 0,
    fingerprint: str = "",
) -> TokenRetentionStats:
    tagger = tagger or RuleTagger()
    masks = masks_for(encoder, data, mode, seed)
    freq: dict[str, int] = {}
    kept: dict[str, int] = {}
    for s, m in zip(data, masks):
        for token, bit in zip(s.tokens, m):
            freq[token] = freq.get(token, 0) + 1
            kept[token] = kept.get(token, 0) + int(bit)
    return TokenRetentionStats(
        freq=freq,
        keep_rate={t: kept[t] / freq[t] for t in freq},
        tag={t: tagger.tag(t) for t in freq},
        fingerprint=fingerprint,
    )


def scheme_stability_distance(a: TokenRetentionStats, b: TokenRetentionStats) -> float:
    """Frequency-weighted mean absolute difference of token keep rates."""
    if a.fingerprint != b.fingerprint:
        raise ValueError(
            f"stats computed on different datasets: {a.fingerprint!r} vs {b.fingerprint!r}"
        )
    if set(a.freq) != set(b.freq):
        raise ValueError("stats cover different token sets")
    total = sum(a.freq.values())
    return (
        sum(f * abs(a.keep_rate[t] - b.keep_rate[t]) for t, f in a.freq.items()) / total
    )


CSV_HEADER = ["scheme", "knob", "knob_value", "retention", "exact_match", "mode", "fingerprint"]


def points_to_csv(points: list[TradeoffPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for p in points:
        writer.writerow(
            [p.scheme, p.knob, f"{p.knob_value:g}", f"{p.retention:.6f}",
             f"{p.exact_match:.6f}", p.mode, p.fingerprint]
        )
    return buf.getvalue()


def points_from_csv(text: str) -> list[TradeoffPoint]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError("bad tradeoff CSV header")
    return [
        TradeoffPoint(r[0], r[1], float(r[2]), float(r[3]), float(r[4]), r[5], r[6])
        for r in rows[1:]
        if r
    ]
