"""Rule-based encoders (uniform-random and stopword-dropping) and sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import CorpusSplit, Sentence
from .encoder import ProbabilityEncoder

STOPWORDS_HEADER = "# kwac-stopwords v1"


def load_stopwords(path=None) -> frozenset[str]:
    """Load the shipped (or a custom) one-token-per-line stopword lexicon."""
    if path is None:
        text = resources.files("kwac.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(STOPWORDS_HEADER):
        raise ValueError("stopword lexicon missing versioned header")
    words = frozenset(w.strip() for w in lines[1:] if w.strip())
    if not words:
        raise ValueError("stopword lexicon is empty")
    return words


@dataclass(frozen=True)
class BaselineConfig:
    kind: str                   # "unif" | "stopword"
    delta: float
    stopword_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("unif", "stopword"):
            raise ValueError(f"unknown baseline kind: {self.kind}")
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError("delta must lie in [0, 1]")

    def build(self) -> ProbabilityEncoder:
        if self.kind == "unif":
            return UnifEncoder(self.delta)
        return StopwordEncoder(self.delta, load_stopwords(self.stopword_path))

    @property
    def name(self) -> str:
        return f"{self.kind}({self.delta:g})"


class UnifEncoder(ProbabilityEncoder):
    """Keeps every token independently with probability delta."""

    def __init__(self, delta: float):
        if not (0.0 <= delta <= 1.0):
            raise ValueError("delta must lie in [0, 1]")
        self.delta = delta
        self.name = f"unif({delta:g})"

    def probabilities(self, sentence: Sentence) -> np.ndarray:
        return np.full(len(sentence), self.delta, dtype=np.float64)


class StopwordEncoder(ProbabilityEncoder):
    """Always keeps non-stopwords; keeps stopwords with probability delta.

    Punctuation and the capitalization marker are not stopwords unless the
    lexicon says so.
    """

    def __init__(self, delta: float, lexicon: frozenset[str]):
        if not lexicon:
            raise ValueError("stopword lexicon must be non-empty")
        if not (0.0 <= delta <= 1.0):
            raise ValueError("delta must lie in [0, 1]")
        self.delta = delta
        self.lexicon = lexicon
        self.name = f"stopword({delta:g})"

    def probabilities(self, sentence: Sentence) -> np.ndarray:
        return np.array(
            [self.delta if t in self.lexicon else 1.0 for t in sentence.tokens],
            dtype=np.float64,
        )


def unif_encode(sentence: Sentence, delta: float, rng: np.random.Generator):
    kw = UnifEncoder(delta).encode(sentence, "sampled", rng)
    return np.array(kw.mask), kw


def stopword_encode(sentence: Sentence, delta: float, lexicon, rng: np.random.Generator):
    kw = StopwordEncoder(delta, frozenset(lexicon)).encode(sentence, "sampled", rng)
    return np.array(kw.mask), kw


def sweep_baseline(split: CorpusSplit, configs, fit_config=None, eval_seed: int = 0):
    """Train a fresh decoder per baseline config and measure its tradeoff point.

    Returns a list of TradeoffPoint, one per config, annotated with the
    config identity on failure.
    """
    from torch import manual_seed as torch_seed

    from .decoder import DecoderFitConfig, KeywordDecoder, fit_decoder
    from .evaluation import measure_tradeoff_point

    if not configs:
        raise ValueError("need at least one baseline config")
    fit_config = fit_config or DecoderFitConfig()
    points = []
    for config in configs:
        encoder = config.build()
        torch_seed(fit_config.seed)
        decoder = KeywordDecoder(len(split.vocab), fit_config.emb_dim, fit_config.hidden)
        try:
            fit_decoder(decoder, encoder, split, fit_config)
            point = measure_tradeoff_point(
                scheme=config.name,
                knob="delta",
                knob_value=config.delta,
                encoder=encoder,
                decoder=decoder,
                split=split,
                seed=eval_seed,
            )
        except Exception as exc:
            raise RuntimeError(f"baseline sweep failed for {config.name}") from exc
        points.append(point)
    return points
