import numpy as np
import pytest
import torch

from kwac.corpus import CorpusConfig, make_split
from kwac.deskcorpus import generate_desk_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_split():
    """Small deterministic corpus for unit tests (fast to train against)."""
    lines = generate_desk_corpus(120, seed=7)
    return make_split(lines, CorpusConfig(vocab_size=500, seed=3, test_size=20))


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
