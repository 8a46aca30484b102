import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qarsum.summarize import SummaryProblem  # noqa: E402


def random_problem(rng, n=None, k=None, d=4, p=3, duplicates=False) -> SummaryProblem:
    n = int(rng.integers(2, 13)) if n is None else n
    k = int(rng.integers(1, min(n, 4) + 1)) if k is None else k
    emb = rng.standard_normal((n, d))
    feats = rng.standard_normal((n, p))
    if duplicates and n > 2:
        # repeated frames create exact gain ties
        feats[1] = feats[0]
        emb[1] = emb[0]
    return SummaryProblem(emb, rng.standard_normal(n), feats, rng.standard_normal(d), k)


def random_weights(rng) -> np.ndarray:
    w = rng.uniform(0, 1, 4)
    w[rng.random(4) < 0.25] = 0.0
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
