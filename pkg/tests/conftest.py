from __future__ import annotations

import numpy as np
import pytest

from semprint.catalog import build_default_catalogue
from semprint.classify import CategoricalSample
from semprint.probe import Fingerprint


def make_fp(rows, model_id="m", prompt_id="p", seed0=0, vocabulary=""):
    samples = tuple(
        CategoricalSample(probs=tuple(float(x) for x in row)) for row in rows
    )
    return Fingerprint(
        model_id=model_id,
        prompt_id=prompt_id,
        samples=samples,
        seeds=tuple(range(seed0, seed0 + len(samples))),
        vocabulary=vocabulary,
    )


def random_simplex(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    x = rng.random((n, k)) + 1e-3
    return x / x.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def default_catalogue():
    return build_default_catalogue()
