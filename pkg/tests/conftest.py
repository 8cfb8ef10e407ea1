import numpy as np
import pytest

from balance_lab import Dataset


def random_dataset(rng, n=None, p=None, prognostic=True) -> Dataset:
    """Well-conditioned random dataset for property tests."""
    n = n or int(rng.integers(20, 80)) * 2
    p = p or int(rng.integers(1, 5))
    x = rng.normal(size=(n, p))
    n1 = int(rng.integers(max(1, p + 3), n - max(1, p + 3) + 1))
    z = np.zeros(n, dtype=int)
    z[rng.permutation(n)[:n1]] = 1
    coefs = rng.normal(size=p) if prognostic else np.zeros(p)
    y = x @ coefs + rng.normal(size=n)
    return Dataset(x=x, z=z, y_obs=y)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
