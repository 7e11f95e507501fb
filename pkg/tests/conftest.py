import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qdlag import RegressionData


def make_data(n=60, K=2, T=8, p=2, seed=0, noise=1.0, intercept=True):
    """Random regression data with an intercept column by default."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, K, T))
    Z = rng.standard_normal((n, p))
    if intercept and p >= 1:
        Z[:, 0] = 1.0
    beta = rng.standard_normal((K, T))
    gamma = rng.standard_normal(p)
    y = X.reshape(n, -1) @ beta.reshape(-1) + Z @ gamma + noise * rng.standard_normal(n)
    return RegressionData(X, Z, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
