import numpy as np
import pytest

from quasitest.core import Sample, WeightMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_positive_matrix(n, rng, spread=1.0):
    """Strictly positive weight matrix with log-normal entries."""
    return WeightMatrix(np.exp(rng.normal(0.0, spread, (n, n))))


def random_truncated_sample(n, rng, rho=0.0):
    """Bivariate normal pairs kept while x < y (left truncation)."""
    xs, ys = [], []
    while len(xs) < n:
        z1 = rng.standard_normal(4 * n)
        z2 = rho * z1 + np.sqrt(1 - rho * rho) * rng.standard_normal(4 * n)
        keep = z1 < z2
        xs.extend(z1[keep])
        ys.extend(z2[keep])
    return Sample(xs[:n], ys[:n])


def ks_against(F, true_cdf):
    """sup |F_hat - F| over the estimate's support (both one-sided limits)."""
    grid = F.support
    est = np.cumsum(F.mass)
    truth = true_cdf(grid)
    left = np.abs(np.concatenate(([0.0], est[:-1])) - truth)
    return float(max(np.max(np.abs(est - truth)), np.max(left)))
