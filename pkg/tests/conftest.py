import numpy as np
import pytest

from minbo.model_core import (
    CrossSectionalDataset,
    LongitudinalDataset,
    MainDataset,
    cross_sectional_spec,
    longitudinal_spec,
)


def random_spd(rng, dim, scale=1.0):
    a = rng.standard_normal((dim, dim + 3))
    return scale * (a @ a.T / (dim + 3) + 0.1 * np.eye(dim))


def random_main(rng, n=80, p=4):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    prob = 1.0 / (1.0 + np.exp(-(X @ rng.uniform(-0.5, 0.5, p))))
    y = (rng.random(n) < prob).astype(float)
    return MainDataset(y=y, X=X)


def random_longitudinal(rng, n=40, m=4, r=3, missing=0.0, unit_variance=True):
    X = np.concatenate(
        [np.ones((n, m, 1)), rng.standard_normal((n, m, r - 1))], axis=2
    )
    theta = rng.uniform(-1, 1, r)
    Y = X @ theta + rng.standard_normal((n, m))
    R = (rng.random(n) >= missing).astype(float)
    data = LongitudinalDataset(Y=Y, X=X, R=R)
    spec = longitudinal_spec(
        theta_dim=r, m=m, variance_mode="unit" if unit_variance else "preliminary_residual"
    )
    return data, spec


def random_cross_sectional(rng, n=60, r=2, q=2, missing=0.0):
    x = np.column_stack([np.ones(n), rng.standard_normal((n, r - 1))])
    z = rng.standard_normal((n, q))
    theta = rng.uniform(-1, 1, r)
    prob = 1.0 / (1.0 + np.exp(-(x @ theta)))
    y = (rng.random(n) < prob).astype(float)
    R = (rng.random(n) >= missing).astype(float)
    return CrossSectionalDataset(y=y, x=x, z=z, R=R), cross_sectional_spec(r)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
