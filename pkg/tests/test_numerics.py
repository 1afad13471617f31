import numpy as np
import pytest

from minbo.exceptions import NotPositiveDefinite, OutOfRange
from minbo.numerics import (
    RngStream,
    cholesky_spd,
    normal_quantile,
    sample_mvn,
    sample_mvn_batch,
    solve_spd,
)

from conftest import random_spd

# Phi^{-1}(0.975) from a 40-digit inverse-erfc root solve, frozen here.
Z_975 = 1.9599639845400542


def test_solve_spd_identity():
    b = np.array([2.0, -1.0, 0.5])
    np.testing.assert_allclose(solve_spd(np.eye(3), b), b)


def test_solve_spd_diagonal():
    x = solve_spd(np.diag([4.0, 9.0]), np.array([4.0, 9.0]))
    np.testing.assert_allclose(x, [1.0, 1.0])


def test_solve_spd_row_sums():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = solve_spd(a, np.array([3.0, 3.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-14)


def test_solve_spd_recovers_random_solutions(rng):
    for _ in range(20):
        dim = int(rng.integers(1, 21))
        a = random_spd(rng, dim)
        x = rng.standard_normal((dim, 2))
        rec = solve_spd(a, a @ x)
        assert np.abs(rec - x).max() <= 1e-9 * max(1.0, np.abs(x).max())


def test_solve_spd_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_solve_spd_rejects_tiny_pivot():
    with pytest.raises(NotPositiveDefinite):
        cholesky_spd(np.diag([1.0, 1e-15]))


def test_solve_spd_rejects_asymmetric():
    with pytest.raises(ValueError):
        solve_spd(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones(2))


def test_normal_quantile_median():
    assert normal_quantile(0.5) == 0.0


def test_normal_quantile_975():
    assert abs(normal_quantile(0.975) - Z_975) <= 1e-9


@pytest.mark.parametrize("p", [0.1, 0.3, 0.42])
def test_normal_quantile_symmetry(p):
    assert normal_quantile(p) == pytest.approx(-normal_quantile(1.0 - p), abs=1e-12)


def test_normal_quantile_strictly_increasing():
    grid = np.linspace(1e-4, 1.0 - 1e-4, 1000)
    values = normal_quantile(grid)
    assert np.all(np.diff(values) > 0.0)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.4])
def test_normal_quantile_domain(p):
    with pytest.raises(OutOfRange):
        normal_quantile(p)


def test_rng_stream_replay_identical():
    a = RngStream(123, 7).standard_normal(64)
    b = RngStream(123, 7).standard_normal(64)
    assert a.tobytes() == b.tobytes()


def test_rng_stream_distinct_indices_differ():
    a = RngStream(123, 0).standard_normal(64)
    b = RngStream(123, 1).standard_normal(64)
    assert not np.array_equal(a, b)


class _ZeroDraw:
    def standard_normal(self, size=None):
        return np.zeros(size if size is not None else ())


def test_sample_mvn_degenerate_draw_is_mean():
    mean = np.array([3.0, -1.0])
    out = sample_mvn(mean, np.eye(2), _ZeroDraw())
    np.testing.assert_array_equal(out, mean)


def test_sample_mvn_identity_covariance():
    draws = sample_mvn_batch(np.zeros(2), np.eye(2), RngStream(5, 0), 100_000)
    cov = np.cov(draws.T)
    # 10^5 draws put six standard errors at about 0.03 entrywise
    assert np.abs(cov - np.eye(2)).max() <= 0.03


def test_sample_mvn_exchangeable_block():
    cov = np.full((4, 4), 0.8)
    np.fill_diagonal(cov, 1.0)
    draws = sample_mvn_batch(np.zeros(4), cov, RngStream(6, 0), 100_000)
    corr = np.corrcoef(draws.T)
    off = corr[~np.eye(4, dtype=bool)]
    assert np.abs(off - 0.8).max() <= 0.03


def test_sample_mvn_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        sample_mvn(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), RngStream(1))
