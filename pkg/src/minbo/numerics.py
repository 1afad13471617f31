"""Minimal dense-matrix and probability kernels used by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .exceptions import NotPositiveDefinite, OutOfRange

# Pivot below this multiple of the largest diagonal entry counts as singular.
CHOLESKY_PIVOT_RTOL = 1e-12


def cholesky_spd(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises NotPositiveDefinite when a pivot falls at or below
    ``CHOLESKY_PIVOT_RTOL * max(diag(a))``; never regularizes silently.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.abs(a).max() if a.size else 0.0
    if not np.isfinite(a).all():
        raise ValueError("matrix has non-finite entries")
    if scale > 0 and np.abs(a - a.T).max() > 1e-12 * scale:
        raise ValueError("matrix is not symmetric within 1e-12 relative")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    diag = np.diagonal(a)
    pivots = np.diagonal(lower) ** 2
    if pivots.size and pivots.min() <= CHOLESKY_PIVOT_RTOL * max(diag.max(), 0.0):
        raise NotPositiveDefinite(
            f"Cholesky pivot {pivots.min():.3e} below tolerance"
        )
    return lower


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``."""
    lower = cholesky_spd(a)
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    rhs = b[:, None] if vector else b
    if rhs.shape[0] != lower.shape[0]:
        raise ValueError(f"dimension mismatch: {lower.shape} vs {b.shape}")
    y = solve_triangular(lower, rhs, lower=True, check_finite=False)
    x = solve_triangular(lower.T, y, lower=False, check_finite=False)
    return x[:, 0] if vector else x


def inv_spd(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix."""
    a = np.asarray(a, dtype=float)
    return solve_spd(a, np.eye(a.shape[0]))


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose, killing float-level asymmetry."""
    return 0.5 * (a + a.T)


def normal_quantile(p):
    """Standard normal quantile Phi^{-1}(p) for p in (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise OutOfRange(f"probability must lie in (0, 1), got {p!r}")
    out = ndtri(arr)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


@dataclass
class RngStream:
    """Counter-based random stream keyed by (seed, stream_index).

    Identical (seed, stream_index) pairs replay byte-identical draws;
    distinct stream indices give statistically independent streams, so
    Monte Carlo replicates can be seeded without coordination. Each
    stream is owned by a single worker and never shared.
    """

    seed: int
    stream_index: int = 0
    _generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        key = np.array([self.seed, self.stream_index], dtype=np.uint64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def standard_normal(self, size=None):
        return self._generator.standard_normal(size)

    def uniform(self, size=None):
        return self._generator.random(size)


def sample_mvn(mean, cov, rng) -> np.ndarray:
    """One multivariate normal draw ``mean + L z`` with L the Cholesky factor."""
    mean = np.asarray(mean, dtype=float)
    lower = cholesky_spd(cov)
    gen = rng.generator if isinstance(rng, RngStream) else rng
    z = gen.standard_normal(mean.shape[0])
    return mean + lower @ z


def sample_mvn_batch(mean, cov, rng, size: int) -> np.ndarray:
    """``size`` i.i.d. multivariate normal draws, one per row."""
    mean = np.asarray(mean, dtype=float)
    lower = cholesky_spd(cov)
    gen = rng.generator if isinstance(rng, RngStream) else rng
    z = gen.standard_normal((size, mean.shape[0]))
    return mean[None, :] + z @ lower.T
