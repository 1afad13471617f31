"""Datasets, working-model specifications, and estimating functions.

The main model is a logistic regression scored by ``g(D_0i; beta) =
X_0i (y_0i - expit(X_0i' beta))``.  Each secondary dataset carries an
over-identified working estimating function ``h_k``: a basis-matrix
construction for balanced repeated measurements with an identity link,
or a redundant-covariate construction for a cross-sectional binary
outcome with a logit link.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .exceptions import DimensionMismatch
from .numerics import cholesky_spd, symmetrize

LONGITUDINAL = "longitudinal"
CROSS_SECTIONAL = "cross_sectional"


@dataclass(frozen=True, eq=False)
class MainDataset:
    """Binary primary endpoint with an intercept-first design matrix."""

    y: np.ndarray  # (n,) in {0, 1}
    X: np.ndarray  # (n, p), first column all ones

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"y {y.shape} vs X {X.shape}")
        if not np.isfinite(X).all():
            raise ValueError("design matrix has non-finite entries")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("outcome must be binary 0/1")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("first design column must be the intercept")
        # Full column rank check; raises NotPositiveDefinite otherwise.
        cholesky_spd(symmetrize(X.T @ X / X.shape[0]))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Balanced repeated measurements: per subject an m-vector outcome.

    Subjects with R = 0 may carry placeholder (zero) blocks; those rows
    are never read because every contribution is multiplied by R.
    """

    Y: np.ndarray  # (n, m)
    X: np.ndarray  # (n, m, r)
    R: np.ndarray  # (n,) in {0, 1}

    kind = LONGITUDINAL

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "R", R)
        if Y.ndim != 2 or X.ndim != 3 or X.shape[:2] != Y.shape:
            raise DimensionMismatch(f"Y {Y.shape} vs X {X.shape}")
        if R.shape != (Y.shape[0],) or not np.all((R == 0.0) | (R == 1.0)):
            raise ValueError("R must be a 0/1 vector of length n")
        if not (np.isfinite(Y).all() and np.isfinite(X).all()):
            raise ValueError("dataset has non-finite entries")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @property
    def r(self) -> int:
        return self.X.shape[2]


@dataclass(frozen=True, eq=False)
class CrossSectionalDataset:
    """Scalar outcome with main covariates x and redundant covariates z."""

    y: np.ndarray  # (n,)
    x: np.ndarray  # (n, r)
    z: np.ndarray  # (n, q), q >= 1 for over-identification
    R: np.ndarray  # (n,) in {0, 1}

    kind = CROSS_SECTIONAL

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        R = np.asarray(self.R, dtype=float)
        for name, arr in (("y", y), ("x", x), ("z", z), ("R", R)):
            object.__setattr__(self, name, arr)
        n = y.shape[0]
        if x.ndim != 2 or z.ndim != 2 or x.shape[0] != n or z.shape[0] != n:
            raise DimensionMismatch(f"y {y.shape}, x {x.shape}, z {z.shape}")
        if z.shape[1] < 1:
            raise ValueError("need at least one redundant covariate (q >= 1)")
        if R.shape != (n,) or not np.all((R == 0.0) | (R == 1.0)):
            raise ValueError("R must be a 0/1 vector of length n")
        if not (np.isfinite(x).all() and np.isfinite(z).all() and np.isfinite(y).all()):
            raise ValueError("dataset has non-finite entries")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def r(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]


SecondaryDataset = LongitudinalDataset | CrossSectionalDataset

IDENTITY = "identity"
LOGIT = "logit"
UNIT = "unit"
PRELIMINARY_RESIDUAL = "preliminary_residual"


def default_basis(m: int) -> tuple[np.ndarray, ...]:
    """The standard four symmetric 0/1 basis matrices for m time points.

    V1 identity; V2 all ones off the diagonal; V3 ones on the first
    off-diagonals; V4 ones at the (1,1) and (m,m) corners.
    """
    v1 = np.eye(m)
    v2 = np.ones((m, m)) - np.eye(m)
    v3 = np.zeros((m, m))
    idx = np.arange(m - 1)
    v3[idx, idx + 1] = 1.0
    v3[idx + 1, idx] = 1.0
    v4 = np.zeros((m, m))
    v4[0, 0] = 1.0
    v4[m - 1, m - 1] = 1.0
    return (v1, v2, v3, v4)


@dataclass(frozen=True, eq=False)
class WorkingModelSpec:
    """Defines h_k for one secondary dataset.

    ``basis`` applies to longitudinal data only: tau symmetric 0/1
    matrices stacking an (r * tau)-dimensional moment function.
    ``variance_mode`` selects the diagonal scaling matrix: unit, or
    per-time-point residual variances from one preliminary least-squares
    fit on observed subjects, frozen thereafter so h stays a function of
    theta alone.  ``allow_just_identified`` bypasses the over-
    identification requirement for diagnostic fits (d == r).
    """

    link: str
    theta_dim: int
    basis: tuple[np.ndarray, ...] | None = None
    variance_mode: str = UNIT
    rtilde: np.ndarray | None = None  # (m,) frozen diagonal variances
    allow_just_identified: bool = False

    def __post_init__(self):
        if self.link not in (IDENTITY, LOGIT):
            raise ValueError(f"unknown link {self.link!r}")
        if self.variance_mode not in (UNIT, PRELIMINARY_RESIDUAL):
            raise ValueError(f"unknown variance mode {self.variance_mode!r}")
        if self.theta_dim < 1:
            raise ValueError("theta_dim must be at least 1")
        if self.basis is not None:
            basis = tuple(np.asarray(v, dtype=float) for v in self.basis)
            object.__setattr__(self, "basis", basis)
            m = basis[0].shape[0]
            for v in basis:
                if v.shape != (m, m) or np.abs(v - v.T).max() > 0.0:
                    raise ValueError("basis matrices must be symmetric and square")
            if len(basis) < 2 and not self.allow_just_identified:
                raise ValueError(
                    "need at least two basis matrices for over-identification"
                )

    @property
    def tau(self) -> int:
        return 0 if self.basis is None else len(self.basis)


def longitudinal_spec(
    theta_dim: int,
    m: int,
    basis: tuple[np.ndarray, ...] | None = None,
    variance_mode: str = PRELIMINARY_RESIDUAL,
    allow_just_identified: bool = False,
) -> WorkingModelSpec:
    """Identity-link working model with the default basis for m time points."""
    if basis is None:
        basis = default_basis(m)
    return WorkingModelSpec(
        link=IDENTITY,
        theta_dim=theta_dim,
        basis=basis,
        variance_mode=variance_mode,
        allow_just_identified=allow_just_identified,
    )


def cross_sectional_spec(theta_dim: int) -> WorkingModelSpec:
    """Logit-link working model; redundant covariates over-identify it."""
    return WorkingModelSpec(link=LOGIT, theta_dim=theta_dim)


def with_frozen_variance(spec: WorkingModelSpec, data: LongitudinalDataset) -> WorkingModelSpec:
    """Pin the diagonal variance matrix of a longitudinal spec.

    Under the preliminary-residual mode this fits theta once by pooled
    least squares on observed subjects and freezes the per-time-point
    residual variances.
    """
    if spec.link != IDENTITY:
        return spec
    if spec.rtilde is not None:
        return spec
    if spec.variance_mode == UNIT:
        return replace(spec, rtilde=np.ones(data.m))
    obs = data.R > 0
    Xo = data.X[obs].reshape(-1, data.r)
    Yo = data.Y[obs].reshape(-1)
    theta = np.linalg.lstsq(Xo, Yo, rcond=None)[0]
    resid = data.Y[obs] - data.X[obs] @ theta
    var = np.mean(resid**2, axis=0)
    if np.any(var <= 0.0):
        raise ValueError("degenerate residual variance at some time point")
    return replace(spec, rtilde=var)


def main_score(data: MainDataset, beta: np.ndarray) -> np.ndarray:
    """Per-subject logistic scores, one row per subject.

    Row i equals ``X_0i (y_0i - expit(X_0i' beta))``; expit saturates
    smoothly so no overflow handling is needed.
    """
    beta = np.asarray(beta, dtype=float)
    mu = expit(data.X @ beta)
    return data.X * (data.y - mu)[:, None]


def main_score_jacobian(data: MainDataset, beta: np.ndarray) -> np.ndarray:
    """Average score derivative ``-(1/n) sum mu(1-mu) x x'`` (symmetric NSD)."""
    beta = np.asarray(beta, dtype=float)
    mu = expit(data.X @ beta)
    w = mu * (1.0 - mu)
    return symmetrize(-(data.X * w[:, None]).T @ data.X / data.n)


def _scaled_basis(spec: WorkingModelSpec, m: int) -> list[np.ndarray]:
    """Matrices Rt^{-1/2} V_j Rt^{-1/2} with Rt the frozen diagonal."""
    rtilde = spec.rtilde if spec.rtilde is not None else np.ones(m)
    inv_sqrt = 1.0 / np.sqrt(rtilde)
    return [v * np.outer(inv_sqrt, inv_sqrt) for v in spec.basis]


def h_eval(data: SecondaryDataset, i: int, theta: np.ndarray, spec: WorkingModelSpec) -> np.ndarray:
    """Working estimating function h for subject i (before multiplying by R).

    Longitudinal/identity: block j is ``X_i' M_j (Y_i - X_i theta)`` with
    ``M_j = Rt^{-1/2} V_j Rt^{-1/2}``.  Cross-sectional/logit:
    ``(x_i', z_i')' (y_i - expit(x_i' theta))``.
    """
    theta = np.asarray(theta, dtype=float)
    if data.kind == LONGITUDINAL:
        if theta.shape != (data.r,) or spec.theta_dim != data.r:
            raise DimensionMismatch(f"theta {theta.shape} vs design r={data.r}")
        Xi = data.X[i]
        resid = data.Y[i] - Xi @ theta
        blocks = [Xi.T @ (mj @ resid) for mj in _scaled_basis(spec, data.m)]
        return np.concatenate(blocks)
    if theta.shape != (data.r,) or spec.theta_dim != data.r:
        raise DimensionMismatch(f"theta {theta.shape} vs design r={data.r}")
    v = np.concatenate([data.x[i], data.z[i]])
    mu = expit(float(data.x[i] @ theta))
    return v * (data.y[i] - mu)


def h_jacobian(data: SecondaryDataset, i: int, theta: np.ndarray, spec: WorkingModelSpec) -> np.ndarray:
    """Derivative of h for subject i with respect to theta, shape (d, r)."""
    theta = np.asarray(theta, dtype=float)
    if data.kind == LONGITUDINAL:
        if theta.shape != (data.r,) or spec.theta_dim != data.r:
            raise DimensionMismatch(f"theta {theta.shape} vs design r={data.r}")
        Xi = data.X[i]
        blocks = [-Xi.T @ mj @ Xi for mj in _scaled_basis(spec, data.m)]
        return np.vstack(blocks)
    if theta.shape != (data.r,) or spec.theta_dim != data.r:
        raise DimensionMismatch(f"theta {theta.shape} vs design r={data.r}")
    v = np.concatenate([data.x[i], data.z[i]])
    mu = expit(float(data.x[i] @ theta))
    return -np.outer(v, data.x[i]) * (mu * (1.0 - mu))


class MomentSystem:
    """Vectorized evaluation of the masked moments H_i = R_i h_i(theta).

    Enforces over-identification (d > theta_dim) at construction unless
    the spec carries the diagnostic bypass flag.  All heavy quantities
    that do not depend on theta are precomputed once.
    """

    def __init__(self, data: SecondaryDataset, spec: WorkingModelSpec):
        self.data = data
        self.n = data.n
        self.r = spec.theta_dim
        if data.kind == LONGITUDINAL:
            spec = with_frozen_variance(spec, data)
            self.d = data.r * spec.tau
            if spec.theta_dim != data.r:
                raise DimensionMismatch(
                    f"theta_dim {spec.theta_dim} vs design r={data.r}"
                )
        else:
            self.d = data.r + data.q
        self.spec = spec
        if self.d <= self.r and not spec.allow_just_identified:
            raise ValueError(
                f"h must be over-identified: dim(h)={self.d} <= dim(theta)={self.r}"
            )
        if self.d < self.r:
            raise DimensionMismatch("dim(h) may not be below dim(theta)")
        self.mask = data.R.astype(float)
        self.n_observed = int(self.mask.sum())
        if data.kind == LONGITUDINAL:
            # P[i, j*r:(j+1)*r, :] = X_i' M_j, so H rows are P @ residual.
            scaled = _scaled_basis(spec, data.m)
            parts = [np.einsum("imr,mt->irt", data.X, mj) for mj in scaled]
            self._P = np.concatenate(parts, axis=1) * self.mask[:, None, None]
            self._J = -np.einsum("idm,imr->idr", self._P, data.X)
        else:
            self._v = np.hstack([data.x, data.z]) * self.mask[:, None]

    def moments(self, theta: np.ndarray) -> np.ndarray:
        """Masked moment rows, shape (n, d); zero rows where R = 0."""
        theta = np.asarray(theta, dtype=float)
        if self.data.kind == LONGITUDINAL:
            resid = self.data.Y - self.data.X @ theta
            return np.einsum("idm,im->id", self._P, resid)
        mu = expit(self.data.x @ theta)
        return self._v * (self.data.y - mu)[:, None]

    def jacobians(self, theta: np.ndarray) -> np.ndarray:
        """Masked per-subject Jacobians dH_i/dtheta', shape (n, d, r)."""
        theta = np.asarray(theta, dtype=float)
        if self.data.kind == LONGITUDINAL:
            return self._J
        mu = expit(self.data.x @ theta)
        w = mu * (1.0 - mu)
        return -np.einsum("id,ir->idr", self._v * w[:, None], self.data.x)

    def jacobian_mean(self, theta: np.ndarray) -> np.ndarray:
        """(1/n) sum of masked Jacobians, shape (d, r)."""
        return self.jacobians(theta).sum(axis=0) / self.n

    def curvature_term(self, theta: np.ndarray, lam: np.ndarray, w: np.ndarray) -> np.ndarray:
        """(1/n) sum of w_i d(J_i' lam)/dtheta', shape (r, r).

        Zero for the identity link (J constant in theta).
        """
        if self.data.kind == LONGITUDINAL:
            return np.zeros((self.r, self.r))
        mu = expit(self.data.x @ theta)
        ddmu = mu * (1.0 - mu) * (1.0 - 2.0 * mu)
        vlam = self._v @ lam
        coef = w * vlam * ddmu
        return -(self.data.x * coef[:, None]).T @ self.data.x / self.n
