"""Integration schemes combining per-dataset information-borrowing weights.

A scheme is a nonnegative row-stochastic array omega of shape (K', K).
The integrated score for subject i is the product over rows of the
convex combinations ``sum_k omega_{k'k} w_ki`` computed on the
normalized scale ``w_ki = n p_ki``, which keeps aggregating products at
unit magnitude instead of n^{-K}.  One row recovers averaging; the
identity array recovers aggregating.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DegenerateIIB, InvalidWeights, LengthMismatch
from .numerics import solve_spd

AVERAGING = "averaging"
AGGREGATING = "aggregating"
CUSTOM = "custom"

FIXED = "fixed"
IIB = "iib"

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SchemeSpec:
    """K' x K nonnegative weight array with rows summing to one.

    Under ``weight_mode="iib"`` the positive entries of each row mark
    the row's support; the actual values are recomputed from data via
    the index of information borrowing before use.  A dataset may not
    appear in the support of more than one row in that mode.
    """

    K: int
    omega: np.ndarray
    weight_mode: str = FIXED

    def __post_init__(self):
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "omega", omega)
        if self.weight_mode not in (FIXED, IIB):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if omega.shape[1] != self.K or omega.shape[0] > self.K or omega.shape[0] < 1:
            raise InvalidWeights(
                f"omega shape {omega.shape} invalid for K={self.K}"
            )
        if np.any(omega < 0.0) or not np.isfinite(omega).all():
            raise InvalidWeights("omega entries must be finite and nonnegative")
        rowsums = omega.sum(axis=1)
        if np.abs(rowsums - 1.0).max() > _ROW_SUM_TOL:
            raise InvalidWeights(f"rows must sum to one, got {rowsums}")
        if self.weight_mode == IIB:
            support_count = (omega > 0.0).sum(axis=0)
            if np.any(support_count > 1):
                raise InvalidWeights(
                    "a dataset may not appear in several rows under IIB weights"
                )

    @property
    def Kprime(self) -> int:
        return self.omega.shape[0]

    @property
    def omega_tilde(self) -> np.ndarray:
        """Column sums; the per-dataset total weight entering the variance."""
        return self.omega.sum(axis=0)


@dataclass(frozen=True, eq=False)
class IntegratedScore:
    """Per-subject integrated scores on the n * p_ki scale (all positive)."""

    p_star: np.ndarray
    scheme: SchemeSpec
    note: str = "scores on the normalized scale w_ki = n * p_ki"

    def __post_init__(self):
        p = np.asarray(self.p_star, dtype=float)
        object.__setattr__(self, "p_star", p)
        if not np.isfinite(p).all() or np.any(p <= 0.0):
            raise ValueError("integrated scores must be positive and finite")


def build_scheme(kind: str, K: int, omega=None, weight_mode: str = FIXED) -> SchemeSpec:
    """Construct a scheme of the requested kind for K secondary datasets.

    ``averaging`` gives a single row (equal entries unless overridden by
    IIB resolution); ``aggregating`` gives the K x K identity;
    ``custom`` validates a user-supplied omega array.
    """
    if K < 1:
        raise InvalidWeights("need at least one secondary dataset")
    if kind == AVERAGING:
        rows = np.full((1, K), 1.0 / K)
    elif kind == AGGREGATING:
        rows = np.eye(K)
    elif kind == CUSTOM:
        if omega is None:
            raise InvalidWeights("custom scheme requires an omega array")
        rows = np.atleast_2d(np.asarray(omega, dtype=float))
    else:
        raise InvalidWeights(f"unknown scheme kind {kind!r}")
    return SchemeSpec(K=K, omega=rows, weight_mode=weight_mode)


def integrate_scores(spec: SchemeSpec, weights: list[np.ndarray]) -> IntegratedScore:
    """Combine K per-dataset weight vectors into one positive score vector."""
    if len(weights) != spec.K:
        raise LengthMismatch(f"expected {spec.K} weight vectors, got {len(weights)}")
    arrays = [np.asarray(w, dtype=float) for w in weights]
    n = arrays[0].shape[0]
    for w in arrays:
        if w.shape != (n,):
            raise LengthMismatch("weight vectors differ in length")
    scaled = [n * w for w in arrays]  # rows of n * p_ki
    # Accumulate left to right so the single-row and identity cases
    # reproduce the direct averaging/aggregating formulas bit for bit.
    p_star = np.ones(n)
    for row in spec.omega:
        combo = np.zeros(n)
        for k in np.flatnonzero(row != 0.0):
            combo += row[k] * scaled[k]
        p_star = p_star * combo
    return IntegratedScore(p_star=p_star, scheme=spec)


def iib_weights(gamma, lambdas, s_mats, vtilde) -> np.ndarray:
    """Data-driven weights from the index of information borrowing.

    ``IIB_k = trace(D^{-1/2} Gamma^{-1} Lambda_k S_k Lambda_k'
    Gamma^{-T} D^{-1/2})`` with D the diagonal of the unweighted
    sandwich variance; weights are the IIB values normalized to sum to
    one.  Nonnegative because each S_k is positive semi-definite.
    """
    gamma = np.asarray(gamma, dtype=float)
    vtilde = np.asarray(vtilde, dtype=float)
    diag = np.diagonal(vtilde)
    if np.any(diag <= 0.0):
        raise ValueError("reference variance must have a positive diagonal")
    scale = 1.0 / np.sqrt(diag)
    values = []
    for lam_k, s_k in zip(lambdas, s_mats):
        # Gamma is symmetric negative definite; invert through -Gamma.
        ginv_lam = -solve_spd(-gamma, np.asarray(lam_k, dtype=float))
        reduction = ginv_lam @ np.asarray(s_k, dtype=float) @ ginv_lam.T
        values.append(float(np.sum(np.diagonal(reduction) * scale**2)))
    # The reductions are PSD, so clamp float dust below zero.
    values = np.maximum(np.asarray(values), 0.0)
    if np.all(values <= 1e-14):
        raise DegenerateIIB("no secondary dataset carries usable information")
    return values / values.sum()


def resolve_iib(spec: SchemeSpec, gamma, lambdas, s_mats, vtilde) -> SchemeSpec:
    """Fill each row's support with IIB weights normalized within the row.

    Structural zeros stay zero; single-entry rows keep weight one.  If
    every index in some row is numerically zero the row falls back to
    equal weights over its support, with a warning.
    """
    if spec.weight_mode != IIB:
        return spec
    try:
        global_w = iib_weights(gamma, lambdas, s_mats, vtilde)
        degenerate = False
    except DegenerateIIB:
        global_w = np.zeros(spec.K)
        degenerate = True
    omega = np.zeros_like(spec.omega)
    for row_idx in range(spec.Kprime):
        support = np.flatnonzero(spec.omega[row_idx] > 0.0)
        row_vals = global_w[support]
        if degenerate or row_vals.sum() <= 1e-14:
            warnings.warn(
                "degenerate information-borrowing indices; "
                "falling back to equal weights",
                UserWarning,
            )
            omega[row_idx, support] = 1.0 / support.size
        else:
            omega[row_idx, support] = row_vals / row_vals.sum()
    return replace(spec, omega=omega, weight_mode=FIXED)
