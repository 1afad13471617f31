"""Newton solvers for the unweighted and re-weighted main estimating equation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import NotConverged, Separation
from .model_core import MainDataset
from .numerics import solve_spd, symmetrize
from .schemes import IntegratedScore

_SCORE_TOL = 1e-10
_MAX_ITER = 100
_MAX_HALVINGS = 30
_SEPARATION_BOUND = 30.0  # expit saturates to machine precision well before


@dataclass(frozen=True, eq=False)
class BetaSolution:
    """Root of the (possibly re-weighted) logistic estimating equation."""

    beta_hat: np.ndarray
    score_residual: float
    iterations: int
    converged: bool


def _newton_logistic(data: MainDataset, weights: np.ndarray, beta0: np.ndarray) -> BetaSolution:
    """Damped Newton on ``sum_i w_i x_i (y_i - expit(x_i' beta)) = 0``.

    The residual is the max-norm of the summed score, matching the
    reported ``score_residual``.
    """
    X, y, n = data.X, data.y, data.n
    beta = np.array(beta0, dtype=float, copy=True)

    def score(b):
        return (weights * (y - expit(X @ b))) @ X

    current = score(beta)
    norm = np.abs(current).max()
    for iteration in range(1, _MAX_ITER + 1):
        if norm <= _SCORE_TOL:
            return BetaSolution(beta, float(norm), iteration - 1, True)
        mu = expit(X @ beta)
        info = symmetrize((X * (weights * mu * (1.0 - mu))[:, None]).T @ X)
        step = solve_spd(info, current)
        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = beta + scale * step
            cand_score = score(cand)
            cand_norm = np.abs(cand_score).max()
            if cand_norm < norm:
                break
            scale *= 0.5
        beta = cand
        current, norm = cand_score, cand_norm
        if np.abs(beta).max() > _SEPARATION_BOUND:
            raise Separation(
                f"coefficients diverged beyond {_SEPARATION_BOUND}; "
                "data are separated"
            )
    if norm <= _SCORE_TOL:
        return BetaSolution(beta, float(norm), _MAX_ITER, True)
    raise NotConverged(f"score residual {norm:.3e} after {_MAX_ITER} iterations")


def fit_unweighted(data: MainDataset) -> BetaSolution:
    """Logistic maximum likelihood via Newton with step halving."""
    return _newton_logistic(data, np.ones(data.n), np.zeros(data.p))


def fit_weighted(data: MainDataset, score: IntegratedScore,
                 beta0: np.ndarray | None = None) -> BetaSolution:
    """Solve the re-weighted estimating equation with integrated scores.

    The equation is homogeneous of degree one in the scores, so any
    positive rescaling leaves the root unchanged.  Initialized at the
    unweighted maximum likelihood estimate unless beta0 is supplied.
    """
    p_star = np.asarray(score.p_star, dtype=float)
    if p_star.shape != (data.n,):
        raise ValueError(f"score length {p_star.shape} does not match n={data.n}")
    if beta0 is None:
        beta0 = fit_unweighted(data).beta_hat
    return _newton_logistic(data, p_star, np.asarray(beta0, dtype=float))
