"""Empirical-likelihood fit for one secondary dataset.

Maximizing the product of subject masses under the mean-one and moment
constraints yields weights ``p_i = (1/n) / (1 + lam' R_i h_i(theta))``
where (lam, theta) solve a stacked pair of estimating equations: the
constraint equation in lam and the profile score in theta.  The inner
lam problem is the smooth convex dual, solved by damped Newton on a
quadratically extended logarithm so iterates stay globally defined; the
outer theta step is a Newton step on the profiled equation via the
Schur complement of the joint Jacobian, with a full inner solve per
trial point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .exceptions import (
    HullViolation,
    NoInformationWarning,
    NotConverged,
    NotPositiveDefinite,
    RankDeficient,
)
from .model_core import MomentSystem, SecondaryDataset, WorkingModelSpec
from .numerics import inv_spd, solve_spd, symmetrize

INNER_TOL = 1e-10
OUTER_TOL = 1e-8
MAX_INNER = 100
MAX_OUTER = 200
_LAMBDA_DIVERGED = 1e10
_STALL_LIMIT = 10


def _logstar(x: np.ndarray, eps: float) -> np.ndarray:
    """log(x) for x >= eps, quadratic extension below (value/C1/C2 match)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    low = x < eps
    out[~low] = np.log(x[~low])
    xl = x[low]
    out[low] = np.log(eps) - 1.5 + 2.0 * xl / eps - xl * xl / (2.0 * eps * eps)
    return out


def _dlogstar(x: np.ndarray, eps: float) -> np.ndarray:
    out = np.empty_like(x)
    low = x < eps
    out[~low] = 1.0 / x[~low]
    out[low] = 2.0 / eps - x[low] / (eps * eps)
    return out


def _d2logstar(x: np.ndarray, eps: float) -> np.ndarray:
    out = np.empty_like(x)
    low = x < eps
    out[~low] = -1.0 / (x[~low] ** 2)
    out[low] = -1.0 / (eps * eps)
    return out


def _column_scale(H: np.ndarray) -> np.ndarray:
    """Per-column root mean square, floored at one.

    The dual is solved on unit-scale columns so the residual tolerance
    is relative to the size of h, with an absolute floor for small
    moments; otherwise large basis blocks would demand gradient
    precision below the float resolution of the objective.
    """
    scale = np.sqrt((H * H).mean(axis=0))
    return np.maximum(scale, 1.0)


def _newton_dual(H, lam0, eps, tol, max_iter):
    """Minimize -(1/n) sum logstar(1 + lam'H_i); returns (lam, info).

    Works on RMS-scaled columns internally and reports lam in original
    units.  Raises HullViolation when the dual is unbounded (iterates
    diverge) or when the converged point fails the raw constraint with
    strict positivity ``1 + lam'H_i > 1/(2n)``.
    """
    col_scale = _column_scale(H)
    H = H / col_scale
    n = H.shape[0]
    lam = np.array(lam0, dtype=float, copy=True) * col_scale

    def value(l):
        return -_logstar(1.0 + H @ l, eps).mean()

    def gradient(l):
        gprime = _dlogstar(1.0 + H @ l, eps)
        return -(H * gprime[:, None]).sum(axis=0) / n

    obj = value(lam)
    objectives = [obj]
    for _ in range(max_iter):
        denom = 1.0 + H @ lam
        grad = gradient(lam)
        grad_norm = np.abs(grad).max()
        if grad_norm <= tol:
            break
        curv = -_d2logstar(denom, eps)
        hess = symmetrize((H * curv[:, None]).T @ H / n)
        direction = -solve_spd(hess, grad)
        slope = grad @ direction
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = lam + step * direction
            cand_obj = value(cand)
            if cand_obj <= obj + 1e-4 * step * slope:
                accepted = True
                break
            if step == 1.0:
                # Near the optimum the descent falls below the float
                # resolution of the objective; judge the full Newton
                # step by gradient contraction instead.
                if np.abs(gradient(cand)).max() <= 0.9 * grad_norm:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break  # no further progress possible at machine precision
        lam = cand
        obj = cand_obj
        objectives.append(obj)
        if np.abs(lam).max() > _LAMBDA_DIVERGED:
            raise HullViolation("dual iterates diverged; zero outside the hull")

    denom = 1.0 + H @ lam
    nonzero = np.any(H != 0.0, axis=1)
    if nonzero.any() and denom[nonzero].min() <= 0.5 / n:
        raise HullViolation("constraint denominator at the feasibility boundary")
    raw = (H / denom[:, None]).sum(axis=0) / n
    if np.abs(raw).max() > tol:
        raise HullViolation("raw constraint equation not solvable in the interior")
    info = {"iterations": len(objectives) - 1, "objectives": objectives,
            "raw_residual": float(np.abs(raw).max())}
    return lam / col_scale, info


def solve_lambda(H: np.ndarray, lambda0: np.ndarray | None = None,
                 tol: float = INNER_TOL, max_iter: int = MAX_INNER,
                 full_output: bool = False):
    """Lagrange multiplier solving ``(1/n) sum H_i / (1 + lam'H_i) = 0``.

    Rows of H are the masked moments R_i h_i.  Returns lam with all
    denominators strictly positive; raises HullViolation when zero lies
    outside the convex hull of the rows.  If every row is zero, warns
    and returns the zero vector.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValueError("H must be a 2-D array of moment rows")
    if not np.isfinite(H).all():
        raise ValueError("moment rows must be finite")
    d = H.shape[1]
    if not np.any(H):
        warnings.warn("all constraint rows are zero", NoInformationWarning)
        return (np.zeros(d), {"iterations": 0, "objectives": [0.0],
                              "raw_residual": 0.0}) if full_output else np.zeros(d)
    lam0 = np.zeros(d) if lambda0 is None else np.asarray(lambda0, dtype=float)
    lam, info = _newton_dual(H, lam0, 1.0 / H.shape[0], tol, max_iter)
    return (lam, info) if full_output else lam


@dataclass(frozen=True, eq=False)
class ELFit:
    """Solution of the constrained maximization for one secondary dataset.

    ``moment_rows`` stores the masked rows R_i h_i at theta_hat so that
    cross-dataset moment products can be formed without refitting.
    The matrices follow the usual plug-in definitions: S11 the second
    moment of the rows, S12 the mean Jacobian, Omega the inverse of
    S12' S11^{-1} S12, and S = S11^{-1} - S11^{-1} S12 Omega S12' S11^{-1}.
    """

    theta_hat: np.ndarray
    lambda_hat: np.ndarray
    weights: np.ndarray
    converged: bool
    n_outer: int
    n_inner: int
    s11: np.ndarray
    s12: np.ndarray
    omega: np.ndarray
    s: np.ndarray
    moment_rows: np.ndarray
    no_information: bool = False

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def _stacked_residual(H, J, lam):
    """Max-norm of both stacked equations; the constraint part is judged
    relative to the column scales of h, matching the inner solver."""
    denom = 1.0 + H @ lam
    w = 1.0 / denom
    f1 = (H * w[:, None]).sum(axis=0) / H.shape[0]
    jlam = np.einsum("idr,d->ir", J, lam)
    f2 = (jlam * w[:, None]).sum(axis=0) / H.shape[0]
    resid = max(np.abs(f1 / _column_scale(H)).max(), np.abs(f2).max())
    return resid, f2, w, jlam


def _theta_step(system, theta, H, J, lam, w, jlam, f2):
    """Newton step on the profiled theta equation via Schur complement."""
    n = H.shape[0]
    w2 = w * w
    a_neg = symmetrize((H * w2[:, None]).T @ H / n)  # equals -A, positive definite
    b = (np.einsum("i,idr->dr", w, J) - (H * w2[:, None]).T @ jlam) / n
    c = system.curvature_term(theta, lam, w) - (jlam * w2[:, None]).T @ jlam / n
    try:
        m = symmetrize(c + b.T @ solve_spd(a_neg, b))
        return -solve_spd(m, f2)
    except NotPositiveDefinite as exc:
        raise RankDeficient(
            "moment Jacobian lost column rank; working model unidentified"
        ) from exc


def _profile_objective(system, theta, eps):
    """Profile criterion mean logstar(1 + lam(theta)'H(theta)); large if infeasible."""
    H = system.moments(theta)
    if not np.any(H):
        return 0.0
    try:
        lam, _ = _newton_dual(H, np.zeros(H.shape[1]), eps, INNER_TOL, MAX_INNER)
    except (HullViolation, NotPositiveDefinite):
        return 1e8
    return float(_logstar(1.0 + H @ lam, eps).mean())


def _degenerate_fit(system, theta0) -> ELFit:
    n, d, r = system.n, system.d, system.r
    warnings.warn("no observed subjects in the secondary dataset",
                  NoInformationWarning)
    return ELFit(
        theta_hat=np.array(theta0, dtype=float, copy=True),
        lambda_hat=np.zeros(d),
        weights=np.full(n, 1.0 / n),
        converged=True,
        n_outer=0,
        n_inner=0,
        s11=np.zeros((d, d)),
        s12=np.zeros((d, r)),
        omega=np.zeros((r, r)),
        s=np.zeros((d, d)),
        moment_rows=np.zeros((n, d)),
        no_information=True,
    )


def fit_el(data: SecondaryDataset, spec: WorkingModelSpec, theta0,
           inner_tol: float = INNER_TOL, outer_tol: float = OUTER_TOL,
           max_outer: int = MAX_OUTER) -> ELFit:
    """Solve the stacked lambda/theta equations and build the fit matrices.

    Alternates a full inner lambda solve with a damped Newton step on
    the theta equation; converges when both stacked residuals fall
    below ``outer_tol`` in max-norm.  Falls back to derivative-free
    minimization of the profile criterion if the residual stalls for
    ten consecutive outer steps.
    """
    system = MomentSystem(data, spec)
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (system.r,):
        raise ValueError(f"theta0 must have shape ({system.r},)")
    if not np.isfinite(theta0).all():
        raise ValueError("theta0 must be finite")
    if system.n_observed == 0:
        return _degenerate_fit(system, theta0)

    n, eps = system.n, 1.0 / system.n
    theta = theta0.copy()
    lam = np.zeros(system.d)
    total_inner = 0
    best_resid = np.inf
    stall = 0
    tried_fallback = False
    converged = False
    outer = 0

    H = system.moments(theta)
    try:
        lam, info = _newton_dual(H, lam, eps, inner_tol, MAX_INNER)
    except HullViolation:
        # Zero can fall outside the hull at a poor start; restart from
        # the method-of-moments estimate before giving up.
        theta = two_step_gmm_init(data, spec)
        H = system.moments(theta)
        lam, info = _newton_dual(H, np.zeros(system.d), eps, inner_tol, MAX_INNER)
    total_inner += info["iterations"]

    while outer < max_outer:
        outer += 1
        J = system.jacobians(theta)
        resid, f2, w, jlam = _stacked_residual(H, J, lam)
        if resid <= outer_tol:
            converged = True
            break
        if resid >= best_resid * (1.0 - 1e-12):
            stall += 1
        else:
            stall = 0
            best_resid = resid
        if stall >= _STALL_LIMIT:
            if tried_fallback:
                break
            tried_fallback = True
            result = minimize(
                lambda t: _profile_objective(system, t, eps), theta,
                method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000},
            )
            theta = result.x
            H = system.moments(theta)
            lam, info = _newton_dual(H, np.zeros(system.d), eps, inner_tol, MAX_INNER)
            total_inner += info["iterations"]
            stall = 0
            best_resid = np.inf
            continue

        dtheta = _theta_step(system, theta, H, J, lam, w, jlam, f2)
        step = 1.0
        accepted = False
        for _ in range(30):
            theta_new = theta + step * dtheta
            H_new = system.moments(theta_new)
            try:
                lam_new, info = _newton_dual(H_new, lam, eps, inner_tol, MAX_INNER)
            except HullViolation:
                step *= 0.5
                continue
            total_inner += info["iterations"]
            resid_new, _, _, _ = _stacked_residual(
                H_new, system.jacobians(theta_new), lam_new
            )
            if resid_new < resid:
                theta, lam, H = theta_new, lam_new, H_new
                accepted = True
                break
            step *= 0.5
        if not accepted:
            stall = _STALL_LIMIT  # force the fallback on the next pass
    if not converged:
        raise NotConverged(
            f"stacked residual {best_resid:.3e} above {outer_tol:.1e} "
            f"after {outer} outer steps"
        )

    denom = 1.0 + H @ lam
    weights = (1.0 / n) / denom
    if np.any(weights <= 0.0) or abs(weights.sum() - 1.0) > 1e-10:
        raise NotConverged("weight invariants violated at the solution")
    s11 = symmetrize(H.T @ H / n)
    s12 = system.jacobian_mean(theta)
    s11_inv_s12 = solve_spd(s11, s12)
    try:
        omega = inv_spd(symmetrize(s12.T @ s11_inv_s12))
    except NotPositiveDefinite as exc:
        raise RankDeficient(
            "moment Jacobian lost column rank; working model unidentified"
        ) from exc
    s = inv_spd(s11) - s11_inv_s12 @ omega @ s11_inv_s12.T
    s = 0.5 * (s + s.T)
    return ELFit(
        theta_hat=theta,
        lambda_hat=lam,
        weights=weights,
        converged=True,
        n_outer=outer,
        n_inner=total_inner,
        s11=s11,
        s12=s12,
        omega=omega,
        s=s,
        moment_rows=H,
        no_information=False,
    )


def two_step_gmm_init(data: SecondaryDataset, spec: WorkingModelSpec,
                      tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Two-step method-of-moments initializer for the EL solve.

    Minimizes ``hbar(theta)' W hbar(theta)`` by Gauss-Newton, first with
    W = I and then with W equal to the inverse second-moment matrix of
    the masked rows at the first-step estimate.  Root-n consistent for
    the same population value as the full fit.
    """
    system = MomentSystem(data, spec)
    if system.n_observed == 0:
        return np.zeros(system.r)
    theta = _gauss_newton(system, np.zeros(system.r), None, tol, max_iter)
    H = system.moments(theta)
    weight = inv_spd(symmetrize(H.T @ H / system.n))
    return _gauss_newton(system, theta, weight, tol, max_iter)


def _gauss_newton(system, theta, weight, tol, max_iter):
    theta = np.array(theta, dtype=float, copy=True)
    for _ in range(max_iter):
        hbar = system.moments(theta).sum(axis=0) / system.n
        jbar = system.jacobian_mean(theta)
        jw = jbar.T if weight is None else jbar.T @ weight
        grad = jw @ hbar
        if np.abs(grad).max() <= tol:
            return theta
        step = -solve_spd(symmetrize(jw @ jbar), grad)
        obj = hbar @ hbar if weight is None else hbar @ (weight @ hbar)
        scale = 1.0
        for _ in range(40):
            cand = theta + scale * step
            hcand = system.moments(cand).sum(axis=0) / system.n
            cand_obj = hcand @ hcand if weight is None else hcand @ (weight @ hcand)
            if cand_obj < obj or np.abs(scale * step).max() < 1e-14:
                break
            scale *= 0.5
        theta = cand
    hbar = system.moments(theta).sum(axis=0) / system.n
    jw = system.jacobian_mean(theta).T if weight is None \
        else system.jacobian_mean(theta).T @ weight
    if np.abs(jw @ hbar).max() > max(tol, 1e-8):
        raise NotConverged("method-of-moments initializer did not converge")
    return theta
