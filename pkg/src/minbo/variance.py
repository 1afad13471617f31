"""Plug-in asymptotic covariance matrices, standard errors, and reports.

All population expectations are replaced by 1/n sample averages at the
fitted parameter values.  The integrated estimator's covariance for a
scheme with column sums ``wt_m`` is

    Gamma^{-1} { Sigma - sum_m (2 wt_m - wt_m^2) Lambda_m S_m Lambda_m'
                 + sum_{m != m'} wt_m wt_m' Lambda_m S_m S_{h_m h_m'}
                   S_m'' Lambda_m'' } Gamma^{-T}

of which the single-row and identity-array schemes are special cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NonPositiveVariance
from .model_core import MainDataset, main_score, main_score_jacobian
from .numerics import normal_quantile, solve_spd
from .schemes import SchemeSpec


@dataclass(frozen=True, eq=False)
class VarianceComponents:
    """Sample moment matrices entering every covariance formula.

    ``cross[k][k2]`` holds the (d_k, d_k2) product moment of the masked
    secondary rows; its diagonal blocks equal the per-dataset second
    moment matrices.
    """

    gamma: np.ndarray  # (p, p) mean score derivative
    sigma: np.ndarray  # (p, p) second moment of main scores
    lambdas: list[np.ndarray]  # K matrices (p, d_k)
    s_mats: list[np.ndarray]  # K matrices (d_k, d_k)
    cross: list[list[np.ndarray]]  # K x K product moments
    n: int

    @property
    def K(self) -> int:
        return len(self.lambdas)

    @property
    def vtilde(self) -> np.ndarray:
        """Unweighted sandwich ``Gamma^{-1} Sigma Gamma^{-T}``."""
        return _sandwich(self.gamma, self.sigma)


def _sandwich(gamma: np.ndarray, middle: np.ndarray) -> np.ndarray:
    # Gamma is symmetric negative definite; route the solves through -Gamma
    # (two sign flips cancel).  NotPositiveDefinite propagates.
    half = solve_spd(-gamma, middle)
    full = solve_spd(-gamma, half.T).T
    return 0.5 * (full + full.T)


def variance_components(data: MainDataset, beta_hat, el_fits, secondaries=None) -> VarianceComponents:
    """Assemble the sample moments at beta_hat and the fitted theta values.

    ``secondaries`` is accepted for interface symmetry and shape checks;
    the masked moment rows are taken from the fits, which already hold
    them at their solutions.
    """
    n = data.n
    if secondaries is not None:
        for sec in secondaries:
            if sec.n != n:
                raise ValueError("secondary dataset size differs from the main data")
    rows = []
    for fit in el_fits:
        if fit.moment_rows.shape[0] != n:
            raise ValueError("fit size differs from the main data")
        if not (fit.converged or fit.no_information):
            raise ValueError("all empirical-likelihood fits must have converged")
        rows.append(fit.moment_rows)
    g = main_score(data, beta_hat)
    gamma = main_score_jacobian(data, beta_hat)
    sigma = g.T @ g / n
    lambdas = [g.T @ h / n for h in rows]
    s_mats = [fit.s for fit in el_fits]
    cross = [[rows[k].T @ rows[k2] / n for k2 in range(len(rows))]
             for k in range(len(rows))]
    return VarianceComponents(
        gamma=gamma, sigma=0.5 * (sigma + sigma.T), lambdas=lambdas,
        s_mats=s_mats, cross=cross, n=n,
    )


def scheme_variance(comp: VarianceComponents, spec: SchemeSpec) -> np.ndarray:
    """Asymptotic covariance of sqrt(n)(beta_hat - beta0) for one scheme."""
    wt = spec.omega_tilde
    if len(wt) != comp.K:
        raise ValueError(f"scheme covers {len(wt)} datasets, components {comp.K}")
    middle = comp.sigma.copy()
    for m in range(comp.K):
        if wt[m] == 0.0:
            continue
        ls = comp.lambdas[m] @ comp.s_mats[m]
        middle -= (2.0 * wt[m] - wt[m] ** 2) * ls @ comp.lambdas[m].T
    for m in range(comp.K):
        for m2 in range(comp.K):
            if m == m2 or wt[m] == 0.0 or wt[m2] == 0.0:
                continue
            term = (comp.lambdas[m] @ comp.s_mats[m] @ comp.cross[m][m2]
                    @ comp.s_mats[m2].T @ comp.lambdas[m2].T)
            middle += wt[m] * wt[m2] * term
    return _sandwich(comp.gamma, 0.5 * (middle + middle.T))


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """Point estimates with Wald inference and relative-efficiency ratios."""

    beta_hat: np.ndarray
    V: np.ndarray  # covariance of sqrt(n)(beta_hat - beta0)
    ase: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    ere: np.ndarray | None
    n: int
    level: float
    scheme_label: str


def summarize(beta_hat, V, n: int, reference_V=None, level: float = 0.95,
              scheme_label: str = "") -> EstimateReport:
    """Standard errors, Wald intervals, and efficiency vs. a reference.

    ``ase_j = sqrt(V_jj / n)``; the efficiency ratio divides the
    reference variance by this estimator's variance, so values above
    one favor this estimator.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    V = np.asarray(V, dtype=float)
    diag = np.diagonal(V)
    if np.any(diag <= 0.0):
        raise NonPositiveVariance(f"variance diagonal {diag} not positive")
    ase = np.sqrt(diag / n)
    z = normal_quantile(0.5 + level / 2.0)
    ere = None
    if reference_V is not None:
        ref_diag = np.diagonal(np.asarray(reference_V, dtype=float))
        if np.any(ref_diag <= 0.0):
            raise NonPositiveVariance("reference variance diagonal not positive")
        ere = ref_diag / diag
    return EstimateReport(
        beta_hat=beta_hat,
        V=V,
        ase=ase,
        ci_lower=beta_hat - z * ase,
        ci_upper=beta_hat + z * ase,
        ere=ere,
        n=n,
        level=level,
        scheme_label=scheme_label,
    )
