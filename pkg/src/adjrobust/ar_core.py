"""Assumption-robust ATE estimate from cross-fitted nonparametric nuisances.

Given out-of-fold outcome means, propensities and projections for each
adjustment set, the estimator tilts the sample so all sets' projected contrasts
agree, averages the AIPW pseudo-outcomes under the tilted weights, combines the
per-set averages with the regression weights ``nu``, and adds a bias
correction for the estimated tilt.
"""

from __future__ import annotations

from statistics import NormalDist

import numpy as np

from .data import AdjustmentSpec, AREstimate, ContrastPanel, Method, ObservationTable
from .errors import Infeasible, PropensityOutOfRange, SingularGram
from .nuisance import NuisanceFits
from .tilt import solve_tilt

GRAM_CONDITION_LIMIT = 1e12


def normal_quantile(alpha: float) -> float:
    """Upper ``alpha/2`` quantile of the standard normal."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def aipw_pseudo(y, a, mu0, mu1, e):
    """Doubly robust per-unit contrast; works elementwise on arrays."""
    e = np.asarray(e, dtype=float)
    if np.any((e <= 0) | (e >= 1)):
        raise PropensityOutOfRange("propensity must lie strictly inside (0, 1)")
    y, a, mu0, mu1 = (np.asarray(v, dtype=float) for v in (y, a, mu0, mu1))
    out = (mu1 - mu0) + a * (y - mu1) / e - (1 - a) * (y - mu0) / (1 - e)
    return out if out.ndim else float(out)


def contrast_panel(table: ObservationTable, nuisances: NuisanceFits) -> ContrastPanel:
    y = table.y[:, None]
    a = table.a[:, None]
    tau_aipw = aipw_pseudo(y, a, nuisances.mu0, nuisances.mu1, nuisances.e)
    proj = nuisances.proj_tau
    return ContrastPanel(
        tau_hat=nuisances.tau_hat,
        tau_aipw=tau_aipw,
        g_hat=proj[:, :1] - proj[:, 1:],
        proj_tau=proj,
    )


def _as_matrix(g):
    g = np.asarray(g, dtype=float)
    return g[:, None] if g.ndim == 1 else g


def weighted_gram(weights, g_hat):
    g = _as_matrix(g_hat)
    return (g * weights[:, None]).T @ g / g.shape[0]


def compute_nu(weights, g_hat, tau_s1, tau1_r: float) -> np.ndarray:
    """Combination weights (nu_1, ..., nu_K), summing to one.

    nu_{2:K} solves P_n[w g g'] nu = P_n[w g (tau_1 - tau1_r)]. A column of
    ``g_hat`` that is identically zero (two sets with the same projection)
    carries no information and gets nu = 0.

    Raises:
        SingularGram: the weighted Gram matrix of the live columns is singular.
    """
    w = np.asarray(weights, dtype=float)
    g = _as_matrix(g_hat)
    n, d = g.shape
    rhs_all = (g * w[:, None]).T @ (np.asarray(tau_s1, dtype=float) - tau1_r) / n
    live = np.abs(g).max(axis=0) > 0
    nu_tail = np.zeros(d)
    if live.any():
        gl = g[:, live]
        gram = weighted_gram(w, gl)
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
            raise SingularGram(f"weighted Gram of g_hat is singular (condition {cond:.3g})", cond)
        nu_tail[live] = np.linalg.solve(gram, rhs_all[live])
    return np.concatenate([[1.0 - nu_tail.sum()], nu_tail])


def bias_correction(weights, lam, g_hat, delta_aipw, proj_tau, nu, tau1_r: float) -> float:
    """lam' P_n[ w (delta - g) (sum_k nu_k proj_k - tau1_r) ]."""
    w = np.asarray(weights, dtype=float)
    g = _as_matrix(g_hat)
    delta = _as_matrix(delta_aipw)
    combo = np.asarray(proj_tau, dtype=float) @ np.asarray(nu, dtype=float) - tau1_r
    inner = ((delta - g) * (w * combo)[:, None]).mean(axis=0)
    return float(np.asarray(lam, dtype=float) @ inner)


def influence_scores(weights, lam, g_hat, tau_aipw, delta_aipw, proj_tau, nu, ar_estimate):
    w = np.asarray(weights, dtype=float)
    g = _as_matrix(g_hat)
    delta = _as_matrix(delta_aipw)
    nu = np.asarray(nu, dtype=float)
    first = w * (np.asarray(tau_aipw) @ nu - ar_estimate)
    combo = np.asarray(proj_tau) @ nu - ar_estimate
    second = ((delta - g) @ np.asarray(lam, dtype=float)) * w * combo
    return first + second


def plugin_variance(weights, lam, g_hat, tau_aipw, delta_aipw, proj_tau, nu, ar_estimate) -> float:
    """Empirical variance (1/n) of the per-unit plug-in influence scores."""
    scores = influence_scores(weights, lam, g_hat, tau_aipw, delta_aipw, proj_tau, nu, ar_estimate)
    return float(np.var(scores))


def ar_estimate_aipw(
    table: ObservationTable,
    spec: AdjustmentSpec,
    nuisances: NuisanceFits,
    alpha: float = 0.05,
    panel: ContrastPanel | None = None,
) -> AREstimate:
    """Run the full cross-fitted estimator and its normal interval.

    Raises:
        Infeasible: the tilt has no finite minimizer; the exception carries the
            solver output as ``.solution``.
        SingularGram: the projected contrasts are degenerate under the weights.
    """
    z = normal_quantile(alpha)
    panel = panel or contrast_panel(table, nuisances)
    tilt = solve_tilt(panel.g_hat)
    if not tilt.converged:
        raise Infeasible(f"tilt status {tilt.status.value}", solution=tilt)
    w = tilt.weights
    per_set = (w[:, None] * panel.tau_aipw).mean(axis=0)
    tau1_r = float(per_set[0])
    nu = compute_nu(w, panel.g_hat, panel.tau_hat[:, 0], tau1_r)
    delta = panel.delta_aipw
    b_n = bias_correction(w, tilt.lam, panel.g_hat, delta, panel.proj_tau, nu, tau1_r)
    estimate = float(nu @ per_set + b_n)
    variance = plugin_variance(
        w, tilt.lam, panel.g_hat, panel.tau_aipw, delta, panel.proj_tau, nu, estimate
    )
    half = z * np.sqrt(variance / table.n)
    live = np.abs(panel.g_hat).max(axis=0) > 0
    cond = float(np.linalg.cond(weighted_gram(w, panel.g_hat[:, live]))) if live.any() else 1.0
    return AREstimate(
        estimate=estimate,
        variance=variance,
        ci_lo=estimate - half,
        ci_hi=estimate + half,
        level=1 - alpha,
        per_set_reweighted=per_set,
        nu=nu,
        bias_correction=b_n,
        method=Method.AIPW_CROSSFIT,
        tilt=tilt,
        n=table.n,
        gram_condition=cond,
    )
