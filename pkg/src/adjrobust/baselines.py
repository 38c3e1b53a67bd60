"""Per-set baseline intervals and the naive convex hull."""

from __future__ import annotations

import numpy as np

from .ar_core import aipw_pseudo, normal_quantile
from .data import ObservationTable
from .errors import EmptyList
from .nuisance import NuisanceFits, fit_interacted_ols


def ols_ci(table: ObservationTable, set_, alpha: float = 0.05):
    """ATE from the interacted regression, tau + mean(X_S)'gamma, with a sandwich SE.

    The covariate mean is treated as fixed, so on centred covariates this is
    the usual robust interval for the treatment coefficient.
    """
    fit = fit_interacted_ols(table, tuple(set_))
    s = len(fit.set)
    c = np.zeros(2 * s + 2)
    c[1 + s] = 1.0
    c[2 + s :] = fit.x_mean
    est = float(c @ fit.coef)
    se = float(np.sqrt(max(c @ fit.cov_hw @ c, 0.0)))
    half = normal_quantile(alpha) * se
    return est, est - half, est + half


def aipw_ci(table: ObservationTable, k: int, nuisances: NuisanceFits, alpha: float = 0.05):
    """Cross-fitted AIPW interval for adjustment set ``k`` (column of the nuisances)."""
    psi = aipw_pseudo(
        table.y, table.a, nuisances.mu0[:, k], nuisances.mu1[:, k], nuisances.e[:, k]
    )
    est = float(psi.mean())
    se = float(psi.std(ddof=1) / np.sqrt(table.n))
    half = normal_quantile(alpha) * se
    return est, est - half, est + half


def naive_hull(cis):
    """Smallest interval containing every interval in ``cis``."""
    cis = list(cis)
    if not cis:
        raise EmptyList("need at least one interval")
    return min(lo for lo, _ in cis), max(hi for _, hi in cis)
