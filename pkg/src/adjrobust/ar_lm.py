"""Assumption-robust estimate with interacted linear regressions.

The point estimate and every bootstrap resample run through the same batched
core. A resample is encoded as a row of multinomial counts (frequency weights)
over the original units, so B resamples are B rows of one count matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ar_core import normal_quantile
from .data import AdjustmentSpec, AREstimate, Method, ObservationTable, TiltSolution, TiltStatus
from .errors import Infeasible, RankDeficient, SingularHessian, TooManyDegenerateResamples
from .nuisance import fit_interacted_ols
from .streams import stream
from .tilt import _CONVERGED, _INFEASIBLE, _MAXITER, _SINGULAR, solve_tilt_batch

DEFAULT_BOOTSTRAP = 1000
MAX_SKIPPED_FRACTION = 0.05
_GRAM_COND_LIMIT = 1e12
_CHUNK = 250

_OK, _RANK, _NOT_CONVERGED, _SINGULAR_TILT = range(4)


@dataclass
class _Batch:
    estimate: np.ndarray  # B
    per_set: np.ndarray  # B x K
    code: np.ndarray  # B
    lam: np.ndarray
    weights: np.ndarray
    tilt_status: np.ndarray
    grad_norm: np.ndarray
    iterations: np.ndarray
    log_value: np.ndarray


def _weighted_ls(F, D, t):
    """Batched weighted least squares; D is B x n x q, t is B x n."""
    FD = D * F[:, :, None]
    gram = FD.transpose(0, 2, 1) @ D
    rhs = (FD.transpose(0, 2, 1) @ t[:, :, None])[:, :, 0]
    cond = np.linalg.cond(gram)
    ok = np.isfinite(cond) & (cond < _GRAM_COND_LIMIT)
    gram[~ok] = np.eye(gram.shape[1])
    coef = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
    return coef, ok


def _ar_lm_batch(y, a, x, spec: AdjustmentSpec, F) -> _Batch:
    B, n = F.shape
    fsum = F.sum(axis=1)
    # centre covariates at their (resample) mean
    xc = x[None, :, :] - (F @ x / fsum[:, None])[:, None, :]
    common = list(spec.intersection)
    C = np.concatenate([np.ones((B, n, 1)), xc[:, :, common]], axis=2)
    yb = np.broadcast_to(y, (B, n))
    ok = np.ones(B, dtype=bool)
    proj = []
    for cols in spec.sets:
        xs = xc[:, :, list(cols)]
        s = len(cols)
        D = np.concatenate(
            [np.ones((B, n, 1)), xs, np.broadcast_to(a[None, :, None], (B, n, 1)), a[None, :, None] * xs],
            axis=2,
        )
        coef, ok_fit = _weighted_ls(F, D, yb)
        tau_hat = coef[:, 1 + s, None] + (xs @ coef[:, 2 + s :, None])[:, :, 0]
        ab, ok_proj = _weighted_ls(F, C, tau_hat)
        ok &= ok_fit & ok_proj
        proj.append(ab)
    fitted = C @ np.stack(proj, axis=2)  # B x n x K
    G = fitted[:, :, :1] - fitted[:, :, 1:]
    G = np.where(ok[:, None, None], G, 0.0)
    res = solve_tilt_batch(G, F)
    w = res.weights
    wf = w * F / fsum[:, None]
    per_set = (wf[:, None, :] @ fitted)[:, 0, :]
    # a_1 + b_1' P_n[w X_common]
    a1 = proj[0]
    estimate = a1[:, 0] + np.einsum("bc,bc->b", a1[:, 1:], (wf[:, None, :] @ C[:, :, 1:])[:, 0, :])
    code = np.full(B, _OK)
    code[res.status != _CONVERGED] = _NOT_CONVERGED
    code[res.status == _SINGULAR] = _SINGULAR_TILT
    code[~ok] = _RANK
    return _Batch(
        estimate, per_set, code, res.lam, w, res.status, res.grad_norm, res.iterations, res.log_value
    )


def _tilt_solution(batch: _Batch, i: int) -> TiltSolution:
    status = {
        _CONVERGED: TiltStatus.CONVERGED,
        _INFEASIBLE: TiltStatus.INFEASIBLE,
        _MAXITER: TiltStatus.MAX_ITERATIONS,
    }.get(int(batch.tilt_status[i]), TiltStatus.MAX_ITERATIONS)
    return TiltSolution(
        lam=batch.lam[i],
        weights=batch.weights[i],
        status=status,
        grad_norm=float(batch.grad_norm[i]),
        iterations=int(batch.iterations[i]),
        objective=float(np.exp(batch.log_value[i])),
    )


def point_estimate_lm(table: ObservationTable, spec: AdjustmentSpec):
    """Estimate, per-set reweighted projections and tilt, without variance.

    Raises:
        RankDeficient: an interacted design is not of full column rank.
        Infeasible: the tilt does not converge.
    """
    spec.validate_for(table.p)
    for cols in spec.sets:
        fit_interacted_ols(table, cols)  # raises RankDeficient naming the column
    batch = _ar_lm_batch(table.y, table.a, table.x, spec, np.ones((1, table.n)))
    code = int(batch.code[0])
    if code == _RANK:
        raise RankDeficient("projection onto the shared covariates is rank deficient")
    if code == _SINGULAR_TILT:
        raise SingularHessian("tilt Hessian is singular: projected contrasts are degenerate")
    tilt = _tilt_solution(batch, 0)
    if code != _OK:
        raise Infeasible(f"tilt status {tilt.status.value}", solution=tilt)
    return float(batch.estimate[0]), batch.per_set[0], tilt


def bootstrap_draws(table: ObservationTable, spec: AdjustmentSpec, B: int, seed: int):
    """Replicate estimates for B resamples and the number skipped.

    Resample b draws n indices with replacement from ``stream(seed, b,
    "bootstrap")``. Resamples with a rank-deficient design or a non-converged
    tilt are skipped.
    """
    n = table.n
    draws = []
    skipped = 0
    for lo in range(0, B, _CHUNK):
        hi = min(B, lo + _CHUNK)
        F = np.empty((hi - lo, n))
        for j, b in enumerate(range(lo, hi)):
            idx = stream(seed, b, "bootstrap").integers(0, n, size=n)
            F[j] = np.bincount(idx, minlength=n)
        batch = _ar_lm_batch(table.y, table.a, table.x, spec, F)
        good = batch.code == _OK
        skipped += int((~good).sum())
        draws.append(batch.estimate[good])
    return np.concatenate(draws), skipped


def bootstrap_variance(
    table: ObservationTable,
    spec: AdjustmentSpec,
    B: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    estimate: float | None = None,
) -> tuple[float, int]:
    """n-scaled bootstrap variance n * mean_b (est_b - est)^2 and the skip count.

    Raises:
        TooManyDegenerateResamples: more than 5% of resamples were skipped.
    """
    if B < 100:
        raise ValueError(f"B must be at least 100, got {B}")
    if estimate is None:
        estimate = point_estimate_lm(table, spec)[0]
    draws, skipped = bootstrap_draws(table, spec, B, seed)
    if skipped > MAX_SKIPPED_FRACTION * B:
        raise TooManyDegenerateResamples(f"{skipped} of {B} bootstrap resamples were degenerate")
    return float(table.n * np.mean((draws - estimate) ** 2)), skipped


def ar_estimate_lm(
    table: ObservationTable,
    spec: AdjustmentSpec,
    alpha: float = 0.05,
    bootstrap: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> AREstimate:
    """Linear-model assumption-robust estimate with a bootstrap interval.

    ``nu`` is reported as (1, 0, ..., 0): the estimate is read off the first
    set's projection, and at a converged tilt every set's reweighted projection
    gives the same value.
    """
    z = normal_quantile(alpha)
    estimate, per_set, tilt = point_estimate_lm(table, spec)
    variance, skipped = bootstrap_variance(table, spec, bootstrap, seed, estimate)
    half = z * np.sqrt(variance / table.n)
    nu = np.zeros(spec.k)
    nu[0] = 1.0
    return AREstimate(
        estimate=estimate,
        variance=variance,
        ci_lo=estimate - half,
        ci_hi=estimate + half,
        level=1 - alpha,
        per_set_reweighted=per_set,
        nu=nu,
        bias_correction=0.0,
        method=Method.LINEAR_MODEL,
        tilt=tilt,
        n=table.n,
        bootstrap_skipped=skipped,
    )
