"""Exponential tilting: minimize the empirical mean of exp(g_i . lam).

The minimizer gives the KL-closest reweighting of the sample under which the
weighted mean of every column of ``g`` is zero. When every row of ``g`` lies in
a common open half-space the objective has infimum zero and no minimizer; that
case is reported as :attr:`TiltStatus.INFEASIBLE` rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TiltSolution, TiltStatus
from .errors import DimensionMismatch, SingularHessian

DIVERGENCE_BOUND = 50.0
VALUE_FLOOR = 1e-12
ARMIJO = 1e-4
MAX_HALVINGS = 60
RIDGE = 1e-12
_COND_LIMIT = 1e14
_DECREMENT_FLOOR = 1e-12
# still this ill-conditioned after the ridge: the columns of g are collinear
_RIDGED_COND_LIMIT = 1e10

_RUNNING, _CONVERGED, _INFEASIBLE, _MAXITER, _SINGULAR = range(5)
_STATUS = {
    _CONVERGED: TiltStatus.CONVERGED,
    _INFEASIBLE: TiltStatus.INFEASIBLE,
    _MAXITER: TiltStatus.MAX_ITERATIONS,
}


def tilt_objective(g_hat, lam):
    """Value, gradient and Hessian of ``lam -> mean(exp(g_hat @ lam))``.

    The largest exponent is factored out before exponentiating and multiplied
    back in at the end, so intermediate terms never overflow.
    """
    g = np.asarray(g_hat, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if g.shape[1] != lam.shape[0]:
        raise DimensionMismatch(f"g_hat has {g.shape[1]} columns, lambda has {lam.shape[0]}")
    s = g @ lam
    m = s.max()
    e = np.exp(s - m)
    n = g.shape[0]
    with np.errstate(over="ignore"):
        scale = np.exp(m)
    value = scale * e.mean()
    grad = scale * (e @ g) / n
    hess = scale * ((g * e[:, None]).T @ g) / n
    return value, grad, hess


@dataclass
class _BatchResult:
    lam: np.ndarray  # B x d
    weights: np.ndarray  # B x n
    status: np.ndarray  # B
    grad_norm: np.ndarray  # B
    log_value: np.ndarray  # B
    iterations: np.ndarray  # B
    condition: np.ndarray  # B


def _state(G, F, fsum, lam):
    s = (G @ lam[:, :, None])[:, :, 0]
    s_live = np.where(F > 0, s, -np.inf)
    m = s_live.max(axis=1)
    e = np.exp(s_live - m[:, None]) * F
    z = e.sum(axis=1) / fsum
    return s, m, e, z


def solve_tilt_batch(G, F=None, tol=1e-10, max_iter=200) -> _BatchResult:
    """Damped Newton for B independent tilt problems at once.

    ``G`` is B x n x d; ``F`` (B x n, optional) holds frequency weights so that a
    bootstrap resample can be expressed without copying rows. Each problem
    follows exactly the iteration it would follow alone.
    """
    G = np.asarray(G, dtype=float)
    B, n, d = G.shape
    F = np.ones((B, n)) if F is None else np.asarray(F, dtype=float)
    fsum = F.sum(axis=1)
    rms = np.sqrt((F[:, None, :] @ G**2)[:, 0, :] / fsum[:, None])
    lam = np.zeros((B, d))
    status = np.full(B, _RUNNING)
    iters = np.zeros(B, dtype=int)
    grad_norm = np.full(B, np.nan)
    log_value = np.zeros(B)
    cond = np.full(B, np.nan)
    eye = np.eye(d)

    s, m, e, z = _state(G, F, fsum, lam)
    for it in range(max_iter + 1):
        active = status == _RUNNING
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Ga, Fa_e, za, ma = G[idx], e[idx], z[idx], m[idx]
        # gradient of the objective divided by its value: the weighted mean of g
        gbar = (Fa_e[:, None, :] @ Ga)[:, 0, :] / (fsum[idx] * za)[:, None]
        logL = ma + np.log(za)
        log_value[idx] = logL
        grad_norm[idx] = np.exp(logL) * np.abs(gbar).max(axis=1)
        iters[idx] = it

        done = np.abs(gbar).max(axis=1) <= tol
        # lam measured in units of 1/rms(g): rescaling g rescales lam inversely
        diverged = (np.linalg.norm(lam[idx] * rms[idx], axis=1) > DIVERGENCE_BOUND) | (
            logL < np.log(VALUE_FLOOR)
        )
        status[idx[done]] = _CONVERGED
        status[idx[~done & diverged]] = _INFEASIBLE
        if it == max_iter:
            status[idx[~done & ~diverged]] = _MAXITER
            break
        step = ~done & ~diverged
        idx = idx[step]
        if idx.size == 0:
            continue
        Ga, gbar = G[idx], gbar[step]
        w = e[idx] / (fsum[idx] * z[idx])[:, None]
        H = (Ga * w[:, :, None]).transpose(0, 2, 1) @ Ga
        # Hessian divided by the objective value; the Newton step is unchanged
        c = np.linalg.cond(H)
        bad = ~np.isfinite(c) | (c > _COND_LIMIT)
        if bad.any():
            scale = np.maximum(np.trace(H[bad], axis1=1, axis2=2) / d, 1.0)
            H[bad] += (RIDGE * scale)[:, None, None] * eye
            c_ridge = np.linalg.cond(H)
            singular = ~np.isfinite(c_ridge) | (c_ridge > _RIDGED_COND_LIMIT)
            if singular.any():
                status[idx[singular]] = _SINGULAR
                cond[idx[singular]] = c[singular]
                keep = ~singular
                idx, Ga, gbar, H, c = idx[keep], Ga[keep], gbar[keep], H[keep], c[keep]
                if idx.size == 0:
                    continue
        cond[idx] = c
        direction = -np.linalg.solve(H, gbar[:, :, None])[:, :, 0]
        slope = np.einsum("bd,bd->b", gbar, direction)  # directional derivative / value

        base = m[idx] + np.log(z[idx])
        new_lam = lam[idx].copy()
        # Newton decrement below what the objective can resolve: take the full
        # step, since the Armijo comparison would only see rounding noise
        exact = -slope < _DECREMENT_FLOOR
        new_lam[exact] = lam[idx][exact] + direction[exact]
        pending = ~exact
        t = 1.0
        for _ in range(MAX_HALVINGS):
            j = np.flatnonzero(pending)
            if j.size == 0:
                break
            cand = lam[idx[j]] + t * direction[j]
            _, m_c, _, z_c = _state(Ga[j], F[idx[j]], fsum[idx[j]], cand)
            ratio = np.exp(m_c + np.log(z_c) - base[j])
            ok = ratio <= 1.0 + ARMIJO * t * slope[j]
            new_lam[j[ok]] = cand[ok]
            pending[j[ok]] = False
            t *= 0.5
        # a failed line search leaves lambda in place; MaxIterations will follow
        lam[idx] = new_lam
        s_new, m_new, e_new, z_new = _state(G[idx], F[idx], fsum[idx], lam[idx])
        s[idx], m[idx], e[idx], z[idx] = s_new, m_new, e_new, z_new

    s_live = np.where(F > 0, s, -np.inf)
    ex = np.exp(s_live - s_live.max(axis=1, keepdims=True))
    weights = ex / ((ex * F).sum(axis=1) / fsum)[:, None]
    return _BatchResult(lam, weights, status, grad_norm, log_value, iters, cond)


def solve_tilt(g_hat, tol: float = 1e-10, max_iter: int = 200, freq=None) -> TiltSolution:
    """Solve the tilt problem for one ``n x (K-1)`` contrast matrix.

    Newton iterations start at zero with Armijo backtracking (halving). The run
    stops as Converged once the weighted mean of every column of ``g_hat`` is
    within ``tol`` of zero, and as Infeasible once ``|lam * rms(g)| > 50``
    (columnwise root mean square, so the bound is ``|lam| > 50`` for unit-scale
    contrasts) or the objective falls below 1e-12.

    Raises:
        SingularHessian: the Hessian stays singular after a 1e-12 ridge, which
            means the columns of ``g_hat`` are (near) collinear.
    """
    g = np.asarray(g_hat, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if not np.all(np.isfinite(g)):
        raise ValueError("g_hat must be finite")
    n, d = g.shape
    if n < d + 1:
        raise DimensionMismatch(f"need at least K={d + 1} rows, got {n}")
    F = None if freq is None else np.asarray(freq, dtype=float)[None, :]
    res = solve_tilt_batch(g[None], F, tol=tol, max_iter=max_iter)
    code = int(res.status[0])
    if code == _SINGULAR:
        raise SingularHessian(
            f"tilt Hessian is singular (condition {res.condition[0]:.3g}); "
            "the projected contrasts are degenerate",
            condition=float(res.condition[0]),
        )
    return TiltSolution(
        lam=res.lam[0],
        weights=res.weights[0],
        status=_STATUS[code],
        grad_norm=float(res.grad_norm[0]),
        iterations=int(res.iterations[0]),
        objective=float(np.exp(res.log_value[0])),
        hessian_condition=float(res.condition[0]),
    )
