"""Auxiliary regressions and the cross-fitting scaffold.

Every fitted model here is an immutable callable mapping a matrix of covariate
rows to a vector of predictions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import AdjustmentSpec, ObservationTable
from .errors import DimensionMismatch, EmptyTrainingSet, FoldTooSmall, RankDeficient
from .streams import stream

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
IRLS_RIDGE = 1e-8
# bound on standardized logistic coefficients beyond which the fit is declared separated
SEPARATION_BOUND = 25.0
OLS_PROJECTION_MAX_DIM = 3


def _rank_check(D, names):
    """Raise RankDeficient naming the first column that is in the span of the others."""
    _, r, piv = scipy.linalg.qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(D.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < D.shape[1]:
        col = names[int(piv[rank])]
        raise RankDeficient(
            f"design has rank {rank} < {D.shape[1]} columns; {col!r} is collinear", column=col
        )


@dataclass(frozen=True, eq=False)
class InteractedLinearFit:
    """Least-squares fit of y on [1, X_S, A, A*X_S]."""

    delta: float
    beta: np.ndarray
    tau: float
    gamma: np.ndarray
    cov_hw: np.ndarray
    set: tuple[int, ...]
    x_mean: np.ndarray
    residuals: np.ndarray = field(repr=False)

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.delta], self.beta, [self.tau], self.gamma])

    def ate_estimate(self) -> float:
        return float(self.tau + self.x_mean @ self.gamma)


def interacted_design(x_s, a):
    n = x_s.shape[0]
    return np.column_stack([np.ones(n), x_s, a, a[:, None] * x_s])


def fit_interacted_ols(table: ObservationTable, set_: tuple[int, ...]) -> InteractedLinearFit:
    """Interacted regression for one adjustment set with HC0 sandwich covariance."""
    cols = list(set_)
    x_s = table.x[:, cols]
    D = interacted_design(x_s, table.a)
    names = (
        ["intercept"]
        + [table.col_names[c] for c in cols]
        + ["treatment"]
        + [f"treatment:{table.col_names[c]}" for c in cols]
    )
    _rank_check(D, names)
    coef, *_ = np.linalg.lstsq(D, table.y, rcond=None)
    resid = table.y - D @ coef
    bread = np.linalg.inv(D.T @ D)
    meat = (D * resid[:, None] ** 2).T @ D
    cov = bread @ meat @ bread
    cov = (cov + cov.T) / 2
    s = len(cols)
    return InteractedLinearFit(
        delta=float(coef[0]),
        beta=coef[1 : 1 + s],
        tau=float(coef[1 + s]),
        gamma=coef[2 + s :],
        cov_hw=cov,
        set=tuple(cols),
        x_mean=x_s.mean(axis=0),
        residuals=resid,
    )


def predict_contrast(fit: InteractedLinearFit, x_rows) -> np.ndarray:
    """tau + x . gamma for each row of ``x_rows`` (columns of the fit's set)."""
    x = np.atleast_2d(np.asarray(x_rows, dtype=float))
    if x.shape[1] != fit.gamma.shape[0]:
        raise DimensionMismatch(f"expected {fit.gamma.shape[0]} columns, got {x.shape[1]}")
    return fit.tau + x @ fit.gamma


# ------------------------------------------------------------------ propensity


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass(frozen=True, eq=False)
class LogisticPropensity:
    coef: np.ndarray  # intercept first, on the standardized scale
    center: np.ndarray
    scale: np.ndarray
    floor: float
    separated: bool
    iterations: int

    def linear_predictor(self, rows) -> np.ndarray:
        z = (np.atleast_2d(rows) - self.center) / self.scale
        return self.coef[0] + z @ self.coef[1:]

    def __call__(self, rows) -> np.ndarray:
        lp = self.linear_predictor(rows)
        if self.separated:
            # coefficients of a separated fit are arbitrary; only the side matters
            return np.where(lp > 0, 1.0 - self.floor, np.where(lp < 0, self.floor, 0.5))
        return np.clip(_sigmoid(lp), self.floor, 1.0 - self.floor)


def _standardize(x):
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return center, scale


def fit_logistic_rows(x, a, floor: float) -> LogisticPropensity:
    """IRLS logistic regression of ``a`` on ``[1, x]``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = np.asarray(a, dtype=float)
    if a.min() == a.max():
        raise EmptyTrainingSet("logistic fit needs both treated and control units")
    center, scale = _standardize(x)
    Z = np.column_stack([np.ones(len(a)), (x - center) / scale])
    p_bar = a.mean()
    coef = np.zeros(Z.shape[1])
    coef[0] = math.log(p_bar / (1 - p_bar))
    separated = False
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        p = _sigmoid(Z @ coef)
        grad = Z.T @ (a - p) / len(a)
        if np.abs(grad).max() <= IRLS_TOL:
            break
        W = p * (1 - p)
        H = (Z * W[:, None]).T @ Z / len(a)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(H + IRLS_RIDGE * np.eye(len(coef)), grad)
        if not np.all(np.isfinite(step)):
            step = np.linalg.solve(H + IRLS_RIDGE * np.eye(len(coef)), grad)
        coef = coef + step
        if np.linalg.norm(coef[1:]) > SEPARATION_BOUND:
            separated = True
            break
    if not separated:
        # a perfectly classifying fit means the classes are linearly separable
        lp = Z @ coef
        separated = bool(np.all((lp > 0) == (a == 1)) and np.linalg.norm(coef[1:]) > 5.0)
    if separated:
        warnings.warn("treatment is (nearly) separable; propensities fall back to the clip floor")
    return LogisticPropensity(coef, center, scale, floor, separated, it)


def fit_logistic(table: ObservationTable, set_, floor: float) -> LogisticPropensity:
    """Propensity model P(A=1 | X_S) clipped to ``[floor, 1 - floor]``."""
    return fit_logistic_rows(table.x[:, list(set_)], table.a, floor)


# ------------------------------------------------------------------------ k-NN


def default_k(n: int, class_size: int) -> int:
    return max(1, min(math.ceil(n**0.7 / 2), class_size))


@dataclass(frozen=True, eq=False)
class KnnMean:
    rows: np.ndarray  # raw training rows; differences are scaled, so exact ties stay exact
    targets: np.ndarray
    k: int
    scale: np.ndarray

    _CHUNK = 4_000_000

    def __call__(self, query) -> np.ndarray:
        q = np.atleast_2d(np.asarray(query, dtype=float))
        if q.shape[1] != self.rows.shape[1]:
            raise DimensionMismatch(f"expected {self.rows.shape[1]} columns, got {q.shape[1]}")
        m, p = self.rows.shape
        step = max(1, self._CHUNK // max(1, m * p))
        out = np.empty(q.shape[0])
        for lo in range(0, q.shape[0], step):
            out[lo : lo + step] = self._predict(q[lo : lo + step])
        return out

    def _predict(self, q):
        k = self.k
        d2 = np.zeros((q.shape[0], self.rows.shape[0]))
        for j in range(q.shape[1]):
            d2 += np.square(np.subtract.outer(q[:, j], self.rows[:, j]) / self.scale[j])
        if k == d2.shape[1]:
            return np.full(q.shape[0], self.targets.mean())
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1 : k]
        chosen = d2 <= kth
        surplus = np.flatnonzero(chosen.sum(axis=1) > k)
        if surplus.size:
            # among rows tied at the k-th distance keep those with the lowest index
            sub, sk = d2[surplus], kth[surplus]
            tied = sub == sk
            need = k - (sub < sk).sum(axis=1, keepdims=True)
            chosen[surplus] = (sub < sk) | (tied & (np.cumsum(tied, axis=1) <= need))
        return chosen @ self.targets / k


def fit_knn_mean(rows, targets, k: int) -> KnnMean:
    """k-nearest-neighbour mean after per-column standardization.

    Ties at the k-th distance go to the lower training index.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if rows.shape[0] == 0:
        raise EmptyTrainingSet("k-NN needs at least one training row")
    if rows.shape[0] != targets.shape[0]:
        raise DimensionMismatch("rows and targets disagree in length")
    if not 1 <= k <= rows.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {rows.shape[0]}]")
    _, scale = _standardize(rows)
    return KnnMean(rows.copy(), targets.copy(), int(k), scale)


# ------------------------------------------------------------------ projection


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    intercept: float
    coef: np.ndarray

    def __call__(self, rows) -> np.ndarray:
        return self.intercept + np.atleast_2d(rows) @ self.coef


def project_onto_common(contrasts, rows_common, mode: str = "ols", k_nn: int | None = None):
    """Regress per-unit contrasts on the shared covariates.

    ``mode="ols"`` returns the least-squares predictor a + x.b; ``mode="knn"``
    a k-NN mean.
    """
    x = np.atleast_2d(np.asarray(rows_common, dtype=float))
    c = np.asarray(contrasts, dtype=float)
    if x.shape[0] == 0:
        raise EmptyTrainingSet("no rows to project on")
    if mode == "ols":
        C = np.column_stack([np.ones(x.shape[0]), x])
        _rank_check(C, ["intercept"] + [f"common[{j}]" for j in range(x.shape[1])])
        coef, *_ = np.linalg.lstsq(C, c, rcond=None)
        return LinearPredictor(float(coef[0]), coef[1:])
    if mode == "knn":
        k = default_k(x.shape[0], x.shape[0]) if k_nn is None else min(k_nn, x.shape[0])
        return fit_knn_mean(x, c, k)
    raise ValueError(f"unknown projection mode {mode!r}")


# ---------------------------------------------------------------- cross-fitting


@dataclass(frozen=True, eq=False)
class FoldModels:
    propensity: LogisticPropensity
    mu0: KnnMean
    mu1: KnnMean
    projection: object


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    """Cross-fitted nuisance models and their out-of-fold predictions.

    Arrays are n x K with one column per adjustment set. ``models[f][k]``
    holds the models trained without fold ``f`` for set ``k``.
    """

    fold_assignment: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    e: np.ndarray
    proj_tau: np.ndarray
    models: tuple[tuple[FoldModels, ...], ...]
    k_nn: int
    projection_mode: str
    separated: int = 0

    @property
    def tau_hat(self) -> np.ndarray:
        return self.mu1 - self.mu0


def fold_partition(n: int, folds: int, seed: int) -> np.ndarray:
    perm = stream(seed, purpose="folds").permutation(n)
    assign = np.empty(n, dtype=int)
    assign[perm] = np.arange(n) % folds
    return assign


def crossfit(
    table: ObservationTable,
    spec: AdjustmentSpec,
    folds: int = 5,
    k_nn: int | None = None,
    seed: int = 0,
    projection: str | None = None,
) -> NuisanceFits:
    """Fit all nuisances with ``folds``-fold cross-fitting.

    For fold f and set k, the outcome means (k-NN on each treatment arm), the
    logistic propensity, and the projection of the contrast onto the shared
    covariates are trained on the other folds only. The projection's training
    targets are that same fold-f model's contrasts evaluated on the training
    rows, so nothing stored for a unit ever depends on its own fold.
    """
    n = table.n
    if folds < 2 or folds > n / 4:
        raise ValueError(f"folds must lie in [2, n/4]; got {folds} with n={n}")
    spec.validate_for(table.p)
    mode = projection or ("ols" if len(spec.intersection) <= OLS_PROJECTION_MAX_DIM else "knn")
    assign = fold_partition(n, folds, seed)
    K = spec.k
    mu0 = np.empty((n, K))
    mu1 = np.empty((n, K))
    e = np.empty((n, K))
    proj = np.empty((n, K))
    common = table.x[:, list(spec.intersection)]
    models = []
    k_used = None
    separated = 0
    for f in range(folds):
        test = assign == f
        train = ~test
        treated = train & (table.a == 1)
        control = train & (table.a == 0)
        if not treated.any() or not control.any():
            raise FoldTooSmall(f"training split for fold {f} lacks treated or control units")
        kk = k_nn or default_k(n, min(treated.sum(), control.sum()))
        kk = min(kk, treated.sum(), control.sum())
        k_used = kk if k_used is None else min(k_used, kk)
        per_set = []
        for k, cols in enumerate(spec.sets):
            xs = table.x[:, list(cols)]
            m1 = fit_knn_mean(xs[treated], table.y[treated], kk)
            m0 = fit_knn_mean(xs[control], table.y[control], kk)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                prop = fit_logistic_rows(xs[train], table.a[train], spec.overlap_floor)
            separated += prop.separated
            mu1[test, k] = m1(xs[test])
            mu0[test, k] = m0(xs[test])
            e[test, k] = prop(xs[test])
            tau_train = m1(xs[train]) - m0(xs[train])
            pk = None if mode == "ols" else kk
            proj_model = project_onto_common(tau_train, common[train], mode, pk)
            proj[test, k] = proj_model(common[test])
            per_set.append(FoldModels(prop, m0, m1, proj_model))
        models.append(tuple(per_set))
    if separated:
        warnings.warn(f"{separated} propensity fits were separated and fell back to the clip floor")
    return NuisanceFits(assign, mu0, mu1, e, proj, tuple(models), int(k_used), mode, separated)
