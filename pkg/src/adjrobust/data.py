"""Sample, adjustment-set configuration and result containers.

Also holds CSV/JSON ingestion and the deterministic JSON writer used by the CLI.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    DuplicateColumn,
    EmptyFile,
    EmptyIntersection,
    FewerThanTwoSets,
    InputError,
    InvalidTable,
    MissingColumn,
    NonBinaryTreatment,
    NonNumericCell,
    UnknownColumn,
)

DEFAULT_OVERLAP_FLOOR = 0.01


def _frozen(arr, ndim):
    out = np.array(arr, dtype=float, copy=True)
    if out.ndim != ndim:
        raise InvalidTable(f"expected a {ndim}-d array, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Observed sample (Y, A, X) with named covariate columns.

    Arrays are copied and made read-only on construction.
    """

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray
    col_names: tuple[str, ...]

    def __post_init__(self):
        y = _frozen(self.y, 1)
        a = _frozen(self.a, 1)
        x = _frozen(self.x, 2)
        names = tuple(str(c) for c in self.col_names)
        n = y.shape[0]
        if n < 2:
            raise InvalidTable("need at least two observations")
        if a.shape[0] != n or x.shape[0] != n:
            raise InvalidTable(f"row counts disagree: y={n}, a={a.shape[0]}, x={x.shape[0]}")
        if x.shape[1] != len(names):
            raise InvalidTable(f"{x.shape[1]} covariate columns but {len(names)} names")
        if len(set(names)) != len(names):
            raise DuplicateColumn(f"duplicate covariate names in {names}")
        for label, arr in (("y", y), ("a", a), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise InvalidTable(f"non-finite entries in {label}")
        if not np.all((a == 0) | (a == 1)):
            raise NonBinaryTreatment("treatment must be coded 0/1")
        if a.min() == a.max():
            raise InvalidTable("need at least one treated and one control unit")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "col_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def take(self, rows) -> "ObservationTable":
        rows = np.asarray(rows)
        return ObservationTable(self.y[rows], self.a[rows], self.x[rows], self.col_names)

    def select(self, names: Sequence[str]) -> "ObservationTable":
        """Restrict the covariate universe to ``names`` (in that order)."""
        idx = [self.column_index(c) for c in names]
        return ObservationTable(self.y, self.a, self.x[:, idx], tuple(names))

    def with_outcome(self, y) -> "ObservationTable":
        return ObservationTable(y, self.a, self.x, self.col_names)

    def column_index(self, name: str) -> int:
        try:
            return self.col_names.index(name)
        except ValueError:
            raise UnknownColumn(f"unknown covariate {name!r}; have {list(self.col_names)}") from None


@dataclass(frozen=True)
class AdjustmentSpec:
    """K candidate adjustment sets (column indices) and their intersection."""

    sets: tuple[tuple[int, ...], ...]
    intersection: tuple[int, ...]
    overlap_floor: float = DEFAULT_OVERLAP_FLOOR

    def __post_init__(self):
        sets = tuple(tuple(int(i) for i in s) for s in self.sets)
        if len(sets) < 2:
            raise FewerThanTwoSets(f"need at least two adjustment sets, got {len(sets)}")
        for s in sets:
            if not s:
                raise InputError("adjustment sets must be non-empty")
            if len(set(s)) != len(s):
                raise DuplicateColumn(f"duplicate column in adjustment set {s}")
        common = set(sets[0]).intersection(*sets[1:])
        if not common:
            raise EmptyIntersection("adjustment sets have an empty intersection")
        if tuple(sorted(common)) != tuple(sorted(self.intersection)):
            raise InputError("intersection does not match the sets")
        if not 0 < self.overlap_floor < 0.5:
            raise InputError(f"overlap_floor must lie in (0, 0.5), got {self.overlap_floor}")
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "intersection", tuple(sorted(common)))

    @classmethod
    def from_sets(cls, sets, overlap_floor=DEFAULT_OVERLAP_FLOOR) -> "AdjustmentSpec":
        sets = [tuple(sorted(int(i) for i in s)) for s in sets]
        if len(sets) < 2:
            raise FewerThanTwoSets(f"need at least two adjustment sets, got {len(sets)}")
        common = set(sets[0]).intersection(*sets[1:])
        if not common:
            raise EmptyIntersection("adjustment sets have an empty intersection")
        return cls(tuple(sets), tuple(sorted(common)), overlap_floor)

    @property
    def k(self) -> int:
        return len(self.sets)

    def validate_for(self, p: int) -> None:
        for s in self.sets:
            bad = [i for i in s if not 0 <= i < p]
            if bad:
                raise UnknownColumn(f"column indices {bad} out of range for p={p}")


@dataclass(frozen=True, eq=False)
class ContrastPanel:
    """Per-unit contrasts feeding the tilt and the AIPW combination.

    ``g_hat[:, k-1]`` holds the projected set-1-minus-set-k contrast.
    """

    tau_hat: np.ndarray  # n x K
    tau_aipw: np.ndarray  # n x K
    g_hat: np.ndarray  # n x (K-1)
    proj_tau: np.ndarray  # n x K

    def __post_init__(self):
        n, k = self.tau_hat.shape
        if self.tau_aipw.shape != (n, k) or self.proj_tau.shape != (n, k):
            raise InvalidTable("contrast panel blocks disagree in shape")
        if self.g_hat.shape != (n, k - 1):
            raise InvalidTable(f"g_hat must be {n}x{k - 1}, got {self.g_hat.shape}")
        for arr in (self.tau_hat, self.tau_aipw, self.g_hat, self.proj_tau):
            if not np.all(np.isfinite(arr)):
                raise InvalidTable("contrast panel has non-finite entries")

    @property
    def delta_aipw(self) -> np.ndarray:
        return self.tau_aipw[:, :1] - self.tau_aipw[:, 1:]


class TiltStatus(str, enum.Enum):
    CONVERGED = "Converged"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True, eq=False)
class TiltSolution:
    lam: np.ndarray
    weights: np.ndarray
    status: TiltStatus
    grad_norm: float
    iterations: int
    objective: float = float("nan")
    hessian_condition: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status is TiltStatus.CONVERGED


class Method(str, enum.Enum):
    AIPW_CROSSFIT = "AipwCrossfit"
    LINEAR_MODEL = "LinearModel"


@dataclass(frozen=True, eq=False)
class AREstimate:
    estimate: float
    variance: float
    ci_lo: float
    ci_hi: float
    level: float
    per_set_reweighted: np.ndarray
    nu: np.ndarray
    bias_correction: float
    method: Method
    tilt: TiltSolution
    n: int
    gram_condition: float = float("nan")
    bootstrap_skipped: int = 0

    @property
    def ci(self) -> tuple[float, float]:
        return (self.ci_lo, self.ci_hi)

    @property
    def width(self) -> float:
        return self.ci_hi - self.ci_lo

    @property
    def weights(self) -> np.ndarray:
        return self.tilt.weights

    @property
    def lam(self) -> np.ndarray:
        return self.tilt.lam


@dataclass
class MethodSummary:
    """Coverage/width of one interval method across replications.

    ``coverage`` is scored as ``scored_against`` says: ``"sample_ate"`` means
    each replication's own mean of Y(1) - Y(0), ``"reweighted_ate"`` means
    ``target``, the ATE of the tilted population. ``coverage_ate`` is always
    against the population ATE of the design.
    Replications without an interval (infeasible tilt) count as non-covering and
    are left out of ``mean_width``.
    """

    coverage: float
    mean_width: float | None
    replications: int
    target: float
    coverage_ate: float
    failures: int = 0
    scored_against: str = "sample_ate"


@dataclass
class SimulationReport:
    example: str
    n: int
    replications: int
    alpha: float
    target_ate: float
    base_seed: int
    methods: dict[str, MethodSummary] = field(default_factory=dict)
    records: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "example": self.example,
            "n": self.n,
            "replications": self.replications,
            "alpha": self.alpha,
            "target_ate": self.target_ate,
            "base_seed": self.base_seed,
            "methods": {
                name: {
                    "coverage": m.coverage,
                    "mean_width": m.mean_width,
                    "replications": m.replications,
                    "target": m.target,
                    "coverage_ate": m.coverage_ate,
                    "failures": m.failures,
                    "scored_against": m.scored_against,
                }
                for name, m in self.methods.items()
            },
        }


# --------------------------------------------------------------------------- io


def _parse_cell(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v


def load_csv(path, outcome_col: str, treatment_col: str) -> ObservationTable:
    """Read a comma-separated file with a header row.

    Every numeric column other than the outcome and treatment becomes a
    covariate, in header order. Columns with no parseable cell at all are
    treated as non-numeric and skipped; a partially numeric column raises
    :class:`NonNumericCell`. Missing values are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path} has a header but no data rows")
    for col in (outcome_col, treatment_col):
        if col not in header:
            raise MissingColumn(f"column {col!r} not found in header {header}")
    width = len(header)
    for i, r in enumerate(body, start=2):
        if len(r) != width:
            raise InputError(f"row {i} has {len(r)} fields, header has {width}")

    columns = {}
    for j, name in enumerate(header):
        raw = [r[j].strip() for r in body]
        vals = [_parse_cell(c) for c in raw]
        required = name in (outcome_col, treatment_col)
        if not required and all(v is None for v in vals):
            continue
        for i, (v, c) in enumerate(zip(vals, raw), start=2):
            if v is None or not math.isfinite(v):
                raise NonNumericCell(i, name, c)
        columns[name] = np.array(vals, dtype=float)

    a = columns.pop(treatment_col)
    y = columns.pop(outcome_col)
    bad = ~((a == 0) | (a == 1))
    if bad.any():
        i = int(np.argmax(bad))
        raise NonBinaryTreatment(f"treatment {treatment_col!r} has value {a[i]!r} at row {i + 2}")
    names = tuple(columns)
    x = np.column_stack([columns[c] for c in names]) if names else np.empty((len(y), 0))
    return ObservationTable(y, a, x, names)


def write_csv(table: ObservationTable, path, outcome_col="y", treatment_col="a") -> None:
    """Write ``table`` with 17 significant digits so that reloading is exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([outcome_col, treatment_col, *table.col_names])
        for i in range(table.n):
            w.writerow(
                [f"{table.y[i]:.17g}", f"{int(table.a[i])}"]
                + [f"{v:.17g}" for v in table.x[i]]
            )


def parse_adjustment_config(json_text: str, table: ObservationTable) -> AdjustmentSpec:
    """Resolve ``{"adjustment_sets": [[name, ...], ...]}`` against ``table``."""
    try:
        cfg = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON config: {exc}") from None
    if not isinstance(cfg, dict) or "adjustment_sets" not in cfg:
        raise InputError("config must be an object with an 'adjustment_sets' key")
    raw_sets = cfg["adjustment_sets"]
    if not isinstance(raw_sets, list) or not all(isinstance(s, list) for s in raw_sets):
        raise InputError("'adjustment_sets' must be a list of lists of column names")
    if len(raw_sets) < 2:
        raise FewerThanTwoSets(f"need at least two adjustment sets, got {len(raw_sets)}")
    sets = []
    for s in raw_sets:
        if not s:
            raise InputError("adjustment sets must be non-empty")
        names = [str(c) for c in s]
        dupes = sorted({c for c in names if names.count(c) > 1})
        if dupes:
            raise DuplicateColumn(f"duplicate columns {dupes} in adjustment set {names}")
        sets.append(sorted(table.column_index(c) for c in names))
    floor = float(cfg.get("overlap_floor", DEFAULT_OVERLAP_FLOOR))
    return AdjustmentSpec.from_sets(sets, floor)


# ------------------------------------------------------------------------- json


def _encode(obj, out):
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            out.append("null")
        else:
            text = f"{v:.17g}"
            # keep floats recognisable as floats to JSON readers
            out.append(text if any(c in text for c in ".en") else text + ".0")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, enum.Enum):
        _encode(obj.value, out)
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj, key=str)):
            if i:
                out.append(", ")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(": ")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(", ")
            _encode(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps_json(obj) -> str:
    """Serialize with sorted keys and floats at 17 significant digits.

    Non-finite floats become ``null``.
    """
    out: list[str] = []
    _encode(obj, out)
    return "".join(out) + "\n"
