"""Observed trial data: records, profile classification, summaries and CSV I/O."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

CSV_COLUMNS = ("id", "z", "c", "y_tilde", "event", "d_tilde", "disc", "x1", "x2", "x3")
COVARIATES = ("x1", "x2", "x3")
CONTINUOUS = (True, False, False)
NA = "NA"


@dataclass(frozen=True)
class PatientRecord:
    z: int
    c: float
    y_tilde: float
    event: int
    d_tilde: float
    disc: int
    x: tuple
    id: int = 0


class ObservedProfile(enum.Enum):
    D = "D"
    ND = "ND"
    MIXTURE = "Mixture"


def classify_profile(record: PatientRecord) -> ObservedProfile:
    """Stratum information carried by one observed record.

    Treated units with an observed discontinuation are D, treated units with
    an observed event and no discontinuation are ND; everything else (treated
    censored on both endpoints and every control) is a mixture.
    """
    if record.z == 1:
        if record.disc == 1:
            return ObservedProfile.D
        if record.event == 1:
            return ObservedProfile.ND
    return ObservedProfile.MIXTURE


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented observed data.

    ``X`` holds the covariates as used for fitting; ``standardization`` maps a
    continuous covariate name to the ``(center, scale)`` already applied to it.
    """
    z: np.ndarray
    c: np.ndarray
    y_tilde: np.ndarray
    event: np.ndarray
    d_tilde: np.ndarray
    disc: np.ndarray
    X: np.ndarray
    covariate_names: tuple = COVARIATES
    continuous: tuple = CONTINUOUS
    standardization: dict = field(default_factory=dict)
    ids: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.z)
        as_ = object.__setattr__
        as_(self, "z", np.asarray(self.z, dtype=np.int64).reshape(n))
        as_(self, "event", np.asarray(self.event, dtype=np.int64).reshape(n))
        as_(self, "disc", np.asarray(self.disc, dtype=np.int64).reshape(n))
        for nm in ("c", "y_tilde", "d_tilde"):
            as_(self, nm, np.asarray(getattr(self, nm), dtype=float).reshape(n))
        X = np.asarray(self.X, dtype=float)
        as_(self, "X", X.reshape(n, -1) if X.size else np.zeros((n, len(self.covariate_names))))
        as_(self, "ids", np.arange(1, n + 1) if self.ids is None else np.asarray(self.ids, dtype=np.int64))
        if self.X.shape[1] != len(self.covariate_names) or len(self.continuous) != len(self.covariate_names):
            raise ValidationError("covariate matrix, names and continuous flags disagree in length")
        for arr in (self.X, self.ids):
            arr.setflags(write=False)
        for nm in ("z", "c", "y_tilde", "event", "d_tilde", "disc"):
            getattr(self, nm).setflags(write=False)
        validate(self)

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def K(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    @property
    def records(self) -> list[PatientRecord]:
        return [
            PatientRecord(int(self.z[i]), float(self.c[i]), float(self.y_tilde[i]), int(self.event[i]),
                          float(self.d_tilde[i]), int(self.disc[i]), tuple(self.X[i].tolist()), int(self.ids[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_records(cls, records: Sequence[PatientRecord], covariate_names=COVARIATES,
                     continuous=CONTINUOUS) -> "Dataset":
        K = len(covariate_names)
        return cls(
            z=[r.z for r in records], c=[r.c for r in records], y_tilde=[r.y_tilde for r in records],
            event=[r.event for r in records], d_tilde=[r.d_tilde for r in records],
            disc=[r.disc for r in records],
            X=np.array([r.x for r in records], dtype=float).reshape(len(records), K),
            covariate_names=tuple(covariate_names), continuous=tuple(continuous),
            ids=[r.id for r in records] if records else None,
        )

    def raw_covariates(self) -> np.ndarray:
        """Covariates on their original scale (undoing any standardization)."""
        X = np.array(self.X, copy=True)
        for k, nm in enumerate(self.covariate_names):
            if nm in self.standardization:
                center, scale = self.standardization[nm]
                X[:, k] = X[:, k] * scale + center
        return X

    def profiles(self) -> np.ndarray:
        """Observed profile label per unit ('D', 'ND' or 'Mixture')."""
        out = np.full(self.n, ObservedProfile.MIXTURE.value, dtype=object)
        out[(self.z == 1) & (self.disc == 1)] = ObservedProfile.D.value
        out[(self.z == 1) & (self.disc == 0) & (self.event == 1)] = ObservedProfile.ND.value
        return out

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return replace(self, z=self.z[mask], c=self.c[mask], y_tilde=self.y_tilde[mask],
                       event=self.event[mask], d_tilde=self.d_tilde[mask], disc=self.disc[mask],
                       X=self.X[mask], ids=self.ids[mask])

    def equals(self, other: "Dataset") -> bool:
        return (self.covariate_names == other.covariate_names
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("ids", "z", "c", "y_tilde", "event", "d_tilde", "disc", "X")))


def validate(ds: Dataset) -> None:
    """Raise ValidationError on the first unit violating the record invariants."""
    checks = [
        ("z", ~np.isin(ds.z, (0, 1)), "must be 0 or 1"),
        ("event", ~np.isin(ds.event, (0, 1)), "must be 0 or 1"),
        ("disc", ~np.isin(ds.disc, (0, 1)), "must be 0 or 1"),
        ("c", ~(ds.c > 0) | ~np.isfinite(ds.c), "must be positive and finite"),
        ("y_tilde", ~(ds.y_tilde > 0), "must be positive"),
        ("y_tilde", ds.y_tilde > ds.c, "must not exceed c"),
        ("d_tilde", ~(ds.d_tilde > 0), "must be positive"),
        ("d_tilde", ds.d_tilde > ds.c, "must not exceed c"),
        ("disc", (ds.disc == 1) & (ds.z == 0), "discontinuation cannot be observed under control"),
        ("d_tilde", (ds.disc == 1) & ~(ds.d_tilde < ds.y_tilde), "must be below y_tilde when disc=1"),
        ("x", ~np.isfinite(ds.X).all(axis=1), "covariates must be finite"),
    ]
    for name, bad, msg in checks:
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"row {i + 1} (id {ds.ids[i]}): {name} {msg}")


def empty_dataset(K: int = 3) -> Dataset:
    """Dataset with no units; the posterior then equals the prior."""
    names = COVARIATES[:K] if K <= 3 else tuple(f"x{k + 1}" for k in range(K))
    return Dataset(z=[], c=[], y_tilde=[], event=[], d_tilde=[], disc=[], X=np.zeros((0, K)),
                   covariate_names=names, continuous=tuple(k == 0 for k in range(K)))


# ---------------------------------------------------------------------------
# covariate transforms
# ---------------------------------------------------------------------------

def standardize_covariates(ds: Dataset, center=None, scale=None) -> Dataset:
    """Center and scale continuous covariates to sample mean 0, SD 1.

    Binary covariates are left untouched.  The applied transform is recorded
    in ``standardization`` so reports can map back.  Passing ``center`` and
    ``scale`` (dicts keyed by covariate name) applies a fixed transform.

    Raises
    ------
    ValidationError
        If a continuous covariate has zero variance.
    """
    X = np.array(ds.X, copy=True)
    std = dict(ds.standardization)
    for k, nm in enumerate(ds.covariate_names):
        if not ds.continuous[k] or nm in std:
            continue
        col = X[:, k]
        m = center[nm] if center else float(col.mean())
        s = scale[nm] if scale else (float(col.std(ddof=1)) if col.size > 1 else 0.0)
        if not s > 0:
            raise ValidationError(f"covariate {nm} has zero variance and cannot be standardized")
        X[:, k] = (col - m) / s
        std[nm] = (m, s)
    return replace(ds, X=X, standardization=std)


def without_covariates(ds: Dataset) -> Dataset:
    """Same units with an empty covariate matrix (intercept-only fits)."""
    return replace(ds, X=np.zeros((ds.n, 0)), covariate_names=(), continuous=(), standardization={})


# ---------------------------------------------------------------------------
# summary table
# ---------------------------------------------------------------------------

@dataclass
class SummaryRow:
    variable: str
    basis: str
    mean: float
    count: int | None = None
    denom: int | None = None
    sd: float = math.nan
    min: float = math.nan
    q1: float = math.nan
    median: float = math.nan
    q3: float = math.nan
    max: float = math.nan

    @property
    def is_share(self) -> bool:
        return self.count is not None


@dataclass
class SummaryTable:
    rows: list

    def row(self, variable: str, basis: str | None = None) -> SummaryRow:
        for r in self.rows:
            if r.variable == variable and (basis is None or r.basis == basis):
                return r
        raise KeyError(variable)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "basis", "mean", "count", "denom", "sd", "min", "q1", "median", "q3", "max"])
        for r in self.rows:
            w.writerow([r.variable, r.basis, _fmt(r.mean), _fmt(r.count), _fmt(r.denom)]
                       + [_fmt(getattr(r, f)) for f in ("sd", "min", "q1", "median", "q3", "max")])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_text(self) -> str:
        head = f"{'Variable':<16}{'Basis':<14}{'Mean(prop.)':>22}{'SD':>8}{'Min':>8}{'Q1':>8}{'Median':>8}{'Q3':>8}{'Max':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            if r.is_share:
                m = f"{100 * r.mean:.2f}% ({r.count}/{r.denom})" if r.denom else f"{NA} (0/0)"
                rest = ["-----"] * 6
            else:
                m = _fmt(r.mean, 2)
                rest = [_fmt(getattr(r, f), 2) for f in ("sd", "min", "q1", "median", "q3", "max")]
            lines.append(f"{r.variable:<16}{r.basis:<14}{m:>22}" + "".join(f"{v:>8}" for v in rest))
        return "\n".join(lines)


def _fmt(v, nd=6):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if not np.isfinite(v):
        return NA
    return f"{v:.{nd}f}" if nd != 6 else repr(float(v))


def _share(variable, basis, mask) -> SummaryRow:
    mask = np.asarray(mask, dtype=bool)
    k, n = int(mask.sum()), mask.size
    return SummaryRow(variable, basis, k / n if n else math.nan, k, n)


def _moments(variable, basis, x) -> SummaryRow:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return SummaryRow(variable, basis, math.nan)
    q = np.percentile(x, [0, 25, 50, 75, 100])
    sd = float(x.std(ddof=1)) if x.size > 1 else math.nan
    return SummaryRow(variable, basis, float(x.mean()), sd=sd, min=q[0], q1=q[1], median=q[2], q3=q[3], max=q[4])


def summarize(ds: Dataset) -> SummaryTable:
    """Descriptive table of arm, discontinuation, outcome and covariates.

    Discontinuation and outcome rows are reported on two bases each because
    both conventions are in use: discontinuation share over treated and over
    all units, observed discontinuation times over discontinuers and over all
    treated, observed outcome times over all units and over events.
    """
    if ds.n == 0:
        raise ValidationError("cannot summarize an empty dataset")
    t = ds.z == 1
    d = t & (ds.disc == 1)
    ev = ds.event == 1
    rows = [
        _share("Z=1", "all", t),
        _share("disc", "treated", ds.disc[t] == 1),
        _share("disc", "all", ds.disc == 1),
        _moments("D_tilde", "discontinuers", ds.d_tilde[d]),
        _moments("D_tilde", "treated", ds.d_tilde[t]),
        _share("event", "all", ev),
        _moments("Y_tilde", "all", ds.y_tilde),
        _moments("Y_tilde", "events", ds.y_tilde[ev]),
    ]
    Xr = ds.raw_covariates()
    for k, nm in enumerate(ds.covariate_names):
        if ds.continuous[k]:
            rows.append(_moments(nm.upper(), "all", Xr[:, k]))
        else:
            rows.append(_share(nm.upper(), "all", Xr[:, k] == 1))
    return SummaryTable(rows)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

_INT_COLS = ("id", "z", "event", "disc")


def write_csv(ds: Dataset, path) -> None:
    """Write the fixed schema with raw (unstandardized) covariates.

    Floats are written with ``repr`` so a round trip is bit-exact.
    """
    if ds.covariate_names != COVARIATES:
        raise ValidationError(f"CSV schema needs covariates {COVARIATES}, dataset has {ds.covariate_names}")
    Xr = ds.raw_covariates()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(ds.n):
            w.writerow([int(ds.ids[i]), int(ds.z[i]), repr(float(ds.c[i])), repr(float(ds.y_tilde[i])),
                        int(ds.event[i]), repr(float(ds.d_tilde[i])), int(ds.disc[i])]
                       + [repr(float(v)) for v in Xr[i]])


def load_csv(path) -> Dataset:
    """Read and validate a dataset in the fixed CSV schema.

    Raises
    ------
    ValidationError
        Missing file or column, malformed value (named by line and field), or
        a record violating the data invariants.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
        cols = {c: [] for c in CSV_COLUMNS}
        for line, row in enumerate(reader, start=2):
            for c in CSV_COLUMNS:
                raw = (row.get(c) or "").strip()
                try:
                    v = int(raw) if c in _INT_COLS else float(raw)
                except ValueError:
                    raise ValidationError(f"{path}: line {line}, field {c!r}: cannot parse {raw!r}") from None
                cols[c].append(v)
    if not cols["id"]:
        raise ValidationError(f"{path}: no data rows")
    try:
        return Dataset(z=cols["z"], c=cols["c"], y_tilde=cols["y_tilde"], event=cols["event"],
                       d_tilde=cols["d_tilde"], disc=cols["disc"],
                       X=np.column_stack([cols[k] for k in COVARIATES]), ids=cols["id"])
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None
