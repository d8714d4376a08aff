"""Competing-risks data model, CSV ingestion, and the censoring Kaplan-Meier."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "StepFunction",
    "CompetingRisksDataset",
    "load_dataset",
    "save_dataset",
    "censoring_km",
]


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function.

    Evaluation at ``t`` returns the value attached to the latest knot
    ``<= t``, and ``value_before_first`` for ``t`` below all knots.

    Parameters
    ----------
    knots : ndarray
        Strictly increasing knot locations.
    values : ndarray
        Value taken on ``[knots[i], knots[i+1])``.
    value_before_first : float
        Value on ``(-inf, knots[0])``.
    """

    knots: np.ndarray
    values: np.ndarray
    value_before_first: float = 0.0

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        values = np.array(self.values, dtype=float)
        if knots.ndim != 1 or values.shape != knots.shape:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        knots.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t) -> np.ndarray | float:
        """Evaluate right-continuously at scalar or array ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], self.value_before_first)
        return float(out) if out.ndim == 0 else out

    def eval_left(self, t) -> np.ndarray | float:
        """Evaluate the left limit, i.e. the value of the latest knot ``< t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="left") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], self.value_before_first)
        return float(out) if out.ndim == 0 else out


def _canonical_order(time: np.ndarray, status: np.ndarray) -> np.ndarray:
    # Ascending time; at ties failures come before censorings, causes ascending.
    censored_last = np.where(status == 0, np.iinfo(np.int64).max, status)
    return np.lexsort((censored_last, time))


@dataclass(frozen=True)
class CompetingRisksDataset:
    """Right-censored competing-risks sample.

    Rows are stored sorted by ascending observed time (ties: failures first,
    causes ascending, censorings last); ``original_index`` maps each stored
    row back to its position in the input. Arrays are read-only so datasets
    can be shared across threads.

    Parameters
    ----------
    time : ndarray
        Observed times, the minimum of event and censoring time.
    status : ndarray
        0 for censored, ``j`` in ``1..cause_count`` for a failure of cause j.
    covariates : ndarray
        n x p covariate matrix.
    covariate_names : tuple of str
        Column names, length p.
    cause_count : int
        Number of failure causes J. Defaults to ``max(status, 2)``.
    """

    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    cause_count: int = 0
    original_index: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        status = np.asarray(self.status)
        cov = np.asarray(self.covariates, dtype=float)
        if time.ndim != 1:
            raise ValueError("time must be a 1-d array")
        n = time.size
        if status.shape != (n,):
            raise ValueError("status must match time in length")
        if cov.ndim != 2 or cov.shape[0] != n:
            raise ValueError("covariates must be an n x p matrix")
        if cov.shape[1] == 0:
            raise ValueError("no covariates")
        if not np.all(np.isfinite(time)):
            raise ValueError("non-finite time")
        if np.any(time < 0):
            raise ValueError("negative time")
        if not np.all(status == status.astype(int)):
            raise ValueError("status must be integer coded")
        status = status.astype(int)
        if np.any(status < 0):
            raise ValueError("status outside {0..J}")
        if not np.all(np.isfinite(cov)):
            raise ValueError("missing or non-finite covariate value")

        j = self.cause_count if self.cause_count else max(int(status.max(initial=0)), 2)
        if status.max(initial=0) > j:
            raise ValueError("status outside {0..J}")

        names = tuple(self.covariate_names) or tuple(f"x{i + 1}" for i in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise ValueError("covariate_names must match covariate count")
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")

        order = _canonical_order(time, status)
        orig = self.original_index
        orig = np.arange(n) if orig is None else np.asarray(orig, dtype=int)
        object.__setattr__(self, "time", time[order])
        object.__setattr__(self, "status", status[order])
        object.__setattr__(self, "covariates", cov[order])
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "cause_count", j)
        object.__setattr__(self, "original_index", orig[order])
        for name in ("time", "status", "covariates", "original_index"):
            getattr(self, name).flags.writeable = False

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def event_count(self, cause: int) -> int:
        """Number of observed failures of the given cause."""
        return int(np.sum(self.status == cause))

    def subset(self, rows: np.ndarray) -> "CompetingRisksDataset":
        """Dataset restricted to the given stored-row indices (e.g. CV folds, bootstrap)."""
        rows = np.asarray(rows)
        return CompetingRisksDataset(
            time=self.time[rows],
            status=self.status[rows],
            covariates=self.covariates[rows],
            covariate_names=self.covariate_names,
            cause_count=self.cause_count,
            original_index=self.original_index[rows],
        )


def load_dataset(
    path: str | Path,
    time_col: str = "time",
    status_col: str = "status",
    covariate_cols: list[str] | None = None,
    cause_count: int | None = None,
) -> CompetingRisksDataset:
    """Read a competing-risks dataset from CSV.

    The file must have a header row naming a time column, a status column
    (coded 0 for censored, 1..J for failure causes) and at least one
    covariate column. By default every column other than time and status is
    treated as a covariate.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ValueError
        On duplicate column names, non-numeric cells, negative times,
        status outside ``{0..J}``, or an empty covariate block.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise ValueError("duplicate column names")
        for required in (time_col, status_col):
            if required not in header:
                raise ValueError(f"missing column {required!r}")
        if covariate_cols is None:
            covariate_cols = [h for h in header if h not in (time_col, status_col)]
        if not covariate_cols:
            raise ValueError("no covariates")
        missing = [c for c in covariate_cols if c not in header]
        if missing:
            raise ValueError(f"missing column {missing[0]!r}")

        col_idx = {h: i for i, h in enumerate(header)}
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(header):
                raise ValueError(f"row {lineno}: expected {len(header)} cells, got {len(raw)}")
            parsed = []
            for name in [time_col, status_col, *covariate_cols]:
                cell = raw[col_idx[name]].strip()
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(f"row {lineno}, column {name!r}: non-numeric cell {cell!r}") from None
            rows.append(parsed)

    if not rows:
        raise ValueError("no data rows")
    table = np.asarray(rows, dtype=float)
    time = table[:, 0]
    status = table[:, 1]
    if np.any(time < 0):
        raise ValueError("negative time")
    if not np.all(status == status.astype(int)):
        raise ValueError("status must be integer coded")
    return CompetingRisksDataset(
        time=time,
        status=status.astype(int),
        covariates=table[:, 2:],
        covariate_names=tuple(covariate_cols),
        cause_count=cause_count or 0,
    )


def save_dataset(data: CompetingRisksDataset, path: str | Path) -> None:
    """Write a dataset to CSV in the canonical column order (exact round-trip)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "status", *data.covariate_names])
        for i in range(data.n):
            writer.writerow(
                [repr(float(data.time[i])), int(data.status[i])]
                + [repr(float(v)) for v in data.covariates[i]]
            )


def censoring_km(data: CompetingRisksDataset) -> StepFunction:
    """Kaplan-Meier estimator of the censoring survival P(C > t).

    Censorings (status 0) are the events here and failures of any cause act
    as censorings of C. At tied times failures are processed first, so the
    risk set at t is everyone still under observation at t-.
    """
    if data.n < 1:
        raise ValueError("empty dataset")
    time, status = data.time, data.status
    cens_times = np.unique(time[status == 0])
    if cens_times.size == 0:
        return StepFunction(knots=np.array([0.0]), values=np.array([1.0]), value_before_first=1.0)
    # data.time is sorted ascending, so suffix counts give risk-set sizes
    at_risk = time.size - np.searchsorted(time, cens_times, side="left")
    d = np.array([np.sum((time == t) & (status == 0)) for t in cens_times], dtype=float)
    surv = np.cumprod(1.0 - d / at_risk)
    return StepFunction(knots=cens_times, values=surv, value_before_first=1.0)
