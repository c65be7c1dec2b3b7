"""Tabular data container with typed columns.

A :class:`Dataset` holds named columns, each either numeric (float64)
or categorical (string levels stored as integer codes). Numeric columns
must be finite. Categorical levels are recorded in order of first
appearance, which also fixes the level order used by reports. Instances
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from fmekit.errors import ValidationError

MISSING_TOKENS = ("", "NA", "NaN")


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class Dataset:
    """Immutable table of numeric and categorical columns.

    Parameters
    ----------
    name:
        Identifier used in provenance output.
    columns:
        Iterable of ``(column_name, kind, values)`` triples. Numeric
        values may be any sequence of finite floats; categorical values
        a sequence of strings.
    target:
        Optional name of the response column. It is excluded from
        :attr:`feature_names` but kept in the table.
    """

    def __init__(
        self,
        name: str,
        columns: Iterable[tuple[str, ColumnKind, Sequence]],
        target: str | None = None,
    ):
        self.name = str(name)
        self._numeric: dict[str, np.ndarray] = {}
        self._codes: dict[str, np.ndarray] = {}
        self._levels: dict[str, tuple[str, ...]] = {}
        self._kinds: dict[str, ColumnKind] = {}
        order: list[str] = []

        n_rows = None
        for col_name, kind, values in columns:
            col_name = str(col_name)
            if col_name in self._kinds:
                raise ValidationError(f"duplicate column name: {col_name!r}")
            kind = ColumnKind(kind)
            if kind is ColumnKind.NUMERIC:
                arr = np.asarray(values, dtype=np.float64)
                if arr.ndim != 1:
                    raise ValidationError(f"column {col_name!r} is not 1-dimensional")
                if not np.all(np.isfinite(arr)):
                    bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                    raise ValidationError(
                        f"column {col_name!r} has a non-finite value at row {bad}"
                    )
                arr.flags.writeable = False
                self._numeric[col_name] = arr
                length = arr.shape[0]
            else:
                labels = [str(v) for v in values]
                levels = tuple(dict.fromkeys(labels))
                index = {lvl: i for i, lvl in enumerate(levels)}
                codes = np.fromiter(
                    (index[v] for v in labels), dtype=np.int32, count=len(labels)
                )
                codes.flags.writeable = False
                self._codes[col_name] = codes
                self._levels[col_name] = levels
                length = codes.shape[0]
            self._kinds[col_name] = kind
            order.append(col_name)
            if n_rows is None:
                n_rows = length
            elif n_rows != length:
                raise ValidationError(
                    f"column {col_name!r} has {length} rows, expected {n_rows}"
                )

        if not order:
            raise ValidationError("dataset has no columns")
        if n_rows == 0:
            raise ValidationError("dataset has no rows")
        if target is not None and target not in self._kinds:
            raise ValidationError(f"target column {target!r} not in dataset")
        self.column_names: tuple[str, ...] = tuple(order)
        self.target = target
        self._n_rows = int(n_rows)

    # -- basic accessors -------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self._n_rows

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c for c in self.column_names if c != self.target)

    def kind(self, name: str) -> ColumnKind:
        try:
            return self._kinds[name]
        except KeyError:
            raise ValidationError(f"no such column: {name!r}") from None

    def numeric(self, name: str) -> np.ndarray:
        if self.kind(name) is not ColumnKind.NUMERIC:
            raise ValidationError(f"column {name!r} is not numeric")
        return self._numeric[name]

    def codes(self, name: str) -> np.ndarray:
        if self.kind(name) is not ColumnKind.CATEGORICAL:
            raise ValidationError(f"column {name!r} is not categorical")
        return self._codes[name]

    def levels(self, name: str) -> tuple[str, ...]:
        if self.kind(name) is not ColumnKind.CATEGORICAL:
            raise ValidationError(f"column {name!r} is not categorical")
        return self._levels[name]

    def labels(self, name: str) -> np.ndarray:
        """Categorical column as an object array of level strings."""
        levels = np.asarray(self.levels(name), dtype=object)
        return levels[self._codes[name]]

    def column(self, name: str) -> np.ndarray:
        """Numeric values or label strings, depending on the column kind."""
        if self.kind(name) is ColumnKind.NUMERIC:
            return self._numeric[name]
        return self.labels(name)

    def columns_mapping(self, names: Sequence[str] | None = None) -> dict[str, np.ndarray]:
        names = self.column_names if names is None else names
        return {n: self.column(n) for n in names}

    def take(self, rows) -> "Dataset":
        """New dataset holding the given rows (by position, in order)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = []
        for n in self.column_names:
            if self.kind(n) is ColumnKind.NUMERIC:
                cols.append((n, ColumnKind.NUMERIC, self._numeric[n][rows]))
            else:
                levels = self._levels[n]
                cols.append(
                    (n, ColumnKind.CATEGORICAL, [levels[c] for c in self._codes[n][rows]])
                )
        return Dataset(self.name, cols, target=self.target)

    def __repr__(self):
        return f"Dataset({self.name!r}, {self._n_rows} rows, {len(self.column_names)} columns)"


# -- CSV ingestion -------------------------------------------------------


def _parse_numeric(cell: str, col: str, row: int) -> float:
    try:
        value = float(cell.strip())
    except ValueError:
        raise ValidationError(
            f"column {col!r}, row {row}: non-numeric cell {cell!r}"
        ) from None
    if not math.isfinite(value):
        raise ValidationError(f"column {col!r}, row {row}: non-finite value {cell!r}")
    return value


def _infer_kind(cells: list[str]) -> ColumnKind:
    for cell in cells:
        if cell in MISSING_TOKENS:
            continue
        try:
            if not math.isfinite(float(cell.strip())):
                return ColumnKind.CATEGORICAL
        except ValueError:
            return ColumnKind.CATEGORICAL
    return ColumnKind.NUMERIC


def read_schema(path) -> dict[str, ColumnKind]:
    """Read a sidecar schema file: a JSON object of column -> kind."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"schema file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"schema file {path}: expected a JSON object")
    out = {}
    for col, kind in raw.items():
        try:
            out[str(col)] = ColumnKind(kind)
        except ValueError:
            raise ValidationError(
                f"schema file {path}: column {col!r} has unknown kind {kind!r}"
            ) from None
    return out


def load_csv(
    path,
    schema: Mapping[str, ColumnKind] | None = None,
    target: str | None = None,
    *,
    on_missing: str = "error",
    name: str | None = None,
) -> Dataset:
    """Load a CSV file with a header row into a :class:`Dataset`.

    Column kinds come from ``schema`` where given and are inferred
    otherwise (a column is numeric when every non-missing cell parses as
    a finite float). Missing cells (empty, ``NA``, ``NaN``) raise by
    default; ``on_missing="drop"`` removes the offending rows instead.
    Values are never imputed.
    """
    if on_missing not in ("error", "drop"):
        raise ValidationError(f"on_missing must be 'error' or 'drop', got {on_missing!r}")
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    if len(set(header)) != len(header):
        raise ValidationError(f"{path}: duplicate column names in header")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ValidationError(
                f"{path}: row {i} has {len(r)} cells, expected {len(header)}"
            )

    schema = dict(schema) if schema else {}
    for col in schema:
        if col not in header:
            raise ValidationError(f"schema column {col!r} not present in {path}")

    by_col = {col: [r[j] for r in rows] for j, col in enumerate(header)}
    kinds = {
        col: schema.get(col) or _infer_kind(cells) for col, cells in by_col.items()
    }

    missing_rows = sorted(
        {
            i
            for col, cells in by_col.items()
            for i, cell in enumerate(cells)
            if (cell in MISSING_TOKENS if kinds[col] is ColumnKind.NUMERIC else cell == "")
        }
    )
    if missing_rows:
        if on_missing == "error":
            raise ValidationError(
                f"{path}: missing values in rows {missing_rows[:10]}"
                f"{'...' if len(missing_rows) > 10 else ''}"
                " (use on_missing='drop' to remove them)"
            )
        keep = sorted(set(range(len(rows))) - set(missing_rows))
        if not keep:
            raise ValidationError(f"{path}: every row has missing values")
        by_col = {col: [cells[i] for i in keep] for col, cells in by_col.items()}

    columns = []
    for col in header:
        cells = by_col[col]
        if kinds[col] is ColumnKind.NUMERIC:
            values = [_parse_numeric(c, col, i) for i, c in enumerate(cells)]
            columns.append((col, ColumnKind.NUMERIC, values))
        else:
            columns.append((col, ColumnKind.CATEGORICAL, cells))
    return Dataset(name or path.stem, columns, target=target)


def save_csv(data: Dataset, path) -> None:
    """Write a dataset as CSV; numeric cells round-trip bit-identically."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.column_names)
        cols = []
        for n in data.column_names:
            if data.kind(n) is ColumnKind.NUMERIC:
                cols.append([repr(float(v)) for v in data.numeric(n)])
            else:
                cols.append(list(data.labels(n)))
        for i in range(data.n_rows):
            writer.writerow([c[i] for c in cols])


# -- envelope and summary statistics --------------------------------------


@dataclass(frozen=True)
class FeatureEnvelope:
    """Per-feature observed ranges: the product of [min, max] intervals
    for numeric features plus the observed level sets for categorical ones."""

    numeric: dict[str, tuple[float, float]]
    categorical: dict[str, frozenset[str]]

    def bounds(self, feature: str) -> tuple[float, float]:
        return self.numeric[feature]


def envelope(data: Dataset, features: Sequence[str] | None = None) -> FeatureEnvelope:
    """Observed envelope of the data over the given features (default: all
    feature columns)."""
    features = data.feature_names if features is None else features
    num: dict[str, tuple[float, float]] = {}
    cat: dict[str, frozenset[str]] = {}
    for f in features:
        if data.kind(f) is ColumnKind.NUMERIC:
            col = data.numeric(f)
            num[f] = (float(col.min()), float(col.max()))
        else:
            cat[f] = frozenset(data.levels(f))
    return FeatureEnvelope(numeric=num, categorical=cat)


@dataclass(frozen=True)
class ColumnStats:
    """Summary statistics of one numeric column."""

    mean: float
    sd: float
    iqr: float
    median_abs_dev: float
    _sorted: np.ndarray

    def quantile(self, p: float) -> float:
        """Linear-interpolation quantile on sorted values at h = (n-1)p."""
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"quantile level must be in [0, 1], got {p}")
        return float(np.quantile(self._sorted, p))


def column_stats(data: Dataset, feature: str) -> ColumnStats:
    """Mean, sample sd (ddof=1), IQR and median absolute deviation.

    Requires at least two rows, for the sd to be defined.
    """
    col = data.numeric(feature)
    if col.shape[0] < 2:
        raise ValidationError(
            f"column {feature!r} has fewer than 2 rows; sd is undefined"
        )
    srt = np.sort(col)
    srt.flags.writeable = False
    med = float(np.median(col))
    return ColumnStats(
        mean=float(np.mean(col)),
        sd=float(np.std(col, ddof=1)),
        iqr=float(np.quantile(srt, 0.75) - np.quantile(srt, 0.25)),
        median_abs_dev=float(np.median(np.abs(col - med))),
        _sorted=srt,
    )
