"""Dataset representation, validation and principal-stratum bookkeeping.

Observed data are ``W = (X, Y, S, Z)`` with binary treatment assignment ``Z``
and binary intermediate variable ``S``.  Under monotonicity the latent
principal strata are never-takers (00), compliers (10) and always-takers (11);
each observed ``(Z, S)`` cell is a mixture of at most two of them.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, EmptyCellError, SchemaError

__all__ = [
    "PrincipalStratum",
    "ObservedCell",
    "SampleTable",
    "strata_in_cell",
    "validate_dataset",
    "read_csv",
    "write_csv",
    "format_float",
]


class PrincipalStratum(str, enum.Enum):
    """Principal stratum ``U = (S(1), S(0))`` allowed under monotonicity.

    Defiers (01) are not representable.
    """

    NEVER_TAKER = "00"
    COMPLIER = "10"
    ALWAYS_TAKER = "11"

    @classmethod
    def parse(cls, value) -> "PrincipalStratum":
        """Coerce ``"00"``, ``"10"``, ``"11"`` (or a member) to a stratum."""
        if isinstance(value, cls):
            return value
        key = str(value).strip()
        for member in cls:
            if key == member.value or key.lower() == member.name.lower():
                return member
        if key == "01":
            raise SchemaError("stratum 01 (defiers) is excluded by monotonicity")
        raise SchemaError(f"unknown principal stratum {value!r}")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ObservedCell:
    """An observed ``(z, s)`` cell."""

    z: int
    s: int

    def __post_init__(self):
        if self.z not in (0, 1) or self.s not in (0, 1):
            raise SchemaError(f"cell entries must be 0/1, got ({self.z}, {self.s})")


_CELL_STRATA = {
    (1, 0): frozenset({PrincipalStratum.NEVER_TAKER}),
    (0, 1): frozenset({PrincipalStratum.ALWAYS_TAKER}),
    (1, 1): frozenset({PrincipalStratum.COMPLIER, PrincipalStratum.ALWAYS_TAKER}),
    (0, 0): frozenset({PrincipalStratum.NEVER_TAKER, PrincipalStratum.COMPLIER}),
}

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


def strata_in_cell(cell: ObservedCell) -> frozenset:
    """Principal strata compatible with an observed cell under monotonicity.

    Parameters
    ----------
    cell : ObservedCell

    Returns
    -------
    frozenset of PrincipalStratum
    """
    return _CELL_STRATA[(cell.z, cell.s)]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleTable:
    """Validated sample of ``n`` units.

    Arrays are copied and frozen on construction, so a table can be shared
    read-only between workers.  Use :func:`validate_dataset` to build one from
    raw columns.
    """

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    x_names: tuple = ()
    y_name: str = "y"
    s_name: str = "s"
    z_name: str = "z"
    cell_counts: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "y", _readonly(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "s", _readonly(np.asarray(self.s, dtype=np.int8)))
        object.__setattr__(self, "z", _readonly(np.asarray(self.z, dtype=np.int8)))
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j + 1}" for j in range(x.shape[1])))
        counts = {c: int(np.sum((self.z == c[0]) & (self.s == c[1]))) for c in CELLS}
        object.__setattr__(self, "cell_counts", counts)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    def take(self, idx) -> "SampleTable":
        """Rows ``idx`` as a new table (no cell-count validation)."""
        idx = np.asarray(idx)
        return SampleTable(self.x[idx], self.y[idx], self.s[idx], self.z[idx],
                           self.x_names, self.y_name, self.s_name, self.z_name)

    def cell_mask(self, z: int, s: int) -> np.ndarray:
        return (self.z == z) & (self.s == s)


def _as_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"column {name!r} contains missing or non-finite values")
    if not np.all((arr == 0) | (arr == 1)):
        bad = np.flatnonzero((arr != 0) & (arr != 1))
        raise SchemaError(f"column {name!r} must be binary 0/1; first offending row {int(bad[0])}")
    return arr.astype(np.int8)


def _as_real(values, name: str) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"column {name!r} is not numeric") from exc
    if not np.all(np.isfinite(arr)):
        bad = np.flatnonzero(~np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1))
        raise DataError(f"column {name!r} contains missing or non-finite values; first offending row {int(bad[0])}")
    return arr


def validate_dataset(raw: Mapping[str, Sequence], x_cols: Sequence[str] | None = None,
                     y_col: str = "y", s_col: str = "s", z_col: str = "z",
                     require_all_cells: bool = True) -> SampleTable:
    """Validate raw columns and build a :class:`SampleTable`.

    Parameters
    ----------
    raw : mapping
        Column name to 1-d sequence.
    x_cols : sequence of str, optional
        Covariate columns.  Defaults to every column other than the outcome,
        intermediate and treatment columns, in mapping order.
    y_col, s_col, z_col : str
        Names of the outcome, intermediate and treatment columns.
    require_all_cells : bool
        Raise :class:`EmptyCellError` when an observed ``(Z, S)`` cell is empty.

    Returns
    -------
    SampleTable
    """
    for col in (y_col, s_col, z_col):
        if col not in raw:
            raise SchemaError(f"missing required column {col!r}")
    if x_cols is None:
        x_cols = [c for c in raw if c not in (y_col, s_col, z_col)]
    x_cols = list(x_cols)
    if not x_cols:
        raise SchemaError("at least one covariate column is required")
    for col in x_cols:
        if col not in raw:
            raise SchemaError(f"missing covariate column {col!r}")
    lengths = {len(raw[c]) for c in [*x_cols, y_col, s_col, z_col]}
    if len(lengths) != 1:
        raise SchemaError(f"columns have unequal lengths {sorted(lengths)}")
    n = lengths.pop()
    if n < 1:
        raise SchemaError("dataset has no rows")
    x = np.column_stack([_as_real(raw[c], c) for c in x_cols])
    y = _as_real(raw[y_col], y_col)
    s = _as_binary(raw[s_col], s_col)
    z = _as_binary(raw[z_col], z_col)
    table = SampleTable(x, y, s, z, tuple(x_cols), y_col, s_col, z_col)
    if require_all_cells:
        empty = [c for c, k in table.cell_counts.items() if k == 0]
        if empty:
            raise EmptyCellError(f"observed cells (z, s) with no rows: {empty}")
    return table


def read_csv(path, x_cols: Sequence[str] | None = None, y_col: str = "y",
             s_col: str = "s", z_col: str = "z", require_all_cells: bool = True) -> SampleTable:
    """Read a header-row CSV file and validate it.

    Empty fields are treated as missing and rejected with :class:`DataError`.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    cols = {h: [] for h in header}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for h, v in zip(header, row):
            v = v.strip()
            if v == "" or v.lower() in ("na", "nan"):
                raise DataError(f"{path}: missing value in column {h!r}, row {i}")
            cols[h].append(v)
    parsed = {}
    for h, vals in cols.items():
        try:
            parsed[h] = np.array([float(v) for v in vals])
        except ValueError:
            if h in (y_col, s_col, z_col) or (x_cols is not None and h in x_cols):
                raise DataError(f"{path}: non-numeric value in column {h!r}") from None
            continue
    return validate_dataset(parsed, x_cols, y_col, s_col, z_col, require_all_cells)


def format_float(v: float) -> str:
    """Locale-free repr with 17 significant digits."""
    v = float(v)
    if np.isnan(v):
        return "nan"
    return format(v, ".17g")


def write_csv(path, columns: Mapping[str, Sequence]) -> None:
    """Write named columns to ``path``; floats use 17 significant digits."""
    names = list(columns)
    data = [np.asarray(columns[c]) for c in names]
    n = len(data[0]) if data else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            row = []
            for arr in data:
                v = arr[i]
                if np.issubdtype(arr.dtype, np.integer) or np.issubdtype(arr.dtype, np.bool_):
                    row.append(str(int(v)))
                elif np.issubdtype(arr.dtype, np.floating):
                    row.append(format_float(v))
                else:
                    row.append(str(v))
            w.writerow(row)
