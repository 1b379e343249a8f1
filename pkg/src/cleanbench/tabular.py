"""Typed tabular data model: CSV I/O, cell addressing, diffing, seeded splits.

A Dataset is an immutable grid of text cells. Each cell keeps the raw text as
read, an optional parsed float (present iff the text is a finite decimal), and
an emptiness flag driven by a configurable null-token set. All "mutation"
constructs new datasets, so datasets are safe to share across workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

DEFAULT_NULL_TOKENS = frozenset({"", "NA", "N/A", "NaN", "nan", "null", "NULL", "?"})

# A column is inferred numeric when at least this fraction of its non-empty
# cells parse as numbers; dirty data below the bar stays categorical.
NUMERIC_INFERENCE_THRESHOLD = 0.9

COLUMN_TYPES = ("numeric", "categorical", "text")


class TabularError(Exception):
    """Base error for the tabular data model."""


class CsvFormatError(TabularError):
    pass


class ShapeMismatchError(TabularError):
    pass


class SplitError(TabularError):
    pass


class CellRef(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True, slots=True)
class CellValue:
    raw: str
    parsed: float | None
    is_empty: bool


def make_cell(raw: str, null_tokens: frozenset[str] = DEFAULT_NULL_TOKENS) -> CellValue:
    """Build a cell from raw text; parsed is set only for finite decimals."""
    if raw in null_tokens:
        return CellValue(raw, None, True)
    try:
        value = float(raw)
    except ValueError:
        return CellValue(raw, None, False)
    if not math.isfinite(value):
        return CellValue(raw, None, False)
    return CellValue(raw, value, False)


@dataclass
class Column:
    name: str
    declared_type: str
    cells: tuple[CellValue, ...]
    # Fraction of non-empty cells that parsed as numbers when the type was
    # inferred at load time; None when the type was user-declared.
    numeric_ratio: float | None = None
    _parsed: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)
    _empty: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.declared_type not in COLUMN_TYPES:
            raise TabularError(f"unknown column type {self.declared_type!r}")

    def __len__(self) -> int:
        return len(self.cells)

    def raw_values(self) -> list[str]:
        return [c.raw for c in self.cells]

    def parsed_values(self) -> np.ndarray:
        """Cell values as floats, NaN where no parse exists."""
        if self._parsed is None:
            self._parsed = np.array(
                [c.parsed if c.parsed is not None else np.nan for c in self.cells],
                dtype=float,
            )
        return self._parsed

    def empty_flags(self) -> np.ndarray:
        if self._empty is None:
            self._empty = np.array([c.is_empty for c in self.cells], dtype=bool)
        return self._empty

    @property
    def is_numeric(self) -> bool:
        return self.declared_type == "numeric"


def infer_column_type(raws: Sequence[str], null_tokens: frozenset[str]) -> tuple[str, float]:
    non_empty = [r for r in raws if r not in null_tokens]
    if not non_empty:
        return "categorical", 0.0
    parsed = sum(1 for r in non_empty if make_cell(r, null_tokens).parsed is not None)
    ratio = parsed / len(non_empty)
    kind = "numeric" if ratio >= NUMERIC_INFERENCE_THRESHOLD else "categorical"
    return kind, ratio


@dataclass
class Dataset:
    """An immutable named table; u rows by v columns of tagged cells."""

    name: str
    columns: tuple[Column, ...]
    null_tokens: frozenset[str] = DEFAULT_NULL_TOKENS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise TabularError(f"duplicate column names in {self.name!r}")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise TabularError(f"columns of unequal length in {self.name!r}: {sorted(lengths)}")

    @property
    def row_count(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def col_count(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def col_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise TabularError(f"no column {name!r} in {self.name!r}")

    def column(self, key: int | str) -> Column:
        if isinstance(key, str):
            return self.columns[self.col_index(key)]
        return self.columns[key]

    def cell(self, row: int, col: int) -> CellValue:
        return self.columns[col].cells[row]

    def raw(self, row: int, col: int) -> str:
        return self.columns[col].cells[row].raw

    def row(self, row: int) -> tuple[str, ...]:
        return tuple(c.cells[row].raw for c in self.columns)

    def iter_rows(self) -> Iterable[tuple[str, ...]]:
        for r in range(self.row_count):
            yield self.row(r)

    def schema(self) -> dict[str, str]:
        return {c.name: c.declared_type for c in self.columns}

    def numeric_column_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.is_numeric]

    def categorical_column_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if not c.is_numeric]

    # -- construction -------------------------------------------------------

    @staticmethod
    def from_rows(
        name: str,
        header: Sequence[str],
        rows: Sequence[Sequence[str]],
        schema: Mapping[str, str] | None = None,
        null_tokens: frozenset[str] = DEFAULT_NULL_TOKENS,
    ) -> "Dataset":
        header = list(header)
        for i, r in enumerate(rows):
            if len(r) != len(header):
                raise CsvFormatError(f"row {i} has {len(r)} fields, expected {len(header)}")
        columns = []
        for j, col_name in enumerate(header):
            raws = [str(r[j]) for r in rows]
            if schema is not None and col_name in schema:
                decl, ratio = schema[col_name], None
                if decl not in COLUMN_TYPES:
                    raise TabularError(f"bad declared type {decl!r} for column {col_name!r}")
            else:
                decl, ratio = infer_column_type(raws, null_tokens)
            cells = tuple(make_cell(r, null_tokens) for r in raws)
            columns.append(Column(col_name, decl, cells, numeric_ratio=ratio))
        return Dataset(name, tuple(columns), null_tokens=null_tokens)

    @staticmethod
    def from_columns(
        name: str,
        spec: Sequence[tuple[str, str, Sequence[str]]],
        null_tokens: frozenset[str] = DEFAULT_NULL_TOKENS,
        meta: dict | None = None,
    ) -> "Dataset":
        columns = tuple(
            Column(cname, decl, tuple(make_cell(str(r), null_tokens) for r in raws))
            for cname, decl, raws in spec
        )
        return Dataset(name, columns, null_tokens=null_tokens, meta=meta or {})

    # -- derivation ---------------------------------------------------------

    def replace_cells(self, updates: Mapping[CellRef, str], name: str | None = None) -> "Dataset":
        """New dataset with the given raw cell texts substituted."""
        by_col: dict[int, dict[int, str]] = {}
        for ref, raw in updates.items():
            if not (0 <= ref.row < self.row_count and 0 <= ref.col < self.col_count):
                raise TabularError(f"cell {ref} outside {self.row_count}x{self.col_count}")
            by_col.setdefault(ref.col, {})[ref.row] = raw
        columns = []
        for j, col in enumerate(self.columns):
            if j not in by_col:
                columns.append(col)
                continue
            cells = list(col.cells)
            for r, raw in by_col[j].items():
                cells[r] = make_cell(raw, self.null_tokens)
            columns.append(Column(col.name, col.declared_type, tuple(cells), col.numeric_ratio))
        return Dataset(name or self.name, tuple(columns), self.null_tokens, dict(self.meta))

    def take_rows(self, indices: Sequence[int], name: str | None = None) -> "Dataset":
        idx = list(indices)
        columns = tuple(
            Column(c.name, c.declared_type, tuple(c.cells[i] for i in idx), c.numeric_ratio)
            for c in self.columns
        )
        return Dataset(name or self.name, columns, self.null_tokens, dict(self.meta))

    def append_rows(self, rows: Sequence[Sequence[str]], name: str | None = None) -> "Dataset":
        for r in rows:
            if len(r) != self.col_count:
                raise ShapeMismatchError("appended row width mismatch")
        columns = tuple(
            Column(
                c.name,
                c.declared_type,
                c.cells + tuple(make_cell(str(r[j]), self.null_tokens) for r in rows),
                c.numeric_ratio,
            )
            for j, c in enumerate(self.columns)
        )
        return Dataset(self.name if name is None else name, columns, self.null_tokens, dict(self.meta))

    def with_name(self, name: str) -> "Dataset":
        return Dataset(name, self.columns, self.null_tokens, dict(self.meta))


@dataclass(frozen=True)
class DetectionMask:
    """A set of cell coordinates flagged erroneous by one producer."""

    cells: frozenset[CellRef]
    source: str = ""

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, ref: CellRef) -> bool:
        return ref in self.cells

    def sorted_cells(self) -> list[CellRef]:
        return sorted(self.cells)

    def rows(self) -> set[int]:
        return {ref.row for ref in self.cells}

    def validate(self, ds: Dataset) -> None:
        for ref in self.cells:
            if not (0 <= ref.row < ds.row_count and 0 <= ref.col < ds.col_count):
                raise TabularError(f"mask cell {ref} outside {ds.row_count}x{ds.col_count}")

    def restrict_to_columns(self, cols: Iterable[int], source: str | None = None) -> "DetectionMask":
        colset = set(cols)
        return DetectionMask(
            frozenset(ref for ref in self.cells if ref.col in colset),
            self.source if source is None else source,
        )


def mask_from(cells: Iterable[tuple[int, int]], source: str = "") -> DetectionMask:
    return DetectionMask(frozenset(CellRef(r, c) for r, c in cells), source)


def union_masks(masks: Iterable[DetectionMask], source: str = "union") -> DetectionMask:
    cells: set[CellRef] = set()
    for m in masks:
        cells |= m.cells
    return DetectionMask(frozenset(cells), source)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise SplitError(f"test_fraction must lie in (0,1), got {self.test_fraction}")


@dataclass
class DatasetPair:
    """Ground truth, its dirtied counterpart, and the exact injected-cell mask."""

    ground_truth: Dataset
    dirty: Dataset
    error_mask: DetectionMask
    # Maps appended duplicate rows (dirty coordinates) to their source row.
    row_provenance: dict[int, int] | None = None

    def __post_init__(self):
        gt, dirty = self.ground_truth, self.dirty
        if gt.column_names != dirty.column_names:
            raise ShapeMismatchError("pair column names differ")
        if self.row_provenance is None:
            if gt.row_count != dirty.row_count:
                raise ShapeMismatchError("pair row counts differ without duplicate provenance")
        elif dirty.row_count < gt.row_count:
            raise ShapeMismatchError("dirty dataset has fewer rows than ground truth")


# -- operations -------------------------------------------------------------


def load_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    null_tokens: frozenset[str] = DEFAULT_NULL_TOKENS,
    name: str | None = None,
) -> Dataset:
    """Load an RFC-4180 CSV with a mandatory header row.

    Column types come from `schema` when given, otherwise from the 90%
    numeric-inference rule; the inference ratio is recorded per column.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CsvFormatError(f"{path}: empty file, header row required") from None
            rows = list(reader)
    except OSError as exc:
        raise CsvFormatError(f"unreadable file {path}: {exc}") from exc
    if len(set(header)) != len(header):
        raise CsvFormatError(f"{path}: duplicate header names")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise CsvFormatError(f"{path}: ragged row {i + 1} ({len(r)} fields, expected {len(header)})")
    return Dataset.from_rows(name or path.stem, header, rows, schema=schema, null_tokens=null_tokens)


def save_csv(ds: Dataset, path: str | Path) -> None:
    """Write the dataset; load_csv(save_csv(ds)) reproduces raw texts exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.column_names)
        for row in ds.iter_rows():
            writer.writerow(row)


def diff_cells(gt: Dataset, dirty: Dataset) -> DetectionMask:
    """Cells whose raw text differs between two same-shape datasets.

    Equality is raw-text equality: "5" vs "5.0" counts as a difference.
    """
    if gt.column_names != dirty.column_names or gt.row_count != dirty.row_count:
        raise ShapeMismatchError(
            f"diff requires identical shape and column names "
            f"({gt.row_count}x{gt.col_count} vs {dirty.row_count}x{dirty.col_count})"
        )
    cells = set()
    for j in range(gt.col_count):
        a, b = gt.columns[j].cells, dirty.columns[j].cells
        for i in range(gt.row_count):
            if a[i].raw != b[i].raw:
                cells.add(CellRef(i, j))
    return DetectionMask(frozenset(cells), source="diff")


def split_indices(row_count: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled partition of row indices; returned sorted."""
    if row_count < 2:
        raise SplitError("need at least 2 rows to split")
    n_test = int(round(spec.test_fraction * row_count))
    if n_test == 0 or n_test == row_count:
        raise SplitError(
            f"fraction {spec.test_fraction} yields an empty partition on {row_count} rows"
        )
    perm = np.random.default_rng(spec.seed).permutation(row_count)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return train, test


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(ds.row_count, spec)
    return ds.take_rows(train_idx.tolist()), ds.take_rows(test_idx.tolist())


# -- mask files: line-delimited `row,col,source` ----------------------------


def save_mask(mask: DetectionMask, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ref in mask.sorted_cells():
            fh.write(f"{ref.row},{ref.col},{mask.source}\n")


def load_mask(path: str | Path) -> DetectionMask:
    cells = set()
    sources = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",", 2)
            if len(parts) != 3:
                raise CsvFormatError(f"{path}:{line_no}: expected row,col,source")
            cells.add(CellRef(int(parts[0]), int(parts[1])))
            sources.add(parts[2])
    return DetectionMask(frozenset(cells), source="+".join(sorted(sources)))
