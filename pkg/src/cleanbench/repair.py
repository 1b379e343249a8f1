"""Repair strategies: turn (dirty dataset, detection mask) into a repaired dataset.

All imputers compute their statistics from unflagged cells only, and never
touch a cell outside the mask. Ties in modes and votes break lexicographically
so repeated runs are bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import models
from .tabular import CellRef, Dataset, DatasetPair, DetectionMask

REPAIR_KINDS = ("delete", "mean", "median", "mode", "knn", "iter", "gt")


class RepairError(Exception):
    pass


@dataclass
class RepairSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in REPAIR_KINDS:
            raise RepairError(f"unknown repair kind {self.kind!r}")
        if self.kind == "knn" and self.params.get("k", 5) < 1:
            raise RepairError("knn repair requires k >= 1")
        if self.kind == "iter" and self.params.get("max_rounds", 3) < 1:
            raise RepairError("iterative repair requires max_rounds >= 1")

    @property
    def name(self) -> str:
        return self.kind


@dataclass
class RepairedDataset:
    data: Dataset
    strategy: tuple[str, str]  # (detector id, repair id)
    runtime: float
    repaired_cells: DetectionMask
    # repaired row index -> row index in the input (dirty) dataset
    row_map: list[int]
    warning: str | None = None


def _result(ds, kind, detector, runtime, cells, row_map, warning=None):
    return RepairedDataset(
        data=ds,
        strategy=(detector, kind),
        runtime=runtime,
        repaired_cells=DetectionMask(frozenset(cells), source=f"repair:{kind}"),
        row_map=row_map,
        warning=warning,
    )


def repair_delete(ds: Dataset, mask: DetectionMask, detector: str = "") -> RepairedDataset:
    """Drop every row containing at least one flagged cell, keeping row order."""
    start = time.perf_counter()
    bad_rows = mask.rows()
    keep = [r for r in range(ds.row_count) if r not in bad_rows]
    repaired = ds.take_rows(keep)
    cells = {
        CellRef(r, c) for r in bad_rows if r < ds.row_count for c in range(ds.col_count)
    }
    warning = "all rows were flagged; repaired dataset is empty" if not keep else None
    return _result(repaired, "delete", detector, time.perf_counter() - start, cells, keep, warning)


def _column_stats(ds: Dataset, mask: DetectionMask):
    """Per-column imputation values from unflagged cells of the pre-repair data."""
    numeric_pool: dict[int, list[float]] = {}
    cat_pool: dict[int, dict[str, int]] = {}
    for j, col in enumerate(ds.columns):
        if col.is_numeric:
            numeric_pool[j] = [
                cell.parsed
                for i, cell in enumerate(col.cells)
                if CellRef(i, j) not in mask.cells and cell.parsed is not None
            ]
        else:
            counts: dict[str, int] = {}
            for i, cell in enumerate(col.cells):
                if CellRef(i, j) in mask.cells or cell.is_empty:
                    continue
                counts[cell.raw] = counts.get(cell.raw, 0) + 1
            cat_pool[j] = counts
    return numeric_pool, cat_pool


def _numeric_stat(values: list[float], stat: str) -> float:
    arr = np.asarray(values, dtype=float)
    if stat == "mean":
        return float(arr.mean())
    if stat == "median":
        return float(np.median(arr))
    if stat == "mode":
        best, best_count = None, -1
        for v in sorted(set(values)):
            count = values.count(v)
            if count > best_count:
                best, best_count = v, count
        return float(best)
    raise RepairError(f"unknown numeric stat {stat!r}")


def _mode(counts: dict[str, int]) -> str | None:
    if not counts:
        return None
    return sorted(counts, key=lambda v: (-counts[v], v))[0]


def repair_impute_stat(
    ds: Dataset, mask: DetectionMask, numeric_stat: str = "mean", detector: str = ""
) -> RepairedDataset:
    """Flagged numeric cells take the column mean/median/mode of unflagged
    values; flagged categorical cells take the unflagged mode."""
    start = time.perf_counter()
    numeric_pool, cat_pool = _column_stats(ds, mask)
    updates: dict[CellRef, str] = {}
    repaired_cells: set[CellRef] = set()
    unfillable: list[CellRef] = []
    for ref in mask.sorted_cells():
        if ref.row >= ds.row_count:
            continue
        col = ds.columns[ref.col]
        if col.is_numeric:
            pool = numeric_pool[ref.col]
            if not pool:
                unfillable.append(ref)
                updates[ref] = ""
                continue
            updates[ref] = repr(_numeric_stat(pool, numeric_stat))
        else:
            value = _mode(cat_pool[ref.col])
            if value is None:
                unfillable.append(ref)
                updates[ref] = ""
                continue
            updates[ref] = value
        repaired_cells.add(ref)
    repaired = ds.replace_cells(updates)
    warning = f"{len(unfillable)} cells had no usable donor values" if unfillable else None
    return _result(
        repaired,
        numeric_stat,
        detector,
        time.perf_counter() - start,
        repaired_cells,
        list(range(ds.row_count)),
        warning,
    )


def repair_impute_knn(
    ds: Dataset, mask: DetectionMask, k: int = 5, detector: str = ""
) -> RepairedDataset:
    """Impute each flagged cell from its k nearest fully-clean donor rows.

    Distances are z-scored Euclidean over numeric columns where both rows hold
    unflagged parsed values, ignoring missing dimensions.
    """
    start = time.perf_counter()
    if k < 1:
        raise RepairError("knn repair requires k >= 1")
    flagged_rows = mask.rows()
    donors = [r for r in range(ds.row_count) if r not in flagged_rows]
    if not donors:
        raise RepairError("knn repair has no fully-unflagged donor rows")

    num_cols = ds.numeric_column_indices()
    stats = {}
    for c in num_cols:
        values = [
            cell.parsed
            for i, cell in enumerate(ds.columns[c].cells)
            if CellRef(i, c) not in mask.cells and cell.parsed is not None
        ]
        if len(values) >= 2:
            arr = np.asarray(values)
            std = float(arr.std(ddof=1))
            if std > 0:
                stats[c] = (float(arr.mean()), std)

    def z(row: int, c: int) -> float | None:
        cell = ds.columns[c].cells[row]
        if CellRef(row, c) in mask.cells or cell.parsed is None or c not in stats:
            return None
        mean, std = stats[c]
        return (cell.parsed - mean) / std

    updates: dict[CellRef, str] = {}
    repaired_cells: set[CellRef] = set()
    unfillable = 0
    for ref in mask.sorted_cells():
        if ref.row >= ds.row_count:
            continue
        target_col = ds.columns[ref.col]
        usable = []
        for d in donors:
            donor_cell = target_col.cells[d]
            if target_col.is_numeric:
                if donor_cell.parsed is None:
                    continue
            elif donor_cell.is_empty:
                continue
            dist2, dims = 0.0, 0
            for c in num_cols:
                if c == ref.col:
                    continue
                a = z(ref.row, c)
                b = z(d, c)
                if a is None or b is None:
                    continue
                dist2 += (a - b) ** 2
                dims += 1
            distance = np.sqrt(dist2) if dims else np.inf
            usable.append((distance, d, donor_cell))
        usable.sort(key=lambda t: (t[0], t[1]))
        nearest = usable[: min(k, len(usable))]
        nearest = [t for t in nearest if np.isfinite(t[0])] or nearest
        if not nearest:
            unfillable += 1
            continue
        if target_col.is_numeric:
            updates[ref] = repr(float(np.mean([t[2].parsed for t in nearest])))
        else:
            votes: dict[str, int] = {}
            for _, _, cell in nearest:
                votes[cell.raw] = votes.get(cell.raw, 0) + 1
            updates[ref] = _mode(votes)
        repaired_cells.add(ref)
    repaired = ds.replace_cells(updates)
    warning = f"{unfillable} cells had no eligible donors" if unfillable else None
    return _result(
        repaired,
        "knn",
        detector,
        time.perf_counter() - start,
        repaired_cells,
        list(range(ds.row_count)),
        warning,
    )


def repair_impute_iterative(
    ds: Dataset,
    mask: DetectionMask,
    max_rounds: int = 3,
    detector: str = "",
    tolerance: float = 1e-4,
) -> RepairedDataset:
    """missForest-style iterative imputation with a single CART tree per column.

    Flagged cells start from mean/mode imputation; each round refits a tree per
    flagged column (ascending flagged count) on rows whose target cell is
    unflagged and overwrites the flagged cells with predictions. Stops when the
    RMS change of imputed numeric values drops below `tolerance` and no
    categorical cell changes.
    """
    start = time.perf_counter()
    if max_rounds < 1:
        raise RepairError("iterative repair requires max_rounds >= 1")
    in_grid = [ref for ref in mask.sorted_cells() if ref.row < ds.row_count]
    clean_rows = ds.row_count - len({ref.row for ref in in_grid})
    if clean_rows < 10:
        raise RepairError(
            f"iterative repair needs >= 10 fully-unflagged rows, found {clean_rows}"
        )

    seeded = repair_impute_stat(ds, mask, "mean", detector)
    working = seeded.data
    by_col: dict[int, list[CellRef]] = {}
    for ref in in_grid:
        by_col.setdefault(ref.col, []).append(ref)
    col_order = sorted(by_col, key=lambda c: (len(by_col[c]), c))
    fell_back = False

    for _ in range(max_rounds):
        numeric_change2, numeric_n, categorical_changed = 0.0, 0, False
        for c in col_order:
            col = working.columns[c]
            target_rows = [ref.row for ref in by_col[c]]
            train_rows = [
                r
                for r in range(working.row_count)
                if CellRef(r, c) not in mask.cells
                and (col.cells[r].parsed is not None if col.is_numeric else not col.cells[r].is_empty)
            ]
            if len(train_rows) < 2:
                fell_back = True
                continue
            try:
                train = working.take_rows(train_rows)
                predict_on = working.take_rows(target_rows)
                tr_mat, pr_mat = models.encode(train, predict_on, target=col.name)
                task = "regression" if col.is_numeric else "classification"
                if task == "classification" and len(set(tr_mat.target.tolist())) < 2:
                    raise models.ModelError("single-class training column")
                tree = models.DecisionTree(task, max_depth=8, min_leaf=5)
                tree.fit(tr_mat.features, tr_mat.target)
                preds = tree.predict(pr_mat.features)
            except models.ModelError:
                fell_back = True
                continue
            updates = {}
            for ref, value in zip(by_col[c], preds):
                if col.is_numeric:
                    old = working.cell(ref.row, ref.col).parsed
                    new = float(value)
                    if old is not None:
                        numeric_change2 += (new - old) ** 2
                        numeric_n += 1
                    updates[ref] = repr(new)
                else:
                    new = str(value)
                    if new != working.raw(ref.row, ref.col):
                        categorical_changed = True
                    updates[ref] = new
            working = working.replace_cells(updates)
        rms = np.sqrt(numeric_change2 / numeric_n) if numeric_n else 0.0
        if rms < tolerance and not categorical_changed:
            break

    warning = "degenerate training data; kept stat imputation for some columns" if fell_back else None
    return _result(
        working,
        "iter",
        detector,
        time.perf_counter() - start,
        set(seeded.repaired_cells.cells),
        list(range(ds.row_count)),
        warning,
    )


def repair_ground_truth(
    pair: DatasetPair, mask: DetectionMask, detector: str = ""
) -> RepairedDataset:
    """Replace flagged cells with ground-truth values; undetected errors persist.

    Flagged cells of appended duplicate rows resolve through the provenance map.
    """
    start = time.perf_counter()
    gt, dirty = pair.ground_truth, pair.dirty
    updates: dict[CellRef, str] = {}
    for ref in mask.sorted_cells():
        if ref.row < gt.row_count:
            updates[ref] = gt.raw(ref.row, ref.col)
        else:
            if not pair.row_provenance or ref.row not in pair.row_provenance:
                raise RepairError(
                    f"row {ref.row} is beyond ground truth and has no provenance"
                )
            updates[ref] = gt.raw(pair.row_provenance[ref.row], ref.col)
    repaired = dirty.replace_cells(updates)
    return _result(
        repaired,
        "gt",
        detector,
        time.perf_counter() - start,
        set(mask.cells),
        list(range(dirty.row_count)),
    )


def apply_repair(
    spec: RepairSpec,
    ds: Dataset,
    mask: DetectionMask,
    pair: DatasetPair | None = None,
    detector: str = "",
) -> RepairedDataset:
    """Dispatch a repair spec against a dataset and mask."""
    if spec.kind == "delete":
        return repair_delete(ds, mask, detector)
    if spec.kind in ("mean", "median", "mode"):
        return repair_impute_stat(ds, mask, spec.kind, detector)
    if spec.kind == "knn":
        return repair_impute_knn(ds, mask, k=spec.params.get("k", 5), detector=detector)
    if spec.kind == "iter":
        return repair_impute_iterative(
            ds, mask, max_rounds=spec.params.get("max_rounds", 3), detector=detector
        )
    if spec.kind == "gt":
        if pair is None:
            raise RepairError("ground-truth repair needs the dataset pair")
        return repair_ground_truth(pair, mask, detector)
    raise RepairError(f"unknown repair kind {spec.kind!r}")
