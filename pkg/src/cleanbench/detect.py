"""Error detectors: every detector maps a dataset to a mask of flagged cells.

Row-level detectors (isolation forest, key collision) project rows to cells so
all downstream scoring stays cell-level. Detectors are pure given (dataset,
spec, seed) and safe to run in parallel.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import models
from .constraints import DenialConstraint, find_violations
from .inject import CATEGORICAL_DISGUISE_TOKENS, NUMERIC_DISGUISE_CODES
from .seeding import derive_rng
from .tabular import CellRef, Dataset, DetectionMask, union_masks

DETECTOR_KINDS = ("mvd", "fahes", "sd", "iqr", "if", "rule", "dedup", "cl", "mink", "maxent")


class DetectorError(Exception):
    pass


@dataclass
class DetectorSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise DetectorError(f"unknown detector kind {self.kind!r}")

    @property
    def name(self) -> str:
        if not self.params:
            return self.kind
        parts = []
        for key, value in sorted(self.params.items()):
            if isinstance(value, (list, dict)):
                continue
            parts.append(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}")
        return f"{self.kind}({','.join(parts)})" if parts else self.kind


@dataclass
class DetectorRun:
    spec: DetectorSpec
    mask: DetectionMask
    runtime: float


@dataclass
class DetectorContext:
    """Shared signals a detector may need beyond the dataset itself."""

    constraints: list[DenialConstraint] | None = None
    key_columns: list[str] | None = None
    label_column: str | None = None
    oracle_mask: DetectionMask | None = None
    contamination: float = 0.1
    seed: int = 0


# -- individual detectors ----------------------------------------------------


def detect_missing(ds: Dataset) -> DetectionMask:
    """All cells flagged empty: blank text or a configured null token."""
    cells = set()
    for j, col in enumerate(ds.columns):
        for i, cell in enumerate(col.cells):
            if cell.is_empty:
                cells.add(CellRef(i, j))
    return DetectionMask(frozenset(cells), source="mvd")


_REPEATED_DIGIT_RE = re.compile(r"^-?(\d)\1*$")


def _is_repeated_digit(text: str) -> bool:
    return bool(_REPEATED_DIGIT_RE.match(text))


_DISGUISE_DICTIONARY = set(CATEGORICAL_DISGUISE_TOKENS) | set(NUMERIC_DISGUISE_CODES)


def detect_disguised(ds: Dataset) -> DetectionMask:
    """Disguised missing values: dictionary tokens and single-character repeats
    in categorical columns; repeated-digit numbers outside a wide (k=3) IQR
    fence in numeric columns."""
    cells = set()
    for j, col in enumerate(ds.columns):
        if col.is_numeric:
            parsed = col.parsed_values()
            finite = parsed[~np.isnan(parsed)]
            if finite.size == 0:
                continue
            q1, q3 = np.quantile(finite, [0.25, 0.75])
            lo, hi = q1 - 3.0 * (q3 - q1), q3 + 3.0 * (q3 - q1)
            for i, cell in enumerate(col.cells):
                if cell.parsed is None or not _is_repeated_digit(cell.raw):
                    continue
                if cell.parsed < lo or cell.parsed > hi:
                    cells.add(CellRef(i, j))
        else:
            for i, cell in enumerate(col.cells):
                raw = cell.raw
                if raw in _DISGUISE_DICTIONARY or (len(raw) >= 2 and len(set(raw)) == 1):
                    cells.add(CellRef(i, j))
    return DetectionMask(frozenset(cells), source="fahes")


def _unparsable_refs(col_index: int, col) -> set[CellRef]:
    # Type-corrupted values: non-empty text in a numeric column with no parse.
    return {
        CellRef(i, col_index)
        for i, cell in enumerate(col.cells)
        if not cell.is_empty and cell.parsed is None
    }


def detect_outliers_sd(ds: Dataset, n: float = 3.0) -> DetectionMask:
    """Per numeric column, flag parsed cells more than n sample standard
    deviations from the column mean; unparsable cells are flagged too."""
    if n <= 0:
        raise DetectorError("sd detector requires n > 0")
    cells: set[CellRef] = set()
    for j, col in enumerate(ds.columns):
        if not col.is_numeric:
            continue
        cells |= _unparsable_refs(j, col)
        parsed = col.parsed_values()
        finite = parsed[~np.isnan(parsed)]
        if finite.size < 3:
            continue
        mean = finite.mean()
        std = finite.std(ddof=1)
        threshold = n * std
        for i, value in enumerate(parsed):
            if not np.isnan(value) and abs(value - mean) > threshold:
                cells.add(CellRef(i, j))
    return DetectionMask(frozenset(cells), source=f"sd(n={n:g})")


def quantile(values: np.ndarray, p: float) -> float:
    """Linear interpolation between order statistics at index p * (n - 1)."""
    v = np.sort(np.asarray(values, dtype=float))
    pos = p * (len(v) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    frac = pos - lo
    return float(v[lo] * (1 - frac) + v[hi] * frac)


def detect_outliers_iqr(ds: Dataset, k: float = 1.5) -> DetectionMask:
    """Tukey-fence outliers outside [Q1 - k*IQR, Q3 + k*IQR] per numeric column."""
    if k <= 0:
        raise DetectorError("iqr detector requires k > 0")
    cells: set[CellRef] = set()
    for j, col in enumerate(ds.columns):
        if not col.is_numeric:
            continue
        cells |= _unparsable_refs(j, col)
        parsed = col.parsed_values()
        finite = parsed[~np.isnan(parsed)]
        if finite.size == 0:
            continue
        q1 = quantile(finite, 0.25)
        q3 = quantile(finite, 0.75)
        lo, hi = q1 - k * (q3 - q1), q3 + k * (q3 - q1)
        for i, value in enumerate(parsed):
            if not np.isnan(value) and (value < lo or value > hi):
                cells.add(CellRef(i, j))
    return DetectionMask(frozenset(cells), source=f"iqr(k={k:g})")


# Average unsuccessful-search path length in a BST, the isolation-forest
# normalizer; harmonic numbers via the ln + Euler-Mascheroni approximation.
_EULER_GAMMA = 0.5772156649015329


def _c_factor(n: int) -> float:
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + _EULER_GAMMA) - 2.0 * (n - 1) / n


class _IsoNode:
    __slots__ = ("feature", "threshold", "left", "right", "size")

    def __init__(self, size):
        self.size = size
        self.feature = None
        self.threshold = None
        self.left = None
        self.right = None


def _grow_iso_tree(X: np.ndarray, depth: int, limit: int, rng: np.random.Generator) -> _IsoNode:
    node = _IsoNode(X.shape[0])
    if depth >= limit or X.shape[0] <= 1:
        return node
    spreads = X.max(axis=0) - X.min(axis=0)
    usable = np.flatnonzero(spreads > 0)
    if usable.size == 0:
        return node
    q = int(usable[rng.integers(usable.size)])
    lo, hi = float(X[:, q].min()), float(X[:, q].max())
    p = float(rng.uniform(lo, hi))
    mask = X[:, q] < p
    node.feature, node.threshold = q, p
    node.left = _grow_iso_tree(X[mask], depth + 1, limit, rng)
    node.right = _grow_iso_tree(X[~mask], depth + 1, limit, rng)
    return node


def _iso_path_length(x: np.ndarray, node: _IsoNode) -> float:
    depth = 0
    while node.feature is not None:
        node = node.left if x[node.feature] < node.threshold else node.right
        depth += 1
    return depth + _c_factor(node.size)


def _iforest_features(ds: Dataset, num_cols: list[int]):
    X = np.column_stack([ds.columns[c].parsed_values() for c in num_cols])
    col_median = np.zeros(len(num_cols))
    col_mad = np.zeros(len(num_cols))
    for j in range(len(num_cols)):
        finite = X[:, j][~np.isnan(X[:, j])]
        col_median[j] = np.median(finite) if finite.size else 0.0
        col_mad[j] = np.median(np.abs(finite - col_median[j])) if finite.size else 0.0
        X[np.isnan(X[:, j]), j] = col_median[j]
    return X, col_median, col_mad


def iforest_scores(
    ds: Dataset, trees: int = 100, subsample: int = 256, seed: int = 0
) -> np.ndarray:
    """Per-row anomaly score 2^(-E[h(x)] / c(psi)); higher is more anomalous."""
    if trees < 1:
        raise DetectorError("iforest requires trees >= 1")
    num_cols = ds.numeric_column_indices()
    if not num_cols:
        raise DetectorError("iforest requires at least one numeric column")
    n = ds.row_count
    X, _, _ = _iforest_features(ds, num_cols)
    psi = min(subsample, n)
    limit = max(1, math.ceil(math.log2(max(psi, 2))))
    rng = derive_rng(seed, "iforest")
    paths = np.zeros(n)
    for _ in range(trees):
        idx = rng.choice(n, size=psi, replace=False)
        root = _grow_iso_tree(X[idx], 0, limit, rng)
        for i in range(n):
            paths[i] += _iso_path_length(X[i], root)
    return np.power(2.0, -(paths / trees) / _c_factor(psi))


def detect_outliers_iforest(
    ds: Dataset,
    trees: int = 100,
    subsample: int = 256,
    seed: int = 0,
    contamination: float = 0.1,
) -> DetectionMask:
    """Isolation forest over the numeric columns.

    Rows with the top ceil(contamination * rows) anomaly scores are flagged;
    each flagged row contributes the numeric cells whose robust z-score
    (|x - median| / (1.4826 * MAD)) exceeds 3, or all its numeric cells when
    none does.
    """
    num_cols = ds.numeric_column_indices()
    if not num_cols:
        raise DetectorError("iforest requires at least one numeric column")
    n = ds.row_count
    budget = math.ceil(contamination * n)
    if budget == 0 or n == 0:
        if trees < 1:
            raise DetectorError("iforest requires trees >= 1")
        return DetectionMask(frozenset(), source="if")

    _, col_median, col_mad = _iforest_features(ds, num_cols)
    scores = iforest_scores(ds, trees=trees, subsample=subsample, seed=seed)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    flagged_rows = order[:budget]

    cells: set[CellRef] = set()
    for r in flagged_rows:
        strong = []
        for j, c in enumerate(num_cols):
            cell = ds.columns[c].cells[r]
            if cell.parsed is None:
                continue
            dev = abs(cell.parsed - col_median[j])
            if col_mad[j] > 0:
                z = dev / (1.4826 * col_mad[j])
            else:
                z = math.inf if dev > 0 else 0.0
            if z > 3.0:
                strong.append(CellRef(r, c))
        if strong:
            cells.update(strong)
        else:
            cells.update(CellRef(r, c) for c in num_cols)
    return DetectionMask(frozenset(cells), source="if")


def detect_duplicates(ds: Dataset, key_columns: list[str]) -> DetectionMask:
    """Key collision: within each group sharing the key tuple, every row after
    the first is flagged whole."""
    if not key_columns:
        raise DetectorError("dedup requires at least one key column")
    key_idx = [ds.col_index(c) for c in key_columns]
    seen: dict[tuple, int] = {}
    cells: set[CellRef] = set()
    for r in range(ds.row_count):
        key = tuple(ds.raw(r, c) for c in key_idx)
        if key in seen:
            cells.update(CellRef(r, c) for c in range(ds.col_count))
        else:
            seen[key] = r
    return DetectionMask(frozenset(cells), source="dedup")


def _stratified_folds(labels: list[str], folds: int, rng: np.random.Generator) -> np.ndarray:
    assignment = np.zeros(len(labels), dtype=int)
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    for lab in sorted(by_class):
        idx = np.array(by_class[lab])
        if len(idx) < folds:
            raise DetectorError(
                f"class {lab!r} has {len(idx)} members, fewer than {folds} folds"
            )
        rng.shuffle(idx)
        for pos, i in enumerate(idx):
            assignment[i] = pos % folds
    return assignment


def detect_mislabels(
    ds: Dataset,
    label_column: str,
    folds: int = 5,
    base: str = "logit",
    seed: int = 0,
) -> DetectionMask:
    """Confident-learning style mislabel detection.

    Out-of-sample class probabilities come from k-fold cross-fitting of the
    base classifier; a sample is flagged when its probability under the given
    label falls below that class's mean self-confidence and the argmax class
    disagrees. Only the label cell is flagged.
    """
    if folds < 2:
        raise DetectorError("mislabel detection requires folds >= 2")
    label_idx = ds.col_index(label_column)
    labels = ds.column(label_column).raw_values()
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DetectorError("label column must carry at least 2 classes")
    class_index = {c: i for i, c in enumerate(classes)}

    spec = models.ModelSpec(base, "classification", {}, seed=seed)
    full, _ = models.encode(ds, ds, target=label_column)
    X = full.features
    rng = derive_rng(seed, "mislabel-folds")
    fold_of = _stratified_folds(labels, folds, rng)

    probs = np.zeros((ds.row_count, len(classes)))
    for f in range(folds):
        train_idx = np.flatnonzero(fold_of != f)
        test_idx = np.flatnonzero(fold_of == f)
        model = models.build_model(spec)
        model.fit(X[train_idx], np.array([labels[i] for i in train_idx], dtype=object))
        fold_probs = model.predict_proba(X[test_idx])
        for col, cls in enumerate(model.classes_):
            probs[test_idx, class_index[cls]] = fold_probs[:, col]

    flagged = confident_learning_flags(probs, labels, classes)
    return DetectionMask(
        frozenset(CellRef(i, label_idx) for i in flagged), source="cl"
    )


def confident_learning_flags(
    probs: np.ndarray, labels: list[str], classes: list[str]
) -> list[int]:
    """Indices whose given-label probability falls below the per-class
    self-confidence threshold while the argmax class disagrees."""
    class_index = {c: i for i, c in enumerate(classes)}
    thresholds = {}
    for cls, k in class_index.items():
        members = [i for i, lab in enumerate(labels) if lab == cls]
        thresholds[cls] = float(np.mean(probs[members, k])) if members else 1.0
    flagged = []
    for i, lab in enumerate(labels):
        own = probs[i, class_index[lab]]
        top = classes[int(np.argmax(probs[i]))]
        if own < thresholds[lab] and top != lab:
            flagged.append(i)
    return flagged


def ensemble_min_k(runs: list[DetectionMask], k: int) -> DetectionMask:
    """Cells flagged by at least k of the given masks."""
    if not 1 <= k <= len(runs):
        raise DetectorError(f"min_k requires 1 <= k <= {len(runs)}, got {k}")
    counts: dict[CellRef, int] = {}
    for mask in runs:
        for ref in mask.cells:
            counts[ref] = counts.get(ref, 0) + 1
    return DetectionMask(
        frozenset(ref for ref, c in counts.items() if c >= k), source=f"mink(k={k})"
    )


@dataclass
class MaxEntropyRound:
    detector: str
    sample_size: int
    entropy: float
    precision: float
    accepted: bool


@dataclass
class MaxEntropyResult:
    mask: DetectionMask
    rounds: list[MaxEntropyRound]


def _binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def ensemble_max_entropy(
    ds: Dataset,
    base: list[tuple[str, DetectionMask]],
    oracle_mask: DetectionMask,
    label_budget: int,
    seed: int = 0,
) -> MaxEntropyResult:
    """Greedy entropy-ordered ensemble over already-computed base masks.

    Each round samples oracle labels from every unexecuted detector's
    still-undecided detections, executes the detector whose sample has maximum
    clean/dirty label entropy, and accepts its detections iff the sampled
    precision is at least 0.5. The output is the union of accepted masks.
    """
    if not base:
        raise DetectorError("max entropy needs at least one base detector")
    if label_budget < len(base):
        raise DetectorError("label budget must cover at least one label per detector")
    rng = derive_rng(seed, "maxent")
    per_round = label_budget // len(base)
    unexecuted = list(range(len(base)))
    decided: set[CellRef] = set()
    accepted_masks: list[DetectionMask] = []
    rounds: list[MaxEntropyRound] = []

    while unexecuted:
        share = max(1, per_round // len(unexecuted))
        stats = []
        for pos in unexecuted:
            _, mask = base[pos]
            candidates = sorted(mask.cells - decided)
            size = min(share, len(candidates))
            if size:
                chosen = rng.choice(len(candidates), size=size, replace=False)
                sample = [candidates[i] for i in sorted(chosen.tolist())]
                dirty = sum(1 for ref in sample if ref in oracle_mask)
                precision = dirty / size
            else:
                precision = 0.0
            stats.append((pos, size, _binary_entropy(precision), precision))
        winner = max(stats, key=lambda s: (s[2], -s[0]))
        pos, size, entropy, precision = winner
        accepted = precision >= 0.5
        name, mask = base[pos]
        if accepted:
            accepted_masks.append(mask)
        decided |= mask.cells
        unexecuted.remove(pos)
        rounds.append(MaxEntropyRound(name, size, entropy, precision, accepted))

    out = union_masks(accepted_masks, source="maxent") if accepted_masks else DetectionMask(
        frozenset(), source="maxent"
    )
    return MaxEntropyResult(out, rounds)


def subsample_mask(mask: DetectionMask, recall: float, seed: int = 0) -> DetectionMask:
    """Keep a seeded fraction of a mask; used for synthetic-recall detectors."""
    if not 0.0 <= recall <= 1.0:
        raise DetectorError("recall must lie in [0, 1]")
    cells = mask.sorted_cells()
    keep = int(round(recall * len(cells)))
    if keep == len(cells):
        return DetectionMask(mask.cells, source=f"{mask.source}@{recall:g}")
    rng = derive_rng(seed, "subsample", recall)
    idx = rng.choice(len(cells), size=keep, replace=False) if keep else []
    return DetectionMask(
        frozenset(cells[i] for i in idx), source=f"{mask.source}@{recall:g}"
    )


# -- registry ----------------------------------------------------------------


def run_detector(spec: DetectorSpec, ds: Dataset, ctx: DetectorContext | None = None) -> DetectorRun:
    """Dispatch a detector spec, timing the traversal of the dataset."""
    ctx = ctx or DetectorContext()
    p = spec.params
    start = time.perf_counter()
    if spec.kind == "mvd":
        mask = detect_missing(ds)
    elif spec.kind == "fahes":
        mask = detect_disguised(ds)
    elif spec.kind == "sd":
        mask = detect_outliers_sd(ds, n=p.get("n", 3.0))
    elif spec.kind == "iqr":
        mask = detect_outliers_iqr(ds, k=p.get("k", 1.5))
    elif spec.kind == "if":
        mask = detect_outliers_iforest(
            ds,
            trees=p.get("trees", 100),
            subsample=p.get("subsample", 256),
            seed=p.get("seed", ctx.seed),
            contamination=p.get("contamination", ctx.contamination),
        )
    elif spec.kind == "rule":
        if not ctx.constraints:
            raise DetectorError("rule detector needs parsed constraints")
        wanted = p.get("constraints")
        dcs = [dc for dc in ctx.constraints if wanted is None or dc.id in wanted]
        mask = find_violations(ds, dcs)
    elif spec.kind == "dedup":
        keys = p.get("key_columns", ctx.key_columns)
        if not keys:
            raise DetectorError("dedup detector needs key columns")
        mask = detect_duplicates(ds, keys)
    elif spec.kind == "cl":
        label = p.get("label_column", ctx.label_column)
        if not label:
            raise DetectorError("mislabel detector needs a label column")
        mask = detect_mislabels(
            ds,
            label,
            folds=p.get("folds", 5),
            base=p.get("base", "logit"),
            seed=p.get("seed", ctx.seed),
        )
    elif spec.kind == "mink":
        base = [DetectorSpec(k, dict(v)) for k, v in p["base"]]
        runs = [run_detector(b, ds, ctx).mask for b in base]
        mask = ensemble_min_k(runs, p.get("k", 2))
    elif spec.kind == "maxent":
        if ctx.oracle_mask is None:
            raise DetectorError("max entropy needs an oracle mask")
        base = [DetectorSpec(k, dict(v)) for k, v in p["base"]]
        named = [(b.name, run_detector(b, ds, ctx).mask) for b in base]
        result = ensemble_max_entropy(
            ds, named, ctx.oracle_mask, p.get("label_budget", 10 * len(base)), seed=ctx.seed
        )
        mask = result.mask
    else:
        raise DetectorError(f"unknown detector kind {spec.kind!r}")
    runtime = time.perf_counter() - start
    mask = DetectionMask(mask.cells, source=spec.name)
    return DetectorRun(spec, mask, runtime)
