"""From-scratch predictive models and the train/test feature encoder.

Encoders fit on training rows only: numeric columns are z-scored with the
train mean and sample std, categorical columns are one-hot over the top train
categories, and unseen test categories map to an all-zero block. Every model
is deterministic for a fixed (data, spec, seed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_rng
from .tabular import Dataset

MAX_ONE_HOT = 20

TASKS = ("classification", "regression", "clustering")


class ModelError(Exception):
    pass


# -- encoding ----------------------------------------------------------------


@dataclass
class EncoderState:
    numeric: list[tuple[str, float, float]]            # (column, train mean, train sample std)
    categorical: list[tuple[str, list[str], set[str]]]  # (column, kept categories, bucketed-to-other)
    dropped: list[str]
    target_column: str | None
    target_kind: str | None  # "numeric" | "categorical"
    target_mean: float = 0.0


@dataclass
class EncodedMatrix:
    features: np.ndarray
    target: np.ndarray | None
    feature_names: list[str]
    state: EncoderState

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


def _fit_encoder(train: Dataset, target: str | None) -> EncoderState:
    numeric, categorical, dropped = [], [], []
    for col in train.columns:
        if target is not None and col.name == target:
            continue
        if col.is_numeric:
            parsed = col.parsed_values()
            finite = parsed[~np.isnan(parsed)]
            if finite.size < 2:
                dropped.append(col.name)
                continue
            mean = float(finite.mean())
            std = float(finite.std(ddof=1))
            if std == 0.0 or not np.isfinite(std):
                dropped.append(col.name)
                continue
            numeric.append((col.name, mean, std))
        else:
            counts: dict[str, int] = {}
            for cell in col.cells:
                counts[cell.raw] = counts.get(cell.raw, 0) + 1
            ranked = sorted(counts, key=lambda cat: (-counts[cat], cat))
            kept = sorted(ranked[:MAX_ONE_HOT])
            other = set(ranked[MAX_ONE_HOT:])
            categorical.append((col.name, kept, other))

    target_kind = None
    target_mean = 0.0
    if target is not None:
        tcol = train.column(target)
        target_kind = "numeric" if tcol.is_numeric else "categorical"
        if target_kind == "numeric":
            parsed = tcol.parsed_values()
            finite = parsed[~np.isnan(parsed)]
            target_mean = float(finite.mean()) if finite.size else 0.0
    return EncoderState(numeric, categorical, dropped, target, target_kind, target_mean)


def _transform(ds: Dataset, state: EncoderState) -> EncodedMatrix:
    blocks: list[np.ndarray] = []
    names: list[str] = []
    n = ds.row_count
    for col_name, mean, std in state.numeric:
        parsed = ds.column(col_name).parsed_values().copy()
        parsed[np.isnan(parsed)] = mean  # unparsable and empty cells take the train mean
        blocks.append(((parsed - mean) / std).reshape(-1, 1))
        names.append(col_name)
    for col_name, kept, other in state.categorical:
        index = {cat: i for i, cat in enumerate(kept)}
        width = len(kept) + (1 if other else 0)
        block = np.zeros((n, width))
        raws = ds.column(col_name).raw_values()
        for r, raw in enumerate(raws):
            if raw in index:
                block[r, index[raw]] = 1.0
            elif raw in other:
                block[r, len(kept)] = 1.0
            # unseen categories stay an all-zero block
        blocks.append(block)
        names.extend(f"{col_name}={cat}" for cat in kept)
        if other:
            names.append(f"{col_name}=<other>")
    if not blocks:
        raise ModelError("all feature columns were dropped during encoding")
    features = np.hstack(blocks)

    target = None
    if state.target_column is not None:
        tcol = ds.column(state.target_column)
        if state.target_kind == "numeric":
            target = tcol.parsed_values().copy()
            target[np.isnan(target)] = state.target_mean
        else:
            target = np.array(tcol.raw_values(), dtype=object)
    return EncodedMatrix(features, target, names, state)


def encode(
    train: Dataset, test: Dataset, target: str | None = None
) -> tuple[EncodedMatrix, EncodedMatrix]:
    """Fit the encoder on `train` and transform both sides with its state."""
    if train.row_count == 0:
        raise ModelError("cannot encode an empty training set")
    state = _fit_encoder(train, target)
    return _transform(train, state), _transform(test, state)


# -- k-nearest neighbours ----------------------------------------------------


def _pairwise_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.sqrt(np.maximum(d2, 0.0))


class KNNModel:
    def __init__(self, k: int = 5, task: str = "classification"):
        if k < 1:
            raise ModelError("knn requires k >= 1")
        self.k = k
        self.task = task

    def fit(self, X: np.ndarray, y: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.y = y
        if self.task == "classification":
            self.classes_ = sorted(set(y.tolist()))
        return self

    def _neighbor_labels(self, data: np.ndarray):
        dist = _pairwise_distances(np.asarray(data, dtype=float), self.X)
        k = min(self.k, self.X.shape[0])
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return order

    def predict(self, data: np.ndarray) -> np.ndarray:
        order = self._neighbor_labels(data)
        if self.task == "regression":
            vals = np.asarray(self.y, dtype=float)[order]
            return vals.mean(axis=1)
        out = []
        for row in order:
            votes: dict[object, int] = {}
            for idx in row:
                votes[self.y[idx]] = votes.get(self.y[idx], 0) + 1
            best = sorted(votes, key=lambda c: (-votes[c], c))[0]
            out.append(best)
        return np.array(out, dtype=object)

    def predict_proba(self, data: np.ndarray) -> np.ndarray:
        order = self._neighbor_labels(data)
        probs = np.zeros((data.shape[0], len(self.classes_)))
        class_index = {c: i for i, c in enumerate(self.classes_)}
        for r, row in enumerate(order):
            for idx in row:
                probs[r, class_index[self.y[idx]]] += 1.0
        return probs / probs.sum(axis=1, keepdims=True)


# -- CART decision tree ------------------------------------------------------


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None
    value: np.ndarray | float | None = None  # class counts or mean at leaves


class DecisionTree:
    """Greedy CART: Gini impurity for classification, variance reduction for
    regression, axis-aligned thresholds at midpoints of sorted feature values."""

    def __init__(self, task: str, max_depth: int = 8, min_leaf: int = 5):
        if max_depth < 1 or min_leaf < 1:
            raise ModelError("tree requires max_depth >= 1 and min_leaf >= 1")
        self.task = task
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=float)
        self._n_features = X.shape[1]
        if self.task == "classification":
            self.classes_ = sorted(set(y.tolist()))
            codes = np.array([self.classes_.index(v) for v in y])
        else:
            codes = np.asarray(y, dtype=float)
        self.root = self._grow(X, codes, depth=0)
        return self

    def _leaf(self, y: np.ndarray) -> _TreeNode:
        if self.task == "classification":
            counts = np.bincount(y, minlength=len(self.classes_)).astype(float)
            return _TreeNode(value=counts)
        return _TreeNode(value=float(y.mean()))

    def _impurity_gain(self, col: np.ndarray, y: np.ndarray):
        order = np.argsort(col, kind="stable")
        cs, ys = col[order], y[order]
        n = len(ys)
        best = None
        if self.task == "classification":
            k = len(self.classes_)
            left = np.zeros(k)
            right = np.bincount(ys, minlength=k).astype(float)
            total_gini = 1.0 - np.sum((right / n) ** 2)
            for i in range(n - 1):
                left[ys[i]] += 1
                right[ys[i]] -= 1
                if cs[i] == cs[i + 1]:
                    continue
                nl, nr = i + 1, n - i - 1
                if nl < self.min_leaf or nr < self.min_leaf:
                    continue
                gini = (
                    nl / n * (1.0 - np.sum((left / nl) ** 2))
                    + nr / n * (1.0 - np.sum((right / nr) ** 2))
                )
                gain = total_gini - gini
                if best is None or gain > best[0] + 1e-15:
                    best = (gain, (cs[i] + cs[i + 1]) / 2.0)
        else:
            csum = np.cumsum(ys)
            csum2 = np.cumsum(ys**2)
            total_var = csum2[-1] - csum[-1] ** 2 / n
            for i in range(n - 1):
                if cs[i] == cs[i + 1]:
                    continue
                nl, nr = i + 1, n - i - 1
                if nl < self.min_leaf or nr < self.min_leaf:
                    continue
                left_ss = csum2[i] - csum[i] ** 2 / nl
                right_ss = (csum2[-1] - csum2[i]) - (csum[-1] - csum[i]) ** 2 / nr
                gain = total_var - left_ss - right_ss
                if best is None or gain > best[0] + 1e-15:
                    best = (gain, (cs[i] + cs[i + 1]) / 2.0)
        return best

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int) -> _TreeNode:
        n = len(y)
        pure = (
            len(set(y.tolist())) == 1
            if self.task == "classification"
            else float(np.var(y)) == 0.0
        )
        if depth >= self.max_depth or n < 2 * self.min_leaf or pure:
            return self._leaf(y)
        best = None
        for j in range(X.shape[1]):
            cand = self._impurity_gain(X[:, j], y)
            if cand is not None and cand[0] > 1e-12 and (best is None or cand[0] > best[0] + 1e-15):
                best = (cand[0], j, cand[1])
        if best is None:
            return self._leaf(y)
        _, j, thr = best
        go_left = X[:, j] <= thr
        node = _TreeNode(feature=j, threshold=thr)
        node.left = self._grow(X[go_left], y[go_left], depth + 1)
        node.right = self._grow(X[~go_left], y[~go_left], depth + 1)
        return node

    def _leaf_for(self, x: np.ndarray) -> _TreeNode:
        node = self.root
        while node.left is not None:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def predict(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if self.task == "regression":
            return np.array([self._leaf_for(x).value for x in data])
        out = []
        for x in data:
            counts = self._leaf_for(x).value
            out.append(self.classes_[int(np.argmax(counts))])
        return np.array(out, dtype=object)

    def predict_proba(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        probs = np.zeros((data.shape[0], len(self.classes_)))
        for r, x in enumerate(data):
            counts = self._leaf_for(x).value
            probs[r] = counts / counts.sum()
        return probs


# -- logistic regression (softmax, full-batch gradient descent) --------------


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def logistic_loss_and_grad(
    W: np.ndarray, Xb: np.ndarray, Y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy with L2 on non-bias weights; Xb carries a trailing
    ones column and W's last row is the unpenalized bias."""
    n = Xb.shape[0]
    P = _softmax(Xb @ W)
    eps = 1e-12
    loss = -float(np.sum(Y * np.log(P + eps))) / n
    penalty = W.copy()
    penalty[-1, :] = 0.0
    loss += 0.5 * l2 * float(np.sum(penalty**2))
    grad = Xb.T @ (P - Y) / n + l2 * penalty
    return loss, grad


class LogisticModel:
    def __init__(self, lr: float = 0.1, epochs: int = 500, l2: float = 1e-3):
        if lr <= 0 or epochs < 1 or l2 < 0:
            raise ModelError("logistic requires lr > 0, epochs >= 1, l2 >= 0")
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2

    def fit(self, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=float)
        self.classes_ = sorted(set(y.tolist()))
        index = {c: i for i, c in enumerate(self.classes_)}
        Y = np.zeros((len(y), len(self.classes_)))
        for i, label in enumerate(y):
            Y[i, index[label]] = 1.0
        Xb = np.hstack([X, np.ones((X.shape[0], 1))])
        W = np.zeros((Xb.shape[1], len(self.classes_)))
        for _ in range(self.epochs):
            _, grad = logistic_loss_and_grad(W, Xb, Y, self.l2)
            W -= self.lr * grad
        self.W = W
        return self

    def predict_proba(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        Xb = np.hstack([data, np.ones((data.shape[0], 1))])
        return _softmax(Xb @ self.W)

    def predict(self, data: np.ndarray) -> np.ndarray:
        probs = self.predict_proba(data)
        return np.array([self.classes_[int(i)] for i in np.argmax(probs, axis=1)], dtype=object)


# -- ridge regression --------------------------------------------------------


class RidgeModel:
    """Solves the regularized normal equations on a bias-augmented design."""

    def __init__(self, lam: float = 1.0):
        if lam < 0:
            raise ModelError("ridge requires lambda >= 0")
        self.lam = lam

    @staticmethod
    def design(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def fit(self, X: np.ndarray, y: np.ndarray):
        Xb = self.design(X)
        A = Xb.T @ Xb + self.lam * np.eye(Xb.shape[1])
        b = Xb.T @ np.asarray(y, dtype=float)
        try:
            self.w = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise ModelError(f"singular ridge system (lambda={self.lam}): {exc}") from exc
        residual = np.linalg.norm(A @ self.w - b)
        scale = np.linalg.norm(b)
        if scale > 0 and residual > 1e-6 * scale:
            raise ModelError("ridge normal equations are numerically singular")
        return self

    def predict(self, data: np.ndarray) -> np.ndarray:
        return self.design(data) @ self.w


# -- k-means -----------------------------------------------------------------


class KMeansModel:
    def __init__(self, k: int = 2, max_iter: int = 100, restarts: int = 5, seed: int = 0):
        if k < 2:
            raise ModelError("kmeans requires k >= 2")
        self.k = k
        self.max_iter = max_iter
        self.restarts = restarts
        self.seed = seed

    def _plus_plus_init(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = X.shape[0]
        centers = [X[int(rng.integers(n))]]
        for _ in range(1, self.k):
            d2 = np.min(
                np.stack([np.sum((X - c) ** 2, axis=1) for c in centers]), axis=0
            )
            total = d2.sum()
            if total <= 0:
                centers.append(X[int(rng.integers(n))])
                continue
            target = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), target))
            centers.append(X[min(idx, n - 1)])
        return np.array(centers)

    def _lloyd(self, X: np.ndarray, centers: np.ndarray):
        history = []
        labels = None
        for _ in range(self.max_iter):
            dist = _pairwise_distances(X, centers)
            new_labels = np.argmin(dist, axis=1)  # ties go to the lowest index
            inertia = float(np.sum((dist[np.arange(len(X)), new_labels]) ** 2))
            history.append(inertia)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(self.k):
                members = X[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
        return centers, labels, history[-1], history

    def fit(self, X: np.ndarray, y=None):
        X = np.asarray(X, dtype=float)
        if X.shape[0] < self.k:
            raise ModelError(f"kmeans needs at least k={self.k} rows")
        best = None
        for r in range(self.restarts):
            rng = derive_rng(self.seed, "kmeans", r)
            centers = self._plus_plus_init(X, rng)
            centers, labels, inertia, history = self._lloyd(X, centers.copy())
            if best is None or inertia < best[0]:
                best = (inertia, centers, labels, history)
        self.inertia_, self.centers_, self.labels_, self.inertia_history_ = best
        return self

    def predict(self, data: np.ndarray) -> np.ndarray:
        dist = _pairwise_distances(np.asarray(data, dtype=float), self.centers_)
        return np.argmin(dist, axis=1)


def silhouette(data: np.ndarray, assignments: np.ndarray) -> float:
    """Mean of (b - a) / max(a, b) over points; singleton clusters score 0."""
    X = np.asarray(data, dtype=float)
    labels = np.asarray(assignments)
    clusters = sorted(set(labels.tolist()))
    if len(clusters) < 2:
        raise ModelError("silhouette needs at least 2 non-empty clusters")
    # Direct differences, not the gram-matrix shortcut: the score must agree
    # with a naive implementation to near machine precision.
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    scores = np.zeros(len(X))
    for i in range(len(X)):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own <= 1:
            scores[i] = 0.0
            continue
        a = dist[i, own].sum() / (n_own - 1)
        b = min(dist[i, labels == c].mean() for c in clusters if c != labels[i])
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


# -- registry ----------------------------------------------------------------

MODEL_KINDS = ("knn", "dt", "ridge", "logit", "kmeans")

DEFAULT_PARAMS = {
    "knn": {"k": 5},
    "dt": {"max_depth": 8, "min_leaf": 5},
    "ridge": {"lam": 1.0},
    "logit": {"lr": 0.1, "epochs": 500, "l2": 1e-3},
    "kmeans": {"k": 2, "max_iter": 100, "restarts": 5},
}

_TASK_FOR = {
    "ridge": "regression",
    "logit": "classification",
    "kmeans": "clustering",
}


@dataclass
class ModelSpec:
    kind: str
    task: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.task not in TASKS:
            raise ModelError(f"unknown task {self.task!r}")
        fixed = _TASK_FOR.get(self.kind)
        if fixed is not None and self.task != fixed:
            raise ModelError(f"{self.kind} only supports the {fixed} task")
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        self.params = merged

    @property
    def name(self) -> str:
        return self.kind


def parse_model_spec(text: str, task: str, seed: int = 0) -> ModelSpec:
    """Parse `kind` or `kind:param=value,param=value` short names."""
    kind, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not key or not val:
                raise ModelError(f"bad model override {item!r} in {text!r}")
            try:
                params[key] = int(val)
            except ValueError:
                params[key] = float(val)
    return ModelSpec(kind.strip(), task, params, seed)


def build_model(spec: ModelSpec):
    p = spec.params
    if spec.kind == "knn":
        return KNNModel(k=p["k"], task=spec.task)
    if spec.kind == "dt":
        return DecisionTree(spec.task, max_depth=p["max_depth"], min_leaf=p["min_leaf"])
    if spec.kind == "ridge":
        return RidgeModel(lam=p["lam"])
    if spec.kind == "logit":
        return LogisticModel(lr=p["lr"], epochs=p["epochs"], l2=p["l2"])
    if spec.kind == "kmeans":
        return KMeansModel(
            k=p["k"], max_iter=p["max_iter"], restarts=p["restarts"], seed=spec.seed
        )
    raise ModelError(f"unknown model kind {spec.kind!r}")


@dataclass
class FittedModel:
    spec: ModelSpec
    model: object
    train_runtime: float


def fit(spec: ModelSpec, train: EncodedMatrix) -> FittedModel:
    if spec.task in ("classification", "regression") and train.target is None:
        raise ModelError(f"{spec.task} needs an encoded target")
    model = build_model(spec)
    start = time.perf_counter()
    if spec.task == "clustering":
        model.fit(train.features)
    else:
        model.fit(train.features, train.target)
    return FittedModel(spec, model, time.perf_counter() - start)


def predict(fitted: FittedModel, data: EncodedMatrix) -> np.ndarray:
    if data.features.shape[1] != _expected_width(fitted):
        raise ModelError(
            f"feature width {data.features.shape[1]} does not match the fitted model"
        )
    return fitted.model.predict(data.features)


def _expected_width(fitted: FittedModel) -> int:
    m = fitted.model
    if isinstance(m, KNNModel):
        return m.X.shape[1]
    if isinstance(m, DecisionTree):
        return m._n_features
    if isinstance(m, LogisticModel):
        return m.W.shape[0] - 1
    if isinstance(m, RidgeModel):
        return m.w.shape[0] - 1
    if isinstance(m, KMeansModel):
        return m.centers_.shape[1]
    raise ModelError("unknown fitted model")
