"""Non-traditional classifier: gradient-boosted trees separating labelled from unlabelled.

Each boosting stage fits a least-squares regression tree to the residual
``y - p`` and sets every leaf to one Newton step ``sum(y - p) / sum(p (1 - p))``
scaled by the learning rate. Splits are exact: candidates are midpoints of
sorted unique values, found by one scan over presorted columns per level.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

FORMAT_VERSION = "singlebid-ntc 1"


class DegenerateTrainingSet(ValueError):
    pass


@dataclass(frozen=True)
class NtcParams:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 50
    n_bins: int | None = None  # histogram binning, e.g. 256; None = exact
    colsample: float = 1.0  # fraction of features offered to each tree
    early_stopping_rounds: int | None = None
    validation_fraction: float = 0.1  # only used with early stopping

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 0 < self.colsample <= 1:
            raise ValueError("colsample must be in (0, 1]")
        if self.n_bins is not None and self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf. ``x <= threshold`` goes left."""

    feature: np.ndarray  # int64
    threshold: np.ndarray  # float64
    left: np.ndarray  # int64
    right: np.ndarray  # int64
    value: np.ndarray  # float64, leaf log-odds contribution (0 on internal nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class NtcModel:
    base_score: float
    trees: list[Tree]
    n_features: int
    params: NtcParams = field(default_factory=NtcParams)

    def decision_function(self, X) -> np.ndarray:
        X = _check_matrix(X, self.n_features)
        raw = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            raw += tree.value[_apply(X, tree.feature, tree.threshold, tree.left, tree.right)]
        return raw

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _check_matrix(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if n_features is not None and X.shape[0] == n_features else X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains NaN or infinite values")
    return X


# -- kernels ---------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _best_splits(sorted_x, order, node_of, resid, node_count, node_sum, n_nodes, min_leaf, allowed):
    n, d = sorted_x.shape
    best_gain = np.zeros(n_nodes)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    parent = np.empty(n_nodes)
    for k in range(n_nodes):
        parent[k] = node_sum[k] * node_sum[k] / node_count[k] if node_count[k] > 0 else 0.0
    cnt = np.zeros(n_nodes)
    acc = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    for j in range(d):
        if not allowed[j]:
            continue
        cnt[:] = 0.0
        acc[:] = 0.0
        seen[:] = False
        for t in range(n):
            i = order[t, j]
            k = node_of[i]
            if k < 0:
                continue
            v = sorted_x[t, j]
            if seen[k] and v > last[k]:
                nl = cnt[k]
                nr = node_count[k] - nl
                if nl >= min_leaf and nr >= min_leaf:
                    gl = acc[k]
                    gr = node_sum[k] - gl
                    gain = gl * gl / nl + gr * gr / nr - parent[k]
                    # strict improvement keeps the lower feature / lower threshold on ties
                    if gain > best_gain[k] + 1e-12 * (1.0 + abs(best_gain[k])):
                        best_gain[k] = gain
                        best_feat[k] = j
                        thr = last[k] + 0.5 * (v - last[k])
                        if not (thr >= last[k] and thr < v):
                            thr = last[k]
                        best_thr[k] = thr
            cnt[k] += 1.0
            acc[k] += resid[i]
            last[k] = v
            seen[k] = True
    return best_gain, best_feat, best_thr


@numba.njit(cache=True, nogil=True)
def _apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True, nogil=True)
def _leaf_sums(leaf_of, g, h, n_nodes):
    gs = np.zeros(n_nodes)
    hs = np.zeros(n_nodes)
    for i in range(leaf_of.shape[0]):
        gs[leaf_of[i]] += g[i]
        hs[leaf_of[i]] += h[i]
    return gs, hs


# -- fitting ----------------------------------------------------------------------


def _bin_edges(X: np.ndarray, n_bins: int) -> list[np.ndarray]:
    edges = []
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    for j in range(X.shape[1]):
        uniq = np.unique(X[:, j])
        if len(uniq) <= n_bins:
            cuts = uniq[:-1]
        else:
            cuts = np.unique(np.quantile(X[:, j], qs, method="lower"))
        edges.append(cuts)
    return edges


def _grow_tree(X, order, sorted_x, resid, hess, params: NtcParams, allowed):
    n = X.shape[0]
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    node_of = np.zeros(n, dtype=np.int64)  # local index within the current level
    level_nodes = [0]  # global ids of the current level
    leaf_of = np.zeros(n, dtype=np.int64)  # global id of the node each sample sits in
    for _depth in range(params.max_depth):
        n_level = len(level_nodes)
        active = node_of >= 0
        count = np.bincount(node_of[active], minlength=n_level).astype(np.float64)
        total = np.bincount(node_of[active], weights=resid[active], minlength=n_level)
        _, best_feat, best_thr = _best_splits(
            sorted_x, order, node_of, resid, count, total, n_level, float(params.min_leaf), allowed
        )
        if (best_feat < 0).all():
            break
        next_nodes = []
        remap = np.full(n_level, -1, dtype=np.int64)
        go_left_id = np.full(n_level, -1, dtype=np.int64)
        for k, node in enumerate(level_nodes):
            if best_feat[k] < 0:
                continue
            feature[node] = int(best_feat[k])
            threshold[node] = float(best_thr[k])
            for side in (left, right):
                side[node] = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
            go_left_id[k] = len(next_nodes)
            next_nodes.extend([left[node], right[node]])
            remap[k] = 1
        idx = np.flatnonzero(active)
        local = node_of[idx]
        splitting = remap[local] >= 0
        idx, local = idx[splitting], local[splitting]
        feats = best_feat[local]
        goes_right = X[idx, feats] > best_thr[local]
        new_local = go_left_id[local] + goes_right
        node_of[:] = -1
        node_of[idx] = new_local
        next_arr = np.asarray(next_nodes, dtype=np.int64)
        leaf_of[idx] = next_arr[new_local]
        level_nodes = next_nodes
        if not level_nodes:
            break
    n_nodes = len(feature)
    gs, hs = _leaf_sums(leaf_of, resid, hess, n_nodes)
    feature_arr = np.asarray(feature, dtype=np.int64)
    value = np.zeros(n_nodes)
    leaves = feature_arr < 0
    value[leaves] = params.learning_rate * np.divide(
        gs[leaves], hs[leaves], out=np.zeros(int(leaves.sum())), where=hs[leaves] > 0
    )
    tree = Tree(
        feature=feature_arr,
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=value,
    )
    return tree, leaf_of


def fit(X, y, params: NtcParams | None = None, seed: int = 0) -> NtcModel:
    """Fit the boosted ensemble to binary labels ``y`` (1 = labelled positive)."""
    params = params or NtcParams()
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != X.shape[0]:
        raise ValueError("X and y have different lengths")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    if X.shape[0] < 2 or y.min() == y.max():
        raise DegenerateTrainingSet("degenerate training set: need >= 2 instances of both classes")
    rng = np.random.default_rng(seed)
    n, d = X.shape

    valid_mask = np.zeros(n, dtype=bool)
    if params.early_stopping_rounds:
        n_valid = max(1, int(round(params.validation_fraction * n)))
        valid_mask[rng.permutation(n)[:n_valid]] = True
        if y[~valid_mask].min() == y[~valid_mask].max():
            raise DegenerateTrainingSet("degenerate training set after validation split")
    X_fit, y_fit = X[~valid_mask], y[~valid_mask]

    rate = y_fit.mean()
    base = math.log(rate / (1.0 - rate))

    if params.n_bins:
        edges = _bin_edges(X_fit, params.n_bins)
        X_work = np.column_stack(
            [np.searchsorted(e, X_fit[:, j], side="left") for j, e in enumerate(edges)]
        ).astype(np.float64)
    else:
        edges = None
        X_work = X_fit
    order = np.asfortranarray(np.argsort(X_work, axis=0, kind="stable"))
    sorted_x = np.asfortranarray(np.take_along_axis(X_work, order, axis=0))

    raw = np.full(len(y_fit), base)
    raw_valid = np.full(int(valid_mask.sum()), base)
    trees: list[Tree] = []
    best_loss, best_len, stall = math.inf, 0, 0
    n_allowed = max(1, int(round(params.colsample * d)))
    for _ in range(params.n_trees):
        p = _sigmoid(raw)
        resid = y_fit - p
        hess = p * (1.0 - p)
        allowed = np.ones(d, dtype=np.bool_)
        if n_allowed < d:
            allowed[:] = False
            allowed[rng.choice(d, size=n_allowed, replace=False)] = True
        tree, leaf_of = _grow_tree(X_work, order, sorted_x, resid, hess, params, allowed)
        raw += tree.value[leaf_of]
        if edges is not None:
            _unbin_thresholds(tree, edges)
        trees.append(tree)
        if params.early_stopping_rounds:
            Xv = X[valid_mask]
            raw_valid += tree.value[_apply(Xv, tree.feature, tree.threshold, tree.left, tree.right)]
            loss = _logloss(y[valid_mask], raw_valid)
            if loss < best_loss - 1e-12:
                best_loss, best_len, stall = loss, len(trees), 0
            else:
                stall += 1
                if stall >= params.early_stopping_rounds:
                    break
    if params.early_stopping_rounds:
        trees = trees[:best_len]
    return NtcModel(base_score=base, trees=trees, n_features=d, params=params)


def _unbin_thresholds(tree: Tree, edges: list[np.ndarray]) -> None:
    # binned threshold b + 0.5 separates bins <= b, i.e. raw x <= edges[b]
    for node in np.flatnonzero(tree.feature >= 0):
        cuts = edges[tree.feature[node]]
        b = int(math.floor(tree.threshold[node]))
        tree.threshold[node] = cuts[min(b, len(cuts) - 1)]


def _logloss(y, raw) -> float:
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def predict_proba(model: NtcModel, X) -> np.ndarray:
    return model.predict_proba(X)


# -- cross-validation -----------------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    seed: int
    folds: np.ndarray  # fold index per instance

    @classmethod
    def make(cls, n: int, k: int, seed: int) -> "FoldAssignment":
        if k < 2:
            raise ValueError("k must be >= 2")
        if n < k:
            raise ValueError(f"cannot split {n} instances into {k} folds")
        perm = np.random.default_rng(seed).permutation(n)
        folds = np.empty(n, dtype=np.int64)
        folds[perm] = np.arange(n) % k
        return cls(k=k, seed=seed, folds=folds)


def cross_val_scores(X, y, params: NtcParams | None = None, k: int = 5, seed: int = 0,
                     threads: int = 1) -> np.ndarray:
    """Out-of-fold probability for every instance."""
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    assignment = FoldAssignment.make(len(y), k, seed)
    for fold in range(k):
        train_y = y[assignment.folds != fold]
        if train_y.min() == train_y.max():
            raise DegenerateTrainingSet(
                f"fold {fold}: training data of the other folds holds a single class"
            )

    def run(fold: int):
        train = assignment.folds != fold
        model = fit(X[train], y[train], params, seed=seed + fold)
        return fold, model.predict_proba(X[~train])

    scores = np.empty(len(y))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for fold, pred in pool.map(run, range(k)):
            scores[assignment.folds == fold] = pred
    return scores


# -- serialization -----------------------------------------------------------------


def dumps(model: NtcModel) -> str:
    buf = io.StringIO()
    buf.write(f"{FORMAT_VERSION}\n")
    buf.write(f"n_features {model.n_features}\n")
    for key, value in asdict(model.params).items():
        buf.write(f"param {key} {value!r}\n")
    buf.write(f"base_score {model.base_score!r}\n")
    buf.write(f"n_trees {len(model.trees)}\n")
    for t, tree in enumerate(model.trees):
        buf.write(f"tree {t} {tree.n_nodes}\n")
        for i in range(tree.n_nodes):
            if tree.feature[i] >= 0:
                buf.write(
                    f"node {i} {tree.feature[i]} {float(tree.threshold[i])!r} {tree.left[i]} {tree.right[i]}\n"
                )
            else:
                buf.write(f"leaf {i} {float(tree.value[i])!r}\n")
    return buf.getvalue()


def loads(text: str) -> NtcModel:
    lines = iter(text.splitlines())
    if next(lines, None) != FORMAT_VERSION:
        raise ValueError(f"not a {FORMAT_VERSION!r} model file")
    n_features = None
    base = None
    params: dict = {}
    trees: list[Tree] = []
    current = None
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "n_features":
            n_features = int(parts[1])
        elif tag == "param":
            params[parts[1]] = _literal(parts[2])
        elif tag == "base_score":
            base = float(parts[1])
        elif tag == "n_trees":
            pass
        elif tag == "tree":
            size = int(parts[2])
            current = Tree(
                feature=np.full(size, -1, dtype=np.int64),
                threshold=np.zeros(size),
                left=np.full(size, -1, dtype=np.int64),
                right=np.full(size, -1, dtype=np.int64),
                value=np.zeros(size),
            )
            trees.append(current)
        elif tag == "node":
            i = int(parts[1])
            current.feature[i] = int(parts[2])
            current.threshold[i] = float(parts[3])
            current.left[i] = int(parts[4])
            current.right[i] = int(parts[5])
        elif tag == "leaf":
            current.value[int(parts[1])] = float(parts[2])
        else:
            raise ValueError(f"unknown record {tag!r}")
    if n_features is None or base is None:
        raise ValueError("model file lacks n_features or base_score")
    return NtcModel(base_score=base, trees=trees, n_features=n_features, params=NtcParams(**params))


def _literal(text: str):
    if text == "None":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def save(model: NtcModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model))


def load(path: str | Path) -> NtcModel:
    return loads(Path(path).read_text())
