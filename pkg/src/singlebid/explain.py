"""Gini classification tree over single-bidder instances and its class-1 paths.

The tree is a plain greedy CART: at every node it takes the split with the
lowest weighted Gini impurity over all features, candidates being midpoints
between consecutive distinct values. ``x <= threshold`` goes left.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

DEFAULT_THRESHOLD = 0.96
TIE_TOL = 1e-12


class SingleClassError(ValueError):
    pass


def label_cluster(posteriors, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """1 where the posterior is strictly above ``threshold``."""
    return (np.asarray(posteriors, dtype=np.float64) > threshold).astype(np.int64)


@dataclass(frozen=True)
class CartParams:
    max_depth: int = 4
    min_leaf: int = 100

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class Node:
    depth: int
    n: int
    n_pos: int  # class-1 samples reaching the node during fitting
    feature: int = -1  # -1 marks a leaf
    threshold: float = math.nan
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    @property
    def label(self) -> int:
        # majority class; an exact tie goes to class 0
        return int(2 * self.n_pos > self.n)

    @property
    def purity(self) -> float:
        return max(self.n_pos, self.n - self.n_pos) / self.n


@dataclass
class CartTree:
    nodes: list[Node]
    feature_names: tuple[str, ...]
    params: CartParams

    def leaf_index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} columns")
        idx = np.zeros(len(X), dtype=np.int64)
        for i, node in enumerate(self.nodes):  # parents precede children
            if node.is_leaf:
                continue
            here = idx == i
            go_left = X[:, node.feature] <= node.threshold
            idx[here & go_left] = node.left
            idx[here & ~go_left] = node.right
        return idx

    def predict(self, X) -> np.ndarray:
        labels = np.array([node.label for node in self.nodes], dtype=np.int64)
        return labels[self.leaf_index(X)]

    @property
    def depth(self) -> int:
        return max(node.depth for node in self.nodes)

    def leaves(self) -> list[int]:
        return [i for i, node in enumerate(self.nodes) if node.is_leaf]


def _gini_sum(n, n_pos):
    """``n * gini``; zero for empty arrays entries."""
    n = np.asarray(n, dtype=np.float64)
    n_pos = np.asarray(n_pos, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = 2.0 * n_pos * (n - n_pos) / n
    return np.where(n > 0, out, 0.0)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """(feature, threshold, impurity sum) of the best split, or None."""
    n = len(y)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="mergesort")
        xs = X[order, j]
        cum_pos = np.cumsum(y[order])
        n_left = np.arange(1, n)
        # a cut after position i is valid where the value changes
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        pos_left = cum_pos[:-1]
        cost = _gini_sum(n_left, pos_left) + _gini_sum(n - n_left, cum_pos[-1] - pos_left)
        cost = np.where(valid, cost, np.inf)
        i = int(np.argmin(cost))  # first minimum: lowest threshold
        lo, hi = xs[i], xs[i + 1]
        threshold = lo + (hi - lo) / 2.0
        if not lo < threshold <= hi:
            threshold = lo
        c = float(cost[i])
        if best is None or c < best[2] - TIE_TOL * max(1.0, abs(best[2])):
            best = (j, float(threshold), c)
    return best


def fit_tree(X, y, params: CartParams | None = None,
             feature_names: Sequence[str] | None = None) -> CartTree:
    """Greedy Gini tree, grown depth-first with nodes stored in pre-order."""
    params = params or CartParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise SingleClassError("need both classes to fit a tree")
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")

    nodes: list[Node] = []

    def grow(rows: np.ndarray, depth: int) -> int:
        yy = y[rows]
        node = Node(depth=depth, n=len(rows), n_pos=int(yy.sum()))
        index = len(nodes)
        nodes.append(node)
        if depth >= params.max_depth or node.n_pos in (0, node.n) or node.n < 2 * params.min_leaf:
            return index
        split = _best_split(X[rows], yy, params.min_leaf)
        if split is None:
            return index
        j, threshold, cost = split
        parent = float(_gini_sum(node.n, node.n_pos))
        assert cost <= parent + 1e-9 * max(1.0, parent), "split increased impurity"
        if cost >= parent - TIE_TOL * max(1.0, parent):
            return index  # no impurity decrease
        go_left = X[rows, j] <= threshold
        node.feature, node.threshold = j, threshold
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return index

    grow(np.arange(len(y)), 0)
    return CartTree(nodes=nodes, feature_names=names, params=params)


# -- evaluation -----------------------------------------------------------------


@dataclass(frozen=True)
class TreeMetrics:
    accuracy: float
    precision: dict[int, float]
    recall: dict[int, float]
    confusion: tuple[tuple[int, int], tuple[int, int]]  # [true][predicted]
    n: int


def evaluate_tree(tree: CartTree, X, y) -> TreeMetrics:
    y = np.asarray(y).astype(np.int64)
    if len(y) == 0:
        raise ValueError("no instances to evaluate")
    pred = tree.predict(X)
    conf = np.zeros((2, 2), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    precision, recall = {}, {}
    for c in (0, 1):
        predicted, actual = conf[:, c].sum(), conf[c, :].sum()
        precision[c] = float(conf[c, c] / predicted) if predicted else 0.0
        recall[c] = float(conf[c, c] / actual) if actual else 0.0
    return TreeMetrics(
        accuracy=float(np.trace(conf) / len(y)),
        precision=precision,
        recall=recall,
        confusion=tuple(tuple(int(v) for v in row) for row in conf),
        n=len(y),
    )


def holdout_split(n: int, fraction: float = 0.3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, test) index split; test gets ``round(fraction * n)`` rows."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# -- paths ----------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    """``lower < feature <= upper``; an open side is infinite."""

    feature: str
    lower: float = -math.inf
    upper: float = math.inf

    def holds(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return (values > self.lower) & (values <= self.upper)

    def __str__(self) -> str:
        if math.isinf(self.lower):
            return f"{self.feature} <= {self.upper:.6g}"
        if math.isinf(self.upper):
            return f"{self.feature} > {self.lower:.6g}"
        return f"{self.lower:.6g} < {self.feature} <= {self.upper:.6g}"


@dataclass
class Path:
    path_id: int
    leaf: int
    conditions: list[Condition]
    coverage: int  # training instances in the leaf
    precision: float  # class-1 share of those instances

    def condition(self, feature: str) -> Condition | None:
        return next((c for c in self.conditions if c.feature == feature), None)

    def describe(self) -> str:
        return " AND ".join(str(c) for c in self.conditions) or "(all instances)"


@dataclass
class PathReport:
    paths: list[Path] = field(default_factory=list)

    @property
    def total_coverage(self) -> int:
        return sum(p.coverage for p in self.paths)

    def write_csv(self, out: TextIO) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("path_id", "conditions", "coverage", "precision"))
        for p in self.paths:
            writer.writerow((p.path_id, p.describe(), p.coverage, repr(p.precision)))


def extract_paths(tree: CartTree) -> PathReport:
    """One path per class-1 leaf, conditions on a feature merged into one interval.

    Conditions keep the order in which their feature first appears on the
    way down from the root.
    """
    report = PathReport()

    def walk(index: int, bounds: dict[int, list[float]]):
        node = tree.nodes[index]
        if node.is_leaf:
            if node.label == 1:
                conditions = [Condition(tree.feature_names[j], lo, hi) for j, (lo, hi) in bounds.items()]
                report.paths.append(
                    Path(len(report.paths) + 1, index, conditions, node.n, node.n_pos / node.n)
                )
            return
        j, t = node.feature, node.threshold
        lo, hi = bounds.get(j, (-math.inf, math.inf))
        left = dict(bounds)
        left[j] = [lo, min(hi, t)]
        right = dict(bounds)
        right[j] = [max(lo, t), hi]
        walk(node.left, left)
        walk(node.right, right)

    walk(0, {})
    return report


# -- export ---------------------------------------------------------------------


def _node_text(tree: CartTree, node: Node) -> str:
    return f"n={node.n} class={node.label} purity={node.purity:.4f}"


def to_text(tree: CartTree) -> str:
    lines: list[str] = []

    def walk(index: int, indent: int):
        node = tree.nodes[index]
        pad = "  " * indent
        if node.is_leaf:
            lines.append(f"{pad}leaf {_node_text(tree, node)}")
            return
        name = tree.feature_names[node.feature]
        lines.append(f"{pad}{name} <= {node.threshold:.6g}  [{_node_text(tree, node)}]")
        walk(node.left, indent + 1)
        lines.append(f"{pad}{name} > {node.threshold:.6g}")
        walk(node.right, indent + 1)

    walk(0, 0)
    return "\n".join(lines) + "\n"


def to_dot(tree: CartTree) -> str:
    lines = ["digraph tree {", '  node [shape=box, fontname="Helvetica"];']
    for i, node in enumerate(tree.nodes):
        if node.is_leaf:
            label = f"class {node.label}\\n{_node_text(tree, node)}"
            lines.append(f'  n{i} [label="{label}", style=filled, fillcolor="{"#f4a582" if node.label else "#92c5de"}"];')
        else:
            label = f"{tree.feature_names[node.feature]} <= {node.threshold:.6g}\\n{_node_text(tree, node)}"
            lines.append(f'  n{i} [label="{label}"];')
            lines.append(f'  n{i} -> n{node.left} [label="yes"];')
            lines.append(f'  n{i} -> n{node.right} [label="no"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
