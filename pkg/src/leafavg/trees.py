"""Tree and partition estimators with leaf-only averaging.

All estimators here predict with plain averages of responses over the
cells of an axis-aligned partition.  CART grows the partition greedily by
variance reduction; the honest variant recomputes leaf averages from an
independent sample; the partition estimator averages over a fixed,
data-independent partition.

Routing convention: a point goes left when x_j < threshold and right when
x_j >= threshold, matching the half-open cells used by the geometry
module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._rng import make_rng
from .geometry import (
    BooleanCell,
    ContinuousCell,
    Partition,
    locate_many,
    partition_from_text,
    partition_to_text,
)
from .models import Dataset

__all__ = [
    "TreeNode",
    "FitParams",
    "FittedTree",
    "FittedForest",
    "PartitionEstimator",
    "fit_cart",
    "honest_relabel",
    "fit_forest",
    "partition_estimator",
    "predict",
    "tree_to_partition",
    "estimator_to_text",
    "estimator_from_text",
]


@dataclass(slots=True)
class TreeNode:
    """Binary tree node; leaves carry predictions, internal nodes a split."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    prediction: float | None = None
    train_count: int = 0
    honest_count: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def leaves(self) -> list["TreeNode"]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()


@dataclass(frozen=True, slots=True)
class FitParams:
    """Hyperparameters shared by the tree estimators.

    ``mtry`` is the per-node feature subsample size used by forests; None
    means all features for CART and ceil(d/3) for forests.
    """

    min_samples_leaf: int = 5
    max_depth: int | None = None
    n_trees: int = 100
    mtry: int | None = None
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1 or None")


def _best_split(
    x_node: np.ndarray,
    y_centered: np.ndarray,
    min_samples_leaf: int,
    features: Sequence[int],
) -> tuple[int, float, float] | None:
    """Best (feature, threshold, decrease) by weighted variance reduction.

    The decrease of candidate k on a sorted column is
    SSE(parent) - SSE(left) - SSE(right) = S_k^2/k + (T-S_k)^2/(m-k) - T^2/m
    with S_k the prefix sum of centered responses; centering keeps the
    arithmetic well conditioned.  Ties resolve to the lowest feature index,
    then the lowest threshold (the first maximum along the sorted column).
    """
    m = y_centered.shape[0]
    total = float(y_centered.sum())
    base = total * total / m
    best_dec = 0.0
    best: tuple[int, float, float] | None = None
    counts = np.arange(1, m)
    for j in features:
        column = x_node[:, j]
        order = np.argsort(column, kind="stable")
        xs = column[order]
        if xs[0] == xs[-1]:
            continue
        prefix = np.cumsum(y_centered[order])[:-1]
        thresholds = 0.5 * (xs[:-1] + xs[1:])
        valid = (
            (xs[1:] > xs[:-1])
            & (thresholds > xs[:-1])  # guards midpoints that round down
            & (counts >= min_samples_leaf)
            & (m - counts >= min_samples_leaf)
        )
        if not valid.any():
            continue
        decrease = (
            prefix * prefix / counts
            + (total - prefix) ** 2 / (m - counts)
            - base
        )
        decrease[~valid] = -np.inf
        i = int(np.argmax(decrease))
        if decrease[i] > best_dec:
            best_dec = float(decrease[i])
            best = (int(j), float(thresholds[i]), best_dec)
    return best


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    depth: int,
    params: FitParams,
    rng: np.random.Generator | None,
    mtry: int | None,
) -> TreeNode:
    m = idx.shape[0]
    y_node = y[idx]
    mean = float(y_node.mean())
    can_split = m >= 2 * params.min_samples_leaf and (
        params.max_depth is None or depth < params.max_depth
    )
    if not can_split:
        return TreeNode(prediction=mean, train_count=m)
    d = x.shape[1]
    if rng is not None and mtry is not None and mtry < d:
        features = np.sort(rng.choice(d, size=mtry, replace=False))
    else:
        features = range(d)
    x_node = x[idx]
    found = _best_split(x_node, y_node - mean, params.min_samples_leaf, features)
    if found is None:
        return TreeNode(prediction=mean, train_count=m)
    feature, threshold, _ = found
    goes_left = x_node[:, feature] < threshold
    left = _grow(x, y, idx[goes_left], depth + 1, params, rng, mtry)
    right = _grow(x, y, idx[~goes_left], depth + 1, params, rng, mtry)
    return TreeNode(
        feature=feature, threshold=threshold, left=left, right=right, train_count=m
    )


def _route(root: TreeNode, x: np.ndarray) -> np.ndarray:
    """Leaf prediction for every row of x."""
    out = np.empty(x.shape[0], dtype=float)
    stack: list[tuple[TreeNode, np.ndarray]] = [(root, np.arange(x.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            out[idx] = node.prediction
            continue
        goes_left = x[idx, node.feature] < node.threshold
        stack.append((node.left, idx[goes_left]))
        stack.append((node.right, idx[~goes_left]))
    return out


def _as_batch(x, dimension: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dimension:
        raise ValueError(f"input must have dimension {dimension}")
    return arr, single


@dataclass(frozen=True)
class FittedTree:
    """A grown CART tree; ``honest`` marks relabeled leaf predictions."""

    root: TreeNode
    dimension: int
    honest: bool = False

    @property
    def kind(self) -> str:
        return "honest_cart" if self.honest else "cart"

    def predict(self, x) -> float | np.ndarray:
        arr, single = _as_batch(x, self.dimension)
        values = _route(self.root, arr)
        return float(values[0]) if single else values

    def leaf_count(self) -> int:
        return len(self.root.leaves())


@dataclass(frozen=True)
class FittedForest:
    """Average of independently grown CART trees."""

    trees: tuple[FittedTree, ...]
    dimension: int
    kind: str = "forest"

    def predict(self, x) -> float | np.ndarray:
        arr, single = _as_batch(x, self.dimension)
        per_tree = np.stack([t.predict(arr) for t in self.trees])
        # fsum makes the average exactly invariant to tree order.
        values = np.array(
            [math.fsum(per_tree[:, i]) / len(self.trees) for i in range(arr.shape[0])]
        )
        return float(values[0]) if single else values


@dataclass(frozen=True)
class PartitionEstimator:
    """Leaf-only averaging over a fixed partition; empty cells predict 0."""

    partition: Partition
    means: np.ndarray
    dimension: int
    kind: str = "partition_ala"

    def predict(self, x) -> float | np.ndarray:
        arr, single = _as_batch(x, self.dimension)
        values = self.means[locate_many(self.partition, arr)]
        return float(values[0]) if single else values


Estimator = FittedTree | FittedForest | PartitionEstimator


def fit_cart(data: Dataset, params: FitParams = FitParams()) -> FittedTree:
    """Grow a CART regression tree by greedy variance reduction.

    A node splits only when the best candidate strictly decreases the sum
    of squared errors and leaves both children with at least
    ``min_samples_leaf`` training points; otherwise it becomes a leaf
    predicting the node's training mean.
    """
    if data.n < 1:
        raise ValueError("cannot fit on an empty dataset")
    root = _grow(
        data.x, data.y, np.arange(data.n), 0, params, rng=None, mtry=None
    )
    return FittedTree(root=root, dimension=data.dimension, honest=False)


def honest_relabel(tree: FittedTree, honest_data: Dataset) -> FittedTree:
    """Replace leaf predictions with averages over an independent sample.

    Leaves that receive no honest points inherit the honest average of the
    closest ancestor that holds at least one honest point; the root always
    qualifies because the honest sample is required to be nonempty.
    """
    if honest_data.n < 1:
        raise ValueError("honest sample must be nonempty")
    if honest_data.dimension != tree.dimension:
        raise ValueError("honest sample dimension does not match the tree")
    x, y = honest_data.x, honest_data.y

    def rebuild(node: TreeNode, idx: np.ndarray, fallback: float) -> TreeNode:
        count = idx.shape[0]
        value = float(y[idx].mean()) if count > 0 else fallback
        if node.is_leaf:
            return TreeNode(
                prediction=value, train_count=node.train_count, honest_count=count
            )
        goes_left = x[idx, node.feature] < node.threshold
        return TreeNode(
            feature=node.feature,
            threshold=node.threshold,
            left=rebuild(node.left, idx[goes_left], value),
            right=rebuild(node.right, idx[~goes_left], value),
            train_count=node.train_count,
            honest_count=count,
        )

    root = rebuild(tree.root, np.arange(honest_data.n), float(y.mean()))
    return FittedTree(root=root, dimension=tree.dimension, honest=True)


def fit_forest(data: Dataset, params: FitParams, seed: int) -> FittedForest:
    """Grow a forest of CART trees on bootstrap resamples.

    Each tree draws its bootstrap sample and its per-node feature subsets
    from an independent stream derived from (seed, tree index), so the
    result does not depend on fitting order.
    """
    if data.n < 1:
        raise ValueError("cannot fit on an empty dataset")
    d = data.dimension
    mtry = params.mtry if params.mtry is not None else math.ceil(d / 3)
    if mtry > d:
        raise ValueError(f"mtry {mtry} exceeds dimension {d}")
    trees = []
    for t in range(params.n_trees):
        rng = make_rng(seed, "forest-tree", t)
        if params.bootstrap:
            rows = rng.integers(0, data.n, size=data.n)
            x, y = data.x[rows], data.y[rows]
        else:
            x, y = data.x, data.y
        root = _grow(x, y, np.arange(data.n), 0, params, rng=rng, mtry=mtry)
        trees.append(FittedTree(root=root, dimension=d, honest=False))
    return FittedForest(trees=tuple(trees), dimension=d)


def partition_estimator(data: Dataset, partition: Partition) -> PartitionEstimator:
    """Average responses within each cell of a fixed partition.

    Cells containing no data points predict exactly 0.0 (in contrast to
    honest trees, which fall back to ancestor averages).
    """
    if partition.dimension != data.dimension:
        raise ValueError("partition dimension does not match the data")
    idx = locate_many(partition, data.x)
    k = len(partition)
    counts = np.bincount(idx, minlength=k).astype(float)
    sums = np.bincount(idx, weights=data.y, minlength=k)
    means = np.divide(sums, counts, out=np.zeros(k, dtype=float), where=counts > 0)
    return PartitionEstimator(partition=partition, means=means, dimension=data.dimension)


def predict(estimator: Estimator, x) -> float | np.ndarray:
    """Predict at a single point (d,) or a batch (m, d)."""
    return estimator.predict(x)


def tree_to_partition(
    tree: FittedTree, dimension: int, *, boolean: bool = False
) -> Partition:
    """The tree's leaf cells as a partition of the support.

    With ``boolean=True`` the splits (all at threshold 0.5 on Boolean
    data) are turned into fixed-bit constraints instead of boxes.
    """
    if dimension != tree.dimension:
        raise ValueError("dimension does not match the tree")
    cells: list[ContinuousCell | BooleanCell] = []

    if boolean:

        def rec_bool(node: TreeNode, fixed: dict[int, int]) -> None:
            if node.is_leaf:
                cells.append(BooleanCell(dimension, tuple(fixed.items())))
                return
            if node.feature in fixed:
                raise ValueError("tree re-splits a fixed Boolean coordinate")
            rec_bool(node.left, {**fixed, node.feature: 0})
            rec_bool(node.right, {**fixed, node.feature: 1})

        rec_bool(tree.root, {})
    else:
        lower = [0.0] * dimension
        upper = [1.0] * dimension

        def rec(node: TreeNode) -> None:
            if node.is_leaf:
                cells.append(ContinuousCell(tuple(lower), tuple(upper)))
                return
            j, t = node.feature, node.threshold
            keep = upper[j]
            upper[j] = t
            rec(node.left)
            upper[j] = keep
            keep = lower[j]
            lower[j] = t
            rec(node.right)
            lower[j] = keep

        rec(tree.root)
    return Partition(cells)


# ---------------------------------------------------------------------------
# Plain-text serialization.  Trees and forests are JSON documents; the
# partition estimator embeds the geometry module's partition text.
# ---------------------------------------------------------------------------

_TREE_FORMAT = "leafavg-tree-v1"
_FOREST_FORMAT = "leafavg-forest-v1"
_PARTITION_FORMAT = "leafavg-partition-ala-v1"


def _node_to_obj(node: TreeNode) -> dict:
    if node.is_leaf:
        return {
            "prediction": node.prediction,
            "train_count": node.train_count,
            "honest_count": node.honest_count,
        }
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "train_count": node.train_count,
        "honest_count": node.honest_count,
        "left": _node_to_obj(node.left),
        "right": _node_to_obj(node.right),
    }


def _node_from_obj(obj: dict) -> TreeNode:
    if "feature" in obj:
        return TreeNode(
            feature=int(obj["feature"]),
            threshold=float(obj["threshold"]),
            left=_node_from_obj(obj["left"]),
            right=_node_from_obj(obj["right"]),
            train_count=int(obj["train_count"]),
            honest_count=None if obj["honest_count"] is None else int(obj["honest_count"]),
        )
    return TreeNode(
        prediction=float(obj["prediction"]),
        train_count=int(obj["train_count"]),
        honest_count=None if obj["honest_count"] is None else int(obj["honest_count"]),
    )


def estimator_to_text(estimator: Estimator) -> str:
    """Serialize a fitted estimator to a plain-text (JSON) document."""
    if isinstance(estimator, FittedTree):
        doc = {
            "format": _TREE_FORMAT,
            "dimension": estimator.dimension,
            "honest": estimator.honest,
            "root": _node_to_obj(estimator.root),
        }
    elif isinstance(estimator, FittedForest):
        doc = {
            "format": _FOREST_FORMAT,
            "dimension": estimator.dimension,
            "trees": [_node_to_obj(t.root) for t in estimator.trees],
        }
    elif isinstance(estimator, PartitionEstimator):
        doc = {
            "format": _PARTITION_FORMAT,
            "dimension": estimator.dimension,
            "means": [float(v) for v in estimator.means],
            "partition": partition_to_text(estimator.partition),
        }
    else:
        raise TypeError(f"cannot serialize {type(estimator).__name__}")
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def estimator_from_text(text: str) -> Estimator:
    """Inverse of :func:`estimator_to_text`."""
    doc = json.loads(text)
    fmt = doc.get("format")
    if fmt == _TREE_FORMAT:
        return FittedTree(
            root=_node_from_obj(doc["root"]),
            dimension=int(doc["dimension"]),
            honest=bool(doc["honest"]),
        )
    if fmt == _FOREST_FORMAT:
        d = int(doc["dimension"])
        trees = tuple(
            FittedTree(root=_node_from_obj(o), dimension=d) for o in doc["trees"]
        )
        return FittedForest(trees=trees, dimension=d)
    if fmt == _PARTITION_FORMAT:
        return PartitionEstimator(
            partition=partition_from_text(doc["partition"]),
            means=np.array(doc["means"], dtype=float),
            dimension=int(doc["dimension"]),
        )
    raise ValueError(f"unknown estimator format {fmt!r}")
