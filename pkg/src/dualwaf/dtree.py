"""Binary CART decision tree for the anomaly-detection layer.

Split search is exhaustive over midpoints between consecutive distinct
values. Split quality is compared with exact integer arithmetic so ties
resolve the same way on every platform: lower feature index first, then
lower threshold.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence, Union

from .errors import EmptyDataset, EmptyNode
from .features import FEATURE_NAMES

N_FEATURES = 4
TREE_FORMAT = "dtree/2"


@dataclass(frozen=True)
class DtConfig:
    criterion: str = "gini"
    max_depth: int | None = 12
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.criterion != "gini":
            raise ValueError(f"unsupported criterion {self.criterion!r}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_leaf > self.min_samples_split:
            raise ValueError("min_samples_leaf must not exceed min_samples_split")


@dataclass(frozen=True)
class Leaf:
    label: int
    class_counts: tuple[int, int]


@dataclass(frozen=True)
class Internal:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Internal]


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    weighted_child_gini: float


def gini(labels: Sequence[int]) -> float:
    n = len(labels)
    if n == 0:
        raise EmptyNode("gini of an empty node")
    n1 = sum(1 for y in labels if y == 1)
    n0 = n - n1
    return 1.0 - (n0 * n0 + n1 * n1) / (n * n)


def best_split(rows: Sequence[tuple[Sequence[float], int]],
               min_samples_leaf: int = 1) -> Split | None:
    """Best Gini split of ``rows`` or None when nothing improves the node."""
    n = len(rows)
    if n < 2:
        return None
    n1 = sum(1 for _, y in rows if y == 1)
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        return None
    parent_sq = n0 * n0 + n1 * n1

    # maximise S = sq_l/n_l + sq_r/n_r, kept as the fraction num/den
    best = None  # (num, den, feature, threshold)
    for f in range(len(rows[0][0])):
        order = sorted(rows, key=lambda r: r[0][f])
        c0 = c1 = 0
        for i in range(1, n):
            if order[i - 1][1] == 1:
                c1 += 1
            else:
                c0 += 1
            lo, hi = order[i - 1][0][f], order[i][0][f]
            if lo == hi or i < min_samples_leaf or n - i < min_samples_leaf:
                continue
            r0, r1 = n0 - c0, n1 - c1
            nl, nr = i, n - i
            num = (c0 * c0 + c1 * c1) * nr + (r0 * r0 + r1 * r1) * nl
            den = nl * nr
            if best is None or num * best[1] > best[0] * den:
                thr = (lo + hi) / 2.0
                if not lo <= thr < hi:
                    thr = lo
                best = (num, den, f, thr)
    if best is None:
        return None
    num, den, f, thr = best
    # strict improvement over the parent: num/den > parent_sq/n
    if num * n <= parent_sq * den:
        return None
    weighted = 1.0 - (num / den) / n
    return Split(f, thr, weighted)


def _leaf(labels_n0: int, labels_n1: int) -> Leaf:
    # ties go to the anomaly class so layer 2 gets to look
    label = 1 if labels_n1 >= labels_n0 else 0
    return Leaf(label, (labels_n0, labels_n1))


@dataclass(frozen=True)
class DecisionTreeModel:
    root: TreeNode
    config: DtConfig
    feature_names: tuple[str, ...] = FEATURE_NAMES
    training_meta: dict = field(default_factory=dict)

    def predict(self, fv: Sequence[float]) -> int:
        return predict(self, fv)

    def depth(self) -> int:
        return _depth(self.root)

    def n_leaves(self) -> int:
        stack, count = [self.root], 0
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                count += 1
            else:
                stack.extend((node.left, node.right))
        return count

    def to_dict(self) -> dict:
        return {
            "format": TREE_FORMAT,
            "config": {
                "criterion": self.config.criterion,
                "max_depth": self.config.max_depth,
                "min_samples_split": self.config.min_samples_split,
                "min_samples_leaf": self.config.min_samples_leaf,
                "seed": self.config.seed,
            },
            "feature_names": list(self.feature_names),
            "training_meta": dict(self.training_meta),
            "nodes": _nodes_to_list(self.root),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionTreeModel":
        """Rebuild a model, raising ValueError on any structural problem."""
        if data.get("format") != TREE_FORMAT:
            raise ValueError(f"unknown tree format {data.get('format')!r}")
        config = DtConfig(**data["config"])
        names = tuple(data["feature_names"])
        if len(names) != N_FEATURES:
            raise ValueError("tree must name exactly 4 features")
        root = _nodes_from_list(data.get("nodes"))
        model = cls(root, config, names, dict(data.get("training_meta", {})))
        if config.max_depth is not None and model.depth() > config.max_depth:
            raise ValueError("tree deeper than its max_depth")
        return model


def _depth(node: TreeNode) -> int:
    best = 0
    stack = [(node, 0)]
    while stack:
        cur, d = stack.pop()
        if isinstance(cur, Internal):
            stack.append((cur.left, d + 1))
            stack.append((cur.right, d + 1))
        else:
            best = max(best, d)
    return best


def _nodes_to_list(root: TreeNode) -> list[dict]:
    """Pre-order node table; internal nodes point at their children by index.

    A flat table keeps unbounded-depth trees within JSON and recursion limits.
    """
    out: list[dict] = []
    stack: list = [(root, None, None)]
    while stack:
        node, parent, side = stack.pop()
        idx = len(out)
        if parent is not None:
            out[parent][side] = idx
        if isinstance(node, Leaf):
            out.append({"label": node.label, "class_counts": list(node.class_counts)})
            continue
        out.append({"feature_index": node.feature_index, "threshold": node.threshold,
                    "left": None, "right": None})
        stack.append((node.right, idx, "right"))
        stack.append((node.left, idx, "left"))
    return out


def _leaf_from_dict(d: dict) -> Leaf:
    label = d["label"]
    counts = d.get("class_counts")
    if label not in (0, 1) or isinstance(label, bool):
        raise ValueError(f"leaf label must be 0 or 1, got {label!r}")
    if (not isinstance(counts, list) or len(counts) != 2
            or not all(isinstance(c, int) and c >= 0 for c in counts)):
        raise ValueError("leaf class_counts must be two non-negative ints")
    return Leaf(label, (counts[0], counts[1]))


def _nodes_from_list(nodes) -> TreeNode:
    if not isinstance(nodes, list) or not nodes:
        raise ValueError("tree nodes must be a non-empty list")
    n = len(nodes)
    built: list = [None] * n
    referenced = [0] * n
    for i, d in enumerate(nodes):
        if not isinstance(d, dict):
            raise ValueError(f"tree node {i} must be an object")
        if "label" in d:
            continue
        fi, thr = d.get("feature_index"), d.get("threshold")
        if not isinstance(fi, int) or isinstance(fi, bool) or not 0 <= fi < N_FEATURES:
            raise ValueError(f"node {i}: feature_index out of range: {fi!r}")
        if not isinstance(thr, (int, float)) or isinstance(thr, bool) or thr != thr:
            raise ValueError(f"node {i}: bad threshold {thr!r}")
        for side in ("left", "right"):
            c = d.get(side)
            # children come after their parent in pre-order, which also rules out cycles
            if not isinstance(c, int) or isinstance(c, bool) or not i < c < n:
                raise ValueError(f"node {i}: bad {side} child {c!r}")
            referenced[c] += 1
    if any(referenced[i] != (0 if i == 0 else 1) for i in range(n)):
        raise ValueError("tree nodes do not form a single tree")
    for i in range(n - 1, -1, -1):
        d = nodes[i]
        if "label" in d:
            built[i] = _leaf_from_dict(d)
        else:
            built[i] = Internal(d["feature_index"], float(d["threshold"]),
                                built[d["left"]], built[d["right"]])
    return built[0]


def fit(data: Sequence[tuple[Sequence[float], int]], config: DtConfig | None = None) -> DecisionTreeModel:
    config = config or DtConfig()
    if not data:
        raise EmptyDataset("cannot fit a tree on no rows")
    rows = [(tuple(float(v) for v in fv), int(y)) for fv, y in data]
    for _, y in rows:
        if y not in (0, 1):
            raise ValueError(f"labels must be 0/1, got {y!r}")
    random.Random(config.seed).shuffle(rows)

    def grow(subset, depth):
        n1 = sum(1 for _, y in subset if y == 1)
        n0 = len(subset) - n1
        if (n0 == 0 or n1 == 0
                or (config.max_depth is not None and depth >= config.max_depth)
                or len(subset) < config.min_samples_split):
            return _leaf(n0, n1), None
        split = best_split(subset, config.min_samples_leaf)
        if split is None:
            return _leaf(n0, n1), None
        return None, split

    # iterative growth; unbounded depth would overflow Python recursion
    root_holder: list = [None]
    stack = [(rows, 0, root_holder, 0)]
    pending = []  # (holder, slot, feature, threshold, left_holder, right_holder)
    while stack:
        subset, depth, holder, slot = stack.pop()
        leaf, split = grow(subset, depth)
        if leaf is not None:
            holder[slot] = leaf
            continue
        f, t = split.feature_index, split.threshold
        left = [r for r in subset if r[0][f] <= t]
        right = [r for r in subset if r[0][f] > t]
        kids: list = [None, None]
        pending.append((holder, slot, f, t, kids))
        stack.append((right, depth + 1, kids, 1))
        stack.append((left, depth + 1, kids, 0))
    for holder, slot, f, t, kids in reversed(pending):
        holder[slot] = Internal(f, t, kids[0], kids[1])

    n1 = sum(1 for _, y in rows if y == 1)
    meta = {"n_samples": len(rows), "n_normal": len(rows) - n1, "n_anomaly": n1}
    return DecisionTreeModel(root_holder[0], config, FEATURE_NAMES, meta)


def predict(model: DecisionTreeModel, fv: Sequence[float]) -> int:
    node = model.root
    while isinstance(node, Internal):
        node = node.left if fv[node.feature_index] <= node.threshold else node.right
    return node.label
