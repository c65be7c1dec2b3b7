"""Subgroup discovery over per-observation effects.

Recursive partitioning of the retained observations by their feature
values, with the effect (FME) as the regression target, finds subgroups
whose conditional average effect (cAME) is more homogeneous than the
global average. Two objectives:

* ``ExactGroups(k)``: grow a deliberately large tree, then repeatedly
  collapse the all-leaf parent with the lowest pooled SD until exactly
  k leaves remain.
* ``MaxSd(threshold)``: grow until every leaf's SD of FME is at or
  below the threshold (or no admissible split remains).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from fmekit.dataset import ColumnKind, Dataset
from fmekit.errors import ValidationError
from fmekit.fme import CategoricalStep, FmeResultSet, NumericStep
from fmekit.predictor import CartNode, CartOptions, _Feat, _grow_tree

DEFAULT_MAX_DEPTH = 8


@dataclass(frozen=True)
class ExactGroups:
    k: int


@dataclass(frozen=True)
class MaxSd:
    threshold: float


@dataclass(frozen=True)
class PartitioningOptions:
    objective: ExactGroups | MaxSd
    max_depth: int = DEFAULT_MAX_DEPTH
    min_node_size: int | None = None  # default: max(10, n_retained // 50)
    exclude_step_features: bool = False

    def validate(self):
        if isinstance(self.objective, ExactGroups):
            if self.objective.k < 1:
                raise ValidationError("number of groups must be >= 1")
        elif isinstance(self.objective, MaxSd):
            if not self.objective.threshold > 0:
                raise ValidationError("max-sd threshold must be > 0")
        else:
            raise ValidationError("objective must be ExactGroups or MaxSd")
        if self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1")
        if self.min_node_size is not None and self.min_node_size < 1:
            raise ValidationError("min_node_size must be >= 1")


@dataclass
class PartitionNode:
    """Group node: subgroup stats plus the split that refines it."""

    n: int
    came: float
    sd_fme: float
    mean_nlm: float | None
    rows: np.ndarray = field(repr=False)
    feature: str | None = None
    threshold: float | None = None
    left_levels: frozenset[str] | None = None
    left: "PartitionNode | None" = None
    right: "PartitionNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "came": self.came,
            "sd_fme": self.sd_fme,
            "mean_nlm": self.mean_nlm,
        }
        if not self.is_leaf:
            split: dict = {"feature": self.feature}
            if self.threshold is not None:
                split["threshold"] = self.threshold
            else:
                split["left_levels"] = sorted(self.left_levels)
            out["split"] = split
            out["left"] = self.left.to_dict()
            out["right"] = self.right.to_dict()
        return out


def _sd(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.shape[0] > 1 else 0.0


@dataclass
class PartitionTree:
    root: PartitionNode
    objective: ExactGroups | MaxSd
    step: NumericStep | CategoricalStep
    ame_global: float
    provenance: dict = field(default_factory=dict)
    _fme: np.ndarray = field(default=None, repr=False)

    def leaves(self) -> list[PartitionNode]:
        out = []

        def walk(nd):
            if nd.is_leaf:
                out.append(nd)
            else:
                walk(nd.left)
                walk(nd.right)

        walk(self.root)
        return out

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    def method_text(self) -> str:
        if isinstance(self.objective, ExactGroups):
            return f"partitions = {self.objective.k}"
        return f"max.sd = {self.objective.threshold:g}"

    def to_dict(self) -> dict:
        return {
            "objective": self.method_text(),
            "step": self.step.to_dict(),
            "ame_global": self.ame_global,
            "n_leaves": self.n_leaves,
            "root": self.root.to_dict(),
            "provenance": self.provenance,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")


def _mean_nlm(nlm: np.ndarray | None, rows: np.ndarray) -> float | None:
    if nlm is None:
        return None
    values = nlm[rows]
    finite = values[np.isfinite(values)]
    return float(np.mean(finite)) if finite.size else None


def _convert(node: CartNode, fme: np.ndarray, nlm: np.ndarray | None) -> PartitionNode:
    rows = node.rows
    out = PartitionNode(
        n=int(rows.shape[0]),
        came=float(np.mean(fme[rows])),
        sd_fme=_sd(fme[rows]),
        mean_nlm=_mean_nlm(nlm, rows),
        rows=rows,
    )
    if not node.is_leaf:
        out.feature = node.feature
        out.threshold = node.threshold
        out.left_levels = node.left_levels
        out.left = _convert(node.left, fme, nlm)
        out.right = _convert(node.right, fme, nlm)
    return out


def fit_partition(
    results: FmeResultSet,
    data: Dataset,
    options: PartitioningOptions,
) -> PartitionTree:
    """Partition the retained observations by effect homogeneity.

    Split candidates are the data's feature columns; the stepped
    feature(s) participate unless ``exclude_step_features`` is set.
    """
    options.validate()
    rows = results.row_index
    if rows.shape[0] == 0:
        raise ValidationError("result set has no retained rows")
    if int(rows.max()) >= data.n_rows:
        raise ValidationError("result set refers to rows beyond the data")

    step = results.step
    stepped = set(step.steps) if isinstance(step, NumericStep) else {step.feature}
    candidates = [
        f
        for f in data.feature_names
        if not (options.exclude_step_features and f in stepped)
    ]
    if not candidates:
        raise ValidationError("no candidate features left to split on")

    n = rows.shape[0]
    min_node = options.min_node_size
    if min_node is None:
        min_node = max(10, n // 50)

    feats = []
    for f in candidates:
        if data.kind(f) is ColumnKind.NUMERIC:
            feats.append(_Feat(f, ColumnKind.NUMERIC, data.numeric(f)[rows]))
        else:
            feats.append(
                _Feat(f, ColumnKind.CATEGORICAL, data.codes(f)[rows], data.levels(f))
            )

    fme = results.fme
    grow_options = CartOptions(
        max_depth=options.max_depth, min_node_size=min_node, min_sse_improvement=0.0
    )

    stop_leaf = None
    if isinstance(options.objective, MaxSd):
        threshold = options.objective.threshold

        def stop_leaf(y_node):
            return _sd(y_node) <= threshold

    root = _grow_tree(
        feats,
        fme,
        np.arange(n, dtype=np.int64),
        grow_options,
        keep_rows=True,
        stop_leaf=stop_leaf,
    )
    tree = PartitionTree(
        root=_convert(root, fme, results.nlm),
        objective=options.objective,
        step=step,
        ame_global=float(np.mean(fme)),
        provenance=dict(results.provenance)
        | {"ep_method": results.ep_method, "min_node_size": min_node},
        _fme=fme,
    )
    if isinstance(options.objective, ExactGroups):
        tree = prune_to_k(tree, options.objective.k)
    return tree


def prune_to_k(tree: PartitionTree, k: int) -> PartitionTree:
    """Collapse the all-leaf parent with the lowest pooled SD of FME,
    repeatedly, until exactly k leaves remain. Ties pick the earliest
    node in preorder. The pool SDs are taken over each candidate's own
    rows, so they reflect the current tree at every round."""
    if k < 1:
        raise ValidationError("number of groups must be >= 1")
    if tree.n_leaves < k:
        raise ValidationError(
            f"tree has {tree.n_leaves} leaves; cannot form {k} groups"
        )
    fme = tree._fme

    def clone(nd: PartitionNode) -> PartitionNode:
        out = PartitionNode(
            n=nd.n, came=nd.came, sd_fme=nd.sd_fme, mean_nlm=nd.mean_nlm,
            rows=nd.rows, feature=nd.feature, threshold=nd.threshold,
            left_levels=nd.left_levels,
        )
        if not nd.is_leaf:
            out.left = clone(nd.left)
            out.right = clone(nd.right)
        return out

    root = clone(tree.root)

    def collapse_candidates(nd: PartitionNode, acc: list):
        if nd.is_leaf:
            return
        if nd.left.is_leaf and nd.right.is_leaf:
            acc.append(nd)
        collapse_candidates(nd.left, acc)
        collapse_candidates(nd.right, acc)

    def count_leaves(nd: PartitionNode) -> int:
        return 1 if nd.is_leaf else count_leaves(nd.left) + count_leaves(nd.right)

    leaves = count_leaves(root)
    while leaves > k:
        candidates: list[PartitionNode] = []
        collapse_candidates(root, candidates)
        best = None
        best_sd = None
        for nd in candidates:
            pooled = _sd(fme[nd.rows])
            if best is None or pooled < best_sd:
                best = nd
                best_sd = pooled
        best.feature = None
        best.threshold = None
        best.left_levels = None
        best.left = None
        best.right = None
        leaves -= 1

    return PartitionTree(
        root=root,
        objective=tree.objective,
        step=tree.step,
        ame_global=tree.ame_global,
        provenance=tree.provenance,
        _fme=fme,
    )


@dataclass(frozen=True)
class CameRow:
    n: int
    came: float
    sd_fme: float
    is_root: bool


@dataclass
class CameSummary:
    """Printable cAME table: the root row (starred) followed by the leaf
    groups, with the global AME as footer."""

    rows: list[CameRow]
    method: str
    ame_global: float

    def to_text(self) -> str:
        body = []
        for r in self.rows:
            body.append(
                (str(r.n), f"{r.came:.4f}", f"{r.sd_fme:.4f}", "*" if r.is_root else "")
            )
        header = ("n", "cAME", "SD(fME)")
        widths = [
            max(len(header[j]), *(len(row[j]) for row in body)) + 1 for j in range(3)
        ]
        lines = [
            "Forward Marginal Effects Partitioning",
            "",
            f"Method:  {self.method}",
            "",
            "".join(h.rjust(w) for h, w in zip(header, widths)),
        ]
        for row in body:
            line = "".join(c.rjust(w) for c, w in zip(row, widths))
            lines.append(line + (" *" if row[3] else ""))
        lines.append("---")
        lines.append("* root node (non-partitioned)")
        lines.append("")
        lines.append(f"AME (Global): {self.ame_global:.4f}")
        return "\n".join(lines) + "\n"


def came_summary(tree: PartitionTree) -> CameSummary:
    """Summary rows for a fitted partition: root first (starred), then
    the leaves in preorder. A root-only tree has the single starred row."""
    root = tree.root
    rows = [CameRow(root.n, root.came, root.sd_fme, True)]
    if not root.is_leaf:
        rows += [CameRow(nd.n, nd.came, nd.sd_fme, False) for nd in tree.leaves()]
    return CameSummary(rows=rows, method=tree.method_text(), ame_global=tree.ame_global)
