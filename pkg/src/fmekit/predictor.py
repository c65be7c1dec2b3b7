"""Prediction functions and in-repo trainers.

Everything downstream (effects, non-linearity, partitioning) sees models
only through :class:`Predictor.predict_batch`, so any object honoring
that contract can be analyzed. The built-in models double as test
fixtures with known closed forms:

* :class:`LinearModel` - intercept, numeric coefficients, per-level
  offsets (dummy coding, first level is the baseline).
* :class:`AnalyticPredictor` - a parsed arithmetic expression.
* :class:`CartTree` - SSE-greedy regression tree.
* :class:`RandomForest` - bagged trees with per-split feature sampling.

Trained models serialize to a versioned JSON document and reload with
bit-identical predictions.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from fmekit import kernels
from fmekit.dataset import ColumnKind, Dataset
from fmekit.errors import ComputationError, ValidationError
from fmekit.expression import evaluate, parse_expression, to_string, variables

MODEL_FORMAT_VERSION = "fme-model-v1"
MAX_TREE_LEVELS = 64


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: ColumnKind
    levels: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ModelSchema:
    """Named, typed feature list a model expects at prediction time."""

    features: tuple[FeatureSpec, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def spec(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise ValidationError(f"feature {name!r} not in model schema")

    @staticmethod
    def from_dataset(data: Dataset, features: Sequence[str] | None = None) -> "ModelSchema":
        features = data.feature_names if features is None else features
        specs = []
        for name in features:
            if data.kind(name) is ColumnKind.NUMERIC:
                specs.append(FeatureSpec(name, ColumnKind.NUMERIC))
            else:
                specs.append(FeatureSpec(name, ColumnKind.CATEGORICAL, data.levels(name)))
        return ModelSchema(tuple(specs))

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "kind": f.kind.value}
                | ({"levels": list(f.levels)} if f.levels is not None else {})
                for f in self.features
            ]
        }

    @staticmethod
    def from_dict(raw: dict) -> "ModelSchema":
        try:
            specs = tuple(
                FeatureSpec(
                    str(f["name"]),
                    ColumnKind(f["kind"]),
                    tuple(f["levels"]) if "levels" in f else None,
                )
                for f in raw["features"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed schema block: {exc}") from None
        return ModelSchema(specs)


class Predictor(ABC):
    """A prediction function over a fixed feature schema."""

    kind: str = "abstract"
    schema: ModelSchema

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.schema.names

    def predict_batch(self, data) -> np.ndarray:
        """Predict one finite float per row of ``data``.

        ``data`` is a :class:`Dataset` or a mapping of feature name to
        column array (float64 for numeric features, strings for
        categorical ones). Raises ValidationError on schema mismatch
        and ComputationError if a prediction is not finite.
        """
        cols, n = self._normalize(data)
        out = np.asarray(self._predict(cols, n), dtype=np.float64)
        if out.ndim == 0:
            out = np.full(n, float(out))
        if out.shape != (n,):
            raise ComputationError(
                f"model returned shape {out.shape}, expected ({n},)"
            )
        if not np.all(np.isfinite(out)):
            bad = int(np.flatnonzero(~np.isfinite(out))[0])
            raise ComputationError(f"prediction is not finite at row {bad}")
        return out

    @abstractmethod
    def _predict(self, cols: dict[str, np.ndarray], n: int) -> np.ndarray: ...

    @abstractmethod
    def to_dict(self) -> dict: ...

    def describe(self) -> str:
        return self.kind

    def _normalize(self, data) -> tuple[dict[str, np.ndarray], int]:
        cols: dict[str, np.ndarray] = {}
        if isinstance(data, Dataset):
            for spec in self.schema.features:
                if spec.name not in data.column_names:
                    raise ValidationError(f"data lacks model feature {spec.name!r}")
                if data.kind(spec.name) is not spec.kind:
                    raise ValidationError(
                        f"feature {spec.name!r}: data column is "
                        f"{data.kind(spec.name).value}, model expects {spec.kind.value}"
                    )
                cols[spec.name] = (
                    data.numeric(spec.name)
                    if spec.kind is ColumnKind.NUMERIC
                    else data.labels(spec.name)
                )
            return cols, data.n_rows

        n = None
        for spec in self.schema.features:
            if spec.name not in data:
                raise ValidationError(f"input lacks model feature {spec.name!r}")
            raw = data[spec.name]
            if spec.kind is ColumnKind.NUMERIC:
                try:
                    arr = np.asarray(raw, dtype=np.float64)
                except (TypeError, ValueError):
                    raise ValidationError(
                        f"feature {spec.name!r}: expected numeric values"
                    ) from None
                if arr.ndim != 1:
                    raise ValidationError(f"feature {spec.name!r}: expected a 1-d column")
                if not np.all(np.isfinite(arr)):
                    raise ValidationError(f"feature {spec.name!r}: non-finite input value")
            else:
                arr = np.asarray(raw)
                if arr.ndim != 1 or arr.dtype.kind not in "OU":
                    raise ValidationError(
                        f"feature {spec.name!r}: expected string labels"
                    )
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValidationError("input columns have inconsistent lengths")
            cols[spec.name] = arr
        if n is None:
            if isinstance(data, Mapping) and data:
                n = np.asarray(next(iter(data.values()))).shape[0]
            else:
                raise ValidationError("cannot infer row count for a feature-free model")
        if n == 0:
            raise ValidationError("input has no rows")
        return cols, int(n)


# -- linear ---------------------------------------------------------------


class LinearModel(Predictor):
    """Intercept + numeric coefficients + categorical level offsets.

    The first level of each offset table is the baseline; labels unseen
    at construction predict with offset 0.
    """

    kind = "linear"

    def __init__(
        self,
        intercept: float,
        coefficients: Mapping[str, float] | None = None,
        offsets: Mapping[str, Mapping[str, float]] | None = None,
    ):
        self.intercept = float(intercept)
        self.coefficients = {k: float(v) for k, v in (coefficients or {}).items()}
        self.offsets = {
            f: {str(lvl): float(v) for lvl, v in table.items()}
            for f, table in (offsets or {}).items()
        }
        for f, table in self.offsets.items():
            if not table:
                raise ValidationError(f"offset table for {f!r} is empty")
        values = [self.intercept, *self.coefficients.values()] + [
            v for t in self.offsets.values() for v in t.values()
        ]
        if not all(math.isfinite(v) for v in values):
            raise ValidationError("linear model parameters must be finite")
        specs = [FeatureSpec(f, ColumnKind.NUMERIC) for f in self.coefficients]
        specs += [
            FeatureSpec(f, ColumnKind.CATEGORICAL, tuple(t)) for f, t in self.offsets.items()
        ]
        self.schema = ModelSchema(tuple(specs))

    def _predict(self, cols, n):
        out = np.full(n, self.intercept, dtype=np.float64)
        for f, beta in self.coefficients.items():
            out += beta * cols[f]
        for f, table in self.offsets.items():
            labels = cols[f]
            add = np.zeros(n, dtype=np.float64)
            for lvl, off in table.items():
                add[labels == lvl] = off
            out += add
        return out

    def to_dict(self):
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "schema": self.schema.to_dict(),
            "parameters": {
                "intercept": self.intercept,
                "coefficients": self.coefficients,
                "offsets": self.offsets,
            },
        }

    @staticmethod
    def from_parameters(params: dict) -> "LinearModel":
        return LinearModel(
            params.get("intercept", 0.0),
            params.get("coefficients"),
            params.get("offsets"),
        )


# -- analytic -------------------------------------------------------------


class AnalyticPredictor(Predictor):
    """Closed-form model defined by an arithmetic expression string."""

    kind = "analytic"

    def __init__(self, expression: str):
        self._ast = parse_expression(expression)
        self.expression = to_string(self._ast)
        self.schema = ModelSchema(
            tuple(FeatureSpec(v, ColumnKind.NUMERIC) for v in variables(self._ast))
        )

    def _predict(self, cols, n):
        # out-of-domain inputs surface as non-finite values, which the
        # predict wrapper rejects; silence numpy's duplicate warning
        with np.errstate(all="ignore"):
            return evaluate(self._ast, cols)

    def describe(self):
        return f"analytic: {self.expression}"

    def to_dict(self):
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "schema": self.schema.to_dict(),
            "parameters": {"expression": self.expression},
        }


# -- regression tree ------------------------------------------------------


@dataclass
class CartNode:
    """One node of a fitted tree. Split nodes carry either a numeric
    threshold (left iff x <= threshold) or a left level set."""

    value: float
    n: int
    feature: str | None = None
    threshold: float | None = None
    left_levels: frozenset[str] | None = None
    seen_levels: frozenset[str] | None = None
    default_left: bool | None = None
    left: "CartNode | None" = None
    right: "CartNode | None" = None
    rows: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


def _walk(node: CartNode):
    yield node
    if not node.is_leaf:
        yield from _walk(node.left)
        yield from _walk(node.right)


class _FlatTree:
    """Array form of a tree, in the layout the kernels consume."""

    __slots__ = ("feature", "threshold", "left_mask", "seen_mask",
                 "default_left", "is_cat", "left", "right", "value")

    def __init__(self, root: CartNode, schema: ModelSchema):
        nodes = list(_walk(root))
        index = {id(nd): i for i, nd in enumerate(nodes)}
        m = len(nodes)
        self.feature = np.full(m, -1, dtype=np.int32)
        self.threshold = np.zeros(m, dtype=np.float64)
        self.left_mask = np.zeros(m, dtype=np.uint64)
        self.seen_mask = np.zeros(m, dtype=np.uint64)
        self.default_left = np.zeros(m, dtype=np.uint8)
        self.is_cat = np.zeros(m, dtype=np.uint8)
        self.left = np.full(m, -1, dtype=np.int32)
        self.right = np.full(m, -1, dtype=np.int32)
        self.value = np.zeros(m, dtype=np.float64)
        names = schema.names
        for i, nd in enumerate(nodes):
            self.value[i] = nd.value
            if nd.is_leaf:
                continue
            fpos = names.index(nd.feature)
            spec = schema.features[fpos]
            self.feature[i] = fpos
            self.left[i] = index[id(nd.left)]
            self.right[i] = index[id(nd.right)]
            if spec.kind is ColumnKind.CATEGORICAL:
                if len(spec.levels) > MAX_TREE_LEVELS:
                    raise ValidationError(
                        f"feature {nd.feature!r} has more than "
                        f"{MAX_TREE_LEVELS} levels"
                    )
                code = {lvl: c for c, lvl in enumerate(spec.levels)}
                lmask = smask = 0
                for lvl in nd.left_levels:
                    lmask |= 1 << code[lvl]
                for lvl in nd.seen_levels:
                    smask |= 1 << code[lvl]
                self.is_cat[i] = 1
                self.left_mask[i] = lmask
                self.seen_mask[i] = smask
                self.default_left[i] = 1 if nd.default_left else 0
            else:
                self.threshold[i] = nd.threshold

    def apply(self, X: np.ndarray) -> np.ndarray:
        return kernels.tree_apply(
            self.feature, self.threshold, self.left_mask, self.seen_mask,
            self.default_left, self.is_cat, self.left, self.right,
            self.value, X,
        )


def _schema_matrix(schema: ModelSchema, cols: dict[str, np.ndarray], n: int) -> np.ndarray:
    """Columns stacked per schema order; categorical labels as float codes
    (-1 marks a label the model has never seen)."""
    X = np.empty((n, len(schema.features)), dtype=np.float64, order="C")
    for j, spec in enumerate(schema.features):
        if spec.kind is ColumnKind.NUMERIC:
            X[:, j] = cols[spec.name]
        else:
            code = {lvl: float(c) for c, lvl in enumerate(spec.levels)}
            X[:, j] = np.fromiter(
                (code.get(v, -1.0) for v in cols[spec.name]),
                dtype=np.float64,
                count=n,
            )
    return X


class CartTree(Predictor):
    """Greedy SSE-minimizing regression tree."""

    kind = "cart"

    def __init__(self, schema: ModelSchema, root: CartNode):
        self.schema = schema
        self.root = root
        self._flat = _FlatTree(root, schema)

    def _predict(self, cols, n):
        return self._flat.apply(_schema_matrix(self.schema, cols, n))

    def _apply(self, X: np.ndarray) -> np.ndarray:
        return self._flat.apply(X)

    @property
    def n_leaves(self) -> int:
        return sum(1 for nd in _walk(self.root) if nd.is_leaf)

    def depth(self) -> int:
        def d(nd):
            return 0 if nd.is_leaf else 1 + max(d(nd.left), d(nd.right))

        return d(self.root)

    def describe(self):
        return f"cart({self.n_leaves} leaves)"

    @staticmethod
    def _node_to_dict(nd: CartNode) -> dict:
        if nd.is_leaf:
            return {"value": nd.value, "n": nd.n}
        out = {"feature": nd.feature, "value": nd.value, "n": nd.n}
        if nd.threshold is not None:
            out["threshold"] = nd.threshold
        else:
            out["left_levels"] = sorted(nd.left_levels)
            out["seen_levels"] = sorted(nd.seen_levels)
            out["default_left"] = bool(nd.default_left)
        out["left"] = CartTree._node_to_dict(nd.left)
        out["right"] = CartTree._node_to_dict(nd.right)
        return out

    @staticmethod
    def _node_from_dict(raw: dict) -> CartNode:
        try:
            value = float(raw["value"])
            n = int(raw["n"])
            if "feature" not in raw:
                return CartNode(value=value, n=n)
            node = CartNode(
                value=value,
                n=n,
                feature=str(raw["feature"]),
                left=CartTree._node_from_dict(raw["left"]),
                right=CartTree._node_from_dict(raw["right"]),
            )
            if "threshold" in raw:
                node.threshold = float(raw["threshold"])
            else:
                node.left_levels = frozenset(raw["left_levels"])
                node.seen_levels = frozenset(raw["seen_levels"])
                node.default_left = bool(raw["default_left"])
            return node
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed tree node: {exc}") from None

    def to_dict(self):
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "schema": self.schema.to_dict(),
            "parameters": {"tree": self._node_to_dict(self.root)},
        }


# -- training -------------------------------------------------------------


@dataclass(frozen=True)
class CartOptions:
    max_depth: int = 30
    min_node_size: int = 5
    min_sse_improvement: float = 0.0

    def validate(self):
        if self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if self.min_node_size < 1:
            raise ValidationError("min_node_size must be >= 1")
        if self.min_sse_improvement < 0:
            raise ValidationError("min_sse_improvement must be >= 0")


@dataclass(frozen=True)
class ForestOptions:
    n_trees: int = 100
    mtry: int | None = None
    seed: int = 0
    bootstrap: bool = True
    max_depth: int = 30
    min_node_size: int = 5
    min_sse_improvement: float = 0.0


@dataclass(frozen=True)
class _Feat:
    name: str
    kind: ColumnKind
    data: np.ndarray  # float64 values, or int32 level codes
    levels: tuple[str, ...] | None = None


def _feats_from_dataset(data: Dataset, features: Sequence[str]) -> list[_Feat]:
    feats = []
    for name in features:
        if data.kind(name) is ColumnKind.NUMERIC:
            feats.append(_Feat(name, ColumnKind.NUMERIC, data.numeric(name)))
        else:
            levels = data.levels(name)
            if len(levels) > MAX_TREE_LEVELS:
                raise ValidationError(
                    f"feature {name!r} has {len(levels)} levels; "
                    f"trees support at most {MAX_TREE_LEVELS}"
                )
            feats.append(_Feat(name, ColumnKind.CATEGORICAL, data.codes(name), levels))
    return feats


def _best_cat_split(codes, y, min_leaf, n_levels):
    """Best binary level grouping by SSE gain.

    Levels are ordered by within-level mean (ties by code) and the scan
    considers every prefix; for SSE loss this search is exact. Returns
    (left_codes, gain) or (None, 0.0).
    """
    n = y.shape[0]
    counts = np.bincount(codes, minlength=n_levels)
    sums = np.bincount(codes, weights=y, minlength=n_levels)
    sumsq = np.bincount(codes, weights=y * y, minlength=n_levels)
    present = np.flatnonzero(counts > 0)
    if present.shape[0] < 2:
        return None, 0.0
    means = sums[present] / counts[present]
    order = present[np.lexsort((present, means))]

    total1 = float(sums[present].sum())
    total2 = float(sumsq[present].sum())
    parent = total2 - total1 * total1 / n

    best_gain = 0.0
    best_cut = -1
    nl = 0
    s1 = 0.0
    s2 = 0.0
    for j in range(order.shape[0] - 1):
        g = order[j]
        nl += int(counts[g])
        s1 += float(sums[g])
        s2 += float(sumsq[g])
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        sse_left = s2 - s1 * s1 / nl
        right1 = total1 - s1
        right2 = total2 - s2
        sse_right = right2 - right1 * right1 / nr
        gain = parent - sse_left - sse_right
        if gain > best_gain:
            best_gain = gain
            best_cut = j + 1
    if best_cut < 0:
        return None, 0.0
    return order[:best_cut], best_gain


def _grow_tree(
    feats: list[_Feat],
    y: np.ndarray,
    idx: np.ndarray,
    options: CartOptions,
    rng: np.random.Generator | None = None,
    mtry: int | None = None,
    keep_rows: bool = False,
    stop_leaf=None,
) -> CartNode:
    """Recursive greedy growth over rows ``idx``.

    Candidate features tie-break to the lowest feature index, numeric
    thresholds to the lowest midpoint. ``stop_leaf(y_node)`` may force a
    node to stay a leaf. With ``keep_rows`` every node records the row
    indices it was grown from.
    """
    y_node = y[idx]
    node = CartNode(value=float(np.mean(y_node)), n=int(idx.shape[0]))
    if keep_rows:
        node.rows = idx

    def make_leaf():
        return node

    depth_budget = options.max_depth
    if depth_budget == 0 or idx.shape[0] < 2 * options.min_node_size:
        return make_leaf()
    if float(y_node.min()) == float(y_node.max()):
        return make_leaf()
    if stop_leaf is not None and stop_leaf(y_node):
        return make_leaf()

    n_feats = len(feats)
    if rng is not None and mtry is not None and mtry < n_feats:
        candidates = np.sort(rng.choice(n_feats, size=mtry, replace=False))
    else:
        candidates = np.arange(n_feats)

    best = None  # (gain, feat_pos, payload)
    for fpos in candidates:
        feat = feats[fpos]
        col = feat.data[idx]
        if feat.kind is ColumnKind.NUMERIC:
            order = np.argsort(col, kind="stable")
            xs = col[order]
            ys = y_node[order]
            pos, gain = kernels.best_split_pos(xs, ys, options.min_node_size)
            if pos < 0:
                continue
            payload = ("num", order, pos, xs[pos - 1], xs[pos])
        else:
            left_codes, gain = _best_cat_split(
                col, y_node, options.min_node_size, len(feat.levels)
            )
            if left_codes is None:
                continue
            payload = ("cat", left_codes)
        if gain > options.min_sse_improvement and (best is None or gain > best[0]):
            best = (gain, int(fpos), payload)

    if best is None:
        return make_leaf()

    _, fpos, payload = best
    feat = feats[fpos]
    if payload[0] == "num":
        _, order, pos, lo, hi = payload
        threshold = lo / 2.0 + hi / 2.0
        if not lo <= threshold < hi:
            threshold = lo
        left_idx = idx[order[:pos]]
        right_idx = idx[order[pos:]]
        node.feature = feat.name
        node.threshold = float(threshold)
    else:
        left_codes = payload[1]
        col = feat.data[idx]
        go_left = np.isin(col, left_codes)
        left_idx = idx[go_left]
        right_idx = idx[~go_left]
        observed = np.unique(col)
        node.feature = feat.name
        node.left_levels = frozenset(feat.levels[c] for c in left_codes)
        node.seen_levels = frozenset(feat.levels[c] for c in observed)
        node.default_left = left_idx.shape[0] >= right_idx.shape[0]

    child_options = CartOptions(
        max_depth=options.max_depth - 1,
        min_node_size=options.min_node_size,
        min_sse_improvement=options.min_sse_improvement,
    )
    node.left = _grow_tree(feats, y, left_idx, child_options, rng, mtry, keep_rows, stop_leaf)
    node.right = _grow_tree(feats, y, right_idx, child_options, rng, mtry, keep_rows, stop_leaf)
    return node


def _training_target(data: Dataset, target: str | None) -> tuple[str, np.ndarray]:
    target = target or data.target
    if target is None:
        raise ValidationError("no target column given and dataset declares none")
    if data.kind(target) is not ColumnKind.NUMERIC:
        raise ValidationError(f"target column {target!r} must be numeric")
    return target, data.numeric(target)


def train_cart(data: Dataset, target: str | None = None,
               options: CartOptions = CartOptions()) -> CartTree:
    """Fit a regression tree to ``data`` with SSE-greedy splits."""
    options.validate()
    target, y = _training_target(data, target)
    features = tuple(f for f in data.feature_names if f != target)
    if not features:
        raise ValidationError("no feature columns to train on")
    if data.n_rows < 2 * options.min_node_size:
        raise ValidationError(
            f"need at least {2 * options.min_node_size} rows for "
            f"min_node_size={options.min_node_size}"
        )
    feats = _feats_from_dataset(data, features)
    root = _grow_tree(feats, y, np.arange(data.n_rows, dtype=np.int64), options)
    return CartTree(ModelSchema.from_dataset(data, features), root)


class RandomForest(Predictor):
    """Mean of bootstrap-trained trees sharing one schema."""

    kind = "forest"

    def __init__(self, trees: Sequence[CartTree], options: ForestOptions):
        if not trees:
            raise ValidationError("forest needs at least one tree")
        self.trees = list(trees)
        self.schema = self.trees[0].schema
        for t in self.trees[1:]:
            if t.schema != self.schema:
                raise ValidationError("forest trees disagree on the feature schema")
        self.options = options

    def _predict(self, cols, n):
        X = _schema_matrix(self.schema, cols, n)
        acc = np.zeros(X.shape[0], dtype=np.float64)
        for t in self.trees:
            acc += t._apply(X)
        return acc / len(self.trees)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def describe(self):
        return f"forest({self.n_trees} trees)"

    def to_dict(self):
        opt = self.options
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "schema": self.schema.to_dict(),
            "parameters": {
                "n_trees": opt.n_trees,
                "mtry": opt.mtry,
                "seed": opt.seed,
                "bootstrap": opt.bootstrap,
                "max_depth": opt.max_depth,
                "min_node_size": opt.min_node_size,
                "min_sse_improvement": opt.min_sse_improvement,
                "trees": [CartTree._node_to_dict(t.root) for t in self.trees],
            },
        }


def train_forest(data: Dataset, target: str | None = None,
                 options: ForestOptions = ForestOptions()) -> RandomForest:
    """Fit a random forest: bootstrap resampling per tree (identity
    resample when ``bootstrap=False``) and per-split draws of ``mtry``
    features without replacement. Tree seeds come from spawning the
    root SeedSequence, so results are reproducible for a given seed."""
    target, y = _training_target(data, target)
    features = tuple(f for f in data.feature_names if f != target)
    if not features:
        raise ValidationError("no feature columns to train on")
    if options.n_trees < 1:
        raise ValidationError("n_trees must be >= 1")
    mtry = options.mtry
    if mtry is None:
        mtry = max(1, len(features) // 3)
    if not 1 <= mtry <= len(features):
        raise ValidationError(
            f"mtry must be in [1, {len(features)}], got {mtry}"
        )
    if data.n_rows < 2 * options.min_node_size:
        raise ValidationError(
            f"need at least {2 * options.min_node_size} rows for "
            f"min_node_size={options.min_node_size}"
        )
    tree_options = CartOptions(
        max_depth=options.max_depth,
        min_node_size=options.min_node_size,
        min_sse_improvement=options.min_sse_improvement,
    )
    tree_options.validate()
    feats = _feats_from_dataset(data, features)
    schema = ModelSchema.from_dataset(data, features)
    n = data.n_rows

    trees = []
    for seq in np.random.SeedSequence(options.seed).spawn(options.n_trees):
        rng = np.random.Generator(np.random.PCG64(seq))
        if options.bootstrap:
            idx = rng.integers(0, n, size=n, dtype=np.int64)
        else:
            idx = np.arange(n, dtype=np.int64)
        root = _grow_tree(feats, y, idx, tree_options, rng=rng, mtry=mtry)
        trees.append(CartTree(schema, root))
    resolved = ForestOptions(
        n_trees=options.n_trees, mtry=mtry, seed=options.seed,
        bootstrap=options.bootstrap, max_depth=options.max_depth,
        min_node_size=options.min_node_size,
        min_sse_improvement=options.min_sse_improvement,
    )
    return RandomForest(trees, resolved)


def train_linear(data: Dataset, target: str | None = None) -> LinearModel:
    """Ordinary least squares with dummy-coded categoricals (first level
    of each categorical column is the baseline)."""
    target, y = _training_target(data, target)
    features = tuple(f for f in data.feature_names if f != target)
    if not features:
        raise ValidationError("no feature columns to train on")
    columns = [np.ones(data.n_rows)]
    slots: list[tuple[str, str | None]] = [("", None)]
    for f in features:
        if data.kind(f) is ColumnKind.NUMERIC:
            columns.append(data.numeric(f))
            slots.append((f, None))
        else:
            codes = data.codes(f)
            for c, lvl in enumerate(data.levels(f)):
                if c == 0:
                    continue
                columns.append((codes == c).astype(np.float64))
                slots.append((f, lvl))
    X = np.column_stack(columns)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    coefficients: dict[str, float] = {}
    offsets: dict[str, dict[str, float]] = {}
    for f in features:
        if data.kind(f) is ColumnKind.CATEGORICAL:
            offsets[f] = {data.levels(f)[0]: 0.0}
    for b, (f, lvl) in zip(beta, slots):
        if f == "":
            intercept = float(b)
        elif lvl is None:
            coefficients[f] = float(b)
        else:
            offsets[f][lvl] = float(b)
    return LinearModel(intercept, coefficients, offsets)


# -- serialization --------------------------------------------------------


def _tree_from_parameters(schema: ModelSchema, raw: dict) -> CartTree:
    if "tree" not in raw:
        raise ValidationError("cart parameters lack a 'tree' block")
    return CartTree(schema, CartTree._node_from_dict(raw["tree"]))


def model_from_dict(raw: dict) -> Predictor:
    if not isinstance(raw, dict):
        raise ValidationError("model document must be a JSON object")
    version = raw.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported model format version {version!r}; "
            f"expected {MODEL_FORMAT_VERSION!r}"
        )
    kind = raw.get("kind")
    params = raw.get("parameters")
    if not isinstance(params, dict):
        raise ValidationError("model document lacks a 'parameters' object")
    if kind == "linear":
        return LinearModel.from_parameters(params)
    if kind == "analytic":
        if "expression" not in params:
            raise ValidationError("analytic parameters lack an 'expression'")
        return AnalyticPredictor(params["expression"])
    schema = ModelSchema.from_dict(raw.get("schema") or {"features": []})
    if kind == "cart":
        return _tree_from_parameters(schema, params)
    if kind == "forest":
        try:
            trees = [
                CartTree(schema, CartTree._node_from_dict(t)) for t in params["trees"]
            ]
            options = ForestOptions(
                n_trees=int(params["n_trees"]),
                mtry=params["mtry"],
                seed=int(params["seed"]),
                bootstrap=bool(params["bootstrap"]),
                max_depth=int(params["max_depth"]),
                min_node_size=int(params["min_node_size"]),
                min_sse_improvement=float(params["min_sse_improvement"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed forest parameters: {exc}") from None
        return RandomForest(trees, options)
    raise ValidationError(f"unknown model kind {kind!r}")


def save_model(model: Predictor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")


def load_model(path) -> Predictor:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file {path}: {exc}") from None
    return model_from_dict(raw)
