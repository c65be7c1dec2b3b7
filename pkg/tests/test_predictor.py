"""Models: linear, analytic, CART and forest, plus serialization."""

import json

import numpy as np
import pytest

from fmekit.dataset import ColumnKind, Dataset
from fmekit.errors import ComputationError, ValidationError
from fmekit.predictor import (
    AnalyticPredictor,
    CartOptions,
    ForestOptions,
    LinearModel,
    load_model,
    model_from_dict,
    save_model,
    train_cart,
    train_forest,
    train_linear,
)


def linear_fixture():
    return LinearModel(
        intercept=1.0,
        coefficients={"temp": 2.0, "hum": -3.0},
        offsets={"weather": {"clear": 0.0, "misty": 1.0, "rain": -2.0}},
    )


def probe_cols(n=20, seed=5):
    rng = np.random.default_rng(seed)
    return {
        "temp": rng.uniform(-5, 30, n),
        "hum": rng.uniform(0, 1, n),
        "weather": np.array(
            [("clear", "misty", "rain")[i % 3] for i in range(n)], dtype=object
        ),
    }


def test_linear_model_formula():
    model = linear_fixture()
    cols = {
        "temp": np.array([0.0, 1.0]),
        "hum": np.array([0.0, 1.0]),
        "weather": np.array(["clear", "rain"], dtype=object),
    }
    out = model.predict_batch(cols)
    assert out[0] == 1.0
    assert out[1] == 1.0 + 2.0 - 3.0 - 2.0


def test_linear_model_unseen_level_gets_zero_offset():
    model = linear_fixture()
    cols = {
        "temp": np.array([0.0]),
        "hum": np.array([0.0]),
        "weather": np.array(["hail"], dtype=object),
    }
    assert model.predict_batch(cols)[0] == 1.0


def test_analytic_predictor_matches_lambda(rng):
    model = AnalyticPredictor("temp^2 + 3*hum - 1")
    temp = rng.uniform(-2, 2, 50)
    hum = rng.uniform(0, 1, 50)
    out = model.predict_batch({"temp": temp, "hum": hum})
    assert np.allclose(out, temp**2 + 3 * hum - 1, rtol=1e-15)
    assert model.schema.names == ("temp", "hum")


def test_analytic_predictor_rejects_non_finite_output():
    model = AnalyticPredictor("log(x)")
    with pytest.raises(ComputationError):
        model.predict_batch({"x": np.array([-1.0])})


def test_predict_input_validation():
    model = linear_fixture()
    with pytest.raises(ValidationError, match="temp"):
        model.predict_batch({"hum": np.array([0.0]),
                             "weather": np.array(["clear"], dtype=object)})
    with pytest.raises(ValidationError):
        model.predict_batch({
            "temp": np.array([np.inf]),
            "hum": np.array([0.0]),
            "weather": np.array(["clear"], dtype=object),
        })
    with pytest.raises(ValidationError):
        model.predict_batch({
            "temp": np.array([0.0, 1.0]),
            "hum": np.array([0.0]),
            "weather": np.array(["clear"], dtype=object),
        })


def test_predict_accepts_dataset(mixed_data):
    model = AnalyticPredictor("temp * 2")
    out = model.predict_batch(mixed_data)
    assert np.array_equal(out, mixed_data.numeric("temp") * 2)


def _walk_nodes(node):
    yield node
    if not node.is_leaf:
        yield from _walk_nodes(node.left)
        yield from _walk_nodes(node.right)


def step_data(n=200):
    # y jumps at x = 0; a single split at the midpoint separates it exactly
    x = np.linspace(-2.0, 2.0, n)
    y = np.where(x <= 0.0, 1.0, 5.0)
    return Dataset(
        "step",
        [("x", ColumnKind.NUMERIC, x), ("y", ColumnKind.NUMERIC, y)],
        target="y",
    )


def test_cart_recovers_step_function():
    data = step_data()
    tree = train_cart(data, options=CartOptions(max_depth=2, min_node_size=5))
    assert tree.n_leaves == 2
    out = tree.predict_batch({"x": np.array([-1.5, -0.1, 0.1, 1.5])})
    assert list(out) == [1.0, 1.0, 5.0, 5.0]


def test_cart_constant_target_is_single_leaf(rng):
    data = Dataset(
        "c",
        [("x", ColumnKind.NUMERIC, rng.uniform(0, 1, 30)),
         ("y", ColumnKind.NUMERIC, np.full(30, 4.25))],
        target="y",
    )
    tree = train_cart(data)
    assert tree.n_leaves == 1
    assert tree.predict_batch({"x": np.array([0.5])})[0] == 4.25


def test_cart_fully_grown_interpolates_unique_points():
    x = np.arange(16.0)
    y = np.array([3.0, -1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0,
                  5.0, 3.0, 5.0, 8.0, 9.0, 7.0, 9.0, 3.0])
    data = Dataset("d", [("x", ColumnKind.NUMERIC, x), ("y", ColumnKind.NUMERIC, y)],
                   target="y")
    tree = train_cart(data, options=CartOptions(min_node_size=1))
    assert np.array_equal(tree.predict_batch({"x": x}), y)


def test_cart_respects_depth_and_node_size(rng):
    data = step_data()
    stump = train_cart(data, options=CartOptions(max_depth=1))
    assert stump.depth() <= 1
    noisy = Dataset(
        "n",
        [("x", ColumnKind.NUMERIC, rng.uniform(0, 1, 200)),
         ("y", ColumnKind.NUMERIC, rng.normal(0, 1, 200))],
        target="y",
    )
    tree = train_cart(noisy, options=CartOptions(min_node_size=30))
    leaves = [nd for nd in _walk_nodes(tree.root) if nd.is_leaf]
    assert all(leaf.n >= 30 for leaf in leaves)
    with pytest.raises(ValidationError, match="rows"):
        train_cart(data, options=CartOptions(min_node_size=150))


def test_cart_exhaustive_split_oracle(rng):
    # brute force over all features and boundaries on a small sample
    n = 24
    cols = {
        "a": rng.choice(np.linspace(0, 1, 6), n),
        "b": rng.choice(np.linspace(0, 1, 6), n),
    }
    y = rng.normal(0, 1, n)
    data = Dataset(
        "d",
        [("a", ColumnKind.NUMERIC, cols["a"]), ("b", ColumnKind.NUMERIC, cols["b"]),
         ("y", ColumnKind.NUMERIC, y)],
        target="y",
    )
    tree = train_cart(data, options=CartOptions(max_depth=1, min_node_size=2))

    def sse(v):
        return float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0

    best = (None, None, -1.0)
    for name in ("a", "b"):
        xs = cols[name]
        for cut in np.unique(xs)[:-1]:
            mask = xs <= cut
            if mask.sum() < 2 or (~mask).sum() < 2:
                continue
            gain = sse(y) - sse(y[mask]) - sse(y[~mask])
            if gain > best[2]:
                best = (name, cut, gain)
    root = tree.root
    assert root.feature == best[0]
    left = cols[best[0]] <= root.threshold
    assert np.array_equal(left, cols[best[0]] <= best[1])


def test_cart_split_tie_prefers_lower_feature_index():
    x = np.array([0.0, 0.0, 1.0, 1.0])
    y = np.array([0.0, 0.0, 10.0, 10.0])
    data = Dataset(
        "d",
        [("dup2", ColumnKind.NUMERIC, x), ("dup1", ColumnKind.NUMERIC, x),
         ("y", ColumnKind.NUMERIC, y)],
        target="y",
    )
    tree = train_cart(data, options=CartOptions(max_depth=1, min_node_size=1))
    assert tree.root.feature == "dup2"  # first in schema order


def cat_data(n=120):
    levels = ["a", "b", "c"]
    cat = [levels[i % 3] for i in range(n)]
    means = {"a": 0.0, "b": 10.0, "c": -5.0}
    y = np.array([means[c] for c in cat])
    return Dataset(
        "cat",
        [("g", ColumnKind.CATEGORICAL, cat), ("y", ColumnKind.NUMERIC, y)],
        target="y",
    )


def test_cart_categorical_split_groups_by_level_mean():
    data = cat_data()
    tree = train_cart(data, options=CartOptions(max_depth=1, min_node_size=10))
    root = tree.root
    assert root.feature == "g"
    # sorted level means: c (-5) < a (0) < b (10); best binary cut is
    # either {c} vs {a, b} or {c, a} vs {b}; both beat any other grouping
    assert root.left_levels in ({"c"}, {"c", "a"})


def test_cart_unseen_level_routes_to_larger_child():
    data = cat_data()
    tree = train_cart(data, options=CartOptions(max_depth=1, min_node_size=10))
    root = tree.root
    out = tree.predict_batch({"g": np.array(["zzz"], dtype=object)})[0]
    larger = root.left if root.left.n >= root.right.n else root.right
    assert out == larger.value


def test_cart_rejects_too_many_levels():
    n = 70
    data = Dataset(
        "wide",
        [("g", ColumnKind.CATEGORICAL, [f"lv{i}" for i in range(n)]),
         ("y", ColumnKind.NUMERIC, np.arange(float(n)))],
        target="y",
    )
    with pytest.raises(ValidationError, match="levels"):
        train_cart(data, options=CartOptions(min_node_size=1))


def forest_data(n=150, seed=9):
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-3, 3, n)
    x2 = rng.uniform(-3, 3, n)
    g = rng.choice(["u", "v"], n)
    y = np.sin(x1) + 0.5 * x2 + (g == "u") * 2.0 + rng.normal(0, 0.1, n)
    return Dataset(
        "f",
        [("x1", ColumnKind.NUMERIC, x1), ("x2", ColumnKind.NUMERIC, x2),
         ("g", ColumnKind.CATEGORICAL, list(g)), ("y", ColumnKind.NUMERIC, y)],
        target="y",
    )


def test_forest_seed_determinism():
    data = forest_data()
    opts = ForestOptions(n_trees=12, seed=3, min_node_size=10)
    a = train_forest(data, options=opts)
    b = train_forest(data, options=opts)
    probe = data.columns_mapping(["x1", "x2", "g"])
    assert a.predict_batch(probe).tobytes() == b.predict_batch(probe).tobytes()
    c = train_forest(data, options=ForestOptions(n_trees=12, seed=4, min_node_size=10))
    assert not np.array_equal(a.predict_batch(probe), c.predict_batch(probe))


def test_forest_without_bootstrap_single_tree_equals_cart():
    data = forest_data()
    forest = train_forest(
        data,
        options=ForestOptions(n_trees=1, seed=0, bootstrap=False, mtry=3,
                              min_node_size=10),
    )
    cart = train_cart(data, options=CartOptions(min_node_size=10))
    probe = data.columns_mapping(["x1", "x2", "g"])
    assert forest.predict_batch(probe).tobytes() == cart.predict_batch(probe).tobytes()


def test_forest_prediction_is_tree_mean():
    data = forest_data()
    forest = train_forest(data, options=ForestOptions(n_trees=7, seed=1,
                                                      min_node_size=10))
    probe = data.columns_mapping(["x1", "x2", "g"])
    per_tree = [t.predict_batch(probe) for t in forest.trees]
    acc = np.zeros_like(per_tree[0])
    for p in per_tree:
        acc += p
    assert np.array_equal(forest.predict_batch(probe), acc / len(per_tree))


def test_forest_row_order_equivariance(rng):
    data = forest_data()
    forest = train_forest(data, options=ForestOptions(n_trees=5, seed=2,
                                                      min_node_size=10))
    probe = data.columns_mapping(["x1", "x2", "g"])
    order = rng.permutation(data.n_rows)
    shuffled = {k: v[order] for k, v in probe.items()}
    assert np.array_equal(
        forest.predict_batch(shuffled), forest.predict_batch(probe)[order]
    )


def test_train_linear_recovers_coefficients():
    rng = np.random.default_rng(12)
    n = 300
    temp = rng.uniform(-5, 30, n)
    weather = rng.choice(["clear", "misty", "rain"], n)
    offs = {"clear": 0.0, "misty": 1.5, "rain": -4.0}
    y = 2.0 + 0.5 * temp + np.array([offs[w] for w in weather])
    data = Dataset(
        "lin",
        [("temp", ColumnKind.NUMERIC, temp),
         ("weather", ColumnKind.CATEGORICAL, list(weather)),
         ("y", ColumnKind.NUMERIC, y)],
        target="y",
    )
    model = train_linear(data)
    assert model.coefficients["temp"] == pytest.approx(0.5, abs=1e-10)
    base = data.levels("weather")[0]
    assert model.offsets["weather"][base] == 0.0
    # intercept absorbs the baseline level; fitted value at temp = 0 is exact
    for w, v in offs.items():
        fitted = model.intercept + model.offsets["weather"][w]
        assert fitted == pytest.approx(2.0 + v, abs=1e-8)


@pytest.mark.parametrize("builder", [
    lambda: linear_fixture(),
    lambda: AnalyticPredictor("temp^2 + 3*hum"),
    lambda: train_cart(forest_data(), options=CartOptions(min_node_size=10)),
    lambda: train_forest(forest_data(),
                         options=ForestOptions(n_trees=5, seed=8, min_node_size=10)),
])
def test_save_load_round_trip_predicts_identically(tmp_path, builder):
    model = builder()
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    if isinstance(model, (LinearModel, AnalyticPredictor)):
        cols = probe_cols()
        cols = {k: cols[k] for k in model.schema.names}
    else:
        cols = forest_data(seed=77).columns_mapping(["x1", "x2", "g"])
    assert back.predict_batch(cols).tobytes() == model.predict_batch(cols).tobytes()


def test_model_format_errors(tmp_path):
    with pytest.raises(ValidationError, match="unsupported model format version"):
        model_from_dict({"version": "fme-model-v0", "kind": "linear",
                         "parameters": {}})
    with pytest.raises(ValidationError, match="unknown model kind"):
        model_from_dict({"version": "fme-model-v1", "kind": "submarine",
                         "parameters": {}})
    with pytest.raises(ValidationError):
        model_from_dict({"version": "fme-model-v1", "kind": "forest",
                         "parameters": {"trees": "oops"}})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_model(bad)
    with pytest.raises(ValidationError, match="no such file"):
        load_model(tmp_path / "absent.json")


def test_saved_model_ignores_extra_top_level_keys(tmp_path):
    model = linear_fixture()
    raw = model.to_dict()
    raw["provenance"] = {"config": {"note": "extra keys are tolerated"}}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    back = load_model(path)
    cols = probe_cols()
    assert np.array_equal(back.predict_batch(cols), model.predict_batch(cols))


def test_describe_strings():
    assert "linear" in linear_fixture().describe()
    assert AnalyticPredictor("x + 1").describe() == "analytic: x + 1"
    tree = train_cart(step_data(), options=CartOptions(max_depth=2, min_node_size=5))
    assert tree.describe() == f"cart({tree.n_leaves} leaves)"
    forest = train_forest(forest_data(),
                          options=ForestOptions(n_trees=3, seed=0, min_node_size=20))
    assert "3 trees" in forest.describe()
