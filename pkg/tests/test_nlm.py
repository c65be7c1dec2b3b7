"""Quadrature and the non-linearity measure.

Reference values are closed forms. For a path whose predictions are
t^2 on [0, 1], the secant is t, the numerator integrand (t^2 - t)^2
integrates to 1/30, the mean is 1/3, and the denominator integrand
(t^2 - 1/3)^2 integrates to 4/45, so the exact measure is 1 - 3/8 = 5/8.
The quadrature is exact for cubics, so the only error in either integral
comes from the t^4 term; with 4 panels on [0, 1] that error is exactly
1/69120 per unit leading coefficient, which both integrands inherit.
"""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from fmekit.dataset import ColumnKind
from fmekit.errors import ComputationError, ValidationError
from fmekit.fme import NumericStep
from fmekit.nlm import (
    NlmSettings,
    PathContext,
    average_nlm,
    compute_nlm,
    nlm_from_path_values,
    simpson38,
    simpson38_from_samples,
    simpson38_nodes,
    simpson38_weights,
)
from fmekit.predictor import AnalyticPredictor, LinearModel

EPS4 = Fraction(1, 69120)  # 4-panel quadrature error on the t^4 term


def quad_nlm_expected(n_panels: int) -> float:
    # quadrature error on a unit t^4 term scales with panels as n^-4
    eps = EPS4 * Fraction(4, n_panels) ** 4
    return float(1 - (Fraction(1, 30) + eps) / (Fraction(4, 45) + eps))


def hump_nlm_expected(n_panels: int) -> float:
    # path t(1-t): secant is flat zero, mean 1/6, true measure -5
    eps = EPS4 * Fraction(4, n_panels) ** 4
    return float(1 - (Fraction(1, 30) + eps) / (Fraction(1, 180) + eps))


def test_weights_single_panel():
    w = simpson38_weights(1)
    assert np.array_equal(w, np.array([1.0, 3.0, 3.0, 1.0]) / 8.0)


def test_weights_two_panels_share_boundary_node():
    w = simpson38_weights(2)
    assert np.array_equal(
        w, np.array([1.0, 3.0, 3.0, 2.0, 3.0, 3.0, 1.0]) / 16.0
    )


@pytest.mark.parametrize("n", [1, 2, 3, 7, 64])
def test_weights_sum_to_interval_length(n):
    assert simpson38_weights(n, 0.0, 1.0).sum() == pytest.approx(1.0, rel=1e-15)
    assert simpson38_weights(n, -2.0, 5.0).sum() == pytest.approx(7.0, rel=1e-15)


def test_nodes_hit_endpoints_exactly():
    nodes = simpson38_nodes(4, 0.0, 1.0)
    assert nodes[0] == 0.0 and nodes[-1] == 1.0
    assert nodes.shape == (13,)
    nodes = simpson38_nodes(2, -1.0, 3.0)
    assert nodes[0] == -1.0 and nodes[-1] == 3.0


@pytest.mark.parametrize("n", [1, 2, 5])
def test_rule_is_exact_for_cubics(n):
    # int of 2x^3 - x^2 + 3x - 4 over [0, 2] is 8 - 8/3 + 6 - 8
    val = simpson38(lambda x: 2 * x**3 - x**2 + 3 * x - 4, 0.0, 2.0, n)
    assert val == pytest.approx(8 - 8 / 3 + 6 - 8, rel=1e-14)


def test_quartic_error_is_the_known_constant():
    err = simpson38(lambda x: x**4, 0.0, 1.0, 4) - 0.2
    assert err == pytest.approx(float(EPS4), rel=1e-10)


def test_quartic_error_shrinks_fourth_order():
    e4 = simpson38(lambda x: x**4, 0.0, 1.0, 4) - 0.2
    e8 = simpson38(lambda x: x**4, 0.0, 1.0, 8) - 0.2
    assert e8 == pytest.approx(e4 / 16.0, rel=1e-6)


def test_integrator_calls_f_exactly_3n_plus_1_times():
    calls = []

    def f(x):
        calls.append(x)
        return x

    simpson38(f, 0.0, 1.0, 5)
    assert len(calls) == 16


def test_integrator_rejects_bad_interval():
    with pytest.raises(ValidationError):
        simpson38(lambda x: x, 1.0, 1.0)
    with pytest.raises(ValidationError):
        simpson38(lambda x: x, 2.0, 1.0)


def test_from_samples_matches_callable_form():
    nodes = simpson38_nodes(3, 0.0, 2.0)
    direct = simpson38(lambda x: x**4 - x, 0.0, 2.0, 3)
    sampled = simpson38_from_samples(nodes**4 - nodes, 0.0, 2.0)
    assert sampled == direct


@pytest.mark.parametrize("k", [0, 1, 2, 3, 5, 6, 12])
def test_from_samples_rejects_wrong_length(k):
    if (k - 1) % 3 == 0 and k >= 4:
        simpson38_from_samples(np.zeros(k), 0.0, 1.0)
    else:
        with pytest.raises(ValidationError, match="3n\\+1"):
            simpson38_from_samples(np.zeros(k), 0.0, 1.0)


def grid(n):
    return np.arange(3 * n + 1) / (3.0 * n)


def test_nlm_quadratic_path_default_panels():
    t = grid(4)
    value = nlm_from_path_values(t**2)
    assert value == pytest.approx(quad_nlm_expected(4), rel=1e-13)
    assert value == pytest.approx(0.6248982912937348, rel=1e-13)


def test_nlm_hump_path_is_strongly_negative():
    t = grid(4)
    value = nlm_from_path_values(t * (1.0 - t))
    assert value == pytest.approx(hump_nlm_expected(4), rel=1e-12)
    assert value < -4.9


@pytest.mark.parametrize("n,tol", [(4, 1.1e-4), (16, 5e-7), (64, 1.6e-9)])
def test_nlm_converges_to_five_eighths(n, tol):
    t = grid(n)
    assert abs(nlm_from_path_values(t**2) - 0.625) <= tol


def test_nlm_linear_path_is_one():
    t = grid(4)
    assert nlm_from_path_values(3.0 * t - 1.0) == 1.0


def test_nlm_constant_path_is_one():
    assert nlm_from_path_values(np.full(13, 7.5)) == 1.0


def test_nlm_undefined_when_only_denominator_degenerates():
    # large level squashes the threshold test: num stays meaningful,
    # den falls below 1e-12 * f0^2
    t = grid(4)
    value = nlm_from_path_values(1e6 + 10.0 * t * (1.0 - t))
    assert np.isnan(value)


def test_nlm_batched_matches_scalar_bitwise():
    t = grid(4)
    paths = np.column_stack([t**2, t * (1 - t), np.sin(3 * t), t**3 - t])
    batched = nlm_from_path_values(paths)
    singles = np.array([nlm_from_path_values(paths[:, j]) for j in range(4)])
    assert batched.tobytes() == singles.tobytes()


def test_nlm_rejects_wrong_grid_length():
    with pytest.raises(ValidationError, match="3n\\+1"):
        nlm_from_path_values(np.zeros(5))
    with pytest.raises(ValidationError):
        nlm_from_path_values(np.zeros(3))


def test_nlm_shift_and_scale_invariance():
    t = grid(4)
    base = nlm_from_path_values(t**2)
    shifted = nlm_from_path_values(t**2 + 100.0)
    scaled = nlm_from_path_values(-40.0 * t**2)
    assert shifted == pytest.approx(base, rel=1e-9)
    assert scaled == pytest.approx(base, rel=1e-9)


def test_compute_nlm_quadratic_model():
    model = AnalyticPredictor("temp^2")
    path = PathContext(origin={"temp": 0.0}, step=NumericStep({"temp": 1.0}))
    assert compute_nlm(model, path) == pytest.approx(quad_nlm_expected(4),
                                                     rel=1e-13)
    finer = compute_nlm(model, path, settings=NlmSettings(n_subintervals=64))
    assert abs(finer - 0.625) <= 1.6e-9


def test_compute_nlm_uses_one_batched_prediction():
    calls = []
    inner = AnalyticPredictor("temp^2")

    class Counting:
        schema = inner.schema

        def predict_batch(self, cols):
            calls.append(len(next(iter(cols.values()))))
            return inner.predict_batch(cols)

    path = PathContext(origin={"temp": 0.5}, step=NumericStep({"temp": 2.0}))
    compute_nlm(Counting(), path, settings=NlmSettings(n_subintervals=7))
    assert calls == [22]


def test_compute_nlm_holds_other_features_fixed():
    model = LinearModel(
        intercept=0.0,
        coefficients={"temp": 1.0},
        offsets={"weather": {"clear": 0.0, "rain": 50.0}},
    )
    path = PathContext(
        origin={"temp": 0.0, "weather": "rain"},
        step=NumericStep({"temp": 1.0}),
    )
    # linear in t regardless of the categorical offset
    assert compute_nlm(model, path) == 1.0


def test_compute_nlm_origin_validation():
    model = AnalyticPredictor("temp + hum")
    path = PathContext(origin={"temp": 0.0}, step=NumericStep({"temp": 1.0}))
    with pytest.raises(ValidationError, match="hum"):
        compute_nlm(model, path)


def test_compute_nlm_rejects_bad_settings():
    with pytest.raises(ValidationError):
        NlmSettings(n_subintervals=0).validate()
    model = AnalyticPredictor("temp")
    path = PathContext(origin={"temp": 0.0}, step=NumericStep({"temp": 1.0}))
    with pytest.raises(ValidationError):
        compute_nlm(model, path, settings=NlmSettings(n_subintervals=0))


def test_average_nlm_skips_undefined_entries():
    values = np.array([0.5, np.nan, 0.7])
    assert average_nlm(values) == pytest.approx(0.6)


def test_average_nlm_error_cases():
    with pytest.raises(ComputationError, match="undefined"):
        average_nlm(np.array([np.nan, np.nan]))
    with pytest.raises(ValidationError, match="no retained"):
        average_nlm(np.array([]))

    class Bare:
        nlm = None

    with pytest.raises(ValidationError, match="NLM enabled"):
        average_nlm(Bare())


def test_average_nlm_reads_result_attribute():
    class Holder:
        nlm = np.array([1.0, 0.0, np.nan])

    assert average_nlm(Holder()) == pytest.approx(0.5)


@hsettings(max_examples=60, deadline=None)
@given(
    coeffs=st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=5),
    n=st.integers(1, 6),
)
def test_nlm_never_exceeds_one(coeffs, n):
    t = grid(n)
    values = sum(c * t**k for k, c in enumerate(coeffs))
    values = np.asarray(values, dtype=np.float64) + 0.0
    out = nlm_from_path_values(values)
    assert np.isnan(out) or out <= 1.0 + 1e-12
