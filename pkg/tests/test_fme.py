"""Per-observation forward effects: steps, extrapolation, serialization."""

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from fmekit.dataset import ColumnKind, Dataset, envelope
from fmekit.errors import ComputationError, ValidationError
from fmekit.fme import (
    CategoricalStep,
    Envelope,
    NumericStep,
    compute_fme,
    detect_extrapolation,
    parse_step,
    suggest_step,
)
from fmekit.nlm import NlmSettings
from fmekit.predictor import AnalyticPredictor, LinearModel


QUAD_NLM_N4 = 0.6248982912937348  # t^2 path, 4-panel quadrature


def quad_model():
    return AnalyticPredictor("temp^2")


def linear_mixed_model():
    return LinearModel(
        intercept=0.5,
        coefficients={"temp": 2.0},
        offsets={"weather": {"clear": 0.0, "misty": 1.0, "rain": -2.0}},
    )


def test_numeric_fme_is_shifted_minus_base(numeric_data):
    model = AnalyticPredictor("temp^2 + hum*wind")
    step = NumericStep({"temp": 5.0})
    result = compute_fme(model, numeric_data, step)
    cols = numeric_data.columns_mapping(["temp", "hum", "wind"])
    shifted = dict(cols, temp=cols["temp"] + 5.0)
    expected = model.predict_batch(shifted) - model.predict_batch(cols)
    assert result.fme.tobytes() == expected.tobytes()
    assert result.n_total == numeric_data.n_rows
    assert result.n_retained == numeric_data.n_rows
    assert result.ep_method == "none"
    assert result.extrapolated_rows.size == 0


def test_multi_feature_step(numeric_data):
    model = AnalyticPredictor("temp*hum + wind")
    step = NumericStep({"temp": 2.0, "hum": -0.25})
    result = compute_fme(model, numeric_data, step)
    cols = numeric_data.columns_mapping(["temp", "hum", "wind"])
    shifted = dict(cols, temp=cols["temp"] + 2.0, hum=cols["hum"] - 0.25)
    expected = model.predict_batch(shifted) - model.predict_batch(cols)
    assert result.fme.tobytes() == expected.tobytes()


def test_fme_identical_with_and_without_nlm(numeric_data):
    model = AnalyticPredictor("temp^2 + hum")
    step = NumericStep({"temp": 1.5})
    plain = compute_fme(model, numeric_data, step)
    with_n = compute_fme(model, numeric_data, step, with_nlm=True)
    assert plain.fme.tobytes() == with_n.fme.tobytes()
    assert with_n.nlm is not None and with_n.nlm.shape == with_n.fme.shape


def test_nlm_matches_quadratic_reference():
    data = Dataset("d", [("temp", ColumnKind.NUMERIC, np.array([0.0]))])
    result = compute_fme(quad_model(), data, NumericStep({"temp": 1.0}),
                         with_nlm=True)
    assert result.nlm[0] == pytest.approx(QUAD_NLM_N4, rel=1e-12)


def test_linear_model_nlm_is_one(numeric_data):
    model = AnalyticPredictor("3*temp - 2*hum + 0.5*wind")
    step = NumericStep({"temp": 4.0, "hum": 0.1})
    result = compute_fme(model, numeric_data, step, with_nlm=True)
    assert np.all(result.nlm > 1.0 - 1e-9)


def envelope_data():
    temp = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    hum = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    return Dataset(
        "env",
        [("temp", ColumnKind.NUMERIC, temp), ("hum", ColumnKind.NUMERIC, hum)],
    )


def test_envelope_exclusion_matches_row_by_row_oracle():
    data = envelope_data()
    model = AnalyticPredictor("temp + hum")
    step = NumericStep({"temp": 1.0})
    result = compute_fme(model, data, step, ep=Envelope())

    cols = data.columns_mapping(["temp", "hum"])
    box = {f: (cols[f].min(), cols[f].max()) for f in cols}
    flagged = []
    for i in range(data.n_rows):
        shifted = {"temp": cols["temp"][i] + 1.0, "hum": cols["hum"][i]}
        if any(not box[f][0] <= shifted[f] <= box[f][1] for f in shifted):
            flagged.append(i)
    assert list(result.extrapolated_rows) == flagged == [5]
    assert list(result.row_index) == [0, 1, 2, 3, 4]
    assert result.ep_method == "envelope"
    assert result.n_total == 6
    assert result.n_retained == 5
    assert result.n_extrapolation == 1


def test_envelope_boundary_point_is_retained():
    data = envelope_data()
    model = AnalyticPredictor("temp")
    # temp=4 shifts exactly onto the observed max of 5: inside
    result = compute_fme(model, data, NumericStep({"temp": 1.0}), ep=Envelope())
    assert 4 in result.row_index


def test_envelope_reference_dataset_overrides_box():
    data = envelope_data()
    model = AnalyticPredictor("temp + hum")
    step = NumericStep({"temp": 1.0})
    wide = Dataset(
        "wide",
        [("temp", ColumnKind.NUMERIC, np.array([-10.0, 50.0])),
         ("hum", ColumnKind.NUMERIC, np.array([0.0, 1.0]))],
    )
    result = compute_fme(model, data, step, ep=Envelope(reference=wide))
    assert result.n_extrapolation == 0
    narrow = Dataset(
        "narrow",
        [("temp", ColumnKind.NUMERIC, np.array([0.0, 3.5])),
         ("hum", ColumnKind.NUMERIC, np.array([0.0, 1.0]))],
    )
    result = compute_fme(model, data, step, ep=Envelope(reference=narrow))
    # shifted temp is 1..6; anything above 3.5 falls outside
    assert list(result.extrapolated_rows) == [3, 4, 5]


def test_envelope_checks_unstepped_features_too():
    data = envelope_data()
    model = AnalyticPredictor("temp + hum")
    ref = Dataset(
        "ref",
        [("temp", ColumnKind.NUMERIC, np.array([-100.0, 100.0])),
         ("hum", ColumnKind.NUMERIC, np.array([0.25, 1.0]))],
    )
    result = compute_fme(model, data, NumericStep({"temp": 1.0}),
                         ep=Envelope(reference=ref))
    # hum is not stepped, but rows 0 and 1 sit below the reference box
    assert list(result.extrapolated_rows) == [0, 1]


def test_envelope_reference_missing_feature_errors():
    data = envelope_data()
    model = AnalyticPredictor("temp + hum")
    ref = Dataset("ref", [("temp", ColumnKind.NUMERIC, np.array([0.0, 9.0]))])
    with pytest.raises(ValidationError, match="hum"):
        compute_fme(model, data, NumericStep({"temp": 1.0}),
                    ep=Envelope(reference=ref))


def test_detect_extrapolation_no_numeric_features():
    env = envelope(envelope_data(), [])
    flags = detect_extrapolation({"temp": np.array([99.0, -99.0])}, env)
    assert not flags.any()


def test_categorical_fme_and_eligibility(mixed_data):
    model = linear_mixed_model()
    step = CategoricalStep(feature="weather", reference="clear")
    result = compute_fme(model, mixed_data, step, ep=Envelope())
    labels = mixed_data.labels("weather")
    eligible = np.flatnonzero(labels != "clear")
    assert np.array_equal(result.row_index, eligible)
    assert result.n_total == eligible.size
    assert result.ep_method == "none"
    assert result.extrapolated_rows.size == 0
    cols = mixed_data.columns_mapping(["temp", "weather"])
    base = {k: v[eligible] for k, v in cols.items()}
    ref = dict(base, weather=np.full(eligible.size, "clear", dtype=object))
    expected = model.predict_batch(ref) - model.predict_batch(base)
    assert result.fme.tobytes() == expected.tobytes()


def test_categorical_all_rows_at_reference_errors():
    data = Dataset(
        "one",
        [("temp", ColumnKind.NUMERIC, np.zeros(4)),
         ("weather", ColumnKind.CATEGORICAL, ["clear"] * 4)],
    )
    model = linear_mixed_model()
    with pytest.raises(ComputationError, match="no rows retained"):
        compute_fme(data=data, model=model,
                    step=CategoricalStep(feature="weather", reference="clear"))


def test_categorical_step_rejects_nlm(mixed_data):
    with pytest.raises(ValidationError, match="numeric"):
        compute_fme(linear_mixed_model(), mixed_data,
                    CategoricalStep(feature="weather", reference="clear"),
                    with_nlm=True)


def test_jobs_produce_identical_results(numeric_data):
    model = AnalyticPredictor("temp^2 - hum*3")
    step = NumericStep({"temp": 2.0})
    serial = compute_fme(model, numeric_data, step, with_nlm=True, jobs=1)
    threaded = compute_fme(model, numeric_data, step, with_nlm=True, jobs=3)
    assert serial.fme.tobytes() == threaded.fme.tobytes()
    assert serial.nlm.tobytes() == threaded.nlm.tobytes()
    assert np.array_equal(serial.row_index, threaded.row_index)
    with pytest.raises(ValidationError, match="jobs"):
        compute_fme(model, numeric_data, step, jobs=0)


def test_step_validation_errors(numeric_data, mixed_data):
    model = AnalyticPredictor("temp + hum")
    with pytest.raises(ValidationError, match="not in data"):
        compute_fme(model, numeric_data, NumericStep({"pressure": 1.0}))
    with pytest.raises(ValidationError, match="not numeric"):
        compute_fme(linear_mixed_model(), mixed_data,
                    NumericStep({"weather": 1.0}))
    with pytest.raises(ValidationError, match="not in model schema"):
        compute_fme(model, numeric_data, NumericStep({"wind": 1.0}))
    with pytest.raises(ValidationError, match="not categorical"):
        compute_fme(linear_mixed_model(), mixed_data,
                    CategoricalStep(feature="temp", reference="x"))
    with pytest.raises(ValidationError, match="not observed"):
        compute_fme(linear_mixed_model(), mixed_data,
                    CategoricalStep(feature="weather", reference="hail"))


def test_step_constructor_validation():
    with pytest.raises(ValidationError):
        NumericStep({})
    with pytest.raises(ValidationError):
        NumericStep({"temp": 0.0})
    with pytest.raises(ValidationError):
        NumericStep({"temp": math.nan})
    with pytest.raises(ValidationError):
        CategoricalStep(feature="", reference="a")


def test_parse_step_forms():
    s = parse_step({"steps": {"temp": 5, "hum": -0.5}})
    assert isinstance(s, NumericStep)
    assert s.steps == {"temp": 5.0, "hum": -0.5}
    s = parse_step({"feature": "weather", "reference": "clear"})
    assert isinstance(s, CategoricalStep)
    assert (s.feature, s.reference) == ("weather", "clear")
    s = parse_step({"temp": 5})
    assert isinstance(s, NumericStep)
    assert s.steps == {"temp": 5.0}
    for bad in ({}, {"temp": True}, {"temp": "big"}, ["temp"], "temp=5"):
        with pytest.raises(ValidationError):
            parse_step(bad)


def test_result_to_csv_layout(tmp_path):
    data = envelope_data()
    model = AnalyticPredictor("temp^2")
    result = compute_fme(model, data, NumericStep({"temp": 1.0}),
                         ep=Envelope(), with_nlm=True)
    path = tmp_path / "fme.csv"
    result.to_csv(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row_index", "fme", "nlm", "extrapolation"]
    assert [r[0] for r in rows[1:]] == [str(i) for i in range(6)]
    for r in rows[1:6]:
        assert r[3] == "false"
        assert float(r[1]) == pytest.approx(2 * float(r[0]) + 1)
    assert rows[6] == ["5", "", "", "true"]


def test_result_csv_marks_undefined_nlm(tmp_path):
    data = Dataset("d", [("temp", ColumnKind.NUMERIC, np.array([0.0, 1.0]))])
    model = AnalyticPredictor("temp*0 + 7")  # constant: NLM undefined? no, both tiny
    result = compute_fme(model, data, NumericStep({"temp": 1.0}), with_nlm=True)
    # flat path: numerator and denominator both below threshold, defined as 1
    assert np.all(result.nlm == 1.0)
    result.nlm[0] = np.nan
    path = tmp_path / "fme.csv"
    result.to_csv(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[1][2] == "NA"
    assert rows[2][2] == repr(1.0)


def test_result_to_json_nan_becomes_null(tmp_path):
    data = Dataset("d", [("temp", ColumnKind.NUMERIC, np.array([0.0, 1.0]))])
    model = AnalyticPredictor("temp^2")
    result = compute_fme(model, data, NumericStep({"temp": 1.0}), with_nlm=True)
    result.nlm[1] = np.nan
    path = tmp_path / "fme.json"
    result.to_json(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert doc["rows"][1]["nlm"] is None
    assert doc["rows"][0]["nlm"] == pytest.approx(QUAD_NLM_N4, rel=1e-12)
    assert doc["n_total"] == 2
    assert doc["step"] == {"steps": {"temp": 1.0}}


def test_suggest_step_rules():
    vals = np.arange(1.0, 101.0)
    data = Dataset("d", [("x", ColumnKind.NUMERIC, vals)])
    assert suggest_step(data, "x", rule="unit") == 1.0
    assert suggest_step(data, "x", rule="sd") == pytest.approx(np.std(vals, ddof=1))
    # quartiles by linear interpolation: q25 = 25.75, q75 = 75.25
    assert suggest_step(data, "x", rule="iqr") == pytest.approx(0.25 * 49.5)
    assert suggest_step(data, "x", rule="iqr", fraction=0.5) == pytest.approx(
        0.5 * 49.5)
    med = np.median(np.abs(vals - np.median(vals)))
    assert suggest_step(data, "x", rule="mad") == pytest.approx(med)
    with pytest.raises(ValidationError, match="unknown step rule"):
        suggest_step(data, "x", rule="range")
    with pytest.raises(ValidationError, match="positive"):
        suggest_step(data, "x", rule="iqr", fraction=0.0)
    flat = Dataset("f", [("x", ColumnKind.NUMERIC, np.full(10, 3.0))])
    with pytest.raises(ComputationError, match="zero dispersion"):
        suggest_step(flat, "x", rule="sd")


def test_step_describe():
    assert NumericStep({"temp": 5.0}).describe() == "temp, 5"
    assert "weather" in CategoricalStep(feature="weather",
                                        reference="clear").describe()


@hsettings(max_examples=40, deadline=None)
@given(
    coef=st.floats(-5, 5, allow_nan=False),
    h=st.floats(0.1, 10, allow_nan=False),
    x0=st.floats(-20, 20, allow_nan=False),
)
def test_linear_fme_equals_slope_times_step(coef, h, x0):
    model = LinearModel(intercept=1.0, coefficients={"x": coef}, offsets={})
    data = Dataset("d", [("x", ColumnKind.NUMERIC, np.array([x0]))])
    result = compute_fme(model, data, NumericStep({"x": h}))
    expected = (1.0 + coef * (x0 + h)) - (1.0 + coef * x0)
    assert result.fme[0] == expected
