"""Forward marginal effects.

The forward marginal effect (FME) of an observation is the change in
prediction when a chosen step is added to it:

* numeric step: add h (one or more features at once) and take
  ``f(x + h) - f(x)``;
* categorical step: switch one feature to a reference level; rows
  already at the reference are not eligible.

Steps can be filtered for extrapolation: with the envelope method, a
shifted point whose numeric features leave the observed per-feature
[min, max] box (boundaries inclusive) is excluded from the retained set
and reported separately. Exclusion never changes the values of retained
effects. Optionally the non-linearity measure is computed per retained
row from one shared prediction grid along each path.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from fmekit.dataset import ColumnKind, Dataset, FeatureEnvelope, column_stats, envelope
from fmekit.errors import ComputationError, ValidationError
from fmekit.nlm import NlmSettings, nlm_from_path_values
from fmekit.predictor import Predictor


@dataclass(frozen=True)
class NumericStep:
    """Simultaneous additive steps, feature name -> finite nonzero h."""

    steps: dict[str, float]

    def __post_init__(self):
        if not isinstance(self.steps, Mapping) or not self.steps:
            raise ValidationError("numeric step needs at least one feature")
        clean = {}
        for name, h in self.steps.items():
            try:
                h = float(h)
            except (TypeError, ValueError):
                raise ValidationError(
                    f"step for {name!r} is not a number: {h!r}"
                ) from None
            if not np.isfinite(h) or h == 0.0:
                raise ValidationError(
                    f"step for {name!r} must be finite and nonzero, got {h}"
                )
            clean[str(name)] = h
        object.__setattr__(self, "steps", clean)

    def to_dict(self) -> dict:
        return {"steps": dict(self.steps)}

    def describe(self) -> str:
        return ", ".join(f"{k}, {v:g}" for k, v in self.steps.items())


@dataclass(frozen=True)
class CategoricalStep:
    """Switch ``feature`` to the ``reference`` level."""

    feature: str
    reference: str

    def __post_init__(self):
        if not self.feature or not isinstance(self.feature, str):
            raise ValidationError("categorical step needs a feature name")
        if not isinstance(self.reference, str):
            raise ValidationError("categorical step needs a reference level")

    def to_dict(self) -> dict:
        return {"feature": self.feature, "reference": self.reference}

    def describe(self) -> str:
        return f"{self.feature}, {self.reference}"


StepSpec = NumericStep | CategoricalStep


def parse_step(source) -> StepSpec:
    """Step from JSON text or an already-parsed mapping.

    ``{"steps": {feature: h, ...}}`` is a numeric step, as is the bare
    shorthand ``{"temp": 5}`` (every value a number);
    ``{"feature": name, "reference": level}`` is a categorical one.
    """
    if isinstance(source, str):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"step is not valid JSON: {exc}") from None
    if not isinstance(source, Mapping):
        raise ValidationError("step must be a JSON object")
    if "steps" in source:
        if not isinstance(source["steps"], Mapping):
            raise ValidationError("'steps' must map features to numbers")
        return NumericStep(dict(source["steps"]))
    if "feature" in source and "reference" in source:
        return CategoricalStep(str(source["feature"]), str(source["reference"]))
    if source and all(
        isinstance(v, (int, float)) and not isinstance(v, bool)
        for v in source.values()
    ):
        return NumericStep(dict(source))
    raise ValidationError(
        "step must be a feature-to-number object, a 'steps' object, "
        "or 'feature' and 'reference'"
    )


@dataclass(frozen=True)
class Envelope:
    """Extrapolation detection against the observed per-feature box of
    ``reference`` (default: the evaluation data itself)."""

    reference: Dataset | None = None


def detect_extrapolation(cols: Mapping[str, np.ndarray], env: FeatureEnvelope) -> np.ndarray:
    """Boolean flag per row: any numeric feature strictly outside its
    envelope interval. Boundary values are inside."""
    flags = None
    for name, (lo, hi) in env.numeric.items():
        col = np.asarray(cols[name], dtype=np.float64)
        out = (col < lo) | (col > hi)
        flags = out if flags is None else (flags | out)
    if flags is None:
        first = next(iter(cols.values()), np.empty(0))
        flags = np.zeros(np.asarray(first).shape[0], dtype=bool)
    return flags


@dataclass
class FmeResultSet:
    """Per-observation forward effects for one step.

    ``row_index`` holds the retained rows (ascending); ``fme`` and the
    optional ``nlm`` align with it (NaN marks an undefined NLM).
    ``n_total`` counts the rows eligible for the step: all rows for a
    numeric step, the rows not already at the reference level for a
    categorical one.
    """

    step: StepSpec
    ep_method: str
    n_total: int
    row_index: np.ndarray
    fme: np.ndarray
    nlm: np.ndarray | None
    extrapolated_rows: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n_retained(self) -> int:
        return int(self.row_index.shape[0])

    @property
    def n_extrapolation(self) -> int:
        return int(self.extrapolated_rows.shape[0])

    def to_dict(self) -> dict:
        rows = []
        for i in range(self.n_retained):
            entry = {"row": int(self.row_index[i]), "fme": float(self.fme[i])}
            if self.nlm is not None:
                v = float(self.nlm[i])
                entry["nlm"] = v if np.isfinite(v) else None
            rows.append(entry)
        return {
            "step": self.step.to_dict(),
            "ep_method": self.ep_method,
            "n_total": self.n_total,
            "n_retained": self.n_retained,
            "n_extrapolation": self.n_extrapolation,
            "rows": rows,
            "extrapolated_rows": [int(r) for r in self.extrapolated_rows],
            "provenance": self.provenance,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")

    def to_csv(self, path) -> None:
        """Rows sorted by index: retained rows with their values, then
        excluded extrapolation points flagged true with empty values."""
        records = []
        for i in range(self.n_retained):
            if self.nlm is None:
                nlm_cell = ""
            else:
                v = float(self.nlm[i])
                nlm_cell = repr(v) if np.isfinite(v) else "NA"
            records.append(
                (int(self.row_index[i]), repr(float(self.fme[i])), nlm_cell, "false")
            )
        for r in self.extrapolated_rows:
            records.append((int(r), "", "", "true"))
        records.sort(key=lambda rec: rec[0])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_index", "fme", "nlm", "extrapolation"])
            writer.writerows(records)


def _validate_step(step: StepSpec, data: Dataset, model: Predictor) -> None:
    names = model.schema.names
    if isinstance(step, NumericStep):
        for f in step.steps:
            if f not in data.column_names:
                raise ValidationError(f"step feature {f!r} not in data")
            if data.kind(f) is not ColumnKind.NUMERIC:
                raise ValidationError(f"step feature {f!r} is not numeric")
            if f not in names:
                raise ValidationError(f"step feature {f!r} not in model schema")
            if model.schema.spec(f).kind is not ColumnKind.NUMERIC:
                raise ValidationError(f"model treats {f!r} as categorical")
    else:
        f = step.feature
        if f not in data.column_names:
            raise ValidationError(f"step feature {f!r} not in data")
        if data.kind(f) is not ColumnKind.CATEGORICAL:
            raise ValidationError(f"step feature {f!r} is not categorical")
        if f not in names:
            raise ValidationError(f"step feature {f!r} not in model schema")
        if model.schema.spec(f).kind is not ColumnKind.CATEGORICAL:
            raise ValidationError(f"model treats {f!r} as numeric")
        if step.reference not in data.levels(f):
            raise ValidationError(
                f"reference level {step.reference!r} not observed in {f!r}"
            )


def _chunks(indices: np.ndarray, jobs: int) -> list[np.ndarray]:
    if jobs <= 1 or indices.shape[0] <= 1:
        return [indices]
    return [c for c in np.array_split(indices, jobs) if c.shape[0]]


def compute_fme(
    model: Predictor,
    data: Dataset,
    step: StepSpec,
    ep: Envelope | None = None,
    with_nlm: bool = False,
    nlm_settings: NlmSettings = NlmSettings(),
    jobs: int = 1,
) -> FmeResultSet:
    """Forward marginal effect of ``step`` for every eligible row.

    ``ep=Envelope(...)`` excludes rows whose shifted point leaves the
    observed feature box (numeric steps only; categorical steps always
    report method "none"). ``with_nlm`` adds the per-row non-linearity
    measure. ``jobs`` splits rows into chunks evaluated by a small
    thread pool; results are identical to the serial order.
    """
    if jobs < 1:
        raise ValidationError("jobs must be >= 1")
    if with_nlm and isinstance(step, CategoricalStep):
        raise ValidationError(
            "non-linearity is defined only for numeric steps"
        )
    nlm_settings.validate()
    _validate_step(step, data, model)
    cols, n = model._normalize(data)

    if isinstance(step, NumericStep):
        shifted = dict(cols)
        for f, h in step.steps.items():
            shifted[f] = cols[f] + h
        if ep is not None:
            reference = ep.reference if ep.reference is not None else data
            numeric_feats = [
                s.name for s in model.schema.features if s.kind is ColumnKind.NUMERIC
            ]
            for f in numeric_feats:
                if f not in reference.column_names or reference.kind(f) is not ColumnKind.NUMERIC:
                    raise ValidationError(
                        f"envelope reference lacks numeric feature {f!r}"
                    )
            env = envelope(reference, numeric_feats)
            flags = detect_extrapolation(shifted, env)
            ep_method = "envelope"
        else:
            flags = np.zeros(n, dtype=bool)
            ep_method = "none"
        eligible = np.arange(n, dtype=np.int64)
        retained = np.flatnonzero(~flags).astype(np.int64)
        excluded = np.flatnonzero(flags).astype(np.int64)
    else:
        labels = cols[step.feature]
        eligible = np.flatnonzero(labels != step.reference).astype(np.int64)
        retained = eligible
        excluded = np.empty(0, dtype=np.int64)
        ep_method = "none"

    if retained.shape[0] == 0:
        raise ComputationError("no rows retained for this step")

    stepped = step.steps if isinstance(step, NumericStep) else None
    K = 3 * nlm_settings.n_subintervals + 1
    t_grid = np.arange(K) / (3.0 * nlm_settings.n_subintervals)

    def run_chunk(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        base = {f: arr[rows] for f, arr in cols.items()}
        if stepped is None:
            ref_cols = dict(base)
            labels = np.array(base[step.feature], dtype=object)
            labels[:] = step.reference
            ref_cols[step.feature] = labels
            return model.predict_batch(ref_cols) - model.predict_batch(base), None
        if not with_nlm:
            shifted_cols = dict(base)
            for f, h in stepped.items():
                shifted_cols[f] = base[f] + h
            return model.predict_batch(shifted_cols) - model.predict_batch(base), None
        grid = np.empty((K, rows.shape[0]), dtype=np.float64)
        for k in range(K):
            point = dict(base)
            for f, h in stepped.items():
                point[f] = base[f] + t_grid[k] * h
            grid[k] = model.predict_batch(point)
        return grid[-1] - grid[0], nlm_from_path_values(grid)

    chunks = _chunks(retained, jobs)
    if len(chunks) == 1:
        parts = [run_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run_chunk, chunks))

    fme = np.concatenate([p[0] for p in parts])
    nlm = np.concatenate([p[1] for p in parts]) if with_nlm else None

    return FmeResultSet(
        step=step,
        ep_method=ep_method,
        n_total=int(eligible.shape[0]),
        row_index=retained,
        fme=fme,
        nlm=nlm,
        extrapolated_rows=excluded,
        provenance={
            "model": model.describe(),
            "data": data.name,
            "nlm_subintervals": nlm_settings.n_subintervals if with_nlm else None,
        },
    )


STEP_RULES = ("unit", "sd", "iqr", "mad")


def suggest_step(data: Dataset, feature: str, rule: str = "sd",
                 fraction: float = 0.25) -> float:
    """Step size for a numeric feature from a dispersion rule: ``unit``
    (1.0), ``sd``, ``iqr`` (``fraction`` of it), or ``mad``."""
    if rule not in STEP_RULES:
        raise ValidationError(f"unknown step rule {rule!r}; choose from {STEP_RULES}")
    if rule == "unit":
        data.numeric(feature)
        return 1.0
    stats = column_stats(data, feature)
    if rule == "sd":
        value = stats.sd
    elif rule == "iqr":
        if not fraction > 0:
            raise ValidationError("iqr fraction must be positive")
        value = fraction * stats.iqr
    else:
        value = stats.median_abs_dev
    if value == 0.0:
        raise ComputationError(
            f"feature {feature!r} has zero dispersion under rule {rule!r}"
        )
    return float(value)
