"""Aggregation of per-observation effects into model summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from fmekit.dataset import ColumnKind, Dataset
from fmekit.errors import ValidationError
from fmekit.fme import CategoricalStep, Envelope, FmeResultSet, NumericStep, compute_fme
from fmekit.predictor import Predictor


def ame(results: FmeResultSet) -> float:
    """Average marginal effect: mean FME over the retained rows."""
    if results.n_retained == 0:
        raise ValidationError("result set has no retained rows")
    return float(np.mean(results.fme))


def _sd(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.shape[0] > 1 else 0.0


def default_step(data: Dataset, feature: str) -> float:
    """1.0, or 0.01 for features whose observed range is at most 1."""
    col = data.numeric(feature)
    return 0.01 if float(col.max()) - float(col.min()) <= 1.0 else 1.0


@dataclass(frozen=True)
class AmeRow:
    feature: str
    step: float | str  # step size, or level name for categorical steps
    ame: float
    sd: float
    q25: float
    q75: float
    n: int


@dataclass
class AmeTable:
    """One row per numeric feature and per observed categorical level."""

    rows: list[AmeRow]
    provenance: dict = field(default_factory=dict)

    HEADERS = ("Feature", "step.size", "AME", "SD", "0.25", "0.75", "n")

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "rows": [
                {
                    "feature": r.feature,
                    "step": r.step,
                    "ame": r.ame,
                    "sd": r.sd,
                    "q25": r.q25,
                    "q75": r.q75,
                    "n": r.n,
                }
                for r in self.rows
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "step_size", "ame", "sd", "q25", "q75", "n"])
            for r in self.rows:
                step = r.step if isinstance(r.step, str) else repr(float(r.step))
                writer.writerow(
                    [r.feature, step, repr(r.ame), repr(r.sd), repr(r.q25), repr(r.q75), r.n]
                )

    def to_text(self) -> str:
        cells = []
        for i, r in enumerate(self.rows, start=1):
            step = r.step if isinstance(r.step, str) else f"{r.step:g}"
            cells.append(
                (
                    str(i), r.feature, step, _fmt4(r.ame), _fmt4(r.sd),
                    _fmt4(r.q25), _fmt4(r.q75), str(r.n),
                )
            )
        header = ("",) + tuple(self.HEADERS)
        widths = [
            max(len(header[j]), *(len(row[j]) for row in cells)) if cells else len(header[j])
            for j in range(len(header))
        ]
        lines = ["Model Summary Using Average Marginal Effects:", ""]

        def fmt(row):
            first, rest = row[0], row[1:]
            tail = " ".join(c.rjust(w) for c, w in zip(rest, widths[1:]))
            return (first.ljust(widths[0]) + " " + tail).rstrip()

        lines.append(fmt(header))
        for row in cells:
            lines.append(fmt(row))
        return "\n".join(lines) + "\n"


def _fmt4(x: float) -> str:
    """Four decimals with trailing zeros trimmed; no negative zero."""
    text = f"{x:.4f}".rstrip("0").rstrip(".")
    return "0" if text == "-0" else text


def ame_table(
    model: Predictor,
    data: Dataset,
    features: Sequence[str] | None = None,
    steps: Mapping[str, float] | None = None,
    ep: Envelope | None = None,
) -> AmeTable:
    """AME summary across features.

    Numeric features get one row each, using ``steps[feature]`` when
    given and the default rule otherwise. Categorical features get one
    row per observed level, in level order, stepping the other rows to
    that level. Single-level categorical features are skipped (no row
    is eligible). Quantiles are the 0.25 and 0.75 linear-interpolation
    quantiles of the retained effects; SD uses ddof=1.
    """
    steps = dict(steps or {})
    if features is None:
        features = [f for f in data.feature_names if f in model.schema.names]
        if not features:
            raise ValidationError("no data features overlap the model schema")
    else:
        for f in features:
            if f not in data.column_names:
                raise ValidationError(f"no such feature: {f!r}")
            if f not in model.schema.names:
                raise ValidationError(f"feature {f!r} not in model schema")
    for f in steps:
        if f not in features:
            raise ValidationError(f"step given for {f!r}, which is not in features")

    rows: list[AmeRow] = []
    for f in features:
        if data.kind(f) is ColumnKind.NUMERIC:
            h = float(steps.get(f, default_step(data, f)))
            spec_list = [(h, NumericStep({f: h}))]
        else:
            if f in steps:
                raise ValidationError(f"feature {f!r} is categorical; steps do not apply")
            if len(data.levels(f)) < 2:
                continue
            spec_list = [(lvl, CategoricalStep(f, lvl)) for lvl in data.levels(f)]
        for display, step in spec_list:
            results = compute_fme(model, data, step, ep=ep)
            fme = results.fme
            rows.append(
                AmeRow(
                    feature=f,
                    step=display,
                    ame=float(np.mean(fme)),
                    sd=_sd(fme),
                    q25=float(np.quantile(fme, 0.25)),
                    q75=float(np.quantile(fme, 0.75)),
                    n=results.n_retained,
                )
            )
    return AmeTable(
        rows,
        provenance={
            "model": model.describe(),
            "data": data.name,
            "ep_method": "envelope" if ep is not None else "none",
        },
    )
