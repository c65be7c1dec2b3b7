"""Non-linearity measure for forward effects.

A forward effect summarizes a prediction change by its endpoints. The
non-linearity measure (NLM) asks how well the straight secant between
those endpoints describes the prediction along the whole path

    gamma(t) = x + t * h,  t in [0, 1].

It is an R-squared style ratio: 1 minus the integrated squared deviation
between prediction and secant, normalized by the integrated squared
deviation between prediction and its path mean. 1 means exactly linear;
0 means the secant explains no more than the mean; values below 0 mean
it explains less. All integrals share one grid of predictions and are
evaluated with the composite Simpson 3/8 rule.

Two closed forms pin the implementation down. For predictions t^2 along
the path, the secant is t and the mean is 1/3, so

    NLM = 1 - [int (t^2-t)^2 dt] / [int (t^2-1/3)^2 dt]
        = 1 - (1/30) / (4/45) = 5/8.

For predictions t(1-t) (a parabola through equal endpoints) the secant
is the zero line and the mean is 1/6, giving

    NLM = 1 - (1/30) / (1/180) = -5.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from fmekit.dataset import ColumnKind
from fmekit.errors import ComputationError, ValidationError

DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True)
class NlmSettings:
    """``n_subintervals`` panels of the 3/8 rule, 3n+1 grid nodes."""

    n_subintervals: int = 4

    def validate(self):
        if self.n_subintervals < 1:
            raise ValidationError("n_subintervals must be >= 1")


@dataclass(frozen=True)
class PathContext:
    """A straight path: origin row (all model features) plus the step to
    add. Only numeric steps define a path."""

    origin: Mapping[str, object]
    step: "NumericStep"  # noqa: F821 - imported lazily to avoid a cycle


def simpson38_weights(n: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """Node weights of the composite Simpson 3/8 rule on [a, b].

    n panels, 3n+1 nodes; each panel contributes (H/8)[1, 3, 3, 1] and
    interior panel boundaries accumulate weight from both sides.
    """
    if n < 1:
        raise ValidationError("need at least one panel")
    units = np.zeros(3 * n + 1, dtype=np.float64)
    panel = np.array([1.0, 3.0, 3.0, 1.0])
    for p in range(n):
        units[3 * p : 3 * p + 4] += panel
    return units * ((b - a) / (8.0 * n))


def simpson38_nodes(n: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """Grid nodes a + (k / 3n)(b - a); endpoints are exact for [0, 1]."""
    return a + (np.arange(3 * n + 1) / (3.0 * n)) * (b - a)


def _integrate(weights: np.ndarray, values: np.ndarray):
    """Weighted sum along axis 0, accumulated node by node so scalar and
    batched callers round identically."""
    V = values if values.ndim == 2 else values[:, None]
    acc = np.zeros(V.shape[1], dtype=np.float64)
    for k in range(weights.shape[0]):
        acc = acc + weights[k] * V[k]
    return acc if values.ndim == 2 else float(acc[0])


def simpson38(f, a: float, b: float, n_subintervals: int = 1) -> float:
    """Integrate ``f`` over [a, b]; exactly 3n+1 evaluations of ``f``."""
    if not a < b:
        raise ValidationError(f"need a < b, got [{a}, {b}]")
    nodes = simpson38_nodes(n_subintervals, a, b)
    values = np.array([float(f(x)) for x in nodes], dtype=np.float64)
    return _integrate(simpson38_weights(n_subintervals, a, b), values)


def simpson38_from_samples(values, a: float, b: float) -> float:
    """Composite 3/8 rule over already-sampled equispaced values; the
    sample count must be 3n+1 for some n >= 1."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 4 or (values.shape[0] - 1) % 3:
        raise ValidationError(
            f"sample count must be 3n+1 for n >= 1, got {values.shape[0]}"
        )
    n = (values.shape[0] - 1) // 3
    return _integrate(simpson38_weights(n, a, b), values)


def nlm_from_path_values(values: np.ndarray) -> np.ndarray:
    """NLM for each column of a (3n+1, m) prediction grid along paths.

    Row k holds predictions at t = k/(3n). Returns one NLM per column;
    NaN marks the undefined case (numerator meaningful but denominator
    below the degeneracy threshold).
    """
    F = np.asarray(values, dtype=np.float64)
    one_path = F.ndim == 1
    if one_path:
        F = F[:, None]
    K = F.shape[0]
    if K < 4 or (K - 1) % 3:
        raise ValidationError(f"grid length must be 3n+1, got {K}")
    n = (K - 1) // 3
    w = simpson38_weights(n)
    t = np.arange(K) / (3.0 * n)

    f0 = F[0]
    fme = F[-1] - F[0]
    secant = f0 + t[:, None] * fme
    num = _integrate(w, (F - secant) ** 2)
    f_mean = _integrate(w, F)
    den = _integrate(w, (F - f_mean) ** 2)

    thresh = DEGENERACY_RTOL * np.maximum(1.0, f0 * f0)
    out = np.empty(F.shape[1], dtype=np.float64)
    ok = den >= thresh
    np.divide(num, den, out=out, where=ok)
    out[ok] = 1.0 - out[ok]
    out[~ok & (num < thresh)] = 1.0
    out[~ok & (num >= thresh)] = np.nan
    return out[0] if one_path else out


def compute_nlm(model, path: PathContext, settings: NlmSettings = NlmSettings()) -> float:
    """NLM of one observation's path under ``model``.

    Builds the shared 3n+1 grid, asks the model for all predictions in
    one batch, and reuses them for the numerator, the path mean, and the
    denominator. Returns NaN when undefined.
    """
    from fmekit.fme import NumericStep  # local import, fme builds on nlm

    settings.validate()
    step = path.step
    if not isinstance(step, NumericStep):
        raise ValidationError("non-linearity is defined only for numeric steps")
    K = 3 * settings.n_subintervals + 1
    t = np.arange(K) / (3.0 * settings.n_subintervals)
    cols: dict[str, np.ndarray] = {}
    for spec in model.schema.features:
        if spec.name not in path.origin:
            raise ValidationError(f"path origin lacks model feature {spec.name!r}")
        value = path.origin[spec.name]
        if spec.kind is ColumnKind.NUMERIC:
            x = float(value)
            h = step.steps.get(spec.name, 0.0)
            cols[spec.name] = x + t * h if h else np.full(K, x)
        else:
            cols[spec.name] = np.full(K, str(value), dtype=object)
    grid = model.predict_batch(cols)
    return float(nlm_from_path_values(grid))


def average_nlm(results) -> float:
    """Mean NLM over rows where it is defined.

    Accepts an effects result set (its ``nlm`` field) or a plain array.
    Undefined entries (NaN) are excluded; raises if there is nothing to
    average.
    """
    values = getattr(results, "nlm", results)
    if values is None:
        raise ValidationError("result set has no NLM values; compute with NLM enabled")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("no retained observations to average")
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ComputationError("NLM is undefined for every retained observation")
    return float(np.mean(finite))
