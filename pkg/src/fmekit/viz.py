"""Plot data and a small deterministic SVG renderer.

Plot payloads are plain data (hex bins, histograms, overlays) so other
frontends can draw them; ``render_svg`` is a dependency-free reference
renderer producing byte-stable output for fixed input.

Display convention: negative non-linearity values are clamped to zero
wherever NLM is shown (bin means, histograms, the ANLM overlay); the
analysis-side averages stay unclamped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from fmekit.dataset import ColumnKind, Dataset
from fmekit.errors import ValidationError
from fmekit.fme import CategoricalStep, FmeResultSet, NumericStep
from fmekit.nlm import average_nlm
from fmekit.partition import PartitionTree

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class HexBin:
    u: float
    v: float
    count: int
    mean_fme: float
    mean_nlm: float | None = None

    def to_dict(self):
        return {
            "u": self.u,
            "v": self.v,
            "count": self.count,
            "mean_fme": self.mean_fme,
            "mean_nlm": self.mean_nlm,
        }


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    mean: float

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    def to_dict(self):
        return {"edges": list(self.edges), "counts": list(self.counts), "mean": self.mean}


@dataclass
class PlotData:
    """Renderer-agnostic content of one effects plot."""

    kind: str
    axes: dict[str, str]
    bins: list[HexBin] | None = None
    fme_histogram: Histogram | None = None
    nlm_histogram: Histogram | None = None
    smoother: list[tuple[float, float]] | None = None
    arrows: list[dict] | None = None
    overlays: dict = field(default_factory=dict)
    tree: dict | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "axes": self.axes, "overlays": self.overlays}
        if self.bins is not None:
            out["bins"] = [b.to_dict() for b in self.bins]
        if self.fme_histogram is not None:
            out["fme_histogram"] = self.fme_histogram.to_dict()
        if self.nlm_histogram is not None:
            out["nlm_histogram"] = self.nlm_histogram.to_dict()
        if self.smoother is not None:
            out["smoother"] = [[u, v] for u, v in self.smoother]
        if self.arrows is not None:
            out["arrows"] = self.arrows
        if self.tree is not None:
            out["tree"] = self.tree
        return out

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")


# -- hexagonal binning ----------------------------------------------------


def _axial_round(qf: float, rf: float) -> tuple[int, int]:
    """Nearest hex on the axial lattice, by cube-coordinate rounding."""
    xf, zf = qf, rf
    yf = -xf - zf
    x, y, z = round(xf), round(yf), round(zf)
    dx, dy, dz = abs(x - xf), abs(y - yf), abs(z - zf)
    if dx > dy and dx > dz:
        x = -y - z
    elif dy > dz:
        pass  # y is never used for the axial pair
    else:
        z = -x - y
    return int(x), int(z)


def hexbin(u, v, fme, nlm=None, resolution: int = 20) -> list[HexBin]:
    """Assign points to a pointy-top hexagonal lattice.

    Coordinates are normalized to the unit square, the lattice spans
    ``resolution`` hex widths across it, and every point goes to the
    cell with the nearest center. Bin centers are returned in data
    coordinates; NLM means use display clamping.
    """
    if resolution < 1:
        raise ValidationError("resolution must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    fme = np.asarray(fme, dtype=np.float64)
    if u.shape != v.shape or u.shape != fme.shape or u.ndim != 1 or not u.shape[0]:
        raise ValidationError("hexbin needs equal-length non-empty u, v, fme")

    u0, u1 = float(u.min()), float(u.max())
    v0, v1 = float(v.min()), float(v.max())
    du = u1 - u0 or 1.0
    dv = v1 - v0 or 1.0
    x = (u - u0) / du if u1 > u0 else np.full_like(u, 0.5)
    y = (v - v0) / dv if v1 > v0 else np.full_like(v, 0.5)

    R = 1.0 / (SQRT3 * resolution)
    cells: dict[tuple[int, int], list] = {}
    clamped = None
    if nlm is not None:
        clamped = np.maximum(np.asarray(nlm, dtype=np.float64), 0.0)
    for i in range(u.shape[0]):
        qf = (SQRT3 / 3.0 * x[i] - y[i] / 3.0) / R
        rf = (2.0 / 3.0 * y[i]) / R
        key = _axial_round(qf, rf)
        cell = cells.setdefault(key, [0, 0.0, 0.0, 0])
        cell[0] += 1
        cell[1] += fme[i]
        if clamped is not None and np.isfinite(clamped[i]):
            cell[2] += clamped[i]
            cell[3] += 1

    out = []
    for (q, r), (count, fme_sum, nlm_sum, nlm_n) in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        cx = R * (SQRT3 * q + SQRT3 / 2.0 * r)
        cy = R * 1.5 * r
        out.append(
            HexBin(
                u=u0 + cx * du,
                v=v0 + cy * dv,
                count=count,
                mean_fme=fme_sum / count,
                mean_nlm=(nlm_sum / nlm_n) if nlm_n else None,
            )
        )
    return out


# -- histograms -----------------------------------------------------------


def freedman_diaconis_histogram(values) -> Histogram:
    """Histogram with Freedman-Diaconis bin widths (fallback to the
    Sturges count when the IQR is zero; one bin for constant data)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or not values.shape[0]:
        raise ValidationError("histogram needs a non-empty vector")
    n = values.shape[0]
    lo, hi = float(values.min()), float(values.max())
    mean = float(np.mean(values))
    if lo == hi:
        return Histogram(edges=(lo - 0.5, hi + 0.5), counts=(n,), mean=mean)
    iqr = float(np.quantile(values, 0.75) - np.quantile(values, 0.25))
    width = 2.0 * iqr / n ** (1.0 / 3.0)
    if width > 0.0:
        bins = max(1, min(512, math.ceil((hi - lo) / width)))
    else:
        bins = max(1, math.ceil(math.log2(n)) + 1)
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return Histogram(
        edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        mean=mean,
    )


# -- plot data builders ---------------------------------------------------


def _retained_feature(results: FmeResultSet, data: Dataset, name: str) -> np.ndarray:
    if name not in data.column_names or data.kind(name) is not ColumnKind.NUMERIC:
        raise ValidationError(f"feature {name!r} is not a numeric data column")
    return data.numeric(name)[results.row_index]


def _require_retained(results: FmeResultSet):
    if results.n_retained == 0:
        raise ValidationError("nothing to plot: no retained rows")


def _display_anlm(results: FmeResultSet) -> float | None:
    if results.nlm is None:
        return None
    finite = results.nlm[np.isfinite(results.nlm)]
    if finite.size == 0:
        return None
    return float(np.mean(np.maximum(finite, 0.0)))


def _overlays(results: FmeResultSet) -> dict:
    out = {"ame": float(np.mean(results.fme))}
    if results.nlm is not None:
        out["anlm"] = float(average_nlm(results))
        out["anlm_display"] = _display_anlm(results)
    return out


def _numeric_step_features(results: FmeResultSet, want: int | None = None) -> list[str]:
    step = results.step
    if not isinstance(step, NumericStep):
        raise ValidationError("this plot kind needs a numeric step")
    names = list(step.steps)
    if want is not None and len(names) != want:
        raise ValidationError(
            f"this plot kind needs exactly {want} stepped feature(s), got {len(names)}"
        )
    return names


def smoother_points(u, v, window_fraction: float = 0.1) -> list[tuple[float, float]]:
    """Centered moving average of v over u: at each distinct u, the mean
    of all v whose u lies within half a window."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    span = float(u.max()) - float(u.min())
    if span == 0.0:
        return [(float(u[0]), float(np.mean(v)))]
    half = window_fraction * span / 2.0
    order = np.argsort(u, kind="stable")
    us = u[order]
    vs = v[order]
    points = []
    for x in np.unique(us):
        lo = np.searchsorted(us, x - half, side="left")
        hi = np.searchsorted(us, x + half, side="right")
        points.append((float(x), float(np.mean(vs[lo:hi]))))
    return points


def univariate_plot_data(results: FmeResultSet, data: Dataset,
                         resolution: int = 20) -> PlotData:
    """Feature value against FME: hex bins shaded by count, a moving
    average line, the AME rule, and the step arrow."""
    _require_retained(results)
    (name,) = _numeric_step_features(results, want=1)
    u = _retained_feature(results, data, name)
    v = results.fme
    return PlotData(
        kind="univariate",
        axes={"u": name, "v": "FME"},
        bins=hexbin(u, v, fme=v, nlm=results.nlm, resolution=resolution),
        smoother=smoother_points(u, v),
        arrows=[{"feature": name, "step": results.step.steps[name]}],
        overlays=_overlays(results) | {"resolution": resolution},
    )


def bivariate_plot_data(results: FmeResultSet, data: Dataset,
                        resolution: int = 20) -> PlotData:
    """Two stepped features as axes; hex bins shaded by mean FME."""
    _require_retained(results)
    f1, f2 = _numeric_step_features(results, want=2)
    u = _retained_feature(results, data, f1)
    v = _retained_feature(results, data, f2)
    return PlotData(
        kind="bivariate",
        axes={"u": f1, "v": f2},
        bins=hexbin(u, v, fme=results.fme, nlm=results.nlm, resolution=resolution),
        arrows=[
            {"feature": f1, "step": results.step.steps[f1]},
            {"feature": f2, "step": results.step.steps[f2]},
        ],
        overlays=_overlays(results) | {"resolution": resolution},
    )


def higher_order_plot_data(results: FmeResultSet) -> PlotData:
    """Histogram of FMEs (and of display-clamped NLMs when present) for
    steps in three or more features."""
    _require_retained(results)
    _numeric_step_features(results)
    nlm_hist = None
    if results.nlm is not None:
        finite = results.nlm[np.isfinite(results.nlm)]
        if finite.size:
            nlm_hist = freedman_diaconis_histogram(np.maximum(finite, 0.0))
    return PlotData(
        kind="higher_order",
        axes={"u": "FME", "v": "count"},
        fme_histogram=freedman_diaconis_histogram(results.fme),
        nlm_histogram=nlm_hist,
        overlays=_overlays(results),
    )


def categorical_plot_data(results: FmeResultSet) -> PlotData:
    """Histogram of FMEs for a switch to the reference level."""
    _require_retained(results)
    if not isinstance(results.step, CategoricalStep):
        raise ValidationError("categorical plot needs a categorical step")
    return PlotData(
        kind="categorical",
        axes={"u": "FME", "v": "count"},
        fme_histogram=freedman_diaconis_histogram(results.fme),
        overlays=_overlays(results),
    )


def partition_plot_data(tree: PartitionTree) -> PlotData:
    """Node-link render data for a fitted partition."""
    return PlotData(
        kind="partition_tree",
        axes={},
        tree=tree.to_dict(),
        overlays={"ame": tree.ame_global},
    )


# -- SVG rendering --------------------------------------------------------

_W, _H = 640.0, 480.0
_MARGIN = 56.0
_LIGHT = (222, 235, 247)
_DARK = (8, 81, 156)


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ramp(t: float) -> str:
    t = min(1.0, max(0.0, t))
    r = round(_LIGHT[0] + t * (_DARK[0] - _LIGHT[0]))
    g = round(_LIGHT[1] + t * (_DARK[1] - _LIGHT[1]))
    b = round(_LIGHT[2] + t * (_DARK[2] - _LIGHT[2]))
    return f"#{r:02x}{g:02x}{b:02x}"


class _Canvas:
    def __init__(self, width=_W, height=_H):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" '
            f'height="{height:g}" viewBox="0 0 {width:g} {height:g}">',
            f'<rect x="0" y="0" width="{width:g}" height="{height:g}" fill="#ffffff"/>',
        ]

    def add(self, part: str):
        self.parts.append(part)

    def text(self, x, y, s, size=12, anchor="middle", color="#222222"):
        self.add(
            f'<text x="{_f(x)}" y="{_f(y)}" font-family="monospace" '
            f'font-size="{size:g}" text-anchor="{anchor}" fill="{color}">{escape(s)}</text>'
        )

    def line(self, x1, y1, x2, y2, color="#222222", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{color}" stroke-width="{width:g}"{d}/>'
        )

    def polygon(self, points, fill, stroke="#ffffff"):
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        self.add(f'<polygon points="{pts}" fill="{fill}" stroke="{stroke}" stroke-width="0.5"/>')

    def rect(self, x, y, w, h, fill, stroke="#222222"):
        self.add(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="0.75"/>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Frame:
    """Maps one data rectangle onto the drawing area and draws axes."""

    def __init__(self, canvas, u_range, v_range, x0=_MARGIN, x1=None, label_u="", label_v=""):
        self.c = canvas
        self.x0 = x0
        self.x1 = x1 if x1 is not None else canvas.width - _MARGIN / 2
        self.y0 = canvas.height - _MARGIN
        self.y1 = _MARGIN / 2
        u_lo, u_hi = u_range
        v_lo, v_hi = v_range
        if u_hi == u_lo:
            u_lo, u_hi = u_lo - 0.5, u_hi + 0.5
        if v_hi == v_lo:
            v_lo, v_hi = v_lo - 0.5, v_hi + 0.5
        pad_u = 0.05 * (u_hi - u_lo)
        pad_v = 0.05 * (v_hi - v_lo)
        self.u_lo, self.u_hi = u_lo - pad_u, u_hi + pad_u
        self.v_lo, self.v_hi = v_lo - pad_v, v_hi + pad_v
        self.label_u = label_u
        self.label_v = label_v

    def x(self, u: float) -> float:
        return self.x0 + (u - self.u_lo) / (self.u_hi - self.u_lo) * (self.x1 - self.x0)

    def y(self, v: float) -> float:
        return self.y0 - (v - self.v_lo) / (self.v_hi - self.v_lo) * (self.y0 - self.y1)

    def axes(self):
        c = self.c
        c.line(self.x0, self.y0, self.x1, self.y0)
        c.line(self.x0, self.y0, self.x0, self.y1)
        for i in range(5):
            u = self.u_lo + (self.u_hi - self.u_lo) * i / 4.0
            v = self.v_lo + (self.v_hi - self.v_lo) * i / 4.0
            xu = self.x(u)
            yv = self.y(v)
            c.line(xu, self.y0, xu, self.y0 + 4)
            c.text(xu, self.y0 + 16, f"{u:.4g}", size=10)
            c.line(self.x0 - 4, yv, self.x0, yv)
            c.text(self.x0 - 7, yv + 3, f"{v:.4g}", size=10, anchor="end")
        mid_x = (self.x0 + self.x1) / 2
        c.text(mid_x, self.y0 + 32, self.label_u, size=12)
        c.text(self.x0 - 10, self.y1 - 8, self.label_v, size=12, anchor="start")


def _hex_points(cx, cy, rx, ry):
    pts = []
    for k in range(6):
        ang = math.pi / 6.0 + k * math.pi / 3.0  # pointy-top
        pts.append((cx + rx * math.cos(ang), cy - ry * math.sin(ang)))
    return pts


def _render_hex_plot(plot: PlotData) -> str:
    c = _Canvas()
    bins = plot.bins
    us = [b.u for b in bins]
    vs = [b.v for b in bins]
    frame = _Frame(c, (min(us), max(us)), (min(vs), max(vs)),
                   label_u=plot.axes.get("u", ""), label_v=plot.axes.get("v", ""))
    if plot.kind == "bivariate":
        values = [b.mean_fme for b in bins]
        legend = "mean FME"
    else:
        values = [float(b.count) for b in bins]
        legend = "count"
    lo, hi = min(values), max(values)
    span = (hi - lo) or 1.0
    resolution = int(plot.overlays.get("resolution", 20))
    ru = (frame.u_hi - frame.u_lo) / (SQRT3 * resolution) * 0.98
    rv = (frame.v_hi - frame.v_lo) / (SQRT3 * resolution) * 0.98
    rx = frame.x(frame.u_lo + ru) - frame.x(frame.u_lo)
    ry = frame.y(frame.v_lo) - frame.y(frame.v_lo + rv)
    for b, val in zip(bins, values):
        c.polygon(_hex_points(frame.x(b.u), frame.y(b.v), rx, ry), _ramp((val - lo) / span))
    frame.axes()
    if plot.smoother:
        pts = " ".join(f"{_f(frame.x(u))},{_f(frame.y(v))}" for u, v in plot.smoother)
        c.add(f'<polyline points="{pts}" fill="none" stroke="#d95f02" stroke-width="2"/>')
    if plot.kind == "univariate" and "ame" in plot.overlays:
        y = frame.y(plot.overlays["ame"])
        c.line(frame.x0, y, frame.x1, y, color="#1b9e77", width=1.5, dash="6,4")
        c.text(frame.x1, y - 5, f"AME={plot.overlays['ame']:.4g}", size=10, anchor="end",
               color="#1b9e77")
    for j, arrow in enumerate(plot.arrows or []):
        h = arrow["step"]
        if plot.kind == "bivariate" and j == 1:
            vy0 = frame.v_lo + 0.9 * (frame.v_hi - frame.v_lo)
            x = frame.x(frame.u_lo + 0.06 * (frame.u_hi - frame.u_lo))
            y1 = frame.y(vy0)
            y2 = frame.y(vy0 + h)
            c.line(x, y1, x, y2, color="#7570b3", width=2)
            tip = -4 if y2 < y1 else 4
            c.polygon([(x, y2 + tip), (x - 3, y2 + 2 * tip), (x + 3, y2 + 2 * tip)], "#7570b3",
                      stroke="#7570b3")
        else:
            mid = (frame.u_lo + frame.u_hi) / 2.0
            y = frame.y1 + 12
            x1 = frame.x(mid - h / 2.0)
            x2 = frame.x(mid + h / 2.0)
            c.line(x1, y, x2, y, color="#7570b3", width=2)
            tip = 4 if x2 < x1 else -4
            c.polygon([(x2 - tip, y), (x2 + 2 * tip, y - 3), (x2 + 2 * tip, y + 3)], "#7570b3",
                      stroke="#7570b3")
            c.text((x1 + x2) / 2.0, y - 6, f"step {arrow['feature']} {h:+g}", size=10,
                   color="#7570b3")
    anlm = plot.overlays.get("anlm_display")
    if anlm is not None:
        c.text(frame.x1, frame.y1, f"ANLM={anlm:.2f}", size=11, anchor="end")
    return c.render()


def _render_histogram_panel(c, frame, hist: Histogram, mean_line: float | None, mean_label: str):
    for i, count in enumerate(hist.counts):
        x1 = frame.x(hist.edges[i])
        x2 = frame.x(hist.edges[i + 1])
        y = frame.y(float(count))
        c.rect(x1, y, max(x2 - x1, 0.5), frame.y(0.0) - y, fill="#9ecae1")
    frame.axes()
    if mean_line is not None:
        x = frame.x(mean_line)
        c.line(x, frame.y0, x, frame.y1, color="#1b9e77", width=1.5, dash="6,4")
        c.text(x, frame.y1 - 4, f"{mean_label}={mean_line:.4g}", size=10, color="#1b9e77")


def _render_histograms(plot: PlotData) -> str:
    two = plot.nlm_histogram is not None
    width = _W * (2 if two else 1)
    c = _Canvas(width=width)
    h = plot.fme_histogram
    frame = _Frame(c, (h.edges[0], h.edges[-1]), (0.0, float(max(h.counts))),
                   x0=_MARGIN, x1=_W - _MARGIN / 2,
                   label_u=plot.axes.get("u", "FME"), label_v="count")
    _render_histogram_panel(c, frame, h, plot.overlays.get("ame"), "AME")
    if two:
        h2 = plot.nlm_histogram
        frame2 = _Frame(c, (h2.edges[0], h2.edges[-1]), (0.0, float(max(h2.counts))),
                        x0=_W + _MARGIN, x1=2 * _W - _MARGIN / 2,
                        label_u="NLM (clamped)", label_v="count")
        _render_histogram_panel(c, frame2, h2, plot.overlays.get("anlm_display"), "ANLM")
    return c.render()


def _tree_layout(node: dict, depth: int, slots: list) -> tuple[float, dict]:
    if "split" not in node:
        x = float(len(slots))
        slots.append(node)
        return x, {"x": x, "depth": depth, "node": node, "children": []}
    lx, left = _tree_layout(node["left"], depth + 1, slots)
    rx, right = _tree_layout(node["right"], depth + 1, slots)
    x = (lx + rx) / 2.0
    return x, {"x": x, "depth": depth, "node": node, "children": [left, right]}


def _split_label(node: dict) -> str:
    split = node["split"]
    if "threshold" in split:
        return f"{split['feature']} <= {split['threshold']:.4g}"
    levels = ",".join(split["left_levels"])
    return f"{split['feature']} in {{{levels}}}"


def _render_tree(plot: PlotData) -> str:
    c = _Canvas()
    tree = plot.tree["root"]
    slots: list = []
    _, layout = _tree_layout(tree, 0, slots)
    n_slots = max(1, len(slots))

    def depth_of(entry):
        return max([entry["depth"]] + [depth_of(ch) for ch in entry["children"]])

    max_depth = depth_of(layout)
    bw, bh = 150.0, 46.0

    def pos(entry):
        x = _MARGIN + (entry["x"] + 0.5) / n_slots * (c.width - 2 * _MARGIN)
        y = _MARGIN / 2 + (entry["depth"] / max(1, max_depth)) * (c.height - _MARGIN - bh)
        return x, y

    def draw(entry):
        x, y = pos(entry)
        for ch in entry["children"]:
            cx, cy = pos(ch)
            c.line(x, y + bh, cx, cy, color="#888888")
            draw(ch)
        node = entry["node"]
        c.rect(x - bw / 2, y, bw, bh, fill="#f0f4f8")
        mid = x
        if "split" in node:
            c.text(mid, y + 14, _split_label(node), size=10)
        c.text(mid, y + 28, f"n={node['n']} cAME={node['came']:.4g}", size=10)
        c.text(mid, y + 40, f"SD={node['sd_fme']:.4g}", size=10)

    draw(layout)
    c.text(c.width / 2, c.height - 8, f"AME (Global): {plot.tree['ame_global']:.4f}", size=11)
    return c.render()


def render_svg(plot: PlotData, path) -> None:
    """Write ``plot`` as a standalone SVG file. Output is byte-stable
    for identical plot data."""
    if plot.kind in ("univariate", "bivariate"):
        if not plot.bins:
            raise ValidationError("plot has no bins to draw")
        text = _render_hex_plot(plot)
    elif plot.kind in ("higher_order", "categorical"):
        if plot.fme_histogram is None:
            raise ValidationError("plot has no histogram to draw")
        text = _render_histograms(plot)
    elif plot.kind == "partition_tree":
        if not plot.tree:
            raise ValidationError("plot has no tree to draw")
        text = _render_tree(plot)
    else:
        raise ValidationError(f"unknown plot kind {plot.kind!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
