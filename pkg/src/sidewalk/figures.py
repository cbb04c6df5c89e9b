"""SVG figures built with the standard library only.

Two kinds: position traces per controller (coloured until the agents pass,
grey afterward) and dot-strip distributions with interquartile lines.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .env import TRACE_COLUMNS
from .stats import GroupComparison, format_p
from .world import SidewalkGeometry

ROBOT_COLOUR = "#1f77b4"
PED_COLOUR = "#d62728"
GREY = "#bbbbbb"
GROUP_COLOURS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b")

_COL = {name: i for i, name in enumerate(TRACE_COLUMNS)}


def passing_index(trace: np.ndarray) -> int:
    """Index of the first row where the robot is behind the pedestrian in ``x``.

    Returns the number of rows when the agents never pass.
    """
    trace = np.asarray(trace, dtype=float)
    passed = np.nonzero(trace[:, _COL["robot_x"]] < trace[:, _COL["ped_x"]])[0]
    return int(passed[0]) if passed.size else len(trace)


def split_segments(trace: np.ndarray) -> tuple[int, int]:
    """Numbers of coloured and grey line segments for one trace."""
    n_segments = max(len(trace) - 1, 0)
    coloured = min(passing_index(trace), n_segments)
    return coloured, n_segments - coloured


def _svg_root(width: float, height: float) -> ET.Element:
    return ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=f"{width:g}",
        height=f"{height:g}",
        viewBox=f"0 0 {width:g} {height:g}",
    )


def _text(parent, x, y, s, size=12, anchor="start", **extra):
    el = ET.SubElement(parent, "text", x=f"{x:.2f}", y=f"{y:.2f}", attrib={"font-size": str(size), "text-anchor": anchor, "font-family": "sans-serif", **extra})
    el.text = s
    return el


def _polyline(parent, points, colour, width=1.2, dashed=False, cls=None):
    attrib = {
        "points": " ".join(f"{x:.2f},{y:.2f}" for x, y in points),
        "fill": "none",
        "stroke": colour,
        "stroke-width": f"{width:g}",
    }
    if dashed:
        attrib["stroke-dasharray"] = "5,3"
    if cls:
        attrib["class"] = cls
    return ET.SubElement(parent, "polyline", attrib)


def _write(root: ET.Element, path: str | Path) -> None:
    ET.indent(root)
    Path(path).write_text(ET.tostring(root, encoding="unicode") + "\n")


def render_traces_svg(trace_set: dict[str, list[np.ndarray]], path: str | Path, geometry: SidewalkGeometry = SidewalkGeometry()) -> None:
    """One panel per controller showing robot and pedestrian paths on the sidewalk."""
    if not trace_set or not any(len(t) for t in trace_set.values()):
        raise ValueError("no traces to draw")
    scale = 50.0
    margin = 40.0
    panel_h = geometry.width * scale + 50
    width = geometry.length * scale + 2 * margin
    height = margin + panel_h * len(trace_set)
    root = _svg_root(width, height)

    for k, (name, traces) in enumerate(trace_set.items()):
        top = margin + k * panel_h
        g = ET.SubElement(root, "g", attrib={"class": "panel", "data-controller": name})
        _text(g, margin, top - 8, name, size=14)
        ET.SubElement(
            g,
            "rect",
            x=f"{margin:.2f}",
            y=f"{top:.2f}",
            width=f"{geometry.length * scale:.2f}",
            height=f"{geometry.width * scale:.2f}",
            fill="none",
            stroke="black",
        )

        def to_px(x, y):
            # world y grows to the left of the pedestrian, drawn upward
            return margin + x * scale, top + (geometry.width / 2 - y) * scale

        for trace in traces:
            trace = np.asarray(trace, dtype=float)
            cut = passing_index(trace)
            for xc, yc, colour in (("robot_x", "robot_y", ROBOT_COLOUR), ("ped_x", "ped_y", PED_COLOUR)):
                pts = [to_px(x, y) for x, y in zip(trace[:, _COL[xc]], trace[:, _COL[yc]])]
                head = pts[: cut + 1]
                tail = pts[cut:]
                if len(tail) > 1:
                    _polyline(g, tail, GREY, width=0.8, cls="after-passing")
                if len(head) > 1:
                    _polyline(g, head, colour, width=1.0, cls="before-passing")
        for tick in range(0, int(geometry.length) + 1, 5):
            px, py = to_px(tick, -geometry.width / 2)
            _text(g, px, py + 14, f"{tick} m", size=10, anchor="middle")
    _write(root, path)


def _quartiles(values: np.ndarray) -> tuple[float, float, float]:
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return float(q1), float(med), float(q3)


def render_distribution_svg(
    groups: dict[str, list[float]],
    path: str | Path,
    metric: str,
    comparison: GroupComparison | None = None,
    threshold_line: float | None = None,
    seed: int = 0,
) -> None:
    """Jittered dots per group with dashed interquartile lines and a statistics note."""
    if not groups:
        raise ValueError("need at least one group")
    rng = np.random.default_rng(seed)
    margin_l, margin_r, margin_t, plot_h = 70.0, 30.0, 30.0, 300.0
    col_w = 140.0
    note_lines = []
    if comparison is not None:
        kw = comparison.kruskal
        note_lines.append(f"H({kw.df})={kw.H:.2f}, {format_p(kw.p)}")
        for (a, b), p in comparison.pairwise.items():
            note_lines.append(f"{a} vs {b}: {format_p(p)}")
    width = margin_l + margin_r + col_w * len(groups)
    height = margin_t + plot_h + 50 + 16 * len(note_lines)
    root = _svg_root(width, height)

    all_values = np.concatenate([np.asarray(v, dtype=float) for v in groups.values()])
    lo = float(min(all_values.min(), threshold_line if threshold_line is not None else np.inf, 0.0))
    hi = float(max(all_values.max(), threshold_line if threshold_line is not None else -np.inf))
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def y_px(v):
        return margin_t + (hi - v) / (hi - lo) * plot_h

    ET.SubElement(root, "line", x1=f"{margin_l}", y1=f"{margin_t}", x2=f"{margin_l}", y2=f"{margin_t + plot_h}", stroke="black")
    for tick in np.linspace(lo + pad, hi - pad, 5):
        _text(root, margin_l - 6, y_px(tick) + 4, f"{tick:.2f}", size=10, anchor="end")
    _text(root, 14, margin_t + plot_h / 2, metric, size=12, anchor="middle", transform=f"rotate(-90 14 {margin_t + plot_h / 2:.2f})")

    if threshold_line is not None:
        y = y_px(threshold_line)
        ET.SubElement(root, "line", attrib={"x1": f"{margin_l}", "y1": f"{y:.2f}", "x2": f"{width - margin_r}", "y2": f"{y:.2f}", "stroke": "black", "stroke-width": "0.8", "class": "threshold"})
        _text(root, width - margin_r, y - 4, "threshold", size=10, anchor="end")

    for k, (name, values) in enumerate(groups.items()):
        values = np.asarray(values, dtype=float)
        centre = margin_l + col_w * (k + 0.5)
        colour = GROUP_COLOURS[k % len(GROUP_COLOURS)]
        g = ET.SubElement(root, "g", attrib={"class": "group", "data-name": name})
        jitter = rng.uniform(-0.3, 0.3, size=values.size) * col_w
        for v, dx in zip(values, jitter):
            ET.SubElement(g, "circle", cx=f"{centre + dx:.2f}", cy=f"{y_px(v):.2f}", r="2", fill=colour, attrib={"fill-opacity": "0.6"})
        q1, _, q3 = _quartiles(values)
        for q in (q1, q3):
            y = y_px(q)
            ET.SubElement(g, "line", attrib={"x1": f"{centre - 0.4 * col_w:.2f}", "y1": f"{y:.2f}", "x2": f"{centre + 0.4 * col_w:.2f}", "y2": f"{y:.2f}", "stroke": "black", "stroke-dasharray": "5,3", "class": "iqr"})
        _text(g, centre, margin_t + plot_h + 18, name, size=12, anchor="middle")

    for i, line in enumerate(note_lines):
        _text(root, margin_l, margin_t + plot_h + 40 + 16 * i, line, size=11, **{"class": "annotation"})
    _write(root, path)
