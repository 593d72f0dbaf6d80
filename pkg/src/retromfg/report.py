"""JSON summaries and small hand-written SVG plots."""

from __future__ import annotations

import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["to_jsonable", "write_json", "svg_plot"]


def to_jsonable(x):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if x is None or isinstance(x, str):
        return x
    if hasattr(x, "as_dict"):
        return to_jsonable(x.as_dict())
    return str(x)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def svg_plot(path, series: dict, *, title: str = "", xlabel: str = "", ylabel: str = "",
             logx: bool = False, logy: bool = False, width: int = 560, height: int = 400) -> Path:
    """Line-and-marker plot of ``{label: (xs, ys)}`` written as standalone SVG.

    Points that cannot be shown on a log axis are dropped.
    """
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    pts = {}
    for label, (xs, ys) in series.items():
        keep = [(tx(x), ty(y)) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        if keep:
            pts[label] = keep
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R, Tm, B = 70, 20, 36, 50
    pw, ph = width - L - R, height - Tm - B

    def X(v):
        return L + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return Tm + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{L}" y="{Tm}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for k in range(5):
        fx, fy = x0 + k * (x1 - x0) / 4, y0 + k * (y1 - y0) / 4
        lx = f"1e{fx:.2g}" if logx else f"{fx:.3g}"
        ly = f"1e{fy:.2g}" if logy else f"{fy:.3g}"
        out.append(f'<text x="{X(fx):.1f}" y="{Tm + ph + 16}" text-anchor="middle">{lx}</text>')
        out.append(f'<text x="{L - 6}" y="{Y(fy) + 4:.1f}" text-anchor="end">{ly}</text>')
    out.append(f'<text x="{L + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{Tm + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {Tm + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{L + pw / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for n, (label, p) in enumerate(pts.items()):
        c = _COLORS[n % len(_COLORS)]
        path_d = " ".join(f"{'M' if i == 0 else 'L'}{X(a):.2f},{Y(b):.2f}" for i, (a, b) in enumerate(p))
        out.append(f'<path d="{path_d}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        out += [f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="3" fill="{c}"/>' for a, b in p]
        out.append(f'<text x="{L + 10}" y="{Tm + 16 + 14 * n}" fill="{c}">{escape(str(label))}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
