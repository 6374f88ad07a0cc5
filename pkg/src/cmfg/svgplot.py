"""Minimal static SVG line charts (800x500, no external assets)."""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 800, 500
MARGIN = dict(left=70, right=160, top=40, bottom=50)
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart(
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    title: str,
    xlabel: str,
    ylabel: str,
    log_y: bool = False,
) -> str:
    """Render ``series`` against ``x``; NaN points (and non-positive ones on a
    log axis) break the polyline."""
    px0, px1 = MARGIN["left"], WIDTH - MARGIN["right"]
    py0, py1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def ty(v: float) -> float:
        return math.log10(v) if log_y else v

    ys = [ty(v) for vals in series.values() for v in vals if math.isfinite(v) and (v > 0 or not log_y)]
    xs = [float(v) for v in x]
    xmin, xmax = (min(xs), max(xs)) if xs else (0.0, 1.0)
    ymin, ymax = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5

    def sx(v: float) -> float:
        return px0 + (v - xmin) / (xmax - xmin) * (px1 - px0)

    def sy(v: float) -> float:
        return py0 + (ty(v) - ymin) / (ymax - ymin) * (py1 - py0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16" font-family="sans-serif">{escape(title)}</text>',
        f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" stroke="black"/>',
        f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" stroke="black"/>',
    ]
    for i in range(5):
        fx = xmin + (xmax - xmin) * i / 4
        fy = ymin + (ymax - ymin) * i / 4
        X = px0 + (px1 - px0) * i / 4
        Y = py0 + (py1 - py0) * i / 4
        ylab = _fmt(10**fy) if log_y else _fmt(fy)
        out.append(f'<text x="{X:.1f}" y="{py0 + 18}" text-anchor="middle" font-size="11" font-family="sans-serif">{_fmt(fx)}</text>')
        out.append(f'<text x="{px0 - 6}" y="{Y + 4:.1f}" text-anchor="end" font-size="11" font-family="sans-serif">{ylab}</text>')
        out.append(f'<line x1="{px0}" y1="{Y:.1f}" x2="{px1}" y2="{Y:.1f}" stroke="#dddddd"/>')
    out.append(f'<text x="{(px0 + px1) / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12" font-family="sans-serif">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{(py0 + py1) / 2:.1f}" text-anchor="middle" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 16 {(py0 + py1) / 2:.1f})">{escape(ylabel)}</text>'
    )
    for idx, (name, vals) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        segment: list[str] = []
        segments = []
        for xv, yv in zip(xs, vals):
            if math.isfinite(yv) and (yv > 0 or not log_y):
                segment.append(f"{sx(xv):.2f},{sy(yv):.2f}")
            elif segment:
                segments.append(segment)
                segment = []
        if segment:
            segments.append(segment)
        for seg in segments:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(seg)}"/>')
        ly = MARGIN["top"] + 20 * idx + 10
        out.append(f'<line x1="{px1 + 15}" y1="{ly}" x2="{px1 + 40}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{px1 + 46}" y="{ly + 4}" font-size="12" font-family="sans-serif">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
