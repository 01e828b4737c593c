"""Tiny grouped-bar-chart renderer emitting standalone SVG text."""

from __future__ import annotations

import math
from typing import Optional, Sequence
from xml.sax.saxutils import escape

__all__ = ["grouped_bar_chart"]

PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo or 1.0
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9:
        out.append(round(v, 10))
        v += step
    return out


def grouped_bar_chart(
    groups: Sequence[str],
    series: Sequence[str],
    values: Sequence[Sequence[float]],
    title: str,
    ylabel: str,
    errors: Optional[Sequence[Sequence[float]]] = None,
    width: int = 720,
    height: int = 400,
) -> str:
    """*values[s][g]* is the bar height of series *s* in group *g*.

    Optional *errors* draws symmetric whiskers. Output is deterministic text.
    """
    for rows in (values, errors) if errors is not None else (values,):
        if len(rows) != len(series) or any(len(r) != len(groups) for r in rows):
            raise ValueError("need one row per series with one value per group")
    left, right, top, bottom = 64, 150, 40, 60
    pw, ph = width - left - right, height - top - bottom
    flat = [v for row in values for v in row]
    if errors is not None:
        flat += [v + e for row, erow in zip(values, errors) for v, e in zip(row, erow)]
        flat += [v - e for row, erow in zip(values, errors) for v, e in zip(row, erow)]
    lo, hi = min(flat + [0.0]), max(flat + [0.0])
    ticks = _ticks(lo, hi)
    lo, hi = min(lo, ticks[0]), max(hi, ticks[-1])
    span = hi - lo or 1.0

    def y(v: float) -> float:
        return top + ph * (hi - v) / span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text transform="translate(16,{top + ph / 2:.1f}) rotate(-90)" text-anchor="middle">'
        f"{escape(ylabel)}</text>",
    ]
    for t in ticks:
        parts.append(
            f'<line x1="{left}" x2="{left + pw}" y1="{y(t):.2f}" y2="{y(t):.2f}" stroke="#ddd"/>'
            f'<text x="{left - 6}" y="{y(t) + 4:.2f}" text-anchor="end">{t:g}</text>'
        )
    gw = pw / max(len(groups), 1)
    bw = gw * 0.8 / max(len(series), 1)
    for g, name in enumerate(groups):
        x0 = left + g * gw + gw * 0.1
        for s in range(len(series)):
            v = values[s][g]
            x = x0 + s * bw
            y1, y2 = sorted((y(0.0), y(v)))
            parts.append(
                f'<rect x="{x:.2f}" y="{y1:.2f}" width="{bw:.2f}" height="{y2 - y1:.2f}" '
                f'fill="{PALETTE[s % len(PALETTE)]}"><title>{escape(series[s])} {escape(name)}: '
                f"{v:.2f}</title></rect>"
            )
            if errors is not None:
                e = errors[s][g]
                cx = x + bw / 2
                parts.append(
                    f'<line x1="{cx:.2f}" x2="{cx:.2f}" y1="{y(v + e):.2f}" y2="{y(v - e):.2f}" '
                    f'stroke="black"/>'
                )
        parts.append(
            f'<text x="{x0 + gw * 0.4:.2f}" y="{top + ph + 16}" text-anchor="middle">{escape(name)}</text>'
        )
    parts.append(
        f'<line x1="{left}" x2="{left + pw}" y1="{y(0.0):.2f}" y2="{y(0.0):.2f}" stroke="black"/>'
    )
    for s, name in enumerate(series):
        ly = top + 14 * s
        parts.append(
            f'<rect x="{left + pw + 12}" y="{ly}" width="10" height="10" '
            f'fill="{PALETTE[s % len(PALETTE)]}"/>'
            f'<text x="{left + pw + 26}" y="{ly + 9}">{escape(name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
