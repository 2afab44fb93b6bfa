"""Minimal standalone SVG plots (no plotting dependency)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

_SIZE = (640, 480)
_MARGIN = 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** np.floor(np.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step / 2, step)


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.w, self.h = _SIZE
        self.xlim, self.ylim = xlim, ylim
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
            f'viewBox="0 0 {self.w} {self.h}" font-family="sans-serif" font-size="12">',
            f'<rect width="{self.w}" height="{self.h}" fill="white"/>',
            f'<text x="{self.w / 2}" y="24" text-anchor="middle" font-size="15">{title}</text>',
            f'<text x="{self.w / 2}" y="{self.h - 12}" text-anchor="middle">{xlabel}</text>',
            f'<text x="16" y="{self.h / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {self.h / 2})">{ylabel}</text>',
        ]
        self._axes()

    def x(self, v: float) -> float:
        lo, hi = self.xlim
        return _MARGIN + (v - lo) / (hi - lo) * (self.w - 2 * _MARGIN)

    def y(self, v: float) -> float:
        lo, hi = self.ylim
        return self.h - _MARGIN - (v - lo) / (hi - lo) * (self.h - 2 * _MARGIN)

    def _axes(self) -> None:
        x0, y0 = _MARGIN, self.h - _MARGIN
        x1, y1 = self.w - _MARGIN, _MARGIN
        self.parts.append(
            f'<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" stroke="black" fill="none"/>'
        )
        for t in _ticks(*self.xlim):
            px = self.x(t)
            self.parts.append(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + 5}" stroke="black"/>')
            self.parts.append(
                f'<text x="{px:.1f}" y="{y0 + 18}" text-anchor="middle">{t:g}</text>'
            )
        for t in _ticks(*self.ylim):
            py = self.y(t)
            self.parts.append(f'<line x1="{x0 - 5}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="black"/>')
            self.parts.append(
                f'<text x="{x0 - 8}" y="{py + 4:.1f}" text-anchor="end">{t:g}</text>'
            )

    def save(self, path: str | Path) -> None:
        self.parts.append("</svg>")
        Path(path).write_text("\n".join(self.parts), encoding="utf-8")


def _limits(values: np.ndarray, pad: float = 0.05) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def svg_scatter(
    xs: Sequence[float],
    ys: Sequence[float],
    path: str | Path,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    identity_line: bool = True,
) -> None:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    both = np.concatenate([xs, ys])
    lim = _limits(both)
    canvas = _Canvas(lim, lim, title, xlabel, ylabel)
    if identity_line:
        canvas.parts.append(
            f'<line x1="{canvas.x(lim[0]):.1f}" y1="{canvas.y(lim[0]):.1f}" '
            f'x2="{canvas.x(lim[1]):.1f}" y2="{canvas.y(lim[1]):.1f}" '
            'stroke="#999" stroke-dasharray="5,4"/>'
        )
    for xv, yv in zip(xs, ys):
        canvas.parts.append(
            f'<circle cx="{canvas.x(xv):.1f}" cy="{canvas.y(yv):.1f}" r="4" '
            'fill="#1f77b4" fill-opacity="0.7"/>'
        )
    canvas.save(path)


def svg_lines(
    series: Mapping[str, Sequence[float]],
    path: str | Path,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> None:
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    n = max(len(v) for v in series.values())
    canvas = _Canvas((0, max(n - 1, 1)), _limits(all_y), title, xlabel, ylabel)
    for i, (name, values) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{canvas.x(t):.1f},{canvas.y(v):.1f}" for t, v in enumerate(values)
        )
        canvas.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        canvas.parts.append(
            f'<text x="{canvas.w - _MARGIN + 6}" y="{_MARGIN + 16 * i + 12}" '
            f'fill="{color}">{name}</text>'
        )
    canvas.save(path)
