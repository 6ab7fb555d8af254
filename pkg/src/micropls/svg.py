"""Minimal static SVG output for box plots and 2-D scatter plots.

Output is a pure function of the inputs (fixed palette, fixed number
formatting, no timestamps), so identical inputs give identical files.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 900, 420
MARGIN = 50


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, title: str, lo: float, hi: float, x_lo: float = 0.0, x_hi: float = 1.0):
        if hi <= lo:
            lo, hi = lo - 1.0, hi + 1.0
        if x_hi <= x_lo:
            x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
        self.lo, self.hi, self.x_lo, self.x_hi = lo, hi, x_lo, x_hi
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-family="sans-serif" '
            f'font-size="14">{escape(title)}</text>',
        ]
        x0, y0, y1 = MARGIN, HEIGHT - MARGIN, MARGIN
        self.parts.append(f'<line x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN}" y2="{y0}" stroke="black"/>')
        self.parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
        for v in np.linspace(lo, hi, 5):
            y = self.y(v)
            self.parts.append(f'<text x="{x0 - 4}" y="{_f(y + 4)}" text-anchor="end" font-family="sans-serif" '
                              f'font-size="10">{v:.3g}</text>')

    def y(self, v: float) -> float:
        frac = (v - self.lo) / (self.hi - self.lo)
        return HEIGHT - MARGIN - frac * (HEIGHT - 2 * MARGIN)

    def x(self, v: float) -> float:
        frac = (v - self.x_lo) / (self.x_hi - self.x_lo)
        return MARGIN + frac * (WIDTH - 2 * MARGIN)

    def add(self, s: str) -> None:
        self.parts.append(s)

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def boxplot_svg(box, title: str, reference: float | None = None) -> str:
    """One box per sample from a :class:`~micropls.preprocess.BoxStats`."""
    lo = float(np.min(box.whisker_low))
    hi = float(np.max(box.whisker_high))
    if reference is not None:
        lo, hi = min(lo, reference), max(hi, reference)
    n = len(box.sample_ids)
    c = _Canvas(title, lo, hi, 0.0, float(n))
    if reference is not None:
        y = c.y(reference)
        c.add(f'<line x1="{MARGIN}" y1="{_f(y)}" x2="{WIDTH - MARGIN}" y2="{_f(y)}" stroke="grey" '
              f'stroke-dasharray="4 3"/>')
    half = 0.35
    for i in range(n):
        xm, xl, xr = c.x(i + 0.5), c.x(i + 0.5 - half), c.x(i + 0.5 + half)
        q1, q3 = c.y(box.q1[i]), c.y(box.q3[i])
        c.add(f'<line x1="{_f(xm)}" y1="{_f(c.y(box.whisker_low[i]))}" x2="{_f(xm)}" '
              f'y2="{_f(c.y(box.whisker_high[i]))}" stroke="black"/>')
        c.add(f'<rect x="{_f(xl)}" y="{_f(q3)}" width="{_f(xr - xl)}" height="{_f(max(q1 - q3, 0.5))}" '
              f'fill="{PALETTE[0]}" fill-opacity="0.5" stroke="black"/>')
        c.add(f'<line x1="{_f(xl)}" y1="{_f(c.y(box.median[i]))}" x2="{_f(xr)}" '
              f'y2="{_f(c.y(box.median[i]))}" stroke="black" stroke-width="2"/>')
    return c.render()


def scatter_svg(points: np.ndarray, labels, title: str, class_names=()) -> str:
    """2-D scatter, one colour per class."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] < 2:
        raise ValueError("scatter needs an (n, 2) array")
    labels = np.asarray(labels, dtype=int)
    c = _Canvas(title, float(points[:, 1].min()), float(points[:, 1].max()),
                float(points[:, 0].min()), float(points[:, 0].max()))
    for (px, py), lab in zip(points[:, :2], labels):
        c.add(f'<circle cx="{_f(c.x(px))}" cy="{_f(c.y(py))}" r="4" fill="{PALETTE[lab % len(PALETTE)]}"/>')
    for k, name in enumerate(class_names):
        y = MARGIN + 14 * k
        c.add(f'<circle cx="{WIDTH - MARGIN - 80}" cy="{y}" r="4" fill="{PALETTE[k % len(PALETTE)]}"/>')
        c.add(f'<text x="{WIDTH - MARGIN - 70}" y="{y + 4}" font-family="sans-serif" '
              f'font-size="10">{escape(str(name))}</text>')
    return c.render()
