"""Minimal deterministic SVG plots for evaluation reports.

Pure string assembly with fixed canvas geometry and explicit number
formatting, so identical inputs always produce identical bytes.
"""
from __future__ import annotations

import numpy as np

WIDTH = 640
HEIGHT = 420
MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 40
MARGIN_BOTTOM = 55
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="16">{title}</text>',
            f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{xlabel}</text>',
            f'<text x="18" y="{HEIGHT / 2:.0f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13" '
            f'transform="rotate(-90 18 {HEIGHT / 2:.0f})">{ylabel}</text>',
        ]
        self.x0 = MARGIN_LEFT
        self.x1 = WIDTH - MARGIN_RIGHT
        self.y0 = HEIGHT - MARGIN_BOTTOM
        self.y1 = MARGIN_TOP

    def x_px(self, v: float, lo: float, hi: float) -> float:
        span = hi - lo if hi > lo else 1.0
        return self.x0 + (v - lo) / span * (self.x1 - self.x0)

    def y_px(self, v: float, lo: float, hi: float) -> float:
        span = hi - lo if hi > lo else 1.0
        return self.y0 - (v - lo) / span * (self.y0 - self.y1)

    def axes(self, xlo, xhi, ylo, yhi):
        self.parts.append(
            f'<rect x="{self.x0}" y="{self.y1}" width="{self.x1 - self.x0}" '
            f'height="{self.y0 - self.y1}" fill="none" stroke="#444"/>')
        for tx in _ticks(xlo, xhi):
            px = self.x_px(tx, xlo, xhi)
            self.parts.append(
                f'<line x1="{_fmt(px)}" y1="{self.y0}" x2="{_fmt(px)}" '
                f'y2="{self.y0 + 5}" stroke="#444"/>')
            self.parts.append(
                f'<text x="{_fmt(px)}" y="{self.y0 + 20}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11">{tx:g}</text>')
        for ty in _ticks(ylo, yhi):
            py = self.y_px(ty, ylo, yhi)
            self.parts.append(
                f'<line x1="{self.x0 - 5}" y1="{_fmt(py)}" x2="{self.x0}" '
                f'y2="{_fmt(py)}" stroke="#444"/>')
            self.parts.append(
                f'<text x="{self.x0 - 9}" y="{_fmt(py + 4)}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11">{ty:g}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def svg_line_plot(series, title: str, xlabel: str, ylabel: str,
                  y_range: tuple[float, float] | None = None) -> str:
    """series: iterable of (label, xs, ys); returns the SVG document."""
    series = [(label, np.asarray(xs, float), np.asarray(ys, float))
              for label, xs, ys in series]
    if not series or any(xs.size == 0 for _, xs, _ in series):
        raise ValueError("every series needs at least one point")
    xlo = min(float(xs.min()) for _, xs, _ in series)
    xhi = max(float(xs.max()) for _, xs, _ in series)
    if y_range is None:
        ylo = min(float(ys.min()) for _, _, ys in series)
        yhi = max(float(ys.max()) for _, _, ys in series)
    else:
        ylo, yhi = y_range
    canvas = _Canvas(title, xlabel, ylabel)
    canvas.axes(xlo, xhi, ylo, yhi)
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(
            f"{_fmt(canvas.x_px(x, xlo, xhi))},{_fmt(canvas.y_px(y, ylo, yhi))}"
            for x, y in zip(xs, ys))
        canvas.parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = MARGIN_TOP + 16 + 16 * i
        canvas.parts.append(
            f'<line x1="{canvas.x0 + 10}" y1="{ly - 4}" x2="{canvas.x0 + 34}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        canvas.parts.append(
            f'<text x="{canvas.x0 + 40}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{label}</text>')
    return canvas.render()


def svg_histogram(edges, counts, title: str, xlabel: str, ylabel: str) -> str:
    """Bar chart over consecutive bins given by ``edges`` (len = bins + 1)."""
    edges = np.asarray(edges, float)
    counts = np.asarray(counts, float)
    if edges.size != counts.size + 1:
        raise ValueError("edges must have one more entry than counts")
    xlo, xhi = float(edges[0]), float(edges[-1])
    yhi = float(counts.max()) if counts.size and counts.max() > 0 else 1.0
    canvas = _Canvas(title, xlabel, ylabel)
    canvas.axes(xlo, xhi, 0.0, yhi)
    for left, right, count in zip(edges[:-1], edges[1:], counts):
        px0 = canvas.x_px(float(left), xlo, xhi)
        px1 = canvas.x_px(float(right), xlo, xhi)
        py = canvas.y_px(float(count), 0.0, yhi)
        canvas.parts.append(
            f'<rect x="{_fmt(px0 + 1)}" y="{_fmt(py)}" width="{_fmt(max(px1 - px0 - 2, 0.5))}" '
            f'height="{_fmt(canvas.y0 - py)}" fill="{PALETTE[0]}" stroke="#266a9e"/>')
    return canvas.render()
