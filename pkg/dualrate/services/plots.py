"""
Dependency-free SVG output: scatter overlays and line charts.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

WIDTH = 480
HEIGHT = 360
MARGIN = 40
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _scaler(lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: out_lo + (v - lo) / span * (out_hi - out_lo)


def _frame(title: str) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
        'fill="none" stroke="#999"/>',
        f'<text x="{WIDTH / 2}" y="{MARGIN / 2 + 5}" text-anchor="middle" font-size="14">{title}</text>',
    ]


def _legend(names: Sequence[str]) -> List[str]:
    parts = []
    for i, name in enumerate(names):
        y = MARGIN + 14 + 16 * i
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{WIDTH - MARGIN - 110}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN - 95}" y="{y}" font-size="11">{name}</text>')
    return parts


def scatter_svg(path: Path, series: Sequence[Tuple[str, np.ndarray]], title: str = "") -> Path:
    """Overlays 2-D point clouds (first two coordinates)."""
    clouds = [np.atleast_2d(points)[:, :2] for _, points in series]
    stacked = np.concatenate(clouds)
    sx = _scaler(stacked[:, 0].min(), stacked[:, 0].max(), MARGIN, WIDTH - MARGIN)
    sy = _scaler(stacked[:, 1].min(), stacked[:, 1].max(), HEIGHT - MARGIN, MARGIN)
    parts = _frame(title)
    for i, cloud in enumerate(clouds):
        color = PALETTE[i % len(PALETTE)]
        for x, y in cloud:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="1.5" fill="{color}" fill-opacity="0.5"/>')
    parts += _legend([name for name, _ in series])
    parts.append("</svg>")
    return _write(path, parts)


def line_svg(path: Path, xs: Sequence[float], series: Sequence[Tuple[str, Sequence[float]]], title: str = "") -> Path:
    xs = np.asarray(xs, dtype=np.float64)
    ys_all = np.concatenate([np.asarray(ys, dtype=np.float64) for _, ys in series])
    sx = _scaler(xs.min(), xs.max(), MARGIN, WIDTH - MARGIN)
    sy = _scaler(ys_all.min(), ys_all.max(), HEIGHT - MARGIN, MARGIN)
    parts = _frame(title)
    for i, (_, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    parts += _legend([name for name, _ in series])
    parts.append("</svg>")
    return _write(path, parts)


def _write(path: Path, parts: List[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path
