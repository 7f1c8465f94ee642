"""Standalone SVG renderings (no plotting dependency)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .gauss_head import GaussianPrediction, confidence_interval

WIDTH, HEIGHT, PAD = 800, 400, 40


class _Frame:
    def __init__(self, xs, ys, top: float = PAD, bottom: float = HEIGHT - PAD):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        ys = ys[np.isfinite(ys)]
        self.x0, self.x1 = float(xs.min()), float(xs.max())
        self.y0, self.y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 0.5, self.y1 + 0.5
        self.top, self.bottom = top, bottom

    def px(self, x) -> float:
        return PAD + (float(x) - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * PAD)

    def py(self, y) -> float:
        return self.bottom - (float(y) - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)

    def points(self, xs, ys) -> str:
        return " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(y))


def _doc(body: Sequence[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    return "\n".join([head, f"<title>{_escape(title)}</title>", *body, "</svg>", ""])


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def anomaly_svg(values, normalized_uncertainty, threshold: float, flagged: Sequence[int] = (), title: str = "anomaly") -> str:
    """Series (top panel) and normalized uncertainty (bottom panel) with the threshold rule.

    Flagged indices are drawn as rectangles so the document holds exactly two
    polylines and one line element.
    """
    values = np.asarray(values, dtype=np.float64)
    unc = np.asarray(normalized_uncertainty, dtype=np.float64)
    t = np.arange(values.size)
    mid = HEIGHT / 2
    top = _Frame(t, values, PAD, mid - 10)
    bot = _Frame(t, np.array([0.0, 1.0]), mid + 10, HEIGHT - PAD)
    body = [f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    step = (WIDTH - 2 * PAD) / max(values.size - 1, 1)
    for i in flagged:
        body.append(
            f'<rect class="flag" x="{top.px(i) - step / 2:.2f}" y="{PAD}" width="{max(step, 1.0):.2f}" '
            f'height="{HEIGHT - 2 * PAD}" fill="#f4c7c3"/>'
        )
    body.append(f'<polyline class="series" fill="none" stroke="#1f4e9c" stroke-width="1" points="{top.points(t, values)}"/>')
    body.append(f'<polyline class="uncertainty" fill="none" stroke="#c0392b" stroke-width="1" points="{bot.points(t, unc)}"/>')
    y = bot.py(threshold)
    body.append(
        f'<line class="threshold" x1="{PAD}" y1="{y:.2f}" x2="{WIDTH - PAD}" y2="{y:.2f}" '
        'stroke="#555" stroke-dasharray="4 3"/>'
    )
    body.append(f'<text x="{PAD}" y="{PAD - 10}" font-size="12">{_escape(title)}</text>')
    return _doc(body, title)


def band_svg(x, pred: GaussianPrediction, k: float = 3.0, data_x=None, data_y=None, title: str = "band") -> str:
    """Mean curve with a shaded mu +/- k sigma polygon and optional data points (1-D only)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if pred.dim != 1:
        raise ValueError("band plot needs a single target")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    band = confidence_interval(pred, k)
    lo, hi, mu = band.lower[order, 0], band.upper[order, 0], pred.mu[order, 0]
    ys = [lo, hi]
    if data_y is not None:
        ys.append(np.asarray(data_y, dtype=np.float64).reshape(-1))
    allx = xs if data_x is None else np.concatenate([xs, np.asarray(data_x, dtype=np.float64).reshape(-1)])
    f = _Frame(allx, np.concatenate(ys))
    poly = f.points(xs, hi) + " " + f.points(xs[::-1], lo[::-1])
    body = [
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<polygon class="band" fill="#cccccc" stroke="none" points="{poly}"/>',
    ]
    if data_x is not None and data_y is not None:
        for a, b in zip(np.asarray(data_x).reshape(-1), np.asarray(data_y).reshape(-1)):
            body.append(f'<circle cx="{f.px(a):.2f}" cy="{f.py(b):.2f}" r="1.5" fill="#333"/>')
    body.append(f'<polyline class="mean" fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{f.points(xs, mu)}"/>')
    body.append(f'<text x="{PAD}" y="{PAD - 10}" font-size="12">{_escape(title)} (k={k:g})</text>')
    return _doc(body, title)


def write(path, svg: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
