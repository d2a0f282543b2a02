"""Self-contained SVG figures: per-vehicle traces, running comfort, link heatmap.

Plain string building; no plotting library is needed to regenerate them.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .metrics import EpisodeLog, comfort_curve

W, H = 640, 360
MARGIN = (60, 20, 30, 45)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
NA_FILL = "#d9d9d9"


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_plot_svg(path, x: np.ndarray, series: Mapping[str, np.ndarray], title: str,
                  xlabel: str, ylabel: str) -> None:
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    allv = np.concatenate([v[np.isfinite(v)] for v in ys.values()]) if ys else np.zeros(1)
    y0, y1 = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x0, x1 = float(x.min()), float(x.max()) if len(x) > 1 else float(x.min()) + 1.0
    left, right, top, bottom = MARGIN
    pw, ph = W - left - right, H - top - bottom

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{_fmt(px(t))}" y="{H - bottom + 15}" text-anchor="middle" font-size="10">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{_fmt(py(t))}" y2="{_fmt(py(t))}" stroke="#eeeeee"/>')
        out.append(f'<text x="{left - 5}" y="{_fmt(py(t) + 3)}" text-anchor="end" font-size="10">{t:.3g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{H - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    for k, (name, y) in enumerate(ys.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = top + 12 + 14 * k
        out.append(f'<line x1="{left + pw - 90}" x2="{left + pw - 70}" y1="{ly}" y2="{ly}" stroke="{color}"/>')
        out.append(f'<text x="{left + pw - 65}" y="{ly + 4}" font-size="10">{escape(name)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def heatmap_svg(path, freq: np.ndarray, title: str = "Communication heatmap") -> None:
    """``freq[sender, receiver]`` in [0, 1]; NaN cells are drawn gray and marked N/A."""
    freq = np.asarray(freq, dtype=float)
    n = freq.shape[0]
    cell = min(60, 480 // max(n, 1))
    left, top = 80, 40
    w, h = left + cell * n + 20, top + cell * n + 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for s in range(n):
        for r in range(n):
            x, y = left + r * cell, top + s * cell
            v = freq[s, r]
            if np.isnan(v):
                fill, label = NA_FILL, "N/A"
            else:
                shade = int(round(255 * (1.0 - v)))
                fill, label = f"rgb({shade},{shade},255)", f"{v:.2f}"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>')
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" font-size="10">{label}</text>')
        out.append(f'<text x="{left - 6}" y="{top + s * cell + cell / 2 + 4}" text-anchor="end" font-size="11">'
                   f'{"Leader" if s == 0 else f"CAV {s}"}</text>')
    for r in range(n):
        out.append(f'<text x="{left + r * cell + cell / 2}" y="{top + n * cell + 15}" text-anchor="middle" '
                   f'font-size="11">{"Leader" if r == 0 else f"CAV {r}"}</text>')
    out.append(f'<text x="{left + n * cell / 2}" y="{top + n * cell + 35}" text-anchor="middle" '
               f'font-size="12">receiver (rows: sender)</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def episode_plots(log: EpisodeLog, out_dir, prefix: str = "episode") -> list[Path]:
    """Velocity, acceleration and running-comfort figures for one episode."""
    out = Path(out_dir)
    t = np.arange(log.n_steps) * log.dt
    names = ["Leader"] + [f"CAV {i}" for i in range(1, log.n_vehicles)]
    paths = [out / f"{prefix}_velocity.svg", out / f"{prefix}_acceleration.svg", out / f"{prefix}_comfort.svg"]
    line_plot_svg(paths[0], t, dict(zip(names, log.vel.T)), "Velocity", "time [s]", "velocity [m/s]")
    line_plot_svg(paths[1], t, dict(zip(names, log.acc.T)), "Acceleration", "time [s]", "acceleration [m/s^2]")
    if log.n_steps >= 2:
        curves = {names[i]: comfort_curve(log, i) for i in range(1, log.n_vehicles)}
        line_plot_svg(paths[2], t[1:], curves, "Running comfort score", "time [s]", "comfort")
    else:
        paths.pop()
    return paths


def learning_curve_svg(path, curves: Sequence[tuple[str, np.ndarray]]) -> None:
    """``curves``: (label, array of (steps, mean_return)) pairs."""
    xs = [c[:, 0] for _, c in curves if len(c)]
    if not xs:
        return
    grid = np.unique(np.concatenate(xs))
    series = {label: np.interp(grid, c[:, 0], c[:, 1]) for label, c in curves if len(c)}
    line_plot_svg(path, grid, series, "Learning curve", "environment steps", "mean episode return")
