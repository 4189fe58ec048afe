"""Minimal deterministic SVG rendering for 2D fields, arrows, and curves.

Output is plain SVG markup written directly; with ``deterministic=True`` the
file contains no timestamp comment and is byte-stable for fixed inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ARROW_COLORS = {
    "g_fm": "#971E2A",   # flow matching: red
    "g_rfm": "#A3CEB3",  # reweighted flow matching: green
    "f_os": "#FA7F57",   # one-step: orange
    "h_de": "#008FFF",   # directional eikonal: blue
}

TRAJ_INIT = (0, 0, 0)          # black
TRAJ_MID = (242, 208, 36)      # yellow
TRAJ_FINAL = (0, 31, 63)       # dark blue


def _lerp_color(a, b, t):
    return tuple(int(round(a[i] + (b[i] - a[i]) * t)) for i in range(3))


def progress_color(t: float) -> str:
    """Black -> yellow -> blue along trajectory progress in [0, 1]."""
    if t < 0.5:
        r, g, b = _lerp_color(TRAJ_INIT, TRAJ_MID, t * 2.0)
    else:
        r, g, b = _lerp_color(TRAJ_MID, TRAJ_FINAL, (t - 0.5) * 2.0)
    return f"#{r:02X}{g:02X}{b:02X}"


@dataclass
class SvgCanvas:
    """Maps a data bounding box onto a pixel viewport and collects elements."""

    xlim: tuple[float, float]
    ylim: tuple[float, float]
    width: int = 640
    height: int = 640
    margin: int = 40
    deterministic: bool = True

    def __post_init__(self):
        self.elements: list[str] = []

    def _tx(self, x: float) -> float:
        x0, x1 = self.xlim
        return self.margin + (x - x0) / (x1 - x0) * (self.width - 2 * self.margin)

    def _ty(self, y: float) -> float:
        y0, y1 = self.ylim
        return self.height - self.margin - (y - y0) / (y1 - y0) * (self.height - 2 * self.margin)

    def _fmt(self, v: float) -> str:
        return f"{v:.2f}"

    def polyline(self, xs, ys, color: str = "#000000", width: float = 1.0, opacity: float = 1.0):
        pts = " ".join(f"{self._fmt(self._tx(x))},{self._fmt(self._ty(y))}" for x, y in zip(xs, ys))
        self.elements.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"/>'
        )

    def circle(self, x, y, r: float = 2.0, color: str = "#000000", opacity: float = 1.0):
        self.elements.append(
            f'<circle cx="{self._fmt(self._tx(x))}" cy="{self._fmt(self._ty(y))}" r="{r}" '
            f'fill="{color}" fill-opacity="{opacity}"/>'
        )

    def arrow(self, x, y, dx, dy, color: str = "#000000", width: float = 1.5):
        x1, y1 = self._tx(x), self._ty(y)
        x2, y2 = self._tx(x + dx), self._ty(y + dy)
        vx, vy = x2 - x1, y2 - y1
        n = max((vx**2 + vy**2) ** 0.5, 1e-9)
        hx, hy = vx / n * 5.0, vy / n * 5.0
        lx, ly = -hy * 0.5, hx * 0.5
        self.elements.append(
            f'<line x1="{self._fmt(x1)}" y1="{self._fmt(y1)}" x2="{self._fmt(x2)}" '
            f'y2="{self._fmt(y2)}" stroke="{color}" stroke-width="{width}"/>'
        )
        self.elements.append(
            f'<polygon points="{self._fmt(x2)},{self._fmt(y2)} '
            f'{self._fmt(x2 - hx + lx)},{self._fmt(y2 - hy + ly)} '
            f'{self._fmt(x2 - hx - lx)},{self._fmt(y2 - hy - ly)}" fill="{color}"/>'
        )

    def text(self, x, y, s: str, size: int = 12, color: str = "#333333"):
        self.elements.append(
            f'<text x="{self._fmt(self._tx(x))}" y="{self._fmt(self._ty(y))}" '
            f'font-size="{size}" fill="{color}" font-family="monospace">{s}</text>'
        )

    def label(self, px: float, py: float, s: str, size: int = 12, color: str = "#333333"):
        self.elements.append(
            f'<text x="{px}" y="{py}" font-size="{size}" fill="{color}" '
            f'font-family="monospace">{s}</text>'
        )

    def save(self, path: str | Path) -> None:
        head = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
        ]
        if not self.deterministic:
            head.append(f"<!-- generated {time.strftime('%Y-%m-%dT%H:%M:%S')} -->")
        head.append(f'<rect width="{self.width}" height="{self.height}" fill="#FFFFFF"/>')
        body = "\n".join(head + self.elements + ["</svg>"])
        Path(path).write_text(body)


def plot_level_sets(
    model,
    path: str | Path,
    xlim=(-3.0, 3.0),
    ylim=(-3.0, 3.0),
    grid_n: int = 256,
    n_levels: int = 10,
    arrow_grid: int = 16,
    target: np.ndarray | None = None,
    deterministic: bool = True,
) -> None:
    """Contours of u at quantile levels with arrows of -v on a coarse grid."""
    from skimage import measure

    xs = np.linspace(*xlim, grid_n)
    ys = np.linspace(*ylim, grid_n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    u, _ = model.eval_batch(pts)
    grid = u.reshape(grid_n, grid_n)

    canvas = SvgCanvas(xlim=xlim, ylim=ylim, deterministic=deterministic)
    levels = np.quantile(grid, np.linspace(0.05, 0.9, n_levels))
    for li, lev in enumerate(levels):
        shade = 80 + int(150 * li / max(n_levels - 1, 1))
        color = f"#{shade:02X}{shade:02X}{shade:02X}"
        for contour in measure.find_contours(grid, lev):
            cy = ylim[0] + contour[:, 0] / (grid_n - 1) * (ylim[1] - ylim[0])
            cx = xlim[0] + contour[:, 1] / (grid_n - 1) * (xlim[1] - xlim[0])
            canvas.polyline(cx, cy, color=color, width=1.0)

    axs = np.linspace(xlim[0], xlim[1], arrow_grid + 2)[1:-1]
    ays = np.linspace(ylim[0], ylim[1], arrow_grid + 2)[1:-1]
    agx, agy = np.meshgrid(axs, ays)
    apts = np.stack([agx.ravel(), agy.ravel()], axis=1)
    _, v = model.eval_batch(apts)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    scale = 0.45 * (xlim[1] - xlim[0]) / arrow_grid
    vv = -v / np.maximum(norms, 1e-12) * scale
    for (px, py), (dx, dy) in zip(apts, vv):
        canvas.arrow(px, py, dx, dy, color="#222222", width=0.8)

    if target is not None:
        for tx, ty in np.asarray(target):
            canvas.circle(tx, ty, r=1.2, color="#FA7F57", opacity=0.7)
    canvas.save(path)


def plot_arrows(
    points: np.ndarray,
    vector_sets: dict[str, np.ndarray],
    path: str | Path,
    target: np.ndarray | None = None,
    scale: float = 1.0,
    deterministic: bool = True,
) -> None:
    """Minimizer arrows at query points; colors follow ARROW_COLORS by key."""
    pts = np.atleast_2d(points)
    all_xy = [pts] + ([np.asarray(target)] if target is not None else [])
    xy = np.concatenate(all_xy)
    pad = 0.5
    xlim = (float(xy[:, 0].min() - pad), float(xy[:, 0].max() + pad))
    ylim = (float(xy[:, 1].min() - pad), float(xy[:, 1].max() + pad))
    canvas = SvgCanvas(xlim=xlim, ylim=ylim, deterministic=deterministic)
    if target is not None:
        for tx, ty in np.asarray(target):
            canvas.circle(tx, ty, r=1.5, color="#BBBBBB", opacity=0.8)
    y_leg = 16
    for name, vecs in vector_sets.items():
        color = ARROW_COLORS.get(name, "#444444")
        for (px, py), (dx, dy) in zip(pts, np.atleast_2d(vecs)):
            canvas.arrow(px, py, dx * scale, dy * scale, color=color)
        canvas.label(10, y_leg, name, color=color)
        y_leg += 14
    for px, py in pts:
        canvas.circle(px, py, r=2.5, color="#000000")
    canvas.save(path)


def plot_trajectories(
    states: np.ndarray,
    path: str | Path,
    target: np.ndarray | None = None,
    max_chains: int = 200,
    deterministic: bool = True,
) -> None:
    """Chains colored by progress: init black, mid yellow, final blue."""
    states = np.asarray(states)
    if states.ndim == 2:
        states = states[:, None, :]
    T, n, d = states.shape
    if d != 2:
        raise ValueError("trajectory rendering is 2D only")
    show = min(n, max_chains)
    flat = states[:, :show].reshape(-1, 2)
    xy = np.concatenate([flat] + ([np.asarray(target)] if target is not None else []))
    pad = 0.5
    canvas = SvgCanvas(
        xlim=(float(xy[:, 0].min() - pad), float(xy[:, 0].max() + pad)),
        ylim=(float(xy[:, 1].min() - pad), float(xy[:, 1].max() + pad)),
        deterministic=deterministic,
    )
    if target is not None:
        for tx, ty in np.asarray(target):
            canvas.circle(tx, ty, r=1.2, color="#DDDDDD", opacity=0.8)
    for i in range(show):
        for k in range(T - 1):
            tprog = k / max(T - 2, 1)
            canvas.polyline(
                states[k : k + 2, i, 0], states[k : k + 2, i, 1],
                color=progress_color(tprog), width=1.0, opacity=0.7,
            )
    for i in range(show):
        canvas.circle(states[0, i, 0], states[0, i, 1], r=2.0, color=progress_color(0.0))
        canvas.circle(states[-1, i, 0], states[-1, i, 1], r=2.0, color=progress_color(1.0))
    canvas.save(path)


def plot_curves(
    x: np.ndarray,
    named_ys: dict[str, np.ndarray],
    path: str | Path,
    title: str = "",
    deterministic: bool = True,
) -> None:
    """Simple multi-line chart with a monospace legend."""
    x = np.asarray(x, dtype=np.float64)
    ally = np.concatenate([np.asarray(y, dtype=np.float64) for y in named_ys.values()])
    ally = ally[np.isfinite(ally)]
    ylo, yhi = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if yhi - ylo < 1e-12:
        yhi = ylo + 1.0
    canvas = SvgCanvas(
        xlim=(float(x.min()), float(x.max()) if x.max() > x.min() else float(x.min()) + 1.0),
        ylim=(ylo, yhi),
        width=720, height=480, deterministic=deterministic,
    )
    palette = ["#971E2A", "#A3CEB3", "#FA7F57", "#008FFF", "#444444", "#9467BD"]
    y_leg = 16
    if title:
        canvas.label(10, y_leg, title, size=13, color="#000000")
        y_leg += 16
    for i, (name, ys) in enumerate(named_ys.items()):
        color = palette[i % len(palette)]
        ys = np.asarray(ys, dtype=np.float64)
        ok = np.isfinite(ys)
        canvas.polyline(x[ok], ys[ok], color=color, width=1.5)
        canvas.label(10, y_leg, name, color=color)
        y_leg += 14
    canvas.polyline([x.min(), x.max()], [ylo, ylo], color="#888888", width=0.7)
    canvas.save(path)
