"""Learning curves from aggregate CSVs, written as plain SVG."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from html import escape
from pathlib import Path

import numpy as np

from .harness import AGG_COLUMNS

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
WIDTH, HEIGHT = 720, 440
MARGIN = {"left": 64, "right": 170, "top": 30, "bottom": 52}


class PlotError(ValueError):
    pass


@dataclass
class Curve:
    env: str
    agent: str
    steps: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray

    @property
    def label(self) -> str:
        return f"{self.env} / {self.agent}"


def read_aggregate_csv(path: str | Path) -> list[Curve]:
    """Curves keyed by (env, agent), in order of first appearance."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise PlotError(f"{path}: empty file")
            missing = [c for c in AGG_COLUMNS if c not in reader.fieldnames]
            if missing:
                raise PlotError(f"{path}: missing columns {missing}")
            groups: dict[tuple[str, str], list[tuple[int, float, float]]] = {}
            for row in reader:
                try:
                    rec = (int(row["step"]), float(row["mean"]), float(row["stderr"]))
                except (TypeError, ValueError):
                    raise PlotError(f"{path}:{reader.line_num}: malformed row") from None
                groups.setdefault((row["env"], row["agent"]), []).append(rec)
    except OSError as exc:
        raise PlotError(f"cannot read {path}: {exc}") from None
    if not groups:
        raise PlotError(f"{path}: no data rows")
    curves = []
    for (env, agent), recs in groups.items():
        arr = np.array(sorted(recs))
        curves.append(Curve(env, agent, arr[:, 0].astype(int), arr[:, 1], arr[:, 2]))
    return curves


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = mag * min((m for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step * 1e-9, step)


def _num(x: float) -> str:
    return f"{x:.2f}"


def render_svg(curves: list[Curve], title: str = "Visitation frequency of the most desired state") -> str:
    if not curves:
        raise PlotError("nothing to plot")
    grid = curves[0].steps
    for c in curves[1:]:
        if c.steps.shape != grid.shape or np.any(c.steps != grid):
            raise PlotError(f"step grid of {c.label} differs from {curves[0].label}")
    x0, x1 = float(grid[0]), float(grid[-1])
    if x1 == x0:
        x1 = x0 + 1
    y0, y1 = 0.0, max(1e-9, max(float(np.max(c.mean + c.stderr)) for c in curves))
    y1 = min(1.0, y1 * 1.05) if y1 <= 1 else y1 * 1.05
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (np.asarray(v, float) - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + ph - (np.clip(np.asarray(v, float), y0, y1) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_num(MARGIN["left"] + pw / 2)}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for t in _ticks(y0, y1):
        y = _num(float(sy(t)))
        out.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{y}" y2="{y}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">{t:g}</text>')
    for t in _ticks(x0, x1):
        x = _num(float(sx(t)))
        out.append(f'<line x1="{x}" x2="{x}" y1="{MARGIN["top"] + ph}" y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{t:g}</text>')
    out.append(
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
    )
    out.append(
        f'<text x="{_num(MARGIN["left"] + pw / 2)}" y="{HEIGHT - 12}" text-anchor="middle">step</text>'
    )
    out.append(
        f'<text x="16" y="{_num(MARGIN["top"] + ph / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_num(MARGIN["top"] + ph / 2)})">window visit frequency</text>'
    )
    for i, c in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        xs = sx(c.steps)
        upper = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(xs, sy(c.mean + c.stderr)))
        lower = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(xs[::-1], sy((c.mean - c.stderr)[::-1])))
        line = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(xs, sy(c.mean)))
        out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 12 + 18 * i
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" x2="{lx + 20}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{escape(c.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_aggregates(csv_paths: list[str | Path], svg_path: str | Path) -> Path:
    curves = [c for p in csv_paths for c in read_aggregate_csv(p)]
    svg = render_svg(curves)
    svg_path = Path(svg_path)
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    svg_path.write_text(svg)
    return svg_path
