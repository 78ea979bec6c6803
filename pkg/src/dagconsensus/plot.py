"""Deterministic SVG line plots of mean cumulative-weight trajectories."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

WEIGHTS_HEADER = ["tx_id", "time_s", "cumulative_weight"]
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 20, 60


class PlotDataError(ValueError):
    pass


def mean_trajectory(text: str, source: str = "") -> list[tuple[float, float]]:
    """Average weight per age over every transaction in a ``_weights.csv``."""
    lines = text.splitlines()
    if not lines or lines[0].strip().split(",") != WEIGHTS_HEADER:
        raise PlotDataError(f"{source}: expected header {','.join(WEIGHTS_HEADER)}")
    sums: dict[float, float] = defaultdict(float)
    counts: dict[float, int] = defaultdict(int)
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise PlotDataError(f"{source}:{number}: expected 3 columns")
        try:
            t, w = float(parts[1]), float(parts[2])
        except ValueError:
            raise PlotDataError(f"{source}:{number}: non-numeric value") from None
        sums[t] += w
        counts[t] += 1
    if not counts:
        raise PlotDataError(f"{source}: no data rows")
    return [(t, sums[t] / counts[t]) for t in sorted(counts)]


def render_svg(series: Sequence[tuple[str, list[tuple[float, float]]]]) -> str:
    xs = [t for _, pts in series for t, _ in pts]
    ys = [w for _, pts in series for _, w in pts]
    x_max = max(xs) if max(xs) > 0 else 1.0
    y_max = max(ys) if max(ys) > 0 else 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(t):
        return LEFT + pw * t / x_max

    def sy(w):
        return TOP + ph * (1 - w / y_max)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for k in range(5):
        t = x_max * k / 4
        w = y_max * k / 4
        out.append(f'<text x="{sx(t):.2f}" y="{TOP + ph + 16}" font-size="11" text-anchor="middle">{t:g}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{sy(w) + 4:.2f}" font-size="11" text-anchor="end">{w:.4g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 18}" font-size="13" text-anchor="middle">time (s)</text>')
    out.append(
        f'<text x="16" y="{TOP + ph / 2:.2f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + ph / 2:.2f})">cumulative weight</text>'
    )
    for k, (label, pts) in enumerate(series):
        colour = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{sx(t):.2f},{sy(w):.2f}" for t, w in pts)
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 14 + 16 * k
        out.append(f'<line x1="{LEFT + 10}" y1="{ly}" x2="{LEFT + 30}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + 36}" y="{ly + 4}" font-size="12">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plot_files(paths: Sequence[Path]) -> str:
    series = []
    for p in paths:
        p = Path(p)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise PlotDataError(f"cannot read {p}: {exc.strerror or exc}") from None
        label = p.stem[: -len("_weights")] if p.stem.endswith("_weights") else p.stem
        series.append((label, mean_trajectory(text, str(p))))
    return render_svg(series)
