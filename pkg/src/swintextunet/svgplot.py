"""Minimal SVG line charts; the CSV next to each plot is the authoritative data."""
from __future__ import annotations

from pathlib import Path

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_line_chart(path, series: dict[str, list[float]], title: str,
                     xlabel: str = "epoch", ylabel: str = "",
                     width: int = 640, height: int = 400) -> None:
    """Plot each named series against its index."""
    margin = 56
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    all_vals = [v for vals in series.values() for v in vals if v == v]  # drop NaN
    if not all_vals:
        all_vals = [0.0, 1.0]
    lo, hi = min(all_vals), max(all_vals)
    if hi == lo:
        hi = lo + 1.0
    n = max((len(v) for v in series.values()), default=2)
    n = max(n, 2)

    def sx(i: float) -> float:
        return margin + plot_w * i / (n - 1)

    def sy(v: float) -> float:
        return margin + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{title}</text>',
        f'<line x1="{margin}" y1="{margin + plot_h}" x2="{margin + plot_w}" '
        f'y2="{margin + plot_h}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{margin + plot_h}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{xlabel}</text>',
        f'<text x="16" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 16 {height / 2})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = lo + frac * (hi - lo)
        y = sy(v)
        parts.append(f'<line x1="{margin - 4}" y1="{y}" x2="{margin}" y2="{y}" stroke="black"/>')
        parts.append(f'<text x="{margin - 8}" y="{y + 4}" text-anchor="end" font-size="10" '
                     f'font-family="sans-serif">{v:.4g}</text>')
        xi = int(round(frac * (n - 1)))
        x = sx(xi)
        parts.append(f'<line x1="{x}" y1="{margin + plot_h}" x2="{x}" '
                     f'y2="{margin + plot_h + 4}" stroke="black"/>')
        parts.append(f'<text x="{x}" y="{margin + plot_h + 16}" text-anchor="middle" '
                     f'font-size="10" font-family="sans-serif">{xi}</text>')

    for k, (name, vals) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(vals))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = margin + 16 + 16 * k
        parts.append(f'<line x1="{margin + plot_w - 110}" y1="{ly - 4}" '
                     f'x2="{margin + plot_w - 90}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{margin + plot_w - 84}" y="{ly}" font-size="11" '
                     f'font-family="sans-serif">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
