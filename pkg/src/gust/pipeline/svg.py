"""Minimal hand-written SVG line plots (no plotting dependency)."""

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def line_plot_svg(series, title="", xlabel="", ylabel="density", width=480, height=320):
    """``series`` is a list of ``(label, x, y)``; returns an SVG document string."""
    ml, mr, mt, mb = 60, 110, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y1 = float(ys.max()) if ys.size else 1.0
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 <= 0:
        y1 = 1.0

    def px(x):
        return ml + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - np.asarray(y, float) / y1 * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
             f'<text x="{ml + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
             f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle" font-size="11">'
             f'{escape(xlabel)}</text>',
             f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" font-size="11" '
             f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        parts.append(f'<text x="{px(xv):.2f}" y="{mt + ph + 14}" text-anchor="middle" '
                     f'font-size="10">{xv:.4g}</text>')
        yv = frac * y1
        parts.append(f'<text x="{ml - 4}" y="{py(yv):.2f}" text-anchor="end" '
                     f'font-size="10">{yv:.3g}</text>')
    for k, (label, x, y) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 12 + 16 * k
        parts.append(f'<line x1="{ml + pw + 8}" y1="{ly}" x2="{ml + pw + 28}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 32}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
