"""Dependency-free SVG line plot with spread bands. Output is a pure function of the input."""
from __future__ import annotations

from typing import Dict, Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_plot(series: Dict[str, Sequence[tuple]], title: str, xlabel: str, ylabel: str,
              width: int = 640, height: int = 400) -> str:
    """``series`` maps a label to ``(x, mean, std)`` points; draws mean lines and mean ± std bands."""
    pad_l, pad_r, pad_t, pad_b = 70, 150, 40, 50
    pts = [p for s in series.values() for p in s]
    if not pts:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    else:
        xs = [p[0] for p in pts]
        ys = [p[1] - p[2] for p in pts] + [p[1] + p[2] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def X(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def Y(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
           f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{_fmt(X(t))}" y="{pad_t + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{pad_l - 8}" y="{_fmt(Y(t) + 4)}" text-anchor="end">{t:.3g}</text>')
        out.append(f'<line x1="{pad_l}" y1="{_fmt(Y(t))}" x2="{pad_l + pw}" y2="{_fmt(Y(t))}" '
                   f'stroke="#ddd"/>')
    out.append(f'<text x="{pad_l + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text transform="translate(18 {pad_t + ph / 2:.1f}) rotate(-90)" '
               f'text-anchor="middle">{ylabel}</text>')
    for i, (label, s) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        s = sorted(s)
        if not s:
            continue
        upper = " ".join(f"{_fmt(X(x))},{_fmt(Y(m + d))}" for x, m, d in s)
        lower = " ".join(f"{_fmt(X(x))},{_fmt(Y(m - d))}" for x, m, d in reversed(s))
        out.append(f'<polygon points="{upper} {lower}" fill="{colour}" fill-opacity="0.18" stroke="none"/>')
        line = " ".join(f"{_fmt(X(x))},{_fmt(Y(m))}" for x, m, _ in s)
        out.append(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="2"/>')
        for x, m, _ in s:
            out.append(f'<circle cx="{_fmt(X(x))}" cy="{_fmt(Y(m))}" r="3" fill="{colour}"/>')
        ly = pad_t + 16 * i + 10
        out.append(f'<line x1="{pad_l + pw + 15}" y1="{ly}" x2="{pad_l + pw + 35}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l + pw + 40}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
