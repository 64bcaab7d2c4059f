"""Minimal native SVG rendering: axes plus polylines, no external renderer.

The sensitivity chart draws three lines per method (point estimates and the
two confidence-limit lines); the group-effects chart draws one point with a
vertical confidence segment per group.
"""

from __future__ import annotations

from typing import Sequence

METHOD_COLORS = {"M1": "#1f6fb4", "M2": "#c44e52"}
DEFAULT_COLOR = "#555555"


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Frame:
    """Maps data coordinates into a margin-padded pixel viewport."""

    def __init__(self, xs, ys, width, height, margin=52):
        self.width, self.height, self.margin = width, height, margin
        xmin, xmax = min(xs), max(xs)
        ymin, ymax = min(ys), max(ys)
        if xmax == xmin:
            xmin, xmax = xmin - 0.5, xmax + 0.5
        if ymax == ymin:
            ymin, ymax = ymin - 0.5, ymax + 0.5
        ypad = 0.06 * (ymax - ymin)
        self.xmin, self.xmax = xmin, xmax
        self.ymin, self.ymax = ymin - ypad, ymax + ypad

    def x(self, v: float) -> float:
        frac = (v - self.xmin) / (self.xmax - self.xmin)
        return self.margin + frac * (self.width - 2 * self.margin)

    def y(self, v: float) -> float:
        frac = (v - self.ymin) / (self.ymax - self.ymin)
        return self.height - self.margin - frac * (self.height - 2 * self.margin)

    def ticks(self, lo: float, hi: float, n: int = 5) -> list[float]:
        step = (hi - lo) / (n - 1)
        return [lo + i * step for i in range(n)]


def _axes(frame: _Frame, xlabel: str, ylabel: str) -> list[str]:
    m, w, h = frame.margin, frame.width, frame.height
    parts = [
        f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="#222"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="#222"/>',
    ]
    for tx in frame.ticks(frame.xmin, frame.xmax):
        px = frame.x(tx)
        parts.append(f'<line x1="{_fmt(px)}" y1="{h - m}" x2="{_fmt(px)}" y2="{h - m + 5}" stroke="#222"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{h - m + 18}" font-size="11" text-anchor="middle">{tx:.3g}</text>')
    for ty in frame.ticks(frame.ymin, frame.ymax):
        py = frame.y(ty)
        parts.append(f'<line x1="{m - 5}" y1="{_fmt(py)}" x2="{m}" y2="{_fmt(py)}" stroke="#222"/>')
        parts.append(f'<text x="{m - 8}" y="{_fmt(py + 4)}" font-size="11" text-anchor="end">{ty:.3g}</text>')
    parts.append(f'<text x="{(w) / 2:.1f}" y="{h - 12}" font-size="12" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="14" y="{h / 2:.1f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {h / 2:.1f})">{ylabel}</text>')
    return parts


def _polyline(frame: _Frame, xs, ys, color: str, dash: str | None = None) -> str:
    pts = " ".join(f"{_fmt(frame.x(x))},{_fmt(frame.y(y))}" for x, y in zip(xs, ys))
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash_attr}/>'


def render_sensitivity_svg(results: Sequence, xlabel: str = "sensitivity parameter",
                           ylabel: str = "target-population effect",
                           width: int = 640, height: int = 420) -> str:
    """Overlay the sensitivity sweeps of one or both methods: per method the
    point-estimate line plus dashed lower/upper confidence-limit lines."""
    xs = [row.ev_value for res in results for row in res.rows]
    ys = [v for res in results for row in res.rows for v in (row.lower, row.estimate, row.upper)]
    frame = _Frame(xs, ys, width, height)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    parts += _axes(frame, xlabel, ylabel)
    legend_y = frame.margin - 28
    for i, res in enumerate(results):
        color = METHOD_COLORS.get(res.method, DEFAULT_COLOR)
        gx = [row.ev_value for row in res.rows]
        parts.append(_polyline(frame, gx, [r.estimate for r in res.rows], color))
        parts.append(_polyline(frame, gx, [r.lower for r in res.rows], color, dash="5,4"))
        parts.append(_polyline(frame, gx, [r.upper for r in res.rows], color, dash="5,4"))
        lx = frame.margin + 10 + 150 * i
        parts.append(f'<line x1="{lx}" y1="{legend_y + 24}" x2="{lx + 26}" y2="{legend_y + 24}" '
                     f'stroke="{color}" stroke-width="1.6"/>')
        parts.append(f'<text x="{lx + 32}" y="{legend_y + 28}" font-size="12">'
                     f'method {res.method[1:]}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_group_effects_svg(labels: Sequence[str], estimates: Sequence[float],
                             lowers: Sequence[float], uppers: Sequence[float],
                             ylabel: str = "group-specific effect",
                             width: int = 640, height: int = 420) -> str:
    """Per-group effect estimates with vertical confidence segments."""
    xs = list(range(len(labels)))
    ys = [v for triple in zip(lowers, estimates, uppers) for v in triple]
    frame = _Frame([-0.5, len(labels) - 0.5], ys, width, height)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    parts += _axes(frame, "", ylabel)
    for i, (label, est, lo, hi) in enumerate(zip(labels, estimates, lowers, uppers)):
        px = frame.x(i)
        parts.append(f'<line x1="{_fmt(px)}" y1="{_fmt(frame.y(lo))}" x2="{_fmt(px)}" '
                     f'y2="{_fmt(frame.y(hi))}" stroke="#1f6fb4" stroke-width="1.6"/>')
        parts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(frame.y(est))}" r="3.5" fill="#1f6fb4"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{frame.height - frame.margin + 32}" '
                     f'font-size="11" text-anchor="middle">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
