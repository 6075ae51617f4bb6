"""Minimal self-contained SVG output for CCDF overlays and QQ plots.

Coordinates are formatted with fixed precision so reruns are byte-identical.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"]

W, H = 480, 360
ML, MR, MT, MB = 60, 20, 30, 45


class _Axes:
    def __init__(self, xlim, ylim, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        self.x0, self.x1 = (self._t(v, logx) for v in xlim)
        self.y0, self.y1 = (self._t(v, logy) for v in ylim)
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    @staticmethod
    def _t(v, log):
        return math.log10(v) if log else float(v)

    def px(self, x, y):
        tx = (np.log10(x) if self.logx else np.asarray(x, dtype=float))
        ty = (np.log10(y) if self.logy else np.asarray(y, dtype=float))
        sx = ML + (tx - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
        sy = H - MB - (ty - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
        return sx, sy

    def ticks(self, axis):
        lo, hi, log = ((self.x0, self.x1, self.logx) if axis == "x"
                       else (self.y0, self.y1, self.logy))
        if log:
            return [10.0**k for k in range(math.ceil(lo), math.floor(hi) + 1)]
        return list(np.linspace(lo, hi, 5))


def _fmt(v):
    return f"{v:.2f}"


def _tick_label(v, log):
    if log:
        return f"1e{int(round(math.log10(v)))}"
    return f"{v:.3g}"


def _frame(ax, title, xlabel, ylabel):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
           'fill="none" stroke="black"/>',
           f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<text x="{W / 2:.1f}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {H / 2:.1f})">{escape(ylabel)}</text>']
    for v in ax.ticks("x"):
        sx, _ = ax.px(v, 10.0**ax.y0 if ax.logy else ax.y0)
        out.append(f'<line x1="{_fmt(sx)}" y1="{H - MB}" x2="{_fmt(sx)}" y2="{H - MB + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(sx)}" y="{H - MB + 16}" text-anchor="middle">'
                   f'{_tick_label(v, ax.logx)}</text>')
    for v in ax.ticks("y"):
        _, sy = ax.px(10.0**ax.x0 if ax.logx else ax.x0, v)
        out.append(f'<line x1="{ML - 4}" y1="{_fmt(sy)}" x2="{ML}" y2="{_fmt(sy)}" stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{_fmt(sy + 4)}" text-anchor="end">'
                   f'{_tick_label(v, ax.logy)}</text>')
    return out


def _polyline(ax, x, y, color, dash=None):
    sx, sy = ax.px(x, y)
    pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx, sy))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{extra} '
            f'points="{pts}"/>')


def _legend(entries):
    out = []
    for k, (label, color, count) in enumerate(entries):
        y = MT + 14 + 14 * k
        out.append(f'<line x1="{W - MR - 150}" y1="{y - 4}" x2="{W - MR - 130}" y2="{y - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - MR - 126}" y="{y}">{escape(label)} (n={count})</text>')
    return out


def _thin(x, y, max_points=2000):
    if x.size <= max_points:
        return x, y
    keep = np.unique(np.geomspace(1, x.size, max_points).astype(int) - 1)
    return x[keep], y[keep]


def loglog_svg(series, title, xlabel="|z|", ylabel="P(|Z| > x)"):
    """Log-log line plot; ``series`` is a list of ``(label, x, y)``.

    Non-positive points are dropped before plotting.
    """
    clean = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
        clean.append((label, *_thin(x[ok], y[ok])))
    xs = np.concatenate([c[1] for c in clean if c[1].size] or [np.array([1.0])])
    ys = np.concatenate([c[2] for c in clean if c[2].size] or [np.array([1.0])])
    ax = _Axes((xs.min(), xs.max()), (ys.min(), max(ys.max(), 1.0)), logx=True, logy=True)
    out = _frame(ax, title, xlabel, ylabel)
    legend = []
    for k, (label, x, y) in enumerate(clean):
        color = PALETTE[k % len(PALETTE)]
        if x.size:
            out.append(_polyline(ax, x, y, color, dash=None if k == 0 else "5,3"))
        legend.append((label, color, int(x.size)))
    out += _legend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def qq_svg(theoretical, empirical, title, xlabel="reference quantile",
           ylabel="sample quantile"):
    t = np.asarray(theoretical, dtype=float)
    e = np.asarray(empirical, dtype=float)
    ok = np.isfinite(t) & np.isfinite(e)
    t, e = t[ok], e[ok]
    lo = float(min(t.min(), e.min())) if t.size else -1.0
    hi = float(max(t.max(), e.max())) if t.size else 1.0
    ax = _Axes((lo, hi), (lo, hi))
    out = _frame(ax, title, xlabel, ylabel)
    out.append(_polyline(ax, np.array([lo, hi]), np.array([lo, hi]), "#7f7f7f", dash="4,3"))
    sx, sy = ax.px(t, e)
    for a, b in zip(sx, sy):
        out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="1.6" fill="{PALETTE[0]}"/>')
    out += _legend([("quantiles", PALETTE[0], int(t.size))])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def stack_svgs(svgs):
    """Stack several standalone SVG documents vertically into one document."""
    body = []
    for k, s in enumerate(svgs):
        inner = s.strip().split("\n", 1)[1].rsplit("</svg>", 1)[0]
        body.append(f'<g transform="translate(0 {k * H})">\n{inner}</g>')
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H * len(svgs)}" '
            f'viewBox="0 0 {W} {H * len(svgs)}" font-family="sans-serif" font-size="11">\n'
            + "\n".join(body) + "\n</svg>\n")
