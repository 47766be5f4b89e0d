"""Minimal SVG output: correlogram panels and grouped boxplots."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


class Canvas:
    def __init__(self, width: float, height: float):
        self.width, self.height = width, height
        self.items: list[str] = []

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}" stroke-width="{width}"{extra}/>'
        )

    def rect(self, x, y, w, h, fill="none", stroke="#000"):
        self.items.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{fill}" stroke="{stroke}"/>')

    def circle(self, x, y, r=2.0, fill="#000"):
        self.items.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{fill}"/>')

    def text(self, x, y, s, size=10, anchor="middle"):
        self.items.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{escape(str(s))}</text>'
        )

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:.0f}" height="{self.height:.0f}" '
            f'viewBox="0 0 {self.width:.0f} {self.height:.0f}">'
        )
        return "\n".join([head, f'<rect width="100%" height="100%" fill="#fff"/>', *self.items, "</svg>"]) + "\n"


def correlogram_panels(results, ncol: int = 4, panel=(160, 110)) -> str:
    """One lollipop correlogram per series with dashed band lines."""
    results = list(results)
    nrow = max(1, -(-len(results) // ncol))
    pw, ph = panel
    c = Canvas(ncol * pw, nrow * ph)
    for idx, r in enumerate(results):
        x0, y0 = (idx % ncol) * pw, (idx // ncol) * ph
        left, right, top, bottom = x0 + 22, x0 + pw - 8, y0 + 16, y0 + ph - 14
        mid = (top + bottom) / 2
        scale = (bottom - top) / 2

        def ypos(v):
            return mid - float(np.clip(v, -1, 1)) * scale

        c.text(x0 + pw / 2, y0 + 11, f"eu {r.eu} / group {r.group}", size=9)
        c.line(left, mid, right, mid, stroke="#444")
        c.line(left, top, left, bottom, stroke="#444")
        for b in (r.band, -r.band):
            c.line(left, ypos(b), right, ypos(b), stroke="#1f77b4", dash="4,3")
        n = len(r.lags)
        step = (right - left) / (n + 1)
        for k, a in zip(r.lags, r.acf):
            x = left + k * step
            c.line(x, mid, x, ypos(a), stroke="#333", width=1.5)
            c.circle(x, ypos(a), 2)
        c.text(left - 3, top + 4, "1", size=7, anchor="end")
        c.text(left - 3, bottom, "-1", size=7, anchor="end")
    return c.render()


def boxplot_panel(groups: dict, title: str = "", ylabel: str = "", size=(640, 320)) -> str:
    """Grouped boxplots.

    ``groups`` maps a category label (e.g. a scenario) to a dict of
    series label (e.g. a method) -> values.
    """
    W, H = size
    c = Canvas(W, H)
    left, right, top, bottom = 56, W - 110, 28, H - 36
    series = []
    for inner in groups.values():
        for name in inner:
            if name not in series:
                series.append(name)
    allv = np.concatenate([np.asarray(v, float) for inner in groups.values() for v in inner.values() if len(v)] or [np.zeros(1)])
    allv = allv[np.isfinite(allv)]
    lo, hi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def ypos(v):
        return bottom - (v - lo) / (hi - lo) * (bottom - top)

    c.text(W / 2, 16, title, size=12)
    c.line(left, bottom, right, bottom)
    c.line(left, top, left, bottom)
    for v in np.linspace(lo, hi, 5):
        c.line(left - 4, ypos(v), left, ypos(v))
        c.text(left - 6, ypos(v) + 3, f"{v:.3g}", size=8, anchor="end")
    if ylabel:
        c.text(12, (top + bottom) / 2, ylabel, size=9, anchor="start")
    ncat = max(1, len(groups))
    cw = (right - left) / ncat
    bw = cw * 0.8 / max(1, len(series))
    for ci, (cat, inner) in enumerate(groups.items()):
        cx = left + ci * cw
        c.text(cx + cw / 2, bottom + 14, cat, size=9)
        for si, name in enumerate(series):
            vals = np.asarray(inner.get(name, []), float)
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                continue
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            iqr = q3 - q1
            lo_w = vals[vals >= q1 - 1.5 * iqr].min()
            hi_w = vals[vals <= q3 + 1.5 * iqr].max()
            x = cx + cw * 0.1 + si * bw
            color = PALETTE[si % len(PALETTE)]
            xm = x + bw / 2
            c.line(xm, ypos(lo_w), xm, ypos(q1), stroke=color)
            c.line(xm, ypos(q3), xm, ypos(hi_w), stroke=color)
            c.rect(x + 1, ypos(q3), bw - 2, max(ypos(q1) - ypos(q3), 0.5), fill="#fff", stroke=color)
            c.line(x + 1, ypos(med), x + bw - 1, ypos(med), stroke=color, width=2)
    for si, name in enumerate(series):
        y = top + 14 * si + 6
        c.rect(right + 12, y - 7, 10, 10, fill=PALETTE[si % len(PALETTE)], stroke="none")
        c.text(right + 26, y + 2, name, size=9, anchor="start")
    return c.render()
