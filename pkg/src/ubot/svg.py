"""Minimal self-contained SVG plots: scatter, polylines and weighted segments."""

import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


class Figure:
    """Accumulates primitives in data coordinates and maps them on write."""

    def __init__(self, width=480, height=360, title="", margin=40):
        self.width, self.height, self.margin = width, height, margin
        self.title = title
        self.items = []
        self.xlim = [float("inf"), float("-inf")]
        self.ylim = [float("inf"), float("-inf")]
        self.log_x = False
        self.labels = ("", "")

    def _grow(self, xs, ys):
        for x in xs:
            self.xlim = [min(self.xlim[0], x), max(self.xlim[1], x)]
        for y in ys:
            self.ylim = [min(self.ylim[0], y), max(self.ylim[1], y)]

    def scatter(self, pts, color=PALETTE[0], r=2.0, opacity=0.8):
        pts = [(float(x), float(y)) for x, y in pts]
        self._grow([p[0] for p in pts], [p[1] for p in pts])
        self.items.append(("scatter", pts, color, r, opacity))

    def line(self, xs, ys, color=PALETTE[1], label="", dashed=False):
        """Polyline; with ``log_x`` set, points at x <= 0 are left out."""
        pts = [(float(x), float(y)) for x, y in zip(xs, ys) if not self.log_x or x > 0]
        if not pts:
            return
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        self._grow(xs, ys)
        self.items.append(("line", list(zip(xs, ys)), color, label, dashed))

    def segments(self, segs, color="#444444"):
        """``segs`` holds ``(x0, y0, x1, y1, opacity)`` tuples."""
        segs = [tuple(float(v) for v in s) for s in segs]
        self._grow([s[0] for s in segs] + [s[2] for s in segs], [s[1] for s in segs] + [s[3] for s in segs])
        self.items.append(("segments", segs, color))

    def axis_labels(self, xlabel, ylabel):
        self.labels = (xlabel, ylabel)

    def _mapper(self):
        x0, x1 = self.xlim
        y0, y1 = self.ylim
        fx = (lambda v: math.log10(v)) if self.log_x else (lambda v: v)
        x0, x1 = fx(x0), fx(x1)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        m = self.margin
        w, h = self.width - 2 * m, self.height - 2 * m

        def to_px(x, y):
            return m + (fx(x) - x0) / (x1 - x0) * w, m + h - (y - y0) / (y1 - y0) * h

        return to_px

    def render(self) -> str:
        to_px = self._mapper()
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">',
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
        ]
        if self.title:
            out.append(f'<text x="{self.width / 2:.1f}" y="20" text-anchor="middle" font-size="13" '
                       f'font-family="sans-serif">{escape(self.title)}</text>')
        m = self.margin
        out.append(f'<rect x="{m}" y="{m}" width="{self.width - 2 * m}" height="{self.height - 2 * m}" '
                   'fill="none" stroke="#999999"/>')
        legend_y = m + 12
        for item in self.items:
            kind = item[0]
            if kind == "scatter":
                _, pts, color, r, op = item
                for x, y in pts:
                    px, py = to_px(x, y)
                    out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r}" fill="{color}" fill-opacity="{op}"/>')
            elif kind == "line":
                _, pts, color, label, dashed = item
                path = " ".join(f"{px:.2f},{py:.2f}" for px, py in (to_px(x, y) for x, y in pts))
                dash = ' stroke-dasharray="5,3"' if dashed else ""
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
                if label:
                    out.append(f'<text x="{self.width - m - 4}" y="{legend_y}" text-anchor="end" font-size="11" '
                               f'font-family="sans-serif" fill="{color}">{escape(label)}</text>')
                    legend_y += 14
            else:
                _, segs, color = item
                for x0, y0, x1, y1, op in segs:
                    a, b = to_px(x0, y0)
                    c, d = to_px(x1, y1)
                    out.append(f'<line x1="{a:.2f}" y1="{b:.2f}" x2="{c:.2f}" y2="{d:.2f}" stroke="{color}" '
                               f'stroke-opacity="{op:.4f}" stroke-width="1.5"/>')
        xl, yl = self.labels
        if xl:
            out.append(f'<text x="{self.width / 2:.1f}" y="{self.height - 8}" text-anchor="middle" font-size="11" '
                       f'font-family="sans-serif">{escape(xl)}</text>')
        if yl:
            out.append(f'<text x="12" y="{self.height / 2:.1f}" text-anchor="middle" font-size="11" '
                       f'font-family="sans-serif" transform="rotate(-90 12 {self.height / 2:.1f})">{escape(yl)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.render())
