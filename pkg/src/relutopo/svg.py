"""Minimal static SVG 1.1 renderings (line, circle and polyline elements only)."""
from __future__ import annotations

import numpy as np

# ten distinguishable class colors
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _f(v: float) -> str:
    return format(float(v), ".6g")


class _Canvas:
    def __init__(self, bbox, size: int = 400, pad: int = 10):
        xmin, ymin, xmax, ymax = map(float, bbox)
        if not (xmax > xmin and ymax > ymin):
            # degenerate extent: widen so the mapping stays finite
            xmin, xmax = xmin - 0.5, xmax + 0.5
            ymin, ymax = ymin - 0.5, ymax + 0.5
        self.bbox = (xmin, ymin, xmax, ymax)
        self.size, self.pad = size, pad
        self.scale = (size - 2 * pad) / max(xmax - xmin, ymax - ymin)
        self.parts: list[str] = []

    def xy(self, p) -> tuple[str, str]:
        xmin, ymin, _, ymax = self.bbox
        # flip y so the picture has the usual mathematical orientation
        return (_f(self.pad + (p[0] - xmin) * self.scale),
                _f(self.pad + (ymax - p[1]) * self.scale))

    def line(self, p, q, color="#000000", width=1.5):
        (x1, y1), (x2, y2) = self.xy(p), self.xy(q)
        self.parts.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" '
                          f'stroke="{color}" stroke-width="{width}"/>')

    def circle(self, p, r=2.0, color="#000000"):
        x, y = self.xy(p)
        self.parts.append(f'<circle cx="{x}" cy="{y}" r="{_f(r)}" fill="{color}"/>')

    def polyline(self, pts, color="#999999", closed=True, width=1.0):
        pts = list(pts) + ([pts[0]] if closed else [])
        coords = " ".join(",".join(self.xy(p)) for p in pts)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"/>')

    def render(self) -> bytes:
        head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
                f'width="{self.size}" height="{self.size}">\n')
        return (head + "\n".join(self.parts) + "\n</svg>\n").encode("utf-8")


def scatter_svg(points, classes=None, size: int = 400) -> bytes:
    """2-D scatter plot, colored by class when ``classes`` is given."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        bbox = (*pts.min(axis=0), *pts.max(axis=0))
    else:
        bbox = (0.0, 0.0, 1.0, 1.0)
    canvas = _Canvas(bbox, size)
    for n, p in enumerate(pts):
        color = PALETTE[int(classes[n]) % len(PALETTE)] if classes is not None else "#000000"
        canvas.circle(p, 2.0, color)
    return canvas.render()


def complex_svg(cx, bbox, cell_polygons=(), size: int = 400) -> bytes:
    """Edges and vertices of a 1-complex with coordinates, over optional cell outlines."""
    canvas = _Canvas(bbox, size)
    xmin, ymin, xmax, ymax = map(float, bbox)
    canvas.polyline([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)], "#000000")
    for poly in cell_polygons:
        canvas.polyline(list(poly), "#cccccc", width=0.5)
    coords = cx.vertex_coords
    for i, j in cx.faces(1):
        canvas.line(coords[i], coords[j], "#d62728", 2.0)
    for p in coords:
        canvas.circle(p, 3.0, "#000000")
    return canvas.render()
