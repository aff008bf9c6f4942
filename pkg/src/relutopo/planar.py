"""Exact geometry of 2-input ReLU networks and winding-number index theory.

A field is any callable mapping an ``(n, 2)`` array of points to an
``(n, 2)`` array of vectors; NaN rows mark points where it is undefined.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BadMargin,
    CurveNesting,
    DegenerateBox,
    DimensionMismatch,
    FlatCell,
    RefinementExhausted,
    TooManyNeurons,
    ZeroOnCurve,
)
from .mlp import ActivationPattern, MlpNetwork, forward_batch, prob_gradient_batch
from .topology import SimplicialComplex, build_complex

Field = Callable[[np.ndarray], np.ndarray]

MAX_ENUMERATED_NEURONS = 24


@dataclass(frozen=True)
class Planar2DNetwork:
    """A 2-input network with a scalar decision function.

    The decision is the single output logit (``d_out == 1``) or the logit
    difference ``logit0 - logit1`` (``d_out == 2``).
    """

    network: MlpNetwork

    def __post_init__(self):
        if self.network.d_in != 2:
            raise DimensionMismatch(f"planar analysis needs d_in == 2, network has {self.network.d_in}")

    @property
    def output_weights(self) -> np.ndarray:
        d_out = self.network.d_out
        if d_out == 1:
            return np.array([1.0])
        if d_out == 2:
            return np.array([1.0, -1.0])
        raise DimensionMismatch(f"no scalar decision function for d_out = {d_out}")

    def decision(self, points) -> np.ndarray:
        return forward_batch(self.network, np.atleast_2d(points)).logits @ self.output_weights

    def affine_on(self, delta: np.ndarray) -> tuple[np.ndarray, float]:
        """``(a, c)`` with ``decision(x) = a.x + c`` wherever the pattern is ``delta``."""
        net = self.network
        v = delta * (net.w2 @ self.output_weights)
        return net.w1 @ v, float(net.b1 @ v + net.b2 @ self.output_weights)


def hexagon_network() -> Planar2DNetwork:
    """Three ReLU units at 120 degrees whose zero set is a hexagon.

    Hidden ``f_i = relu(a_i . x - 1)``, output ``1 - (f_1 + f_2 + f_3)``:
    positive inside the hexagon, negative outside.
    """
    s = math.sqrt(3.0) / 2.0
    w1 = np.array([[1.0, -0.5, -0.5],
                   [0.0, s, -s]])
    return Planar2DNetwork(MlpNetwork(w1, -np.ones(3), -np.ones((3, 1)), np.ones(1)))


# --- convex polygons --------------------------------------------------------------

def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def clip_halfplane(poly: np.ndarray, w: np.ndarray, b: float) -> np.ndarray:
    """Part of a convex polygon where ``w.x + b >= 0`` (one Sutherland-Hodgman pass)."""
    if len(poly) == 0:
        return poly
    s = poly @ w + b
    out = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        p, sp, sq = poly[i], s[i], s[j]
        if sp >= 0:
            out.append(p)
        if (sp > 0 > sq) or (sp < 0 < sq):
            out.append(p + (sp / (sp - sq)) * (poly[j] - p))
    if not out:
        return np.empty((0, 2))
    out = np.array(out)
    keep = np.ones(len(out), dtype=bool)
    keep[1:] = np.any(out[1:] != out[:-1], axis=1)
    out = out[keep]
    if len(out) > 1 and np.array_equal(out[0], out[-1]):
        out = out[:-1]
    return out


def _box_polygon(bbox) -> np.ndarray:
    xmin, ymin, xmax, ymax = map(float, bbox)
    if not (xmax > xmin and ymax > ymin):
        raise DegenerateBox(f"bounding box {bbox} has no area")
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])


# --- cells ---------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    pattern: ActivationPattern
    polygon: np.ndarray  # counterclockwise vertices
    a: np.ndarray
    c: float

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.polygon)


@dataclass(frozen=True)
class CellDecomposition:
    cells: list[Cell]
    bbox: tuple[float, float, float, float]

    @property
    def box_area(self) -> float:
        xmin, ymin, xmax, ymax = self.bbox
        return (xmax - xmin) * (ymax - ymin)

    @property
    def total_area(self) -> float:
        return sum(c.area for c in self.cells)


def enumerate_cells(planar: Planar2DNetwork, bbox) -> CellDecomposition:
    """Linear regions of the network inside ``bbox``.

    Every activation pattern is tried by clipping the box with one half-plane
    per hidden unit; a branch is abandoned as soon as its polygon becomes
    negligible (area <= 1e-12 of the box), which prunes the 2^H patterns
    down to the ones that actually occur.  Cells come out in lexicographic
    pattern order (unit 0 most significant, inactive before active).
    """
    net = planar.network
    h = net.d_hidden
    if h > MAX_ENUMERATED_NEURONS:
        raise TooManyNeurons(f"{h} hidden units; enumeration supports at most {MAX_ENUMERATED_NEURONS}")
    box = _box_polygon(bbox)
    min_area = 1e-12 * polygon_area(box)
    w, b = net.w1, net.b1
    cells: list[Cell] = []
    bits = np.zeros(h, dtype=bool)

    def descend(j: int, poly: np.ndarray) -> None:
        if j == h:
            delta = bits.copy()
            a, c = planar.affine_on(delta)
            cells.append(Cell(ActivationPattern(delta), poly, a, c))
            return
        wj = w[:, j]
        for active in (False, True):
            if not np.any(wj):
                # constant preactivation: only one side exists, zero counts as inactive
                if active != (b[j] > 0):
                    continue
                sub = poly
            else:
                sign = 1.0 if active else -1.0
                sub = clip_halfplane(poly, sign * wj, sign * b[j])
            if len(sub) >= 3 and polygon_area(sub) > min_area:
                bits[j] = active
                descend(j + 1, sub)
        bits[j] = False

    descend(0, box)
    return CellDecomposition(cells, tuple(map(float, bbox)))


# --- boundary extraction -----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryExtraction:
    complex: SimplicialComplex
    open_vertices: list[int]  # degree-1 vertices: the curve runs off the box there
    decomposition: CellDecomposition = field(repr=False)

    @property
    def is_empty(self) -> bool:
        return self.complex.count(1) == 0

    @property
    def is_open(self) -> bool:
        return bool(self.open_vertices)

    def summary(self) -> str:
        if self.is_empty:
            return "empty"
        state = "open" if self.is_open else "closed"
        return f"{self.complex.vertex_count} vertices, {self.complex.count(1)} edges, {state}"


class _VertexPool:
    def __init__(self, tol: float):
        self.tol = tol
        self.points: list[np.ndarray] = []

    def add(self, p: np.ndarray) -> int:
        if self.points:
            d = np.linalg.norm(np.asarray(self.points) - p, axis=1)
            i = int(np.argmin(d))
            if d[i] <= self.tol:
                return i
        self.points.append(np.asarray(p, dtype=np.float64))
        return len(self.points) - 1


def _zero_segment(poly: np.ndarray, a: np.ndarray, c: float, eps: float, tol: float):
    s = poly @ a + c
    pts = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        si, sj = s[i], s[j]
        if abs(si) <= eps:
            pts.append(poly[i])
        elif abs(sj) > eps and si * sj < 0:
            pts.append(poly[i] + (si / (si - sj)) * (poly[j] - poly[i]))
    if len(pts) < 2:
        return None
    pts = np.array(pts)
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    if d[i, j] <= tol:
        return None
    return pts[i], pts[j]


def extract_boundary(planar: Planar2DNetwork, bbox, merge_tol: Optional[float] = None,
                     decomposition: Optional[CellDecomposition] = None) -> BoundaryExtraction:
    """Zero set of the decision function inside ``bbox`` as a 1-complex.

    On each cell the decision is affine, so its zero set is a chord of the
    cell polygon.  Chord endpoints closer than ``merge_tol`` (default 1e-9 of
    the box diagonal) are identified.
    """
    cells = decomposition if decomposition is not None else enumerate_cells(planar, bbox)
    xmin, ymin, xmax, ymax = cells.bbox
    diag = math.hypot(xmax - xmin, ymax - ymin)
    tol = 1e-9 * diag if merge_tol is None else float(merge_tol)
    zscale = max((float(np.max(np.abs(cell.polygon @ cell.a + cell.c))) for cell in cells.cells),
                 default=0.0)
    pool = _VertexPool(tol)
    edges: set[tuple[int, int]] = set()
    for cell in cells.cells:
        vals = cell.polygon @ cell.a + cell.c
        if np.max(np.abs(vals)) <= 1e-12 * zscale or zscale == 0.0:
            raise FlatCell(f"decision function vanishes on the whole cell at {cell.centroid.tolist()}")
        seg = _zero_segment(cell.polygon, cell.a, cell.c, 1e-12 * zscale, tol)
        if seg is None:
            continue
        i, j = pool.add(seg[0]), pool.add(seg[1])
        if i != j:
            edges.add((min(i, j), max(i, j)))
    used = sorted({v for e in edges for v in e})
    remap = {v: n for n, v in enumerate(used)}
    coords = np.array([pool.points[v] for v in used]).reshape(-1, 2)
    cx = build_complex(len(used), {1: sorted((remap[i], remap[j]) for i, j in edges)} if edges else {},
                       coords)
    degree = np.zeros(len(used), dtype=int)
    for i, j in cx.faces(1):
        degree[i] += 1
        degree[j] += 1
    return BoundaryExtraction(cx, [int(v) for v in np.flatnonzero(degree == 1)], cells)


# --- curves ---------------------------------------------------------------------

@dataclass(frozen=True)
class PolygonalCurve:
    """Closed polyline; stored counterclockwise (clockwise input is reversed)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise DimensionMismatch("a curve needs at least three 2-D points")
        if np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
        if polygon_area(pts) < 0:
            pts = pts[::-1].copy()
        object.__setattr__(self, "points", pts)

    @classmethod
    def circle(cls, center, radius: float, n: int = 64) -> "PolygonalCurve":
        t = 2.0 * np.pi * np.arange(n) / n
        c = np.asarray(center, dtype=np.float64)
        return cls(c + radius * np.column_stack([np.cos(t), np.sin(t)]))

    @classmethod
    def rectangle(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "PolygonalCurve":
        return cls(np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]]))

    @property
    def _cumlen(self) -> np.ndarray:
        seg = np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self._cumlen[-1])

    def point_at(self, s) -> np.ndarray:
        """Points at arc-length positions ``s`` (taken modulo the length)."""
        cum = self._cumlen
        s = np.mod(np.atleast_1d(np.asarray(s, dtype=np.float64)), cum[-1])
        i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(self.points) - 1)
        p = self.points[i]
        q = np.roll(self.points, -1, axis=0)[i]
        frac = (s - cum[i]) / (cum[i + 1] - cum[i])
        return p + frac[:, None] * (q - p)

    def contains(self, point) -> bool:
        """Even-odd point-in-polygon test."""
        x, y = map(float, point)
        inside = False
        pts = self.points
        for (x1, y1), (x2, y2) in zip(pts, np.roll(pts, -1, axis=0)):
            if (y1 > y) != (y2 > y):
                if x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
                    inside = not inside
        return inside

    def is_simple(self) -> bool:
        pts = self.points
        m = len(pts)
        segs = [(pts[i], pts[(i + 1) % m]) for i in range(m)]
        for i in range(m):
            for j in range(i + 1, m):
                if j == i + 1 or (i == 0 and j == m - 1):
                    continue
                if _segments_cross(*segs[i], *segs[j]):
                    return False
        return True


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return (orient(p1, p2, q1) != orient(p1, p2, q2)) and (orient(q1, q2, p1) != orient(q1, q2, p2))


# --- winding numbers ---------------------------------------------------------------

def _evaluate(field_: Field, points: np.ndarray) -> np.ndarray:
    v = np.asarray(field_(points), dtype=np.float64).reshape(len(points), 2)
    norms = np.hypot(v[:, 0], v[:, 1])
    bad = ~(norms > 0) | ~np.isfinite(norms)
    if np.any(bad):
        p = points[np.argmax(bad)]
        raise ZeroOnCurve(f"field vanishes or is undefined at ({p[0]:.6g}, {p[1]:.6g}); "
                          "the curve does not isolate the singular set")
    return v


def _turn(v0: np.ndarray, v1: np.ndarray) -> float:
    return math.atan2(v0[0] * v1[1] - v0[1] * v1[0], v0[0] * v1[0] + v0[1] * v1[1])


def winding_number(field_: Field, curve: PolygonalCurve, samples: int = 256,
                   refine_limit: int = 16) -> int:
    """Number of counterclockwise turns of the field along the curve.

    The field is sampled at ``samples`` arc-length-equidistant points.  Any
    interval whose direction change reaches pi/2 is bisected, at most
    ``refine_limit`` times, so every accumulated increment is below pi/2
    and the count is unambiguous.
    """
    if samples < 3:
        raise ValueError("need at least three samples")
    length = curve.length
    s = length * np.arange(samples) / samples
    v = _evaluate(field_, curve.point_at(s))
    s = np.append(s, length)
    v = np.vstack([v, v[:1]])
    total = 0.0
    stack = [(s[i], v[i], s[i + 1], v[i + 1], 0) for i in range(samples - 1, -1, -1)]
    while stack:
        s0, v0, s1, v1, depth = stack.pop()
        d = _turn(v0, v1)
        if abs(d) < math.pi / 2:
            total += d
            continue
        if depth >= refine_limit:
            p = curve.point_at(s0)[0]
            raise RefinementExhausted(
                f"field turns by {math.degrees(d):.1f} deg near ({p[0]:.6g}, {p[1]:.6g}) "
                f"after {refine_limit} refinements; it is likely discontinuous there")
        sm = 0.5 * (s0 + s1)
        vm = _evaluate(field_, curve.point_at(sm))[0]
        stack.append((sm, vm, s1, v1, depth + 1))
        stack.append((s0, v0, sm, vm, depth + 1))
    return int(round(total / (2.0 * math.pi)))


@dataclass(frozen=True)
class PoincareHopfReport:
    outer_index: int
    inner_indices: list[int]

    @property
    def sum_inner(self) -> int:
        return sum(self.inner_indices)

    @property
    def consistent(self) -> bool:
        return self.outer_index == self.sum_inner


def poincare_hopf_check(field_: Field, outer: PolygonalCurve, inner: Sequence[PolygonalCurve],
                        samples: int = 256, refine_limit: int = 16) -> PoincareHopfReport:
    """Compare the outer winding with the sum of windings around the inner curves."""
    for n, c in enumerate(inner):
        if not outer.contains(c.points[0]):
            raise CurveNesting(f"inner curve {n} starts outside the outer curve")
    return PoincareHopfReport(
        winding_number(field_, outer, samples, refine_limit),
        [winding_number(field_, c, samples, refine_limit) for c in inner],
    )


# --- fields -----------------------------------------------------------------------

class GradientField:
    """``x -> grad g_k(x)`` for a 2-input network."""

    def __init__(self, network: MlpNetwork, k: int):
        if network.d_in != 2:
            raise DimensionMismatch(f"gradient fields need d_in == 2, network has {network.d_in}")
        self.network, self.k = network, k

    def __call__(self, points) -> np.ndarray:
        return prob_gradient_batch(self.network, np.atleast_2d(points), self.k)


class ComplexPolynomialField:
    """``v(z) = prod_i f_i(z - p_i)`` with ``f_i`` the identity or conjugation.

    Each plain factor contributes index +1 at its zero, each conjugated one -1.
    """

    def __init__(self, zeros: Sequence, conjugated: Sequence[bool] = ()):
        self.zeros = [complex(*z) if not isinstance(z, complex) else z for z in zeros]
        conj = list(conjugated) + [False] * (len(self.zeros) - len(conjugated))
        self.conjugated = conj

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        z = p[:, 0] + 1j * p[:, 1]
        v = np.ones_like(z)
        for z0, conj in zip(self.zeros, self.conjugated):
            v = v * (np.conj(z - z0) if conj else (z - z0))
        return np.column_stack([v.real, v.imag])


class LinearField:
    def __init__(self, matrix, center=(0.0, 0.0)):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.center = np.asarray(center, dtype=np.float64)

    def __call__(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.center) @ self.matrix.T


class ConstantField:
    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=np.float64)

    def __call__(self, points) -> np.ndarray:
        return np.tile(self.vector, (len(np.atleast_2d(points)), 1))


def _smoothstep(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u)


class BumpModifiedField:
    """Gradient of ``beta(x) * g_k(x)``, with ``beta`` a box-shaped bump.

    ``beta`` is 1 on the box inset by ``margin`` and falls to 0 on the box
    edge through per-axis smoothstep ramps, so the modified probability
    vanishes on the boundary.
    """

    def __init__(self, network: MlpNetwork, k: int, bbox, margin: float):
        xmin, ymin, xmax, ymax = map(float, bbox)
        _box_polygon(bbox)
        if not 0 < margin < 0.5 * min(xmax - xmin, ymax - ymin):
            raise BadMargin(f"margin {margin} must lie in (0, half the box's smaller side)")
        self.gradient = GradientField(network, k)
        self.network, self.k = network, k
        self.bbox = (xmin, ymin, xmax, ymax)
        self.margin = float(margin)

    def _axis(self, u: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        m = self.margin
        r_lo, d_lo = _smoothstep((u - lo) / m)
        r_hi, d_hi = _smoothstep((hi - u) / m)
        return r_lo * r_hi, (d_lo * r_hi - r_lo * d_hi) / m

    def bump(self, points) -> tuple[np.ndarray, np.ndarray]:
        """``beta`` and its gradient at each point."""
        p = np.atleast_2d(points)
        xmin, ymin, xmax, ymax = self.bbox
        rx, dx = self._axis(p[:, 0], xmin, xmax)
        ry, dy = self._axis(p[:, 1], ymin, ymax)
        return rx * ry, np.column_stack([dx * ry, rx * dy])

    def probability(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        beta, _ = self.bump(p)
        return beta * forward_batch(self.network, p).probs[:, self.k]

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        beta, dbeta = self.bump(p)
        g = forward_batch(self.network, p).probs[:, self.k]
        return beta[:, None] * self.gradient(p) + g[:, None] * dbeta


def bump_modified_field(network, k: int, bbox, margin: float) -> BumpModifiedField:
    if isinstance(network, Planar2DNetwork):
        network = network.network
    return BumpModifiedField(network, k, bbox, margin)


DEMO_FIELDS: dict[str, Callable[[], Field]] = {
    "source": lambda: LinearField(np.eye(2)),
    "sink": lambda: LinearField(-np.eye(2)),
    "saddle": lambda: LinearField(np.diag([1.0, -1.0])),
    "degree2": lambda: ComplexPolynomialField([0j, 0j]),
    "three-zero": lambda: ComplexPolynomialField([-2 + 0j, 2 + 0j, 2j], [False, False, True]),
    "constant": lambda: ConstantField([1.0, 0.0]),
}

# zeros of the three-zero demo and a radius that isolates each of them
THREE_ZERO_POINTS = [(-2.0, 0.0), (2.0, 0.0), (0.0, 2.0)]
THREE_ZERO_RADIUS = 0.5


@dataclass(frozen=True)
class SingularityScan:
    singular: list[tuple[PolygonalCurve, int]]  # grid squares with nonzero index
    failed: list[PolygonalCurve]  # squares whose winding could not be resolved

    @property
    def total_index(self) -> int:
        return sum(i for _, i in self.singular)


def scan_singularities(field_: Field, region, n: int = 40, samples: int = 32,
                       refine_limit: int = 16) -> SingularityScan:
    """Winding number of every square of an ``n x n`` grid over ``region``.

    Squares with nonzero index isolate the field's singular points and make
    ready-made inner curves for :func:`poincare_hopf_check`.
    """
    xmin, ymin, xmax, ymax = map(float, region)
    _box_polygon(region)
    xs = np.linspace(xmin, xmax, n + 1)
    ys = np.linspace(ymin, ymax, n + 1)
    singular, failed = [], []
    for i in range(n):
        for j in range(n):
            square = PolygonalCurve.rectangle(xs[i], ys[j], xs[i + 1], ys[j + 1])
            try:
                w = winding_number(field_, square, samples, refine_limit)
            except (ZeroOnCurve, RefinementExhausted):
                failed.append(square)
                continue
            if w:
                singular.append((square, w))
    return SingularityScan(singular, failed)
