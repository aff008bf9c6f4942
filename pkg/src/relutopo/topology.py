"""Simplicial complexes and their integral homology.

Simplices are stored as ascending vertex tuples; the boundary of
``(v0, ..., vk)`` is ``sum_i (-1)^i (v0, ..., v̂i, ..., vk)``.  Homology uses
integer coefficients, reduced via Smith normal form in checked 64-bit
arithmetic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    BadDimension,
    BadVertexId,
    DegenerateSimplex,
    DuplicateSimplex,
    MissingFace,
    Overflow,
    ParseError,
)

INT64_MAX = np.iinfo(np.int64).max


@dataclass(frozen=True)
class SimplicialComplex:
    """A closed-under-faces set of simplices; build with :func:`build_complex`."""

    vertex_count: int
    simplices: dict[int, list[tuple[int, ...]]]
    vertex_coords: Optional[np.ndarray] = field(default=None, compare=False)
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        dims = [k for k, s in self.simplices.items() if s]
        if dims:
            return max(dims)
        return 0 if self.vertex_count else -1

    def count(self, k: int) -> int:
        if k == 0:
            return self.vertex_count
        return len(self.simplices.get(k, ()))

    def faces(self, k: int) -> list[tuple[int, ...]]:
        if k == 0:
            return [(v,) for v in range(self.vertex_count)]
        return self.simplices.get(k, [])

    def index(self, k: int) -> dict[tuple[int, ...], int]:
        if k not in self._index:
            self._index[k] = {s: i for i, s in enumerate(self.faces(k))}
        return self._index[k]


def build_complex(vertex_count: int, simplices: Mapping[int, Sequence[Sequence[int]]] | None = None,
                  vertex_coords=None) -> SimplicialComplex:
    """Validate and canonicalize a complex.

    ``simplices`` maps a dimension ``k >= 1`` to ``(k+1)``-tuples of vertex
    ids.  Tuples are sorted; within each dimension simplices are kept in
    lexicographic order.
    """
    if vertex_count < 0:
        raise BadVertexId("vertex_count must be non-negative")
    simplices = dict(simplices or {})
    canon: dict[int, list[tuple[int, ...]]] = {}
    for k in sorted(simplices, key=int):
        dim = int(k)
        if dim < 1:
            raise BadDimension(f"simplices must have dimension >= 1, got {dim}")
        seen = set()
        for raw in simplices[k]:
            s = tuple(sorted(int(v) for v in raw))
            if len(s) != dim + 1:
                raise BadDimension(f"{tuple(raw)} listed under dimension {dim} has {len(s)} vertices")
            if len(set(s)) != len(s):
                raise DegenerateSimplex(f"simplex {tuple(raw)} repeats a vertex")
            if s[0] < 0 or s[-1] >= vertex_count:
                raise BadVertexId(f"simplex {tuple(raw)} uses a vertex outside 0..{vertex_count - 1}")
            if s in seen:
                raise DuplicateSimplex(f"simplex {s} appears twice in dimension {dim}")
            seen.add(s)
        if seen:
            canon[dim] = sorted(seen)
    for dim, faces in canon.items():
        if dim < 2:
            continue
        below = set(canon.get(dim - 1, ()))
        for s in faces:
            for face in combinations(s, dim):
                if face not in below:
                    raise MissingFace(f"face {face} of {s} is missing")
    top = max(canon, default=0)
    for dim in range(1, top + 1):
        canon.setdefault(dim, [])
    coords = None
    if vertex_coords is not None:
        coords = np.asarray(vertex_coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[0] != vertex_count:
            raise BadVertexId(f"vertex_coords must hold {vertex_count} rows")
    return SimplicialComplex(vertex_count, canon, coords)


@dataclass(frozen=True)
class BoundaryMatrix:
    k: int
    entries: np.ndarray  # int64, rows = (k-1)-simplices, cols = k-simplices


def boundary_matrix(complex_: SimplicialComplex, k: int) -> BoundaryMatrix:
    if not 1 <= k <= complex_.dimension:
        raise BadDimension(f"no boundary operator in dimension {k} (complex has dimension {complex_.dimension})")
    rows = complex_.index(k - 1)
    cols = complex_.faces(k)
    m = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for j, s in enumerate(cols):
        for i in range(k + 1):
            m[rows[s[:i] + s[i + 1:]], j] = 1 if i % 2 == 0 else -1
    return BoundaryMatrix(k, m)


# --- Smith normal form ----------------------------------------------------------

@dataclass(frozen=True)
class SnfResult:
    diag: list[int]  # d1 | d2 | ... ; trailing zeros included
    rank: int


def _check(bound: int, what: str) -> None:
    if bound > INT64_MAX:
        raise Overflow(f"{what} may exceed the 64-bit range; the complex needs big-integer arithmetic")


def _absmax(a: np.ndarray) -> int:
    # Python int: the bound checks below must not wrap around
    return int(np.abs(a).max()) if a.size else 0


def _eliminate(a: np.ndarray, target: slice, pivot_row: np.ndarray, q: np.ndarray) -> None:
    """``a[target] -= q[:, None] * pivot_row`` with an overflow guard."""
    if not np.any(q):
        return
    _check(_absmax(a[target]) + _absmax(q) * _absmax(pivot_row), "row reduction")
    a[target] -= q[:, None] * pivot_row[None, :]


def smith_normal_form(matrix) -> SnfResult:
    """Invariant factors of an integer matrix.

    Unimodular row and column operations, pivoting on the smallest-magnitude
    non-zero entry of the remaining block.  Raises :class:`Overflow` if an
    intermediate could leave the signed 64-bit range.
    """
    a = np.array(matrix, dtype=object)
    if a.ndim != 2:
        raise ValueError("smith_normal_form expects a 2-D matrix")
    if a.size and _absmax(a) > INT64_MAX:
        raise Overflow("input entries exceed the 64-bit range")
    a = a.astype(np.int64)
    m, n = a.shape
    diag: list[int] = []
    for t in range(min(m, n)):
        block = a[t:, t:]
        nz = np.argwhere(block != 0)
        if len(nz) == 0:
            break
        mags = np.abs(block[nz[:, 0], nz[:, 1]])
        i, j = nz[np.argmin(mags)] + t
        a[[t, i]] = a[[i, t]]
        a[:, [t, j]] = a[:, [j, t]]
        while True:
            p = a[t, t]
            _eliminate(a, slice(t + 1, m), a[t], a[t + 1:, t] // p)
            _eliminate(a.T, slice(t + 1, n), a[:, t], a[t, t + 1:] // p)
            rest_col = a[t + 1:, t]
            rest_row = a[t, t + 1:]
            if np.any(rest_col) or np.any(rest_row):
                # a remainder smaller than the pivot survived: move it to the pivot slot
                cands = [(abs(int(v)), 0, r + t + 1) for r, v in enumerate(rest_col) if v]
                cands += [(abs(int(v)), 1, c + t + 1) for c, v in enumerate(rest_row) if v]
                _, axis, idx = min(cands)
                if axis == 0:
                    a[[t, idx]] = a[[idx, t]]
                else:
                    a[:, [t, idx]] = a[:, [idx, t]]
                continue
            sub = a[t + 1:, t + 1:]
            bad = np.argwhere(sub % p != 0)
            if len(bad) == 0:
                break
            r = bad[0][0] + t + 1
            _check(_absmax(a[t]) + _absmax(a[r]), "divisibility fix-up")
            a[t] += a[r]
        diag.append(abs(int(a[t, t])))
    rank = len(diag)
    diag += [0] * (min(m, n) - rank)
    return SnfResult(diag, rank)


# --- homology ----------------------------------------------------------------

@dataclass(frozen=True)
class HomologyResult:
    betti: list[int]
    torsion: list[list[int]]  # per dimension, invariant factors > 1
    euler: int

    def group(self, k: int) -> str:
        """Human-readable isomorphism type, e.g. ``Z^2 + Z/2``."""
        parts = []
        b = self.betti[k]
        if b == 1:
            parts.append("Z")
        elif b > 1:
            parts.append(f"Z^{b}")
        parts += [f"Z/{t}" for t in self.torsion[k]]
        return " + ".join(parts) if parts else "0"


def _rank_and_factors(complex_: SimplicialComplex, k: int) -> tuple[int, list[int]]:
    if k < 1 or k > complex_.dimension or complex_.count(k) == 0 or complex_.count(k - 1) == 0:
        return 0, []
    snf = smith_normal_form(boundary_matrix(complex_, k).entries)
    return snf.rank, [d for d in snf.diag[:snf.rank] if d > 1]


def homology(complex_: SimplicialComplex) -> HomologyResult:
    top = complex_.dimension
    if top < 0:
        return HomologyResult([], [], 0)
    ranks, factors = {}, {}
    for k in range(1, top + 2):
        ranks[k], factors[k] = _rank_and_factors(complex_, k)
    betti, torsion = [], []
    for k in range(top + 1):
        betti.append(complex_.count(k) - ranks.get(k, 0) - ranks[k + 1])
        torsion.append(factors[k + 1])
    chi = euler_characteristic(complex_)
    if chi != sum((-1) ** k * b for k, b in enumerate(betti)):
        raise AssertionError("Euler characteristic from Betti numbers disagrees with simplex counts")
    return HomologyResult(betti, torsion, chi)


def euler_characteristic(complex_: SimplicialComplex) -> int:
    return sum((-1) ** k * complex_.count(k) for k in range(complex_.dimension + 1))


# --- JSON file format ----------------------------------------------------------

def complex_to_json(complex_: SimplicialComplex) -> str:
    doc: dict = {"vertex_count": complex_.vertex_count}
    if complex_.vertex_coords is not None:
        doc["vertex_coords"] = complex_.vertex_coords.tolist()
    doc["simplices"] = {str(k): [list(s) for s in v] for k, v in sorted(complex_.simplices.items())}
    return json.dumps(doc, indent=1) + "\n"


def complex_from_json(text) -> SimplicialComplex:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid complex JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("vertex_count"), int):
        raise ParseError("complex JSON needs an integer 'vertex_count'")
    simp = doc.get("simplices", {})
    if not isinstance(simp, dict):
        raise ParseError("'simplices' must map dimensions to simplex lists")
    try:
        simp = {int(k): v for k, v in simp.items()}
    except ValueError as exc:
        raise ParseError("simplex dimensions must be integers") from exc
    return build_complex(doc["vertex_count"], simp, doc.get("vertex_coords"))


# --- standard complexes ------------------------------------------------------------

def cycle_graph(n: int) -> SimplicialComplex:
    return build_complex(n, {1: [(i, (i + 1) % n) for i in range(n)]})


def hexagon() -> SimplicialComplex:
    """The six-edge cycle a-b-c-d-e-f with vertices 0..5."""
    return cycle_graph(6)


def _closure(vertex_count: int, top: Sequence[Sequence[int]]) -> SimplicialComplex:
    by_dim: dict[int, set] = {}
    for s in top:
        s = tuple(sorted(s))
        for size in range(2, len(s) + 1):
            by_dim.setdefault(size - 1, set()).update(combinations(s, size))
    return build_complex(vertex_count, {k: sorted(v) for k, v in by_dim.items()})


def filled_triangle() -> SimplicialComplex:
    return _closure(3, [(0, 1, 2)])


def two_circles() -> SimplicialComplex:
    return build_complex(6, {1: [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]})


def octahedron() -> SimplicialComplex:
    """Boundary of the octahedron: poles 0, 5 over the square 1-2-3-4."""
    tris = []
    for i in range(4):
        a, b = 1 + i, 1 + (i + 1) % 4
        tris += [(0, a, b), (5, a, b)]
    return _closure(6, tris)


def torus7() -> SimplicialComplex:
    """Minimal (Möbius/Császár) 7-vertex, 14-triangle torus."""
    tris = []
    for i in range(7):
        tris.append((i, (i + 1) % 7, (i + 3) % 7))
        tris.append((i, (i + 2) % 7, (i + 3) % 7))
    return _closure(7, tris)


def projective_plane6() -> SimplicialComplex:
    """Minimal 6-vertex, 10-triangle real projective plane."""
    tris = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5), (0, 5, 1),
            (1, 2, 4), (2, 3, 5), (3, 4, 1), (4, 5, 2), (5, 1, 3)]
    return _closure(6, tris)


CATALOG = {
    "point": lambda: build_complex(1),
    "hexagon": hexagon,
    "filled-triangle": filled_triangle,
    "two-circles": two_circles,
    "octahedron": octahedron,
    "torus": torus7,
    "projective-plane": projective_plane6,
}
