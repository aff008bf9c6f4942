"""Euler integration of class-probability gradient flows and orbit analysis."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    BadClassIndex,
    ComplexEigenvalues,
    DegenerateEigenvalues,
    DimensionMismatch,
    EmptyInput,
    NetworkMismatch,
    NonFiniteInput,
    NonFiniteState,
    TooShort,
)
from .mlp import ActivationPattern, MlpNetwork, forward_batch, prob_gradient_from_trace


class Termination(str, enum.Enum):
    MAX_ITERS = "MaxIters"
    GRAD_TOL = "GradTol"


@dataclass(frozen=True)
class FlowConfig:
    """Integration settings.

    ``fixed_class=None`` follows the gradient of the currently most probable
    class (ties to the lowest index); an integer follows that class only.
    """

    step: float = 0.05
    max_iters: int = 100
    fixed_class: Optional[int] = None
    grad_tol: float = 1e-8
    clamp_to_cube: bool = False
    snapshot_iters: tuple[int, ...] = (0, 9, 99)

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be non-negative")

    @property
    def mode(self) -> str:
        return "argmax" if self.fixed_class is None else f"fixed:{self.fixed_class}"

    @staticmethod
    def parse_mode(text: str) -> Optional[int]:
        """``"argmax"`` -> None, ``"fixed:K"`` -> K."""
        if text == "argmax":
            return None
        if text.startswith("fixed:"):
            try:
                return int(text[len("fixed:"):])
            except ValueError:
                pass
        raise ValueError(f"mode must be 'argmax' or 'fixed:K', got {text!r}")


@dataclass
class Orbit:
    seed_id: int
    states: np.ndarray          # (N+1, d)
    probs: np.ndarray           # followed-class probability at each state
    classes: np.ndarray         # argmax class at each state
    grad_norms: np.ndarray
    pattern_flips: np.ndarray   # hidden units whose activation changed since the previous state
    patterns: np.ndarray        # (N+1, d_hidden) bool
    terminated_by: Termination
    left_cube: bool = False

    @property
    def iterations(self) -> int:
        return len(self.states) - 1

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: int) -> np.ndarray:
        """State at iteration ``t``; orbits that stopped early stay at their last state."""
        return self.states[min(t, len(self.states) - 1)]


def euler_flow_batch(network: MlpNetwork, x0, config: FlowConfig = FlowConfig(),
                     seed_ids: Optional[Sequence[int]] = None) -> list[Orbit]:
    """Integrate ``x <- x + step * grad g_c(x)`` from every row of ``x0``.

    At least one step is taken (unless ``max_iters == 0``).  An orbit stops
    with ``GradTol`` as soon as the gradient norm at a newly reached state is
    below ``grad_tol``, otherwise after ``max_iters`` steps.  Leaving the
    unit cube is recorded in ``left_cube`` and does not stop integration.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    if x.ndim != 2 or x.shape[1] != network.d_in:
        raise DimensionMismatch(f"expected initial states of shape (n, {network.d_in}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("initial states contain non-finite values")
    k = config.fixed_class
    if k is not None and not 0 <= k < network.d_out:
        raise BadClassIndex(f"class {k} out of range 0..{network.d_out - 1}")
    n, d = x.shape
    if seed_ids is None:
        seed_ids = range(n)
    seed_ids = list(seed_ids)
    if len(seed_ids) != n:
        raise DimensionMismatch("one seed id per initial state is required")

    steps = config.max_iters + 1
    states = np.empty((steps, n, d))
    probs = np.empty((steps, n))
    classes = np.empty((steps, n), dtype=np.int64)
    norms = np.empty((steps, n))
    flips = np.zeros((steps, n), dtype=np.int64)
    patterns = np.empty((steps, n, network.d_hidden), dtype=bool)
    end = np.full(n, config.max_iters)
    why = [Termination.MAX_ITERS] * n
    active = np.ones(n, dtype=bool)
    rows = np.arange(n)

    for t in range(steps):
        trace = forward_batch(network, x)
        argmax = np.argmax(trace.probs, axis=1)
        followed = argmax if k is None else np.full(n, k)
        grad = prob_gradient_from_trace(network, trace, followed)
        gn = np.linalg.norm(grad, axis=1)
        pat = trace.preact1 > 0

        live = np.flatnonzero(active)
        states[t, live] = x[live]
        probs[t, live] = trace.probs[live, followed[live]]
        classes[t, live] = argmax[live]
        norms[t, live] = gn[live]
        patterns[t, live] = pat[live]
        if t > 0:
            flips[t, live] = np.count_nonzero(pat[live] != patterns[t - 1, live], axis=1)
            for i in live[gn[live] < config.grad_tol]:
                active[i] = False
                end[i] = t
                why[i] = Termination.GRAD_TOL
        if t == config.max_iters or not active.any():
            break
        move = active[:, None]
        with np.errstate(over="ignore", invalid="ignore"):  # checked just below
            x = np.where(move, x + config.step * grad, x)
        if config.clamp_to_cube:
            x = np.where(move, np.clip(x, 0.0, 1.0), x)
        if not np.all(np.isfinite(x[active])):
            bad = [seed_ids[i] for i in rows[active] if not np.all(np.isfinite(x[i]))]
            raise NonFiniteState(
                f"orbit state became non-finite at iteration {t + 1} (seeds {bad[:5]}); "
                "reduce the step size")

    orbits = []
    for i in range(n):
        m = end[i] + 1
        s = states[:m, i].copy()
        orbits.append(Orbit(
            seed_id=int(seed_ids[i]),
            states=s,
            probs=probs[:m, i].copy(),
            classes=classes[:m, i].copy(),
            grad_norms=norms[:m, i].copy(),
            pattern_flips=flips[:m, i].copy(),
            patterns=patterns[:m, i].copy(),
            terminated_by=why[i],
            left_cube=bool(np.any((s < 0.0) | (s > 1.0))),
        ))
    return orbits


def euler_flow(network: MlpNetwork, x0, config: FlowConfig = FlowConfig(),
               seed_id: int = 0) -> Orbit:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1:
        raise DimensionMismatch(f"expected a single state vector, got shape {x0.shape}")
    return euler_flow_batch(network, x0[None, :], config, [seed_id])[0]


def iterate_flows(network: MlpNetwork, x0, config: FlowConfig = FlowConfig(),
                  seed_ids: Optional[Sequence[int]] = None,
                  chunk_size: int = 100) -> Iterator[Orbit]:
    """Yield orbits for many seeds, integrating ``chunk_size`` at a time.

    Keeps memory bounded: full state histories for 1000 MNIST seeds would
    need several hundred megabytes at once.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if seed_ids is None:
        seed_ids = range(len(x0))
    seed_ids = list(seed_ids)
    for start in range(0, len(x0), chunk_size):
        yield from euler_flow_batch(network, x0[start:start + chunk_size], config,
                                    seed_ids[start:start + chunk_size])


def orbit_speed_profile(orbit: Orbit) -> list[tuple[int, float, float]]:
    """``(t, grad_norm at x^{t-1}, |x^t - x^{t-1}|)`` for t = 1..N."""
    states = np.asarray(orbit.states)
    if len(states) < 2:
        raise TooShort("a speed profile needs at least two states")
    disp = np.linalg.norm(np.diff(states, axis=0), axis=1)
    return [(t, float(orbit.grad_norms[t - 1]), float(disp[t - 1]))
            for t in range(1, len(states))]


def probability_decreases(orbit: Orbit, tol: float = 1e-6) -> np.ndarray:
    """Steps ``t`` (1-based) where the followed probability dropped by more than ``tol``."""
    p = np.asarray(orbit.probs)
    return np.flatnonzero(p[1:] < p[:-1] - tol) + 1


def class_switches_after_confident(orbit: Orbit, threshold: float = 0.99) -> np.ndarray:
    """Iterations where the argmax class changed after its probability exceeded ``threshold``."""
    confident = np.flatnonzero(np.asarray(orbit.probs) > threshold)
    if len(confident) == 0:
        return np.array([], dtype=np.int64)
    first = confident[0]
    c = np.asarray(orbit.classes)
    return np.flatnonzero(c[first + 1:] != c[first:-1]) + first + 1


# --- attractor clustering ----------------------------------------------------

@dataclass(frozen=True)
class Cluster:
    class_id: int
    centroid: np.ndarray
    member_count: int
    mean_radius: float
    purity: float             # fraction of members carrying the majority class
    members: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class AttractorReport:
    clusters: list[Cluster]

    @property
    def cluster_count(self) -> int:
        return len(self.clusters)

    def majority_classes(self) -> list[int]:
        return [c.class_id for c in self.clusters]


def default_cluster_radius(dim: int) -> float:
    return 0.05 * math.sqrt(dim)


def cluster_endpoints(endpoints, classes, radius: float) -> AttractorReport:
    """Single-linkage clusters: points joined by chains of gaps ``<= radius``.

    Clusters are ordered by their lowest member index.  The reported class of
    a cluster is the most common entry of ``classes`` among its members
    (ties to the lowest class).
    """
    pts = np.asarray(endpoints, dtype=np.float64)
    labels = np.asarray(classes, dtype=np.int64)
    if pts.ndim != 2 or len(pts) == 0:
        raise EmptyInput("no endpoints to cluster")
    if len(labels) != len(pts):
        raise DimensionMismatch("one class per endpoint is required")
    if not radius > 0:
        raise ValueError("radius must be positive")
    n = len(pts)
    pairs = cKDTree(pts).query_pairs(r=radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    # relabel components by first appearance for a stable order
    _, first = np.unique(comp, return_index=True)
    clusters = []
    for c in comp[np.sort(first)]:
        members = np.flatnonzero(comp == c)
        counts = np.bincount(labels[members])
        cls = int(np.argmax(counts))
        centroid = pts[members].mean(axis=0)
        clusters.append(Cluster(
            class_id=cls,
            centroid=centroid,
            member_count=len(members),
            mean_radius=float(np.mean(np.linalg.norm(pts[members] - centroid, axis=1))),
            purity=float(counts[cls] / len(members)),
            members=members,
        ))
    return AttractorReport(clusters)


# --- PCA ---------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray    # (c, d), orthonormal rows
    eigenvalues: np.ndarray   # (c,), non-increasing
    degenerate: bool = False  # fewer than c non-zero eigenvalues

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise DimensionMismatch(
                f"model dimension is {self.mean.shape[0]}, got vectors of length {x.shape[-1]}")
        return (x - self.mean) @ self.components.T


def pca_fit(data, c: int = 2) -> PcaModel:
    """Top-``c`` eigenvectors of the sample covariance (``n - 1`` normalization).

    Each component's sign is chosen so its largest-magnitude entry is
    positive.  Rank-deficient data still returns a model, with the missing
    eigenvalues set to zero and ``degenerate`` set.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"data must be a 2-D array, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise EmptyInput("PCA needs at least two samples")
    if not 1 <= c <= d:
        raise DimensionMismatch(f"cannot extract {c} components from dimension {d}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:c]
    w = w[order]
    v = v[:, order].T.copy()
    for row in v:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    scale = max(float(w[0]), 0.0)
    zero = w <= 1e-12 * scale if scale > 0 else np.ones(c, dtype=bool)
    w = np.where(zero, 0.0, w)
    return PcaModel(mean, v, w, bool(zero.any()))


def pca_project(model: PcaModel, x) -> np.ndarray:
    return model.project(x)


# --- linear demo ---------------------------------------------------------------

@dataclass(frozen=True)
class LinearDemoResult:
    orbit: Orbit
    eigenvalues: np.ndarray       # descending; entry 0 dominates as t grows
    eigenvectors: np.ndarray      # columns, unit length
    slow_direction: np.ndarray
    angles_deg: np.ndarray        # angle between x^t and the slow eigen-line
    alignment_iter: Optional[int]  # first t after which every angle stays below the threshold
    dt: float


def linear_eigen(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and unit eigenvectors of a real 2x2 matrix.

    Uses the characteristic polynomial ``l^2 - tr l + det``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (2, 2):
        raise DimensionMismatch(f"expected a 2x2 matrix, got shape {a.shape}")
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    disc = tr * tr - 4.0 * det
    scale = tr * tr + 4.0 * abs(det)
    if abs(disc) <= 1e-14 * scale or (scale == 0.0):
        raise DegenerateEigenvalues("repeated eigenvalue; no distinct slow direction")
    if disc < 0:
        raise ComplexEigenvalues("matrix has complex eigenvalues")
    root = math.sqrt(disc)
    if tr == 0.0:
        lams = (root / 2.0, -root / 2.0)
    else:
        q = 0.5 * (tr + math.copysign(root, tr))
        lams = (q, det / q)
    lams = np.array(sorted(lams, reverse=True))
    vecs = np.empty((2, 2))
    for i, lam in enumerate(lams):
        c1 = np.array([a[0, 1], lam - a[0, 0]])
        c2 = np.array([lam - a[1, 1], a[1, 0]])
        v = c1 if np.linalg.norm(c1) >= np.linalg.norm(c2) else c2
        v = v / np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        vecs[:, i] = v
    return lams, vecs


def linear_closed_form(a, x0, t) -> np.ndarray:
    """Exact solution of ``x' = A x`` at times ``t`` (scalar or array), via the eigenbasis."""
    lams, vecs = linear_eigen(a)
    coeff = np.linalg.solve(vecs, np.asarray(x0, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    return (np.exp(np.outer(t, lams)) * coeff) @ vecs.T


def line_angle_deg(x: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Unsigned angle (degrees, in [0, 90]) between each row of ``x`` and a line."""
    x = np.atleast_2d(x)
    norms = np.linalg.norm(x, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.abs(x @ direction) / norms
    return np.degrees(np.arccos(np.clip(cos, 0.0, 1.0)))


def alignment_iteration(angles_deg: np.ndarray, threshold_deg: float = 5.0) -> Optional[int]:
    ok = np.asarray(angles_deg) < threshold_deg
    if len(ok) == 0 or not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return int(bad[-1] + 1) if len(bad) else 0


def linear_flow_demo(a, x0, dt: float = 0.01, steps: int = 2000,
                     threshold_deg: float = 5.0) -> LinearDemoResult:
    """Euler orbit of ``x' = A x`` plus the eigen-structure that explains it."""
    a = np.asarray(a, dtype=np.float64)
    lams, vecs = linear_eigen(a)
    if not dt > 0 or steps < 0:
        raise ValueError("dt must be positive and steps non-negative")
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (2,):
        raise DimensionMismatch("initial state must be a 2-vector")
    states = np.empty((steps + 1, 2))
    states[0] = x
    for t in range(steps):
        x = x + dt * (a @ x)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"linear orbit overflowed at step {t + 1}")
        states[t + 1] = x
    slow = vecs[:, 0]
    angles = line_angle_deg(states, slow)
    m = steps + 1
    orbit = Orbit(
        seed_id=0,
        states=states,
        probs=np.full(m, np.nan),
        classes=np.full(m, -1, dtype=np.int64),
        grad_norms=np.linalg.norm(states @ a.T, axis=1),
        pattern_flips=np.zeros(m, dtype=np.int64),
        patterns=np.zeros((m, 0), dtype=bool),
        terminated_by=Termination.MAX_ITERS,
    )
    return LinearDemoResult(orbit, lams, vecs, slow, angles,
                            alignment_iteration(angles, threshold_deg), dt)


# --- singularity scan ------------------------------------------------------------

@dataclass(frozen=True)
class SingularityReport:
    flip_iters: list[int]
    flip_counts: list[int]
    final_pattern: ActivationPattern
    inactive_count: int


def singularity_scan(network: MlpNetwork, orbit: Orbit) -> SingularityReport:
    """Iterations where the orbit crossed an activation boundary.

    The field is discontinuous across those boundaries.  Patterns are
    recomputed from the stored states and must match the orbit's record.
    """
    try:
        pre = forward_batch(network, orbit.states).preact1
    except DimensionMismatch as exc:
        raise NetworkMismatch(str(exc)) from exc
    pats = pre > 0
    if pats.shape != np.shape(orbit.patterns) or not np.array_equal(pats, orbit.patterns):
        raise NetworkMismatch("recomputed activation patterns differ from the orbit's record")
    counts = np.count_nonzero(pats[1:] != pats[:-1], axis=1)
    iters = np.flatnonzero(counts) + 1
    final = ActivationPattern(pats[-1].copy())
    return SingularityReport([int(t) for t in iters], [int(counts[t - 1]) for t in iters],
                             final, final.inactive_count)
