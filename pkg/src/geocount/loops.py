"""Discrete free loops: storage, resampling, covers, alignment, decomposition.

A loop is N ambient points read as samples of a closed curve at the uniform
parameters theta_i = i/N on the unit interval.  All calculus on loops is
spectral (trigonometric interpolation), so smooth loops converge faster than
any power of the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import _spectral, geometry
from .geometry import GeometryError, MetricSpec

MIN_NODES = 16


class LoopError(ValueError):
    """Malformed node data for a discrete loop."""


@dataclass(frozen=True, eq=False)
class DiscreteLoop:
    """Closed polygonal-spectral loop on a metric surface.

    ``nodes`` has shape (N, m) with N >= 16 and divisible by 4 (the residual
    Jacobian coloring needs stencil-disjoint classes mod 4).  The array is
    frozen; all operations return new loops.
    """

    metric: MetricSpec
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 2:
            raise LoopError("nodes must be a (N, m) array")
        n, m = nodes.shape
        if n < MIN_NODES or n % 4 != 0:
            raise LoopError(f"node count {n} must be >= {MIN_NODES} and divisible by 4")
        if m != self.metric.ambient_dim:
            raise LoopError(f"nodes have dimension {m}, metric expects {self.metric.ambient_dim}")
        if not np.all(np.isfinite(nodes)):
            raise LoopError("nodes must be finite")
        nodes = nodes.copy()
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.nodes.shape[1]


def velocity(loop: DiscreteLoop) -> np.ndarray:
    """d gamma / d theta at the nodes (unit-interval parametrization)."""
    return _spectral.derivative(loop.nodes)


def speeds(loop: DiscreteLoop) -> np.ndarray:
    return geometry.speed(loop.metric, loop.nodes, velocity(loop))


def length(loop: DiscreteLoop) -> float:
    """Riemannian length by the periodic trapezoid rule.

    On a periodic uniform grid the trapezoid rule is spectrally accurate, so
    the discretization error is dominated by the node error of the loop
    itself, not by the quadrature.
    """
    return float(np.mean(speeds(loop)))


def resample(loop: DiscreteLoop, n: int) -> DiscreteLoop:
    """Band-limited change of node count, re-projected onto the surface."""
    nodes = _spectral.resample(loop.nodes, n)
    return DiscreteLoop(loop.metric, geometry.surface_project(loop.metric, nodes))


def rotate(loop: DiscreteLoop, k: int) -> DiscreteLoop:
    """Shift the starting node: new node i is old node (i + k) mod N."""
    return DiscreteLoop(loop.metric, np.roll(loop.nodes, -int(k), axis=0))


def fractional_rotate(loop: DiscreteLoop, s: float) -> DiscreteLoop:
    """Rotate the parametrization by a real shift s in units of the period."""
    nodes = _spectral.fractional_shift(loop.nodes, float(s))
    return DiscreteLoop(loop.metric, geometry.surface_project(loop.metric, nodes))


def reverse(loop: DiscreteLoop) -> DiscreteLoop:
    """Orientation-reversed loop through the same points, fixing node 0."""
    return DiscreteLoop(loop.metric, np.roll(loop.nodes[::-1], 1, axis=0))


def cover(loop: DiscreteLoop, d: int) -> DiscreteLoop:
    """The degree-d iterate: same geometric circle traversed d times.

    With uniform parameters the d-cover's nodes are an exact d-fold tile of
    the base nodes.
    """
    d = int(d)
    if d < 1:
        raise LoopError("cover degree must be >= 1")
    return DiscreteLoop(loop.metric, np.tile(loop.nodes, (d, 1)))


@dataclass(frozen=True)
class DecomposeResult:
    base: DiscreteLoop
    degree: int
    mismatch: float  # worst node deviation of the best tiling, absolute


def primitive_decompose(loop: DiscreteLoop, tol: float = 1e-7) -> DecomposeResult:
    """Write the loop as the d-fold cover of a primitive base.

    Checks every divisor d of N in decreasing order: the loop is a d-cover
    exactly when shifting by N/d nodes reproduces it.  The tolerance is
    relative to the coordinate scale.
    """
    nodes = loop.nodes
    n = loop.n
    scale = float(np.max(np.abs(nodes)))
    best_d, best_mis = 1, 0.0
    for d in range(n, 1, -1):
        if n % d != 0:
            continue
        step = n // d
        mis = float(np.max(np.abs(np.roll(nodes, -step, axis=0) - nodes)))
        if mis <= tol * scale:
            base_nodes = nodes[:step]
            if step < MIN_NODES or step % 4 != 0:
                target = max(MIN_NODES, int(2 ** np.ceil(np.log2(step))))
                base_nodes = geometry.surface_project(
                    loop.metric, _spectral.resample(base_nodes, target))
            return DecomposeResult(DiscreteLoop(loop.metric, base_nodes), d, mis)
    return DecomposeResult(loop, best_d, best_mis)


def canonical_offset(loop: DiscreteLoop) -> int:
    """Node index of the lexicographically smallest node (rounded at 1e-12)."""
    nodes = np.round(loop.nodes, 12)
    keys = tuple(nodes[:, j] for j in range(nodes.shape[1] - 1, -1, -1))
    return int(np.lexsort(keys)[0])


def canonicalize(loop: DiscreteLoop) -> DiscreteLoop:
    """Rotate the node labels so the canonical offset sits at index 0."""
    return rotate(loop, canonical_offset(loop))


def align_rotation(ref: DiscreteLoop, other: DiscreteLoop):
    """Best continuous rotation of ``other`` matching ``ref``.

    Converged copies of one geodesic differ by an arbitrary fractional
    rotation of the parameter, so alignment cannot stop at integer node
    shifts: the integer offset comes from an FFT cross-correlation and is
    refined by minimizing the node mismatch over a real-valued shift.

    Returns (shift, distance): ``other`` rotated by ``shift`` best matches
    ``ref``, and ``distance`` is the worst remaining node distance.
    """
    a = ref.nodes
    b = other.nodes if other.n == ref.n else _spectral.resample(other.nodes, ref.n)
    n = a.shape[0]
    fa = np.fft.fft(a, axis=0)
    fb = np.fft.fft(b, axis=0)
    corr = np.fft.ifft(np.sum(np.conj(fa) * fb, axis=1)).real
    k0 = int(np.argmax(corr))

    def mismatch(s):
        shifted = _spectral.fractional_shift(b, s)
        return float(np.max(np.linalg.norm(shifted - a, axis=1)))

    res = scipy.optimize.minimize_scalar(
        mismatch,
        bounds=((k0 - 1.0) / n, (k0 + 1.0) / n),
        method="bounded",
        options={"xatol": 1e-13},
    )
    s_best = float(res.x)
    d_best = mismatch(s_best)
    d_int = mismatch(k0 / n)
    if d_int < d_best:
        s_best, d_best = k0 / n, d_int
    return s_best, d_best


def loop_distance(a: DiscreteLoop, b: DiscreteLoop) -> float:
    """Parametrization-rotation-invariant distance (same orientation)."""
    return align_rotation(a, b)[1]


def reparametrize_constant_speed(loop: DiscreteLoop, fine: int = 8):
    """Resample so the Riemannian speed is constant across nodes.

    Inverts the cumulative arc length s(theta) (computed spectrally on a
    refined grid) and evaluates the loop at the preimages of a uniform arc
    grid.  Returns (new_loop, speed_variation) where the variation is the
    relative spread of node speeds after one pass.
    """
    n = loop.n
    dense_n = fine * n
    dense_nodes = _spectral.resample(loop.nodes, dense_n)
    dense_vel = _spectral.derivative(dense_nodes)
    sig = geometry.speed(loop.metric, dense_nodes, dense_vel)
    total = float(np.mean(sig))
    # periodic antiderivative: s(theta) = total*theta + oscillating part
    coef = np.fft.fft(sig - total)
    k = _spectral.modes(dense_n)
    with np.errstate(divide="ignore", invalid="ignore"):
        anti = np.where(k == 0, 0.0, coef / (2j * np.pi * k))
    osc = np.fft.ifft(anti).real
    osc = osc - osc[0]
    theta_dense = np.arange(dense_n) / dense_n
    s_dense = total * theta_dense + osc
    targets = total * np.arange(n) / n
    # monotone bracket first, then Newton polish on the spectral series
    theta = np.interp(targets, s_dense, theta_dense)
    for _ in range(3):
        s_val = total * theta + _spectral.trig_interp(osc, theta)
        sig_val = np.maximum(_spectral.trig_interp(sig, theta), 1e-12)
        theta = theta - (s_val - targets) / sig_val
    new_nodes = _spectral.trig_interp(loop.nodes, theta % 1.0)
    new_loop = DiscreteLoop(loop.metric, geometry.surface_project(loop.metric, new_nodes))
    sp = speeds(new_loop)
    variation = float((np.max(sp) - np.min(sp)) / np.mean(sp))
    return new_loop, variation


# ---------------------------------------------------------------------------
# seed constructors
# ---------------------------------------------------------------------------

def circle_nodes(n: int, e1, e2) -> np.ndarray:
    """Nodes of theta -> cos(2 pi theta) e1 + sin(2 pi theta) e2."""
    t = 2.0 * np.pi * np.arange(n) / n
    return np.outer(np.cos(t), np.asarray(e1, float)) + np.outer(np.sin(t), np.asarray(e2, float))


def principal_ellipse(spec: MetricSpec, j: int, k: int, n: int = 256) -> DiscreteLoop:
    """Planar section of an ellipsoid by the coordinate plane span(e_j, e_k)."""
    if spec.family != "ellipsoid":
        raise GeometryError("principal ellipses are only defined for ellipsoids")
    m = spec.ambient_dim
    if not (0 <= j < m and 0 <= k < m and j != k):
        raise GeometryError("invalid principal plane indices")
    a = spec.data
    e1 = np.zeros(m)
    e1[j] = 1.0 / a[j]
    e2 = np.zeros(m)
    e2[k] = 1.0 / a[k]
    return DiscreteLoop(spec, circle_nodes(n, e1, e2))


def great_circle_seed(spec: MetricSpec, e1, e2, n: int = 256) -> DiscreteLoop:
    """Reference-sphere great circle pushed onto the surface.

    For ellipsoids the circle lives on the unit sphere of reference
    coordinates; for the conformal family the reference sphere is the surface
    itself.
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = e2 - np.dot(np.asarray(e2, float), e1) / np.dot(e1, e1) * e1
    e1 = e1 / np.linalg.norm(e1)
    e2 = e2 / np.linalg.norm(e2)
    ref = circle_nodes(n, e1, e2)
    if spec.family == "revolution":
        raise GeometryError("revolution seeds come from parallels or shooting")
    nodes = geometry.from_reference(spec, ref)
    return DiscreteLoop(spec, geometry.surface_project(spec, nodes))


def parallel_circle(spec: MetricSpec, z: float, n: int = 256) -> DiscreteLoop:
    """Latitude circle of a revolution surface at height z."""
    if spec.family != "revolution":
        raise GeometryError("parallel circles require a revolution surface")
    geometry.check_band(spec, np.array([[0.0, 0.0, z]]))
    ref = np.stack([np.full(n, float(z)), 2.0 * np.pi * np.arange(n) / n], axis=1)
    return DiscreteLoop(spec, geometry.from_reference(spec, ref))
