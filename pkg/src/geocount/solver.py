"""Closed-geodesic refinement, multistart census, and the Clairaut oracle.

The refinement operator solves the discrete closed-geodesic equation

    P_i(D2 x)_i + [conformal terms] + N^2 F(x_i) nu_i = 0,   i = 0..N-1

for the node positions, where D2 is the periodic three-point second
difference, P_i projects onto the tangent plane at node i, and the scaled
constraint term pins nodes to the surface.  The tangential part forces both
geodesy and a uniform-parameter speed, so converged loops are constant-speed
samples of a closed geodesic with O(1/N^2) node error; lengths are then read
off spectrally, which restores O(1/N^4) accuracy because geodesics are
critical points of length.

The Newton corrector uses a finite-difference Jacobian built from four
perturbation colors (the stencil only couples neighbors, so nodes with equal
index mod 4 have disjoint residual footprints) and a bordered linear system
that pins the rotation gauge: the correction may not slide node 0 along the
curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.sparse.linalg

from . import _spectral, geometry, loops
from .geometry import BandExitError, GeometryError, MetricSpec
from .loops import DiscreteLoop


class RefineError(RuntimeError):
    """Newton refinement failed to produce a closed geodesic."""


class DivergenceError(RefineError):
    pass


class CollapseError(RefineError):
    pass


class StallError(RuntimeError):
    """A solver made no progress within its iteration or step-size budget."""


_FD_STEP = 6e-6
_CONSTRAINT_TOL = 1e-11


def residual_field(spec: MetricSpec, nodes: np.ndarray):
    """Full residual (N, m), its tangential part, and the constraint values."""
    n = nodes.shape[0]
    xp = np.roll(nodes, -1, axis=0)
    xm = np.roll(nodes, 1, axis=0)
    d2 = (xp - 2.0 * nodes + xm) * (n * n)
    v = (xp - xm) * (0.5 * n)
    f = geometry.constraint(spec, nodes)
    g = geometry.constraint_grad(spec, nodes)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    nu = g / gn
    acc = d2
    if spec.family == "conformal_sphere":
        du = geometry.conformal_grad(spec, nodes)
        acc = acc + 2.0 * np.sum(du * v, axis=1, keepdims=True) * v \
            - np.sum(v * v, axis=1, keepdims=True) * du
    tan = acc - np.sum(acc * nu, axis=1, keepdims=True) * nu
    full = tan + (n * n * f)[:, None] * nu
    return full, tan, f


def _fd_jacobian(spec: MetricSpec, nodes: np.ndarray) -> scipy.sparse.csc_matrix:
    """Colored central-difference Jacobian of the residual, sparse (Nm, Nm).

    Perturbing node j only touches residual rows j-1, j, j+1, so all nodes in
    one color class (index mod 4) are probed in a single residual evaluation.
    """
    n, m = nodes.shape
    h = _FD_STEP * max(1.0, float(np.max(np.abs(nodes))))
    rows, cols, data = [], [], []
    row_offsets = np.array([-1, 0, 1])
    for color in range(4):
        js = np.arange(color, n, 4)
        for d in range(m):
            bump = np.zeros_like(nodes)
            bump[js, d] = h
            rp = residual_field(spec, nodes + bump)[0]
            rm = residual_field(spec, nodes - bump)[0]
            diff = (rp - rm) / (2.0 * h)
            for off in row_offsets:
                ridx = (js + off) % n
                block = diff[ridx]  # (len(js), m)
                for comp in range(m):
                    rows.append(ridx * m + comp)
                    cols.append(js * m + d)
                    data.append(block[:, comp])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    return scipy.sparse.coo_matrix((data, (rows, cols)), shape=(n * m, n * m)).tocsc()


@dataclass(frozen=True)
class GeodesicResult:
    """A converged closed geodesic with its refinement diagnostics."""

    loop: DiscreteLoop
    length: float
    residual: float            # scaled tangential residual at convergence
    constraint_defect: float   # worst |F| over the nodes
    iterations: int
    history: tuple             # scaled residual after each Newton step
    convergence_order: float | None


def _scaled_residual(spec, nodes):
    _, tan, f = residual_field(spec, nodes)
    n = nodes.shape[0]
    v = (np.roll(nodes, -1, axis=0) - np.roll(nodes, 1, axis=0)) * (0.5 * n)
    ell = float(np.mean(geometry.speed(spec, nodes, v)))
    scale = max(1.0, ell * ell)
    return float(np.max(np.linalg.norm(tan, axis=1))) / scale, float(np.max(np.abs(f))), ell


def _convergence_order(history):
    vals = [r for r in history if r > 0.0]
    best = None
    for i in range(len(vals) - 2):
        r0, r1, r2 = vals[i], vals[i + 1], vals[i + 2]
        if r0 < 1e-2 and r1 < r0 and r2 < r1 and r2 > 1e-15:
            denom = math.log(r1 / r0)
            if denom < 0:
                p = math.log(r2 / r1) / denom
                best = p if best is None else max(best, p)
    return best


def refine_to_geodesic(
    seed: DiscreteLoop,
    tol: float = 1e-10,
    max_iter: int = 50,
    step_cap: float = 0.5,
) -> GeodesicResult:
    """Newton-refine a seed loop to a closed geodesic of its metric.

    The linear system is bordered: the velocity field (the exact symmetry
    direction of the continuous problem) is adjoined as an extra column and a
    gauge row demands that node 0 not move along the curve tangent, which
    removes the rotation near-nullspace without biasing the geometry.  Far
    from a solution the Newton step is globalized by a backtracking line
    search on the squared residual; near a solution full steps are taken and
    convergence is quadratic.

    Raises DivergenceError or CollapseError when the iteration leaves the
    basin, StallError when the budget runs out, and BandExitError if an
    iterate leaves a revolution band.
    """
    spec = seed.metric
    nodes = np.array(seed.nodes, dtype=float)
    n, m = nodes.shape
    scale0 = max(1.0, float(np.max(np.abs(nodes))))
    res0, f0, ell0 = _scaled_residual(spec, nodes)
    history = [res0]
    if res0 <= tol and f0 <= _CONSTRAINT_TOL:
        return GeodesicResult(
            loop=DiscreteLoop(spec, nodes), length=loops.length(DiscreteLoop(spec, nodes)),
            residual=res0, constraint_defect=f0, iterations=0,
            history=tuple(history), convergence_order=None)

    stalled_steps = 0
    for it in range(1, max_iter + 1):
        geometry.check_band(spec, nodes)
        full, _, _ = residual_field(spec, nodes)
        merit = float(np.sum(full * full))
        jac = _fd_jacobian(spec, nodes)
        vel = (np.roll(nodes, -1, axis=0) - np.roll(nodes, 1, axis=0)) * (0.5 * n)
        w = vel.reshape(-1)
        wn = np.linalg.norm(w)
        if wn < 1e-12 * n:
            raise CollapseError("loop velocity collapsed during refinement")
        w = w / wn
        gauge = np.zeros(n * m)
        gauge[:m] = vel[0] / np.linalg.norm(vel[0])
        bordered = scipy.sparse.bmat(
            [[jac, w[:, None]], [gauge[None, :], None]], format="csc")
        rhs = np.concatenate([-full.reshape(-1), [0.0]])
        try:
            sol = scipy.sparse.linalg.splu(bordered).solve(rhs)
        except RuntimeError as exc:
            raise StallError(f"singular corrector system: {exc}") from exc
        delta = sol[:-1].reshape(n, m)
        if not np.all(np.isfinite(delta)):
            raise DivergenceError("non-finite Newton correction")
        dmax = float(np.max(np.abs(delta)))
        if dmax > step_cap * scale0:
            delta = delta * (step_cap * scale0 / dmax)
        # Armijo backtracking on |R|^2 with retraction: each trial point is
        # pulled back onto the surface so the N^2-scaled constraint rows do
        # not poison the merit with the step's quadratic normal drift
        step = 1.0
        accepted = False
        for _ in range(12):
            trial = nodes + step * delta
            if np.all(np.isfinite(trial)):
                try:
                    trial = geometry.surface_project(spec, trial)
                except GeometryError:
                    step *= 0.5
                    continue
                trial_merit = float(np.sum(residual_field(spec, trial)[0] ** 2))
                if trial_merit <= (1.0 - 1e-4 * step) * merit:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            stalled_steps += 1
            if stalled_steps >= 3:
                raise StallError("line search cannot reduce the residual")
        else:
            stalled_steps = 0
        nodes = trial
        if np.max(np.abs(nodes)) > 100.0 * scale0:
            raise DivergenceError("iterates left the working region")
        res, fdef, ell = _scaled_residual(spec, nodes)
        history.append(res)
        if ell < 1e-3:
            raise CollapseError("loop length collapsed toward zero")
        if res <= tol and fdef <= _CONSTRAINT_TOL:
            loop = DiscreteLoop(spec, nodes)
            return GeodesicResult(
                loop=loop, length=loops.length(loop), residual=res,
                constraint_defect=fdef, iterations=it, history=tuple(history),
                convergence_order=_convergence_order(history))
        if res > 1e6 * max(res0, 1.0):
            raise DivergenceError("residual grew beyond recovery")
    raise StallError(f"no convergence in {max_iter} Newton iterations")


# ---------------------------------------------------------------------------
# census
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CensusEntry:
    """One unoriented primitive closed-geodesic class."""

    ident: str
    result: GeodesicResult
    hits: int                 # converged seeds that landed on this class
    self_reverse: bool        # reversal is a rotation of the loop itself


@dataclass(frozen=True)
class Census:
    metric: MetricSpec
    max_length: float
    entries: tuple
    degenerate_family: bool
    boundary_collisions: int
    certificate: dict


def fibonacci_directions(count: int) -> np.ndarray:
    """Near-uniform unit vectors from the Fibonacci spiral on S^2."""
    i = np.arange(count) + 0.5
    phi = np.pi * (1.0 + math.sqrt(5.0)) * i
    cos_t = 1.0 - 2.0 * i / count
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


def _plane_basis(normal):
    a = np.array([1.0, 0.0, 0.0])
    if abs(normal[0]) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    e1 = a - np.dot(a, normal) * normal
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


def _census_seeds(spec: MetricSpec, mesh: int, planes: int, seed: int):
    """Deterministic seed loops: rotated Fibonacci great circles or parallels."""
    rng = np.random.default_rng(seed)
    rot = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    if spec.family == "revolution":
        out = []
        lo, hi = spec.data[2]
        zs = np.linspace(lo, hi, 41)[1:-1]
        impl_r = geometry._impl(spec)
        rp = impl_r.profile(zs)[1]
        for i in range(len(zs) - 1):
            if rp[i] == 0.0 or rp[i] * rp[i + 1] < 0.0:
                z0 = scipy.optimize.brentq(lambda z: impl_r.profile(z)[1], zs[i], zs[i + 1])
                out.append(loops.parallel_circle(spec, z0, mesh))
        return out
    if spec.ambient_dim != 3:
        raise GeometryError("the census currently requires a two-dimensional surface")
    seeds = []
    for normal in fibonacci_directions(planes):
        e1, e2 = _plane_basis(rot @ normal)
        seeds.append(loops.great_circle_seed(spec, e1, e2, mesh))
    return seeds


def find_all(
    spec: MetricSpec,
    max_length: float,
    mesh: int = 256,
    planes: int = 200,
    seed: int = 0,
    tol: float = 1e-10,
    dedup_tol: float = 1e-6,
    degenerate_threshold: int = 50,
) -> Census:
    """Multistart census of primitive closed geodesics up to max_length.

    Seeds are refined independently and in a fixed order; results are reduced
    under a canonical sort, so the outcome does not depend on evaluation
    order.  Classes are unoriented: a converged loop matching the reversal of
    an existing class counts as a hit on that class.
    """
    seeds = _census_seeds(spec, mesh, planes, seed)
    converged = []
    diverged = 0
    band_exits = 0
    for s in seeds:
        try:
            res = refine_to_geodesic(s, tol=tol)
        except BandExitError:
            band_exits += 1
            continue
        except (RefineError, StallError):
            diverged += 1
            continue
        dec = loops.primitive_decompose(res.loop)
        if dec.degree > 1:
            try:
                res = refine_to_geodesic(dec.base, tol=tol)
            except (RefineError, StallError, BandExitError):
                diverged += 1
                continue
        if res.length <= max_length:
            converged.append(res)
    if seeds and not converged and diverged == len(seeds):
        raise StallError("census found no convergent seed")

    order = sorted(
        range(len(converged)),
        key=lambda i: (round(converged[i].length, 9),
                       loops.canonicalize(converged[i].loop).nodes.tobytes()),
    )
    classes: list[list] = []   # [representative GeodesicResult, hits, reverse_hit]
    for idx in order:
        cand = converged[idx]
        placed = False
        for cls in classes:
            rep = cls[0]
            tol_len = dedup_tol * max(1.0, rep.length)
            if abs(cand.length - rep.length) > tol_len:
                continue
            if loops.loop_distance(rep.loop, cand.loop) <= tol_len:
                cls[1] += 1
                placed = True
                break
            if loops.loop_distance(rep.loop, loops.reverse(cand.loop)) <= tol_len:
                cls[1] += 1
                cls[2] = True
                placed = True
                break
        if not placed:
            classes.append([cand, 1, False])

    entries = []
    for k, (rep, hits, _) in enumerate(classes):
        self_rev = loops.loop_distance(rep.loop, loops.reverse(rep.loop)) \
            <= dedup_tol * max(1.0, rep.length)
        entries.append(CensusEntry(
            ident=f"g{k:03d}", result=rep, hits=hits, self_reverse=self_rev))

    degenerate = False
    lengths = sorted(e.result.length for e in entries)
    run = 1
    for i in range(1, len(lengths)):
        if lengths[i] - lengths[i - 1] <= 1e-6 * max(1.0, lengths[i]):
            run += 1
            if run > degenerate_threshold:
                degenerate = True
                break
        else:
            run = 1

    certificate = {
        "seeds": len(seeds),
        "converged": len(converged),
        "diverged": diverged,
        "band_exits": band_exits,
        "classes": len(entries),
        "min_hits": min((e.hits for e in entries), default=0),
        "complete": bool(entries) and min((e.hits for e in entries), default=0) >= 2,
        "max_residual": max((e.result.residual for e in entries), default=0.0),
    }
    return Census(
        metric=spec, max_length=max_length, entries=tuple(entries),
        degenerate_family=degenerate, boundary_collisions=band_exits,
        certificate=certificate)


def synthesize_cover(entry_result: GeodesicResult, d: int, tol: float = 1e-10) -> GeodesicResult:
    """Degree-d iterate of a converged geodesic, re-refined on the tiled mesh."""
    tiled = loops.cover(entry_result.loop, d)
    return refine_to_geodesic(tiled, tol=tol)


def iterate_table(census: Census):
    """All (entry, degree, length) with degree >= 1 and length <= max_length."""
    rows = []
    for e in census.entries:
        d = 1
        while d * e.result.length <= census.max_length + 1e-12:
            rows.append((e, d, d * e.result.length))
            d += 1
    rows.sort(key=lambda r: (r[2], r[0].ident, r[1]))
    return rows


# ---------------------------------------------------------------------------
# Clairaut shooting oracle for revolution surfaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShootResult:
    clairaut: float
    turning: tuple            # (z_minus, z_plus)
    delta_phi: float          # azimuth advance per full oscillation
    osc_length: float         # arc length per full oscillation
    closes: bool
    p: int | None             # azimuthal winding of the closed orbit
    q: int | None             # oscillation count of the closed orbit
    defect: float             # |q dphi - 2 pi p| for the best (p, q)
    length: float | None
    leaves_band: bool


def _gauss_nodes(order: int = 96):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def clairaut_shoot(
    spec: MetricSpec,
    c: float,
    z0: float | None = None,
    max_osc: int = 8,
    closure_tol: float = 1e-9,
) -> ShootResult:
    """Quadrature integration of the Clairaut oscillation r^2 phi' = c.

    Works entirely from the profile: the geodesic oscillates between the two
    heights where r = |c| that bracket z0.  The turning-point square-root
    singularities are removed by the substitution z = mid + half * sin(u), so
    plain Gauss-Legendre quadrature converges geometrically.  This route
    never touches the discrete solver and serves as its independent check.
    """
    if spec.family != "revolution":
        raise GeometryError("Clairaut shooting requires a revolution surface")
    impl = geometry._impl(spec)
    lo, hi = spec.data[2]
    cc = abs(float(c))
    zs = np.linspace(lo, hi, 2049)
    r_grid = impl.profile(zs)[0]
    above = r_grid > cc
    if z0 is None:
        z0 = float(zs[np.argmax(r_grid)])
    i0 = int(np.clip(np.searchsorted(zs, z0), 1, len(zs) - 2))
    if not above[i0]:
        raise GeometryError("no oscillation: the profile never exceeds |c| at z0")

    def fr(z):
        return impl.profile(z)[0] - cc

    iL = i0
    while iL > 0 and above[iL - 1]:
        iL -= 1
    iR = i0
    while iR < len(zs) - 1 and above[iR + 1]:
        iR += 1
    leaves = False
    if iL == 0:
        z_minus, leaves = lo, True
    else:
        z_minus = scipy.optimize.brentq(fr, zs[iL - 1], zs[iL], xtol=1e-14)
    if iR == len(zs) - 1:
        z_plus, leaves = hi, True
    else:
        z_plus = scipy.optimize.brentq(fr, zs[iR], zs[iR + 1], xtol=1e-14)
    if leaves:
        return ShootResult(
            clairaut=c, turning=(z_minus, z_plus), delta_phi=float("nan"),
            osc_length=float("nan"), closes=False, p=None, q=None,
            defect=float("inf"), length=None, leaves_band=True)

    mid = 0.5 * (z_plus + z_minus)
    half = 0.5 * (z_plus - z_minus)
    u, w = _gauss_nodes()
    z = mid + half * np.sin(0.5 * np.pi * u)
    jac = half * 0.5 * np.pi * np.cos(0.5 * np.pi * u)
    r, rp, _ = impl.profile(z)
    # sqrt(1 - c^2/r^2) = sqrt((r-c)(r+c))/r; (r-c) vanishes linearly at the
    # turning points, cancelling against the cos factor of the substitution
    disc = np.sqrt(np.maximum((r - cc) * (r + cc), 0.0)) / r
    g_half = np.sqrt(1.0 + rp * rp)
    dphi_half = np.sum(w * jac * (cc / (r * r)) * g_half / disc)
    len_half = np.sum(w * jac * g_half / disc)
    delta_phi = 2.0 * dphi_half
    osc_len = 2.0 * len_half

    best = (None, None, float("inf"))
    for q in range(1, max_osc + 1):
        p = round(q * delta_phi / (2.0 * np.pi))
        if p == 0:
            continue
        defect = abs(q * delta_phi - 2.0 * np.pi * p)
        if defect < best[2]:
            best = (p, q, defect)
    p, q, defect = best
    closes = defect < closure_tol
    return ShootResult(
        clairaut=c, turning=(float(z_minus), float(z_plus)), delta_phi=float(delta_phi),
        osc_length=float(osc_len), closes=bool(closes), p=p if closes else p,
        q=q if closes else q, defect=float(defect),
        length=float(q * osc_len) if closes else None, leaves_band=False)


def clairaut_find_closed(
    spec: MetricSpec,
    p: int,
    q: int,
    c_bracket: tuple,
    z0: float | None = None,
) -> ShootResult:
    """Solve delta_phi(c) = 2 pi p / q for the Clairaut constant by bisection."""
    target = 2.0 * np.pi * p / q

    def fun(c):
        res = clairaut_shoot(spec, c, z0=z0)
        if res.leaves_band:
            raise BandExitError("bracket reaches orbits that leave the band")
        return res.delta_phi - target

    c_star = scipy.optimize.brentq(fun, c_bracket[0], c_bracket[1], xtol=1e-14)
    return clairaut_shoot(spec, c_star, z0=z0, closure_tol=1e-6)


def parallel_heights(spec: MetricSpec) -> tuple:
    """Heights of geodesic parallels (critical radii) inside the band."""
    impl = geometry._impl(spec)
    lo, hi = spec.data[2]
    zs = np.linspace(lo, hi, 2049)
    rp = impl.profile(zs)[1]
    out = []
    for i in range(len(zs) - 1):
        if rp[i] == 0.0:
            out.append(float(zs[i]))
        elif rp[i] * rp[i + 1] < 0.0:
            out.append(float(scipy.optimize.brentq(
                lambda z: impl.profile(z)[1], zs[i], zs[i + 1], xtol=1e-14)))
    return tuple(out)
