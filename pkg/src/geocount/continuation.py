"""Branch continuation of closed geodesics along one-parameter metric paths.

A branch is followed in the combined space (loop nodes, t) by pseudo
arclength: each corrector solve is a bordered Newton system whose extra
column absorbs the rotation symmetry and whose extra rows impose the node-0
gauge and the arclength normalization, so simple folds in t are ordinary
regular points of the extended system.

Event detection watches the primitive monodromy trace along the branch:
a transversal crossing of -2 is a period-doubling candidate (bisected in t
to high accuracy, then certified by the kernel-dimension signature), and a
sign change of dt/ds is a fold (the trace reaches +2 at the fold point).
The module also spawns the emergent doubled branch at a period-doubling
event, fits the local normal form from measured data, checks the weighted
count invariance across events, and evaluates the metric-deformation
pairing that certifies transversality of the path at the event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import _spectral, geometry, jacobi, loops, solver, weights
from .geometry import GeometryError, MetricSpec
from .loops import DiscreteLoop


class ContinuationError(RuntimeError):
    pass


# singular value window for kernel counting at a located event; the event is
# only bracketed to finite accuracy, leaving multiplier residues of order
# sqrt(crossing rate * bracket width), far above the generic 1e-6 threshold
_EVENT_NULLITY_TOL = 1e-3
# multiplier window for extracting the (near-)kernel Jacobi field itself;
# the field is only used as a kick or pairing direction, so the window can
# be generous as long as it stays well inside the spacing to the next
# multiplier pair
_EVENT_FIELD_TOL = 3e-2


class UnresolvedClusterError(RuntimeError):
    """Two detected events could not be separated in parameter space."""


@dataclass(frozen=True)
class MetricPath:
    """Linear interpolation between two compatible metrics of one family."""

    start: MetricSpec
    end: MetricSpec

    def __post_init__(self):
        a, b = self.start, self.end
        if a.family != b.family:
            raise GeometryError("path endpoints must share a metric family")
        if a.family == "ellipsoid" and len(a.data) != len(b.data):
            raise GeometryError("ellipsoid path endpoints must share dimension")
        if a.family == "revolution":
            ka, ca, banda = a.data
            kb, cb, bandb = b.data
            if ka != kb or len(ca) != len(cb) or banda != bandb:
                raise GeometryError(
                    "revolution path endpoints must share kind, degree and band")

    def at(self, t: float) -> MetricSpec:
        t = float(t)
        a, b = self.start, self.end
        if a.family == "ellipsoid":
            av, bv = np.asarray(a.data), np.asarray(b.data)
            return MetricSpec.ellipsoid(tuple((1 - t) * av + t * bv))
        if a.family == "revolution":
            kind, ca, band = a.data
            cb = b.data[1]
            coeffs = tuple((1 - t) * x + t * y for x, y in zip(ca, cb))
            return MetricSpec.revolution(kind, coeffs, band)
        terms = {}
        for l, m, c in a.data:
            terms[(l, m)] = terms.get((l, m), 0.0) + (1 - t) * c
        for l, m, c in b.data:
            terms[(l, m)] = terms.get((l, m), 0.0) + t * c
        return MetricSpec.conformal_sphere(
            [(l, m, c) for (l, m), c in sorted(terms.items())])


@dataclass(frozen=True)
class BranchPoint:
    t: float
    s: float                  # accumulated pseudo-arclength
    length: float
    trace: float              # tr of the primitive monodromy
    result: solver.GeodesicResult


@dataclass(frozen=True)
class BifurcationEvent:
    kind: str                 # 'period_doubling' or 'fold'
    t: float
    loop: DiscreteLoop
    trace: float
    nu_signature: tuple       # (nu(1), nu(2)) at the event point
    signature_ok: bool        # PD: nu(2)-nu(1) == 1; fold: nu(1) == 1
    t_accuracy: float


@dataclass(frozen=True)
class BranchResult:
    path: MetricPath
    points: tuple
    events: tuple
    reached_end: bool
    stop_reason: str


def _solve_fixed_t(path: MetricPath, t: float, guess: np.ndarray,
                   tol: float = 1e-10) -> solver.GeodesicResult:
    spec = path.at(t)
    seed = DiscreteLoop(spec, geometry.surface_project(spec, guess))
    return solver.refine_to_geodesic(seed, tol=tol)


def _trace(result: solver.GeodesicResult) -> tuple:
    data = jacobi.build_operator(result)
    mono = jacobi.monodromy(data)
    return float(np.trace(mono.matrix).real), data, mono


def _branch_tangent(path, t, nodes, prev=None):
    """Unit tangent of the branch in scaled (nodes, t) coordinates.

    Solves the bordered linearization for d(nodes)/dt and normalizes under
    the mesh-independent norm mean|dX_i|^2 + dt^2; ``prev`` fixes the
    orientation (continuation direction), otherwise dt > 0 is chosen.
    """
    spec = path.at(t)
    n, m = nodes.shape
    jac = solver._fd_jacobian(spec, nodes)
    h = 1e-6
    rp = solver.residual_field(path.at(t + h), nodes)[0]
    rm = solver.residual_field(path.at(t - h), nodes)[0]
    r_t = ((rp - rm) / (2.0 * h)).reshape(-1)
    vel = (np.roll(nodes, -1, axis=0) - np.roll(nodes, 1, axis=0)) * (0.5 * n)
    w = vel.reshape(-1)
    w = w / np.linalg.norm(w)
    gauge = np.zeros(n * m)
    gauge[:m] = vel[0] / np.linalg.norm(vel[0])
    bordered = scipy.sparse.bmat(
        [[jac, w[:, None]], [gauge[None, :], None]], format="csc")
    sol = scipy.sparse.linalg.splu(bordered).solve(np.concatenate([-r_t, [0.0]]))
    dx_dt = sol[:-1].reshape(n, m)
    tau = np.concatenate([dx_dt.reshape(-1) / math.sqrt(n), [1.0]])
    tau = tau / np.linalg.norm(tau)
    if prev is not None and float(np.dot(tau, prev)) < 0.0:
        tau = -tau
    elif prev is None and tau[-1] < 0.0:
        tau = -tau
    return tau


def _corrector(path, nodes, t, tau, s_target_point, ds, tol=1e-10, max_iter=16):
    """One pseudo-arclength corrector solve; returns (nodes, t) or None.

    Unknowns are (nodes, t, mu) where mu multiplies the rotation direction;
    equations are the geodesic residual, the node-0 gauge, and the arclength
    plane through the predicted point.
    """
    n, m = nodes.shape
    sqn = math.sqrt(n)
    for _ in range(max_iter):
        spec = path.at(t)
        try:
            geometry.check_band(spec, nodes)
        except geometry.BandExitError:
            return None
        full, tan, f = solver.residual_field(spec, nodes)
        res, fdef, _ = solver._scaled_residual(spec, nodes)
        arc = float(np.dot((nodes - s_target_point[0]).reshape(-1) / sqn, tau[:-1])
                    + (t - s_target_point[1]) * tau[-1] - ds)
        if res <= tol and fdef <= 1e-10 and abs(arc) <= 1e-10:
            return nodes, t
        jac = solver._fd_jacobian(spec, nodes)
        h = 1e-6
        rp = solver.residual_field(path.at(t + h), nodes)[0]
        rm = solver.residual_field(path.at(t - h), nodes)[0]
        r_t = ((rp - rm) / (2.0 * h)).reshape(-1)
        vel = (np.roll(nodes, -1, axis=0) - np.roll(nodes, 1, axis=0)) * (0.5 * n)
        wv = vel.reshape(-1)
        wv = wv / np.linalg.norm(wv)
        gauge = np.zeros(n * m + 2)
        gauge[:m] = vel[0] / np.linalg.norm(vel[0])
        arc_row = np.concatenate([tau[:-1] / sqn, [tau[-1]], [0.0]])
        top = scipy.sparse.hstack(
            [jac, scipy.sparse.csc_matrix(r_t[:, None]),
             scipy.sparse.csc_matrix(wv[:, None])], format="csc")
        big = scipy.sparse.vstack(
            [top, scipy.sparse.csc_matrix(gauge[None, :]),
             scipy.sparse.csc_matrix(arc_row[None, :])], format="csc")
        rhs = np.concatenate([-full.reshape(-1), [0.0], [-arc]])
        try:
            sol = scipy.sparse.linalg.splu(big).solve(rhs)
        except RuntimeError:
            return None
        delta_nodes = sol[:n * m].reshape(n, m)
        delta_t = float(sol[n * m])
        if not np.all(np.isfinite(delta_nodes)) or not np.isfinite(delta_t):
            return None
        nodes = nodes + delta_nodes
        t = t + delta_t
        try:
            nodes = geometry.surface_project(path.at(t), nodes)
        except GeometryError:
            return None
    return None


def continue_branch(
    path: MetricPath,
    start,
    ds: float = 0.04,
    ds_min: float = 1e-6,
    ds_max: float = 0.12,
    max_steps: int = 400,
    tol: float = 1e-10,
    event_t_tol: float = 1e-8,
    cluster_tol: float = 1e-6,
) -> BranchResult:
    """Track a geodesic branch from t = 0 toward t = 1 with event detection.

    ``start`` is a seed loop or refinement result at path.at(0).  The branch
    terminates at t = 1 (clamped solve), at a band exit, or on StallError
    when the step size underflows.  Detected events are bisected, certified
    by their nullity signatures, and returned in branch order; two events
    closer than ``cluster_tol`` in t raise UnresolvedClusterError.
    """
    if isinstance(start, solver.GeodesicResult):
        res0 = _solve_fixed_t(path, 0.0, np.asarray(start.loop.nodes))
    else:
        res0 = _solve_fixed_t(path, 0.0, np.asarray(start.nodes))
    tr0, _, _ = _trace(res0)
    points = [BranchPoint(t=0.0, s=0.0, length=res0.length, trace=tr0, result=res0)]
    tau = _branch_tangent(path, 0.0, np.asarray(res0.loop.nodes))
    nodes = np.asarray(res0.loop.nodes)
    t = 0.0
    s_acc = 0.0
    events = []
    stop_reason = "max_steps"
    reached_end = False
    step = ds
    for _ in range(max_steps):
        pred_nodes = nodes + step * tau[:-1].reshape(nodes.shape) * math.sqrt(nodes.shape[0])
        pred_t = t + step * tau[-1]
        out = _corrector(path, pred_nodes, pred_t, tau, (nodes, t), step, tol=tol)
        if out is None:
            step *= 0.5
            if step < ds_min:
                err = solver.StallError("continuation step size underflow")
                err.partial = BranchResult(
                    path=path, points=tuple(points), events=tuple(events),
                    reached_end=False, stop_reason="stall")
                raise err
            continue
        new_nodes, new_t = out
        if new_t < -1e-12:
            res_end = _solve_fixed_t(path, 0.0, nodes)
            tr_end, _, _ = _trace(res_end)
            _maybe_pd_event(path, points[-1], (0.0, tr_end, res_end), events,
                            event_t_tol)
            points.append(BranchPoint(t=0.0, s=s_acc + step, length=res_end.length,
                                      trace=tr_end, result=res_end))
            stop_reason = "returned_to_start"
            break
        if new_t > 1.0 + 1e-12:
            res_end = _solve_fixed_t(path, 1.0, nodes)
            tr_end, _, _ = _trace(res_end)
            _maybe_pd_event(path, points[-1], (1.0, tr_end, res_end), events,
                            event_t_tol)
            points.append(BranchPoint(t=1.0, s=s_acc + step, length=res_end.length,
                                      trace=tr_end, result=res_end))
            reached_end = True
            stop_reason = "reached_end"
            break
        spec_new = path.at(new_t)
        res_new = solver.refine_to_geodesic(
            DiscreteLoop(spec_new, new_nodes), tol=tol)
        tr_new, _, _ = _trace(res_new)
        prev_pt = points[-1]
        new_tau = _branch_tangent(path, new_t, np.asarray(res_new.loop.nodes), prev=tau)
        # fold: tangent t-component changed sign
        if tau[-1] * new_tau[-1] < 0.0:
            ev = _locate_fold(path, (nodes, t, tau), step, tol)
            events.append(ev)
        _maybe_pd_event(path, prev_pt, (new_t, tr_new, res_new), events, event_t_tol)
        s_acc += step
        points.append(BranchPoint(t=new_t, s=s_acc, length=res_new.length,
                                  trace=tr_new, result=res_new))
        nodes = np.asarray(res_new.loop.nodes)
        t = new_t
        tau = new_tau
        step = min(step * 1.3, ds_max)
    else:
        stop_reason = "max_steps"

    events.sort(key=lambda e: e.t)
    for a, b in zip(events, events[1:]):
        if abs(b.t - a.t) < cluster_tol:
            raise UnresolvedClusterError(
                f"events at t={a.t!r} and t={b.t!r} are closer than {cluster_tol}")
    return BranchResult(path=path, points=tuple(points), events=tuple(events),
                        reached_end=reached_end, stop_reason=stop_reason)


def _maybe_pd_event(path, prev_pt: BranchPoint, new_state, events, t_tol):
    """Bisect a tr(M) = -2 crossing between consecutive branch points."""
    new_t, tr_new, res_new = new_state
    f_prev = prev_pt.trace + 2.0
    f_new = tr_new + 2.0
    if f_prev == 0.0 or f_prev * f_new > 0.0:
        return
    lo_t, lo_nodes = prev_pt.t, np.asarray(prev_pt.result.loop.nodes)
    hi_t, hi_nodes = new_t, np.asarray(res_new.loop.nodes)
    f_lo = f_prev
    while hi_t - lo_t > t_tol:
        mid_t = 0.5 * (lo_t + hi_t)
        guess = 0.5 * (lo_nodes + hi_nodes)
        res_mid = _solve_fixed_t(path, mid_t, guess)
        tr_mid, _, _ = _trace(res_mid)
        if (tr_mid + 2.0) * f_lo <= 0.0:
            hi_t, hi_nodes = mid_t, np.asarray(res_mid.loop.nodes)
        else:
            lo_t, lo_nodes, f_lo = mid_t, np.asarray(res_mid.loop.nodes), tr_mid + 2.0
    t_star = 0.5 * (lo_t + hi_t)
    res_star = _solve_fixed_t(path, t_star, 0.5 * (lo_nodes + hi_nodes))
    tr_star, data_star, mono_star = _trace(res_star)
    # the bracketed point is within ~sqrt(kappa * t_tol) of the exact
    # degeneracy in multiplier distance, so the kernel count needs a
    # correspondingly loose singular value window
    nu1 = jacobi.floquet_nullity(mono_star, 1, tol=_EVENT_NULLITY_TOL)
    nu2 = jacobi.floquet_nullity(mono_star, 2, tol=_EVENT_NULLITY_TOL)
    events.append(BifurcationEvent(
        kind="period_doubling", t=t_star, loop=res_star.loop, trace=tr_star,
        nu_signature=(nu1, nu2), signature_ok=(nu2 - nu1 == 1),
        t_accuracy=hi_t - lo_t))


def _locate_fold(path, lo_state, gap, tol):
    """Bisect the tangent's dt/ds sign change along the branch arclength.

    The corrector stays regular through a simple fold, so walking half the
    remaining arclength from the pre-fold state and checking the tangent
    orientation halves the bracket each round; t is quadratic in arclength
    across the turning point, so resolving the arclength to delta-s pins the
    fold parameter to order delta-s squared.
    """
    lo_nodes, lo_t, lo_tau = lo_state
    sqn = math.sqrt(lo_nodes.shape[0])
    for _ in range(60):
        half = 0.5 * gap
        pred_nodes = lo_nodes + half * lo_tau[:-1].reshape(lo_nodes.shape) * sqn
        pred_t = lo_t + half * lo_tau[-1]
        out = _corrector(path, pred_nodes, pred_t, lo_tau, (lo_nodes, lo_t), half,
                         tol=tol)
        if out is None:
            break
        mid_nodes, mid_t = out
        try:
            mid_tau = _branch_tangent(path, mid_t, mid_nodes, prev=lo_tau)
        except RuntimeError:
            break
        if lo_tau[-1] * mid_tau[-1] > 0.0:
            lo_nodes, lo_t, lo_tau = mid_nodes, mid_t, mid_tau
        gap = half
        if gap < 1e-6 or gap * gap < 1e-13:
            break
    t_star = lo_t
    res_star = _solve_fixed_t(path, t_star, lo_nodes)
    tr_star, data_star, mono_star = _trace(res_star)
    nu1 = jacobi.floquet_nullity(mono_star, 1, tol=_EVENT_NULLITY_TOL)
    nu2 = jacobi.floquet_nullity(mono_star, 2, tol=_EVENT_NULLITY_TOL)
    return BifurcationEvent(
        kind="fold", t=t_star, loop=res_star.loop, trace=tr_star,
        nu_signature=(nu1, nu2), signature_ok=(nu1 >= 1),
        t_accuracy=max(gap * gap, 1e-14))


# ---------------------------------------------------------------------------
# emergent doubled branch and the normal form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoubledOrbitSample:
    t: float
    result: solver.GeodesicResult
    amplitude: float          # L2 deviation from the tiled primitive


def _doubled_sample(path, t_val, cand, prim_seed_nodes, tol):
    """Package a doubled orbit with its deviation from the tiled primitive."""
    spec_t = path.at(t_val)
    prim = solver.refine_to_geodesic(
        DiscreteLoop(spec_t, geometry.surface_project(spec_t, prim_seed_nodes)),
        tol=tol)
    cover_nodes = np.tile(np.asarray(prim.loop.nodes), (2, 1))
    shift, _ = loops.align_rotation(cand.loop, DiscreteLoop(spec_t, cover_nodes))
    aligned = _spectral.fractional_shift(cover_nodes, shift)
    dev = np.asarray(cand.loop.nodes) - aligned
    amp = float(np.sqrt(np.mean(np.sum(dev * dev, axis=1))))
    return DoubledOrbitSample(t=t_val, result=cand, amplitude=amp)


def spawn_doubled_branch(
    path: MetricPath,
    event: BifurcationEvent,
    offsets,
    kick_sizes=(3e-3, 1e-2, 3e-2, 1e-1),
    bootstrap_offset: float = 0.005,
    walk_step: float = 0.02,
    tol: float = 1e-10,
) -> tuple:
    """Emergent period-doubled orbits near a period-doubling event.

    The branch is bootstrapped close to the event, where the emergent orbit
    has small amplitude: the doubled cover of the primitive is kicked along
    the anti-periodic Jacobi field (both phases, both signs, graded sizes)
    and re-refined, keeping only genuinely primitive results since the
    kicked Newton solve can fall back onto the trivial cover.  The orbit is
    then walked in t to each requested offset, seeding every solve from its
    neighbor, which is far more reliable than cold kicks at a distance.
    Offsets on the wrong side of the tongue produce no samples.
    """
    offsets = sorted(float(o) for o in offsets)
    if not offsets:
        return ()
    side = 1.0 if offsets[0] > 0 else -1.0
    if any(o * side <= 0 for o in offsets):
        raise ValueError("offsets must be nonzero and on one side of the event")

    data = jacobi.build_operator(
        solver.refine_to_geodesic(event.loop, tol=tol))
    fields = jacobi.detect_lambda_jacobi(data, 2, unit_tol=_EVENT_FIELD_TOL)
    anti = [f for f in fields if abs(f.multiplier + 1.0) < _EVENT_FIELD_TOL]
    if not anti:
        raise ContinuationError("no anti-periodic Jacobi field at the event")
    field = anti[0]
    frame_cover = np.tile(data.frame, (2, 1, 1))
    dirs = [np.einsum("np,npm->nm", field.xi, frame_cover)]
    if field.twin is not None:
        tw = np.einsum("np,npm->nm", field.twin, frame_cover)
        a, b = dirs[0].reshape(-1), tw.reshape(-1)
        cos = abs(float(np.dot(a, b))) / max(np.linalg.norm(a) * np.linalg.norm(b), 1e-30)
        if cos < 0.99 and np.linalg.norm(b) > 1e-8 * np.linalg.norm(a):
            dirs.append(tw)
    kicks = []
    for d in dirs:
        d = d / np.max(np.linalg.norm(d, axis=1))
        kicks.extend([d, -d])

    def try_doubled(t_val, seed_nodes):
        spec_t = path.at(t_val)
        try:
            cand = solver.refine_to_geodesic(
                DiscreteLoop(spec_t, geometry.surface_project(spec_t, seed_nodes)),
                tol=tol)
        except (solver.RefineError, solver.StallError, solver.DivergenceError,
                geometry.BandExitError, GeometryError):
            return None
        if loops.primitive_decompose(cand.loop).degree != 1:
            return None
        return cand

    # bootstrap just inside the tongue
    t_boot = event.t + side * min(bootstrap_offset, abs(offsets[0 if side > 0 else -1]))
    t_boot = min(max(t_boot, 0.0), 1.0)
    spec_b = path.at(t_boot)
    prim_b = solver.refine_to_geodesic(
        DiscreteLoop(spec_b, geometry.surface_project(
            spec_b, np.asarray(data.loop.nodes))), tol=tol)
    cover_b = np.tile(np.asarray(prim_b.loop.nodes), (2, 1))
    boot = None
    for eps in kick_sizes:
        for kd in kicks:
            boot = try_doubled(t_boot, cover_b + eps * kd)
            if boot is not None:
                break
        if boot is not None:
            break
    if boot is None:
        return ()

    # walk the doubled branch to each requested offset; the seed deviation
    # from the tiled primitive is rescaled by the square-root amplitude law,
    # otherwise a small near-event orbit falls back onto the cover basin of
    # the next step
    def step_to(cur_t, cur_nodes, prim_nodes, next_t):
        spec_c = path.at(cur_t)
        cov_c = np.tile(prim_nodes, (2, 1))
        shift, _ = loops.align_rotation(
            DiscreteLoop(spec_c, cur_nodes), DiscreteLoop(spec_c, cov_c))
        dev = cur_nodes - _spectral.fractional_shift(cov_c, shift)
        spec_n = path.at(next_t)
        prim_n = solver.refine_to_geodesic(
            DiscreteLoop(spec_n, geometry.surface_project(spec_n, prim_nodes)),
            tol=tol)
        prim_n_nodes = np.asarray(prim_n.loop.nodes)
        scale = math.sqrt(max(abs(next_t - event.t), 1e-15)
                          / max(abs(cur_t - event.t), 1e-15))
        seed_nodes = _spectral.fractional_shift(
            np.tile(prim_n_nodes, (2, 1)), shift) + scale * dev
        return try_doubled(next_t, seed_nodes), prim_n_nodes

    samples = []
    cur_t, cur_nodes = t_boot, np.asarray(boot.loop.nodes)
    prim_nodes = np.asarray(prim_b.loop.nodes)
    for off in (offsets if side > 0 else reversed(offsets)):
        target = event.t + off
        if not 0.0 <= target <= 1.0:
            continue
        while abs(target - cur_t) > 1e-12:
            step_t = float(np.clip(target - cur_t, -walk_step, walk_step))
            nxt, prim_nodes = step_to(cur_t, cur_nodes, prim_nodes, cur_t + step_t)
            if nxt is None:
                return tuple(samples)
            cur_t, cur_nodes = cur_t + step_t, np.asarray(nxt.loop.nodes)
        got = try_doubled(cur_t, cur_nodes)
        if got is None:
            return tuple(samples)
        samples.append(_doubled_sample(path, cur_t, got,
                                       np.asarray(data.loop.nodes), tol))
    return tuple(samples)


@dataclass(frozen=True)
class NormalFormFit:
    t_event: float
    sign_f: int               # slope sign of the anti-periodic eigenvalue in t
    sign_g: int               # inferred cubic coefficient sign
    side: int                 # +1: doubled orbits exist for t > t_event
    mu_slope: float           # d(mu_anti)/dt at the event
    r2_slope: float           # d(amplitude^2)/dt along the emergent branch
    t_intercept: float        # amplitude^2 fit root, should match t_event
    relative_residual: float  # quality of the linear amplitude^2 fit
    low_confidence: bool


def _fit_r2(samples, t_event):
    """Linear fit of squared branch amplitude against t - t_event.

    Returns (side, slope, t_intercept, relative_residual); side is the sign
    of the parameter interval the samples occupy.
    """
    st = np.array([s.t - t_event for s in samples])
    sr2 = np.array([s.amplitude ** 2 for s in samples])
    side = 1 if np.mean(st) > 0 else -1
    coef = np.polyfit(st, sr2, 1)
    fit_vals = np.polyval(coef, st)
    resid = float(np.sqrt(np.mean((sr2 - fit_vals) ** 2))
                  / max(np.max(np.abs(sr2)), 1e-30))
    slope = float(coef[0])
    t_int = t_event - float(coef[1] / coef[0]) if coef[0] != 0.0 else float("nan")
    return side, slope, t_int, resid


def fit_normal_form(
    path: MetricPath,
    event: BifurcationEvent,
    samples,
    mu_offsets=(-0.02, -0.01, 0.01, 0.02),
    tol: float = 1e-10,
) -> NormalFormFit:
    """Fit the period-doubling normal form r' = r (f (t - t_k) + g r^2).

    ``sign_f`` comes from the measured slope of the anti-periodic sector
    eigenvalue through the event; the emergent branch supplies amplitude^2
    versus t, whose linearity (slope -f/g) determines sign_g and whose fit
    residual gauges confidence.  Nothing here assumes the event is generic:
    a flat or crooked fit lowers the confidence flag instead of asserting.
    """
    mus, ts = [], []
    for off in mu_offsets:
        t_val = event.t + off
        if not 0.0 <= t_val <= 1.0:
            continue
        res = _solve_fixed_t(path, t_val, np.asarray(event.loop.nodes))
        data = jacobi.build_operator(res)
        sec = jacobi.sector_index_nullity(data, 2, 1)
        cand = sec.near_zero
        if cand:
            mu = min(cand, key=abs)
        else:
            h = jacobi.quadratic_form_matrix(data, 2, sector=-1.0 + 0.0j)
            ev = np.linalg.eigvalsh(h)
            mu = float(ev[np.argmin(np.abs(ev))])
        mus.append(float(mu))
        ts.append(t_val)
    if len(ts) < 2:
        raise ContinuationError("not enough sector samples to fit the normal form")
    a = np.polyfit(np.asarray(ts) - event.t, np.asarray(mus), 1)
    mu_slope = float(a[0])
    sign_f = 1 if mu_slope > 0 else -1

    if not samples:
        raise ContinuationError("no emergent doubled orbits to fit against")
    side, r2_slope, t_intercept, resid = _fit_r2(samples, event.t)
    # existence side has r^2 = -(f/g)(t - t_k) > 0
    sign_g = -sign_f * side
    spread = max(abs(s.t - event.t) for s in samples)
    low_conf = resid > 0.10 or not np.isfinite(t_intercept) \
        or abs(t_intercept - event.t) > 0.5 * spread
    return NormalFormFit(
        t_event=event.t, sign_f=sign_f, sign_g=sign_g, side=side,
        mu_slope=mu_slope, r2_slope=r2_slope, t_intercept=t_intercept,
        relative_residual=resid, low_confidence=bool(low_conf))


# ---------------------------------------------------------------------------
# invariance of the weighted count across events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvarianceReport:
    event_kind: str
    t_before: float
    t_after: float
    total_before: int
    total_after: int
    invariant: bool
    detail_before: dict
    detail_after: dict
    records_before: dict
    records_after: dict


def verify_invariance(
    path: MetricPath,
    event: BifurcationEvent,
    delta: float = 0.02,
    samples=None,
    tol: float = 1e-10,
) -> InvarianceReport:
    """Weighted set count across an event over the local isolating set.

    For a period doubling the isolating set holds the primitive's double
    cover and the emergent doubled orbit; for a fold it holds the two
    colliding primitive branches.  Counts are per unoriented class times the
    orientation multiplicity, matching the census convention.
    """
    t_b = max(0.0, event.t - delta)
    t_a = min(1.0, event.t + delta)
    if event.kind == "period_doubling":
        detail_b, rec_b = _pd_side_detail(path, event, t_b, samples, tol)
        detail_a, rec_a = _pd_side_detail(path, event, t_a, samples, tol)
    elif event.kind == "fold":
        detail_b, rec_b = _fold_side_detail(path, event, t_b, tol)
        detail_a, rec_a = _fold_side_detail(path, event, t_a, tol)
    else:
        raise ValueError(f"unknown event kind {event.kind!r}")
    total_b = sum(detail_b.values())
    total_a = sum(detail_a.values())
    return InvarianceReport(
        event_kind=event.kind, t_before=t_b, t_after=t_a,
        total_before=total_b, total_after=total_a,
        invariant=(total_b == total_a),
        detail_before=detail_b, detail_after=detail_a,
        records_before=rec_b, records_after=rec_a)


def _pd_side_detail(path, event, t_val, samples, tol):
    """Contributions near twice the primitive length at parameter t_val."""
    res = _solve_fixed_t(path, t_val, np.asarray(event.loop.nodes))
    rep = jacobi.jacobi_report(res, d_max=2)
    rec = weights.weight(rep, ident="primitive", length=res.length)
    detail = {"primitive_double_cover": 2 * rec.n2}
    records = {"primitive_double_cover": rec}
    doubled = None
    if samples:
        near = [s for s in samples if abs(s.t - t_val) < 1e-9]
        doubled = near[0].result if near else None
    if doubled is None:
        got = spawn_doubled_branch(path, event, offsets=(t_val - event.t,), tol=tol)
        doubled = got[0].result if got else None
    if doubled is not None:
        rep_d = jacobi.jacobi_report(doubled, d_max=2)
        rec_d = weights.weight(rep_d, ident="doubled", length=doubled.length)
        detail["emergent_doubled"] = 2 * rec_d.n1
        records["emergent_doubled"] = rec_d
    return detail, records


def _fold_side_detail(path, event, t_val, tol):
    """Contributions of the two colliding branches at parameter t_val."""
    spec_t = path.at(t_val)
    data = jacobi.build_operator(solver.refine_to_geodesic(event.loop, tol=tol))
    fields = jacobi.detect_lambda_jacobi(data, 1, unit_tol=_EVENT_FIELD_TOL)
    if not fields:
        raise ContinuationError("no kernel field at the fold event")
    kick_dir = np.einsum("np,npm->nm", fields[0].xi, data.frame)
    kick_dir = kick_dir / np.max(np.linalg.norm(kick_dir, axis=1))
    base = np.asarray(event.loop.nodes)
    base_len = loops.length(event.loop)
    detail = {}
    found = []
    for eps in (2e-2, 5e-2, 1e-1, -2e-2, -5e-2, -1e-1):
        try:
            seed_nodes = geometry.surface_project(spec_t, base + eps * kick_dir)
            cand = solver.refine_to_geodesic(DiscreteLoop(spec_t, seed_nodes), tol=tol)
        except (solver.RefineError, solver.StallError, solver.DivergenceError,
                geometry.BandExitError, GeometryError):
            continue
        if abs(cand.length - base_len) > 0.5 * max(1.0, base_len):
            continue
        if loops.primitive_decompose(cand.loop).degree != 1:
            continue
        if all(loops.loop_distance(cand.loop, f.loop) > 1e-6 * max(1.0, cand.length)
               for f in found):
            found.append(cand)
    records = {}
    for i, cand in enumerate(found):
        rep = jacobi.jacobi_report(cand, d_max=2)
        rec = weights.weight(rep, ident=f"branch{i}", length=cand.length)
        detail[f"branch{i}"] = 2 * rec.n1
        records[f"branch{i}"] = rec
    if not found:
        detail["no_branches"] = 0
    return detail, records


# ---------------------------------------------------------------------------
# metric-deformation pairing
# ---------------------------------------------------------------------------

def metric_deformation_pairing(
    path: MetricPath,
    event: BifurcationEvent,
    h: float = 1e-5,
    mesh_doubling_check: bool = True,
) -> dict:
    """L2 pairing of the path's residual derivative with the kernel field.

    The event loop is held fixed in family reference coordinates while the
    metric moves, the t-derivative of the geodesic residual is formed by
    central differences, and its L2 pairing with the (unit-normalized)
    kernel Jacobi field measures how transversally the path crosses the
    degeneracy.  The sign must be stable under mesh doubling; the magnitude
    is reported as-is.
    """
    d_cover = 2 if event.kind == "period_doubling" else 1

    def pairing_at(nodes_in):
        spec0 = path.at(event.t)
        loop0 = DiscreteLoop(spec0, geometry.surface_project(spec0, nodes_in))
        res0 = solver.refine_to_geodesic(loop0)
        data = jacobi.build_operator(res0)
        fields = jacobi.detect_lambda_jacobi(data, d_cover, unit_tol=_EVENT_FIELD_TOL)
        want = -1.0 if d_cover == 2 else 1.0
        sel = [f for f in fields if abs(f.multiplier - want) < _EVENT_FIELD_TOL]
        if not sel:
            raise ContinuationError("kernel field unavailable for the pairing")
        frame_c = np.tile(data.frame, (d_cover, 1, 1))
        xi_amb = np.einsum("np,npm->nm", sel[0].xi, frame_c)
        xi_amb = xi_amb / np.sqrt(np.mean(np.sum(xi_amb * xi_amb, axis=1)))
        base = np.tile(np.asarray(res0.loop.nodes), (d_cover, 1))
        ref = geometry.to_reference(spec0, base)
        rp = solver.residual_field(path.at(event.t + h),
                                   geometry.from_reference(path.at(event.t + h), ref))[0]
        rm = solver.residual_field(path.at(event.t - h),
                                   geometry.from_reference(path.at(event.t - h), ref))[0]
        dr = (rp - rm) / (2.0 * h)
        scale = float(np.sqrt(np.mean(np.sum(dr * dr, axis=1))))
        return float(np.mean(np.sum(dr * xi_amb, axis=1))), scale

    value, scale = pairing_at(np.asarray(event.loop.nodes))
    out = {"value": value, "mesh": event.loop.n, "derivative_scale": scale}
    if mesh_doubling_check:
        dense = _spectral.resample(np.asarray(event.loop.nodes), 2 * event.loop.n)
        value2, _ = pairing_at(dense)
        out["value_doubled_mesh"] = value2
        out["sign_stable"] = bool(np.sign(value) == np.sign(value2) and value != 0.0)
    return out
