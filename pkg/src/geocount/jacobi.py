"""Second-variation analysis along closed geodesics.

Two independent computational routes are kept deliberately separate:

* spectral quadratic forms: the index form of the d-fold cover is assembled
  in the Fourier basis, where the derivative term is diagonal and the
  curvature term is a (block) circulant built from the FFT of the curvature
  samples; eigenvalue counts above/inside a threshold give index and nullity.
  The same machinery evaluates one Floquet sector at a time, and the direct
  cover spectrum must equal the union of its sector spectra exactly.
* Floquet monodromy: high-order ODE integration of the Jacobi system over
  one primitive period gives the linearized return map; kernel dimensions of
  M^d - I recover nullities with no spectral truncation, and unit-root
  eigenvectors reconstruct the quasi-periodic Jacobi fields themselves.

Agreement between the routes is the package's main internal consistency
check and is exposed in the report rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate

from . import _spectral, geometry, loops, solver
from .geometry import GeometryError, MetricSpec
from .loops import DiscreteLoop

KERNEL_SCALE = 1e-6


class JacobiError(RuntimeError):
    """The loop is unsuitable for second-variation analysis."""


@dataclass(frozen=True)
class JacobiOperatorData:
    """Curvature term and normal frame of the Jacobi operator along a loop.

    ``b_unit`` stores the unit-speed curvature matrix B(theta) with shape
    (N, p, p): for surfaces it is the Gauss curvature along the loop, in
    general the sectional-curvature matrix in the parallel normal frame.  The
    unit-interval operator acting on normal coordinates is
    zeta'' + speed^2 B(theta) zeta.
    """

    spec: MetricSpec
    loop: DiscreteLoop
    speed: float
    b_unit: np.ndarray       # (N, p, p)
    frame: np.ndarray        # (N, p, ambient_dim), g-orthonormal, parallel
    tangent: np.ndarray      # (N, ambient_dim), euclidean-unit tangents

    @property
    def normal_rank(self) -> int:
        return self.b_unit.shape[1]


def build_operator(source) -> JacobiOperatorData:
    """Assemble the Jacobi data for a converged closed geodesic.

    ``source`` is a refinement result or a DiscreteLoop already satisfying
    the geodesic equation; a loop with a visibly nonzero residual is
    rejected, since the second variation is only meaningful at a critical
    point.
    """
    loop = source.loop if isinstance(source, solver.GeodesicResult) else source
    spec = loop.metric
    res, fdef, _ = solver._scaled_residual(spec, loop.nodes)
    if res > 1e-6 or fdef > 1e-8:
        raise JacobiError(f"loop residual {res:.2e} is too large for a geodesic")
    nodes = loop.nodes
    n, m = nodes.shape
    vel = _spectral.derivative(nodes)
    tangent = vel / np.linalg.norm(vel, axis=1, keepdims=True)
    ell = loops.length(loop)

    if m == 3:
        nu = geometry.unit_normal(spec, nodes)
        n_e = np.cross(nu, tangent)
        n_e = n_e / np.linalg.norm(n_e, axis=1, keepdims=True)
        if spec.family == "conformal_sphere":
            u = geometry.conformal_exponent(spec, nodes)
            frame = (np.exp(-u)[:, None] * n_e)[:, None, :]
        else:
            frame = n_e[:, None, :]
        b = geometry.gauss_curvature(spec, nodes).reshape(n, 1, 1)
        return JacobiOperatorData(spec, loop, ell, b, frame, tangent)

    # higher-dimensional ellipsoids: only principal-plane geodesics carry a
    # closed-form parallel frame (the untouched coordinate directions)
    spread = np.max(np.abs(nodes), axis=0)
    active = np.where(spread > 1e-9)[0]
    if active.size != 2:
        raise JacobiError(
            "normal frames above dimension 3 require principal-plane loops")
    passive = [j for j in range(m) if j not in set(active)]
    frame = np.zeros((n, len(passive), m))
    for idx, j in enumerate(passive):
        frame[:, idx, j] = 1.0
    hess = geometry.constraint_hess(spec, nodes)
    gnorm = np.linalg.norm(geometry.constraint_grad(spec, nodes), axis=1)

    def sform(a, bvec):
        return np.einsum("ni,nij,nj->n", a, hess, bvec) / gnorm

    p = len(passive)
    b = np.empty((n, p, p))
    s_tt = sform(tangent, tangent)
    for l in range(p):
        s_lt = sform(frame[:, l, :], tangent)
        for k in range(p):
            s_lk = sform(frame[:, l, :], frame[:, k, :])
            s_tk = sform(tangent, frame[:, k, :])
            b[:, l, k] = s_tt * s_lk - s_lt * s_tk
    return JacobiOperatorData(spec, loop, ell, b, frame, tangent)


# ---------------------------------------------------------------------------
# Fourier quadratic forms
# ---------------------------------------------------------------------------

def _cover_curvature(data: JacobiOperatorData, d: int) -> np.ndarray:
    """d^2-scaled curvature samples of the d-cover on its own unit interval."""
    b_theta = data.speed ** 2 * data.b_unit
    return d * d * np.tile(b_theta, (d, 1, 1))


def quadratic_form_matrix(data: JacobiOperatorData, d: int, sector: complex | None = None):
    """Hermitian matrix of the (negated) index form in the Fourier basis.

    With ``sector=None`` the form lives on the full d-cover: modes are the
    dN cover frequencies and the curvature enters as a block circulant.
    With ``sector=lambda`` (a unit-modulus multiplier) the form acts on
    fields over the primitive period twisted by z(theta+1) = lambda z(theta);
    the d^2 scaling keeps sector and cover spectra identical, so the cover
    spectrum is the exact union of its d sector spectra.

    Positive eigenvalues are negative directions of the index form, so the
    Morse index is the count above +tau and the nullity the count inside
    [-tau, tau].
    """
    p = data.normal_rank
    if sector is None:
        bc = _cover_curvature(data, d)
        mm = bc.shape[0]
        bhat = np.fft.fft(bc, axis=0) / mm
        k = _spectral.modes(mm)
        alpha = 0.0
        scale = 1.0
    else:
        lam = complex(sector)
        if abs(abs(lam) - 1.0) > 1e-9:
            raise ValueError("sector multiplier must lie on the unit circle")
        bc = data.speed ** 2 * data.b_unit
        mm = bc.shape[0]
        bhat = np.fft.fft(bc, axis=0) / mm
        k = _spectral.modes(mm)
        alpha = math.atan2(lam.imag, lam.real) / (2.0 * math.pi)
        scale = float(d * d)
    idx = (k[:, None] - k[None, :]).astype(int) % mm
    h = bhat[idx]                       # (mm, mm, p, p)
    h = np.transpose(h, (0, 2, 1, 3)).reshape(mm * p, mm * p)
    diag = -((2.0 * np.pi * (k + alpha)) ** 2)
    h = h + np.kron(np.diag(diag), np.eye(p))
    h = scale * h
    return 0.5 * (h + h.conj().T)


def kernel_threshold(data: JacobiOperatorData, d: int) -> float:
    """Coefficient-scale kernel threshold tau for the degree-d forms.

    Proportional to the size of the cover's zeroth-order coefficient (floored
    at one), not to the matrix norm: the derivative part of the operator
    grows like the mesh squared and would make a norm-based threshold
    mesh-dependent.
    """
    rho = max(1.0, float(np.max(np.abs(_cover_curvature(data, d)))))
    return KERNEL_SCALE * rho


@dataclass(frozen=True)
class IndexResult:
    d: int
    iota: int
    nu: int
    tau: float
    eigen_gap: float        # smallest |eigenvalue| outside the kernel band
    borderline: bool        # an eigenvalue sits within 10x of the threshold
    near_zero: tuple        # eigenvalues within 100 tau, for inspection


def index_nullity(data: JacobiOperatorData, d: int = 1) -> IndexResult:
    """Morse index and nullity of the degree-d cover via the direct route."""
    h = quadratic_form_matrix(data, d)
    ev = np.linalg.eigvalsh(h)
    tau = kernel_threshold(data, d)
    iota = int(np.sum(ev > tau))
    nu = int(np.sum(np.abs(ev) <= tau))
    outside = np.abs(ev[np.abs(ev) > tau])
    gap = float(np.min(outside)) if outside.size else float("inf")
    borderline = bool(np.any((np.abs(ev) > tau) & (np.abs(ev) < 10.0 * tau)))
    near = tuple(float(e) for e in ev[np.abs(ev) <= 100.0 * tau])
    return IndexResult(d=d, iota=iota, nu=nu, tau=tau, eigen_gap=gap,
                       borderline=borderline, near_zero=near)


def sector_index_nullity(data: JacobiOperatorData, d: int, j: int) -> IndexResult:
    """Index and nullity of the lambda = exp(2 pi i j / d) Floquet sector."""
    lam = complex(math.cos(2.0 * math.pi * j / d), math.sin(2.0 * math.pi * j / d))
    h = quadratic_form_matrix(data, d, sector=lam)
    ev = np.linalg.eigvalsh(h)
    tau = kernel_threshold(data, d)
    iota = int(np.sum(ev > tau))
    nu = int(np.sum(np.abs(ev) <= tau))
    outside = np.abs(ev[np.abs(ev) > tau])
    gap = float(np.min(outside)) if outside.size else float("inf")
    borderline = bool(np.any((np.abs(ev) > tau) & (np.abs(ev) < 10.0 * tau)))
    near = tuple(float(e) for e in ev[np.abs(ev) <= 100.0 * tau])
    return IndexResult(d=d, iota=iota, nu=nu, tau=tau, eigen_gap=gap,
                       borderline=borderline, near_zero=near)


def sector_decomposition(data: JacobiOperatorData, d: int):
    """Per-sector indices plus the exact cover consistency check.

    Returns (sectors, direct, consistent): ``sectors`` maps j to the
    IndexResult of multiplier exp(2 pi i j / d); consistency demands the
    sector sums reproduce the direct cover's index and nullity as integers.
    """
    sectors = {j: sector_index_nullity(data, d, j) for j in range(d)}
    direct = index_nullity(data, d)
    consistent = (
        sum(s.iota for s in sectors.values()) == direct.iota
        and sum(s.nu for s in sectors.values()) == direct.nu
    )
    return sectors, direct, consistent


# ---------------------------------------------------------------------------
# Floquet route
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonodromyResult:
    matrix: np.ndarray        # (2p, 2p) return map of (zeta, zeta')
    multipliers: np.ndarray   # eigenvalues
    det_defect: float         # |det M - 1|, exact symplectic volume check


def _b_theta_interp(data: JacobiOperatorData):
    b_theta = data.speed ** 2 * data.b_unit
    coef = np.fft.fft(b_theta, axis=0) / b_theta.shape[0]
    k = _spectral.modes(b_theta.shape[0])

    def evaluate(t):
        phase = np.exp(2j * np.pi * k * t)
        if b_theta.shape[0] % 2 == 0:
            phase[b_theta.shape[0] // 2] = np.cos(np.pi * b_theta.shape[0] * t)
        return np.tensordot(phase, coef, axes=(0, 0)).real

    return evaluate


def monodromy(data: JacobiOperatorData, rtol: float = 1e-12, atol: float = 1e-12) -> MonodromyResult:
    """Linearized return map over the primitive period by ODE integration.

    Integrates the 2p x 2p fundamental solution of zeta'' = -speed^2 B zeta
    with an 8th-order adaptive scheme and trigonometric interpolation of the
    curvature samples; this route is independent of the Fourier quadratic
    forms.
    """
    p = data.normal_rank
    beval = _b_theta_interp(data)

    def rhs(t, y):
        yy = y.reshape(2 * p, 2 * p)
        top = yy[p:]
        bot = -beval(t % 1.0) @ yy[:p]
        return np.concatenate([top, bot]).reshape(-1)

    y0 = np.eye(2 * p).reshape(-1)
    sol = scipy.integrate.solve_ivp(
        rhs, (0.0, 1.0), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise JacobiError(f"monodromy integration failed: {sol.message}")
    mat = sol.y[:, -1].reshape(2 * p, 2 * p)
    mult = np.linalg.eigvals(mat)
    det_defect = float(abs(np.linalg.det(mat) - 1.0))
    return MonodromyResult(matrix=mat, multipliers=mult, det_defect=det_defect)


def floquet_nullity(mono: MonodromyResult, d: int, tol: float = 1e-6) -> int:
    """dim ker(M^d - I) by singular value counting.

    The threshold is absolute: unit-circle multipliers put the relevant
    singular values on the O(1) scale, and any threshold scaled by the
    largest singular value fakes kernels on strongly hyperbolic orbits
    where sigma_max of M^d - I is exponentially large.
    """
    md = np.linalg.matrix_power(mono.matrix, d)
    sv = np.linalg.svd(md - np.eye(md.shape[0]), compute_uv=False)
    return int(np.sum(sv < tol))


@dataclass(frozen=True)
class LambdaJacobiField:
    """Quasi-periodic Jacobi field zeta(theta+1) = lambda zeta(theta).

    ``xi`` and ``twin`` are the real and imaginary parts sampled on the
    d-cover grid; a real multiplier produces a single field with no twin.
    ``generalized`` marks multipliers whose eigenspace is defective (Jordan
    block), where genuine quasi-periodic fields span less than the algebraic
    multiplicity.
    """

    multiplier: complex
    d: int
    xi: np.ndarray            # (dN, p)
    twin: np.ndarray | None
    generalized: bool
    residual: float           # relative defect of the cover Jacobi equation


def detect_lambda_jacobi(
    data: JacobiOperatorData,
    d: int,
    mono: MonodromyResult | None = None,
    unit_tol: float = 1e-6,
) -> tuple:
    """Jacobi fields for every monodromy multiplier with lambda^d = 1.

    Each unit-root eigenvector is integrated over the primitive period and
    copied to the cover with the multiplier twist; the reported residual is
    the relative error of the cover Jacobi equation evaluated spectrally, so
    a successful detection is self-verifying.
    """
    if mono is None:
        mono = monodromy(data)
    p = data.normal_rank
    vals, vecs = np.linalg.eig(mono.matrix)
    sel = [i for i in range(vals.size) if abs(vals[i] ** d - 1.0) < unit_tol]
    if not sel:
        return ()
    # defective multipliers: compare geometric kernel count with the number
    # of selected eigenvalues (algebraic count)
    geo = floquet_nullity(mono, d)
    defective = geo < len(sel)

    beval = _b_theta_interp(data)
    n = data.loop.n
    t_grid = np.arange(n) / n

    fields = []
    for i in sel:
        lam = vals[i]
        v = vecs[:, i]
        # integrate the complex system as stacked real/imag parts
        def rhs_c(t, y):
            zr = y[:p] + 1j * y[p:2 * p]
            wr = y[2 * p:3 * p] + 1j * y[3 * p:]
            dz = wr
            dw = -(beval(t % 1.0) @ zr)
            return np.concatenate([dz.real, dz.imag, dw.real, dw.imag])

        y0 = np.concatenate([v[:p].real, v[:p].imag, v[p:].real, v[p:].imag])
        sol = scipy.integrate.solve_ivp(
            rhs_c, (0.0, 1.0), y0, method="DOP853", rtol=1e-12, atol=1e-12,
            t_eval=t_grid, dense_output=False)
        if not sol.success:
            raise JacobiError(f"field integration failed: {sol.message}")
        z_base = (sol.y[:p] + 1j * sol.y[p:2 * p]).T      # (n, p)
        z_cover = np.concatenate([z_base * lam ** k for k in range(d)], axis=0)
        # spectral residual of the cover equation on its unit interval
        zpp = _spectral.derivative(z_cover, order=2)
        bc = _cover_curvature(data, d)
        forcing = np.einsum("nij,nj->ni", bc, z_cover)
        resid = zpp + forcing
        scale = max(float(np.max(np.abs(forcing))), float(np.max(np.abs(zpp))), 1e-30)
        rel = float(np.max(np.abs(resid))) / scale
        significant_imag = float(np.max(np.abs(z_cover.imag))) \
            > 1e-8 * float(np.max(np.abs(z_cover.real)) + 1e-30)
        fields.append(LambdaJacobiField(
            multiplier=complex(lam), d=d, xi=z_cover.real,
            twin=z_cover.imag.copy() if significant_imag else None,
            generalized=bool(defective), residual=rel))
    return tuple(fields)


# ---------------------------------------------------------------------------
# combined report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JacobiReport:
    data: JacobiOperatorData
    indices: tuple            # IndexResult for d = 1..d_max
    mono: MonodromyResult
    floquet_nullities: dict   # d -> dim ker(M^d - I)
    fields: tuple             # LambdaJacobiField for d = d_max resonances
    resonances: dict          # d -> nu(d) > 0 flags for d <= 4
    routes_agree: bool        # spectral vs Floquet nullities and sector sums
    sector_checks: dict       # d -> bool


def jacobi_report(source, d_max: int = 2, field_d: int | None = None) -> JacobiReport:
    """Full two-route stability report for one closed geodesic."""
    data = source if isinstance(source, JacobiOperatorData) else build_operator(source)
    indices = tuple(index_nullity(data, d) for d in range(1, d_max + 1))
    mono = monodromy(data)
    floq = {d: floquet_nullity(mono, d) for d in range(1, max(d_max, 4) + 1)}
    sector_checks = {}
    agree = True
    for res in indices:
        if res.nu != floq[res.d]:
            agree = False
        _, _, ok = sector_decomposition(data, res.d)
        sector_checks[res.d] = ok
        if not ok:
            agree = False
    resonances = {d: floq[d] > 0 for d in range(1, 5)}
    fields = detect_lambda_jacobi(data, field_d or d_max, mono=mono)
    return JacobiReport(
        data=data, indices=indices, mono=mono, floquet_nullities=floq,
        fields=fields, resonances=resonances, routes_agree=agree,
        sector_checks=sector_checks)
