"""Holomorphic bundles in a fixed smooth frame: Chern connections, curvature,
degree and the complex gauge action.

A bundle is stored as the periodic part of its (0,1)-connection form
``a[k] = A^{0,1}`` on ``dzbar^k`` together with an integer flux per line block
and complex plane.  Each flux contributes a constant-curvature unitary
background connection, linear in the coordinates, whose only observable
effect on endomorphism-valued fields is the constant curvature
``(B/2) dz^j ^ dzbar^j`` with ``B = 2 pi k / area``.  Fields may couple two
blocks only when their fluxes agree, which keeps every endomorphism periodic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FormField, GridGeometry, MetricField, dolbeault_derivative, wedge
from .geometry.forms import basis, covariant_derivative
from .geometry.metric import _site_dagger, _site_inv, apply_sitewise, omega_power
from .geometry.torsion import tau_adjoint


class BundleError(ValueError):
    pass


def dagger(M: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def hermitian_sqrt(H: np.ndarray, power: float = 0.5) -> np.ndarray:
    """Per-site power of Hermitian positive matrices."""
    w, v = np.linalg.eigh(H)
    if np.any(w <= 0):
        raise BundleError("matrix field is not positive definite")
    return (v * w[..., None, :] ** power) @ dagger(v)


def hermitian_exp(X: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (X + dagger(X)))
    return (v * np.exp(w)[..., None, :]) @ dagger(v)


def _as_fluxes(fluxes, rank, n):
    f = np.zeros((rank, n), dtype=np.int64) if fluxes is None else np.asarray(fluxes, dtype=np.int64)
    if f.ndim == 1:
        f = f.reshape(rank, -1) if f.size == rank * n else f.reshape(-1, 1)
    if f.shape != (rank, n):
        raise BundleError(f"fluxes must have shape ({rank}, {n}), got {f.shape}")
    return f


def coupling_mask(fluxes: np.ndarray) -> np.ndarray:
    """``mask[i, j]`` is True when blocks i and j carry the same flux."""
    return np.all(fluxes[:, None, :] == fluxes[None, :, :], axis=-1)


def _check_couplings(name, M, mask, tol=1e-12):
    bad = np.abs(M[..., ~mask]).max(initial=0.0)
    if bad > tol:
        raise BundleError(f"{name} couples blocks with different fluxes (|entry| = {bad:.3g})")


@dataclass(eq=False)
class ConnectionState:
    """Unitary integrable connection for the fixed metric ``H0``.

    Only ``a = A^{0,1}`` is stored; the (1,0)-part is fixed by unitarity,
    ``theta = H0^{-1}(del H0 - a^+ H0)``, which is ``-a^{*H0}`` for constant ``H0``.
    """

    geom: GridGeometry
    a: np.ndarray
    fluxes: np.ndarray
    H0: np.ndarray

    def __post_init__(self):
        r = self.H0.shape[-1]
        self.fluxes = _as_fluxes(self.fluxes, r, self.geom.n)
        mask = coupling_mask(self.fluxes)
        _check_couplings("a", self.a, mask)
        _check_couplings("H0", self.H0, mask)

    @property
    def rank(self) -> int:
        return self.H0.shape[-1]

    @property
    def metric_field(self) -> np.ndarray:
        return self.H0


@dataclass(eq=False)
class BundleState:
    """Holomorphic structure ``a`` with a Hermitian bundle metric ``H``."""

    geom: GridGeometry
    a: np.ndarray
    fluxes: np.ndarray
    H: np.ndarray
    H0: np.ndarray = None

    def __post_init__(self):
        r = self.H.shape[-1]
        expected = (self.geom.n,) + self.geom.shape + (r, r)
        if self.a.shape != expected:
            raise BundleError(f"a has shape {self.a.shape}, expected {expected}")
        if self.H0 is None:
            self.H0 = self.H.copy()
        self.fluxes = _as_fluxes(self.fluxes, r, self.geom.n)
        mask = coupling_mask(self.fluxes)
        for name in ("a", "H", "H0"):
            _check_couplings(name, getattr(self, name), mask)
        for name in ("H", "H0"):
            M = getattr(self, name)
            if np.abs(M - dagger(M)).max() > 1e-10 * max(1.0, np.abs(M).max()):
                raise BundleError(f"{name} is not Hermitian")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise BundleError(f"{name} is not positive definite")

    @property
    def rank(self) -> int:
        return self.H.shape[-1]

    @property
    def metric_field(self) -> np.ndarray:
        return self.H

    def with_metric(self, H: np.ndarray) -> "BundleState":
        return BundleState(self.geom, self.a, self.fluxes, H, self.H0)


# -- frame data ---------------------------------------------------------------

def background_strength(geom: GridGeometry, fluxes: np.ndarray) -> np.ndarray:
    """Per block and plane, ``B = 2 pi k / area`` so that ``iF = B dx ^ dy``."""
    areas = np.array([geom.periods[2 * j] * geom.periods[2 * j + 1] for j in range(geom.n)])
    return 2 * np.pi * fluxes / areas


def background_curvature(geom: GridGeometry, fluxes: np.ndarray) -> FormField:
    """Constant (1,1) curvature of the flux background, ``(B/2) dz^j ^ dzbar^j`` per block."""
    r, n = fluxes.shape
    B = background_strength(geom, fluxes)
    entries = {}
    for j in range(n):
        m = np.diag(0.5 * B[:, j]).astype(complex)
        entries[(j, n + j)] = np.broadcast_to(m, geom.shape + (r, r))
    return FormField.from_components(geom, 2, entries, rank=r)


def theta_from(geom, a: np.ndarray, H: np.ndarray, dH=None) -> np.ndarray:
    """(1,0)-part of the Chern connection: ``theta_j = H^{-1}(d_j H - a_j^+ H)``."""
    n = geom.n
    if dH is None:
        dH = geom.gradient(H, first_axis=0, directions=range(n))
    Hinv = np.linalg.inv(H)
    return np.stack([Hinv @ (dH[j] - dagger(a[j]) @ H) for j in range(n)])


def connection_form(geom, theta: np.ndarray, a: np.ndarray) -> FormField:
    """Full periodic connection 1-form ``A = theta_j dz^j + a_k dzbar^k``."""
    r = a.shape[-1]
    return FormField(geom, 1, np.concatenate([theta, a], axis=0), rank=r)


def integrability_form(geom, a: np.ndarray) -> FormField:
    """``delbar a + a ^ a`` as a (0,2)-form."""
    n = geom.n
    r = a.shape[-1]
    af = FormField(geom, 1, np.concatenate([np.zeros_like(a), a]), rank=r)
    return dolbeault_derivative(af, "delbar") + wedge(af, af)


def integrability_residual(state) -> float:
    """Coefficient L2 norm of ``delbar a + a ^ a``."""
    return integrability_form(state.geom, state.a).l2_norm_flat()


def integrability_tolerance(state) -> float:
    a_norm = float(np.sqrt(np.sum(np.abs(state.a) ** 2) * state.geom.cell_volume))
    return 1e-8 * (1 + a_norm ** 2)


def chern_connection(bundle) -> FormField:
    """Periodic (1,0)-part ``theta`` of the Chern connection as an End-valued (1,0)-form.

    For states with fluxes the unitary background ``-a_bg^+`` is omitted; it
    commutes with every admissible ``H``.
    """
    geom = bundle.geom
    theta = theta_from(geom, bundle.a, bundle.metric_field)
    comps = np.concatenate([theta, np.zeros_like(theta)])
    return FormField(geom, 1, comps, rank=bundle.rank)


def full_connection(state) -> FormField:
    theta = theta_from(state.geom, state.a, state.metric_field)
    return connection_form(state.geom, theta, state.a)


def curvature(state) -> FormField:
    """Chern curvature ``F = dA + A ^ A`` (plus the flux background) as a 2-form.

    The (2,0) and (0,2) parts vanish up to the integrability tolerance.
    """
    A = full_connection(state)
    F = dolbeault_derivative(A, "d") + wedge(A, A)
    if np.any(state.fluxes):
        F = F + background_curvature(state.geom, state.fluxes)
    return F


def compatibility_residual(state, s: np.ndarray, t: np.ndarray) -> float:
    """Relative residual of ``d<s,t>_H = <Ds,t>_H + <s,Dt>_H`` on periodic sections."""
    geom = state.geom
    H = state.metric_field
    A = full_connection(state)
    n2 = geom.dim

    def pair(u, v):  # <u, v>_H = v^+ H u
        return np.einsum("...a,...ab,...b->...", np.conj(v), H, u)

    ds = geom.gradient(s, directions=range(n2))
    dt = geom.gradient(t, directions=range(n2))
    Ds = ds + np.einsum("a...ij,a...j->a...i", A.comps, np.broadcast_to(s, (n2,) + s.shape))
    Dt = dt + np.einsum("a...ij,a...j->a...i", A.comps, np.broadcast_to(t, (n2,) + t.shape))
    lhs = geom.gradient(pair(s, t), directions=range(n2))
    n = geom.n
    swap = [a + n if a < n else a - n for a in range(n2)]
    rhs = np.stack([pair(Ds[a], t) + pair(s, Dt[swap[a]]) for a in range(n2)])
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    return float(np.abs(lhs - rhs).max() / scale)


def random_section(geom, rank, seed=0, modes=2) -> np.ndarray:
    """Band-limited random section with Fourier modes up to ``modes``."""
    rng = np.random.default_rng(seed)
    x = geom.coords()
    out = np.zeros(geom.shape + (rank,), complex)
    for _ in range(4):
        k = rng.integers(-modes, modes + 1, size=geom.dim)
        c = rng.normal(size=rank) + 1j * rng.normal(size=rank)
        ph = np.exp(1j * sum(2 * np.pi * k[m] * x[m] / geom.periods[m] for m in range(geom.dim)))
        out += ph[..., None] * c
    return out


# -- degree -------------------------------------------------------------------

def degree_slope_lambda(state, metric: MetricField):
    """``deg = int (i/2pi) tr F ^ omega^{n-1}/(n-1)!``, slope and ``lambda = 2 pi slope / Vol``."""
    n = state.geom.n
    F = curvature(state).trace()
    from math import factorial
    w = omega_power(metric, n - 1) * (1.0 / factorial(n - 1))
    top = wedge(F, w) * (1j / (2 * np.pi))
    deg = float(np.real(metric.integrate_top(top)))
    slope = deg / state.rank
    lam = 2 * np.pi * slope / metric.volume
    return deg, slope, lam


# -- test bundles ---------------------------------------------------------------

def mode_field(geom, amplitude=0.1, mode=None) -> np.ndarray:
    """``amplitude * cos(2 pi k.x / p)`` for an integer mode vector."""
    if mode is None:
        mode = [1] + [0] * (geom.dim - 1)
    x = geom.coords()
    arg = sum(2 * np.pi * mode[m] * x[m] / geom.periods[m] for m in range(geom.dim))
    return amplitude * np.cos(arg)


def make_test_bundle(geom: GridGeometry, kind: str, **params) -> BundleState:
    """Construct a test bundle.

    Parameters by kind:

    * ``trivial_line``: none.
    * ``conformal_line``: ``phi`` (array) or ``amplitude``/``mode``; ``H = exp(phi)``.
    * ``flux_line``: ``k`` (int for n=1, per-plane list for n=2), optional ``phi``
      perturbation of the flat metric.
    * ``direct_sum``: ``parts`` list of BundleStates.
    * ``extension``: ``cls`` complex coefficients of the harmonic class
      ``sum_k c_k dzbar^k`` in the upper-right entry, optional ``exact``
      scalar ``u`` adding ``delbar u``, optional ``flux`` shared by both blocks,
      optional ``phi`` (Hermitian 2x2 generator field) for ``H = exp(phi)``.
    """
    n = geom.n
    shape = geom.shape
    if kind == "trivial_line":
        state = BundleState(geom, np.zeros((n,) + shape + (1, 1), complex), None,
                            np.ones(shape + (1, 1), complex))
    elif kind == "conformal_line":
        phi = params.get("phi")
        if phi is None:
            phi = mode_field(geom, params.get("amplitude", 0.1), params.get("mode"))
        state = BundleState(geom, np.zeros((n,) + shape + (1, 1), complex), None,
                            np.exp(phi).astype(complex)[..., None, None])
    elif kind == "flux_line":
        k = np.atleast_1d(np.asarray(params.get("k", 1), dtype=np.int64))
        if n == 2 and k.size != 2:
            raise BundleError("flux_line on n=2 needs one flux per complex plane")
        phi = params.get("phi")
        H = np.ones(shape + (1, 1), complex) if phi is None else np.exp(phi).astype(complex)[..., None, None]
        state = BundleState(geom, np.zeros((n,) + shape + (1, 1), complex), k.reshape(1, n), H)
    elif kind == "direct_sum":
        parts = params["parts"]
        state = direct_sum(parts)
    elif kind == "extension":
        cls = np.asarray(params.get("cls", [0.5] + [0] * (n - 1)), dtype=complex)
        if cls.size != n:
            raise BundleError(f"extension class needs {n} coefficients")
        beta = np.stack([np.full(shape, cls[k]) for k in range(n)])
        if params.get("exact") is not None:
            u = np.asarray(params["exact"], dtype=complex)
            beta = beta + geom.gradient(u, directions=range(n, 2 * n))
        if np.allclose(cls, 0):
            raise BundleError("extension class must be nonzero (split otherwise)")
        a = np.zeros((n,) + shape + (2, 2), complex)
        a[..., 0, 1] = beta
        flux = np.atleast_1d(np.asarray(params.get("flux", [0] * n), dtype=np.int64)).reshape(1, n)
        fluxes = np.repeat(flux, 2, axis=0)
        phi = params.get("phi")
        H = np.broadcast_to(np.eye(2, dtype=complex), shape + (2, 2)).copy() if phi is None \
            else hermitian_exp(np.asarray(phi, dtype=complex))
        state = BundleState(geom, a, fluxes, H)
    else:
        raise BundleError(f"unknown bundle kind {kind!r}")
    res = integrability_residual(state)
    if res > integrability_tolerance(state):
        raise BundleError(f"holomorphic structure not integrable (residual {res:.3g})")
    return state


def direct_sum(parts) -> BundleState:
    geom = parts[0].geom
    n = geom.n
    r = sum(p.rank for p in parts)
    a = np.zeros((n,) + geom.shape + (r, r), complex)
    H = np.zeros(geom.shape + (r, r), complex)
    H0 = np.zeros(geom.shape + (r, r), complex)
    fluxes = []
    o = 0
    for p in parts:
        s = slice(o, o + p.rank)
        a[..., s, s] = p.a
        H[..., s, s] = p.H
        H0[..., s, s] = p.H0
        fluxes.append(p.fluxes)
        o += p.rank
    return BundleState(geom, a, np.concatenate(fluxes), H, H0)


# -- gauge action ---------------------------------------------------------------

def connection_of(bundle: BundleState) -> ConnectionState:
    """The Chern connection of ``(a, H)`` viewed as an ``H``-unitary connection."""
    return ConnectionState(bundle.geom, bundle.a.copy(), bundle.fluxes.copy(), bundle.H.copy())


def gauge_act(sigma: np.ndarray, A: ConnectionState, H0: np.ndarray | None = None) -> ConnectionState:
    """Complex gauge action ``delbar_{s(A)} = s delbar_A s^{-1}``.

    The (1,0)-part follows from unitarity with respect to ``H0`` (defaults to
    ``A.H0``), which reproduces ``del_{s(A)} = (s^{*H0})^{-1} del_A s^{*H0}``.
    """
    geom = A.geom
    if H0 is None:
        H0 = A.H0
    det = np.abs(np.linalg.det(sigma))
    if det.min() <= 1e-12 * max(1.0, det.max()):
        raise BundleError("gauge transformation is singular at some site")
    sinv = np.linalg.inv(sigma)
    dbar_sigma = geom.gradient(sigma, directions=range(geom.n, 2 * geom.n))
    a_new = np.stack([sigma @ A.a[k] @ sinv - dbar_sigma[k] @ sinv for k in range(geom.n)])
    return ConnectionState(geom, a_new, A.fluxes.copy(), np.array(H0, copy=True))


def to_unitary_frame(A: ConnectionState) -> ConnectionState:
    """Gauge-equivalent connection for the identity reference metric."""
    s0 = hermitian_sqrt(A.H0)
    eye = np.broadcast_to(np.eye(A.rank, dtype=complex), A.H0.shape).copy()
    return gauge_act(s0, A, eye)


def lambda_f(state, metric: MetricField, F: FormField | None = None) -> np.ndarray:
    """``i Lambda_omega F`` per site."""
    if F is None:
        F = curvature(state)
    return 1j * metric.contract(F).comps[0]


# -- L2 adjoints ----------------------------------------------------------------

def covariant_adjoint(F: FormField, A: FormField | None, metric: MetricField, directions) -> FormField:
    """Discrete L2 adjoint of ``sum_{a in directions} e^a ^ nabla_a`` applied to ``F``.

    Built by summation by parts against the Fourier derivative, whose lattice
    adjoint is exactly ``-d/dzbar`` for ``d/dz``.  Endomorphism values are
    paired with the identity reference metric.
    """
    geom = metric.geom
    n = geom.n
    p = F.p - 1
    vdim = len(F.vshape)
    GF = apply_sitewise(np.swapaxes(metric.gram(F.p), 0, 1), F.comps, vdim)
    dens = metric.det.reshape(geom.shape + (1,) * vdim)
    W = np.zeros((len(basis(geom.dim, p)),) + geom.shape + F.vshape, complex)
    for a in directions:
        ea = FormField.zeros(geom, 1)
        ea.comps[a] = 1.0
        Z = apply_sitewise(_site_dagger(metric.wedge_matrix(ea, p)), GF, vdim) * dens
        abar = a + n if a < n else a - n
        W -= geom.gradient(Z, first_axis=1, directions=[abar])[0]
        if A is not None and F.rank is not None:
            Ad = dagger(A.comps[a])
            W += Ad @ Z - Z @ Ad
    out = apply_sitewise(_site_inv(np.swapaxes(metric.gram(p), 0, 1)), W, vdim) / dens
    return FormField(geom, p, out, F.rank)


def _cov_or_zero(form, A, directions):
    if form.p + 1 > form.geom.dim:
        return None
    return covariant_derivative(form, A, directions)


def adjoint_identity_check(A: ConnectionState, metric: MetricField) -> float:
    """Relative L2 residual of ``delbar_A^* F = -i[Lambda, del_A] F - taubar^* F``
    together with its conjugate ``del_A^* F = i[Lambda, delbar_A] F - tau^* F``."""
    A = to_unitary_frame(A)
    n = A.geom.n
    hol, antihol = range(n), range(n, 2 * n)
    conn = full_connection(A)
    F = curvature(A)
    lamF = metric.contract(F)
    num = den = 0.0
    for d_dirs, adj_dirs, sign, conj in ((hol, antihol, -1j, True), (antihol, hol, 1j, False)):
        lhs = covariant_adjoint(F, conn, metric, adj_dirs)
        comm = -covariant_derivative(lamF, conn, d_dirs)
        dF = _cov_or_zero(F, conn, d_dirs)
        if dF is not None:
            comm = comm + metric.contract(dF)
        rhs = comm * sign - tau_adjoint(F, metric, conjugate=conj)
        num += metric.l2_norm(lhs - rhs) ** 2
        den += max(metric.l2_norm(lhs), metric.l2_norm(rhs)) ** 2
    return float(np.sqrt(num / den)) if den > 0 else 0.0


__all__ = [
    "BundleError", "BundleState", "ConnectionState", "adjoint_identity_check", "background_curvature",
    "chern_connection", "compatibility_residual", "connection_of", "covariant_adjoint", "curvature",
    "degree_slope_lambda", "direct_sum", "full_connection", "gauge_act", "hermitian_exp", "hermitian_sqrt",
    "integrability_residual", "integrability_tolerance", "lambda_f", "make_test_bundle", "mode_field", "random_section", "to_unitary_frame",
]
