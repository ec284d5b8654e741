"""Time integration of the metric flow and of the gauge-equivalent connection
heat flow, the gauge link between them and the cross-check of the two
equivalent connection right-hand sides.

Both integrators work on raw arrays.  The metric flow evolves ``H`` with the
holomorphic structure ``a`` fixed; the heat flow evolves ``a`` in the frame
where the reference metric is the identity, with ``theta = -a^+``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bundle import (BundleError, BundleState, ConnectionState, background_strength, covariant_adjoint,
                     curvature, dagger, degree_slope_lambda, full_connection, gauge_act, hermitian_sqrt,
                     integrability_residual, integrability_tolerance, to_unitary_frame)
from .geometry import FormField, GridGeometry, MetricField
from .geometry.torsion import torsion_adjoint_apply

# Largest stable step of each explicit scheme for dy/dt = -mu y, in units of 1/mu.
STABILITY_RADIUS = {"rk4": 2.785293563405282, "euler": 2.0}


class FlowError(RuntimeError):
    """Integration aborted; ``last_good`` holds ``(t, state)`` of the last accepted step."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class PositivityLost(FlowError):
    pass


class Blowup(FlowError):
    pass


class CflViolation(FlowError):
    pass


class IntegrabilityLost(FlowError):
    pass


@dataclass
class FlowConfig:
    """Integrator settings.  ``dt=None`` picks the CFL step from ``cfl``."""

    t_end: float
    dt: float | None = None
    cfl: float = 0.1
    scheme: str = "rk4"
    record_every: int = 1
    checkpoint_every: int = 0
    blowup_factor: float = 1e6
    keep_density: bool = True

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.scheme not in STABILITY_RADIUS:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.record_every < 1 or self.checkpoint_every < 0:
            raise ValueError("record_every must be >= 1 and checkpoint_every >= 0")


@dataclass
class Trajectory:
    """Checkpointed states plus the diagnostics series of one run."""

    kind: str
    metric: MetricField
    lam: float
    dt: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    density_times: list = field(default_factory=list)
    densities: list = field(default_factory=list)

    def append_state(self, t, state):
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must increase strictly")
        self.times.append(t)
        self.states.append(state)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def record_times(self) -> np.ndarray:
        return self.series("t")

    @property
    def final_state(self):
        return self.states[-1]


# -- step size ------------------------------------------------------------------

def cfl_timestep(geometry: GridGeometry, metric: MetricField, state=None, cfl: float = 0.1) -> float:
    """``dt = cfl * h_min^2 / (4 n Lambda_max)`` with ``Lambda_max`` the largest inverse eigenvalue of g."""
    h = min(geometry.spacing)
    return cfl * h * h / (4 * geometry.n * metric.max_inverse_eigenvalue)


def stability_limit(geometry: GridGeometry, metric: MetricField, scheme: str = "rk4") -> float:
    """Largest stable step for the linearised principal part.

    The symbol of the principal part is bounded by ``Lambda_max |k|^2`` with
    ``|k|^2`` the largest resolved squared wavenumber.
    """
    kmax2 = sum(float(np.max(k ** 2)) for k in geometry.wavenumbers)
    return STABILITY_RADIUS[scheme] / (metric.max_inverse_eigenvalue * kmax2)


def resolve_dt(config: FlowConfig, geometry, metric) -> tuple[float, int]:
    """Step and step count hitting ``t_end`` exactly; raises CflViolation on unstable steps."""
    limit = stability_limit(geometry, metric, config.scheme)
    dt = config.dt if config.dt is not None else cfl_timestep(geometry, metric, cfl=config.cfl)
    if dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt = {dt:.4g} exceeds the {config.scheme} stability limit {limit:.4g}")
    if config.t_end == 0:
        return dt, 0
    steps = max(1, math.ceil(config.t_end / dt - 1e-9))
    return config.t_end / steps, steps


# -- fast kernels ---------------------------------------------------------------

def site_matmul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-site product of small square matrices, unrolled over the matrix indices.

    Faster than ``@`` for the 1x1 and 2x2 blocks used here because it avoids
    batched-GEMM dispatch per site.
    """
    r = x.shape[-1]
    if r > 4:
        return x @ y
    out = np.empty(np.broadcast_shapes(x.shape, y.shape), complex)
    for i in range(r):
        for k in range(r):
            acc = x[..., i, 0] * y[..., 0, k]
            for j in range(1, r):
                acc = acc + x[..., i, j] * y[..., j, k]
            out[..., i, k] = acc
    return out


class FlowKernel:
    """Array-level curvature and right-hand sides for one geometry, metric and flux set."""

    def __init__(self, geom: GridGeometry, metric: MetricField, fluxes: np.ndarray):
        self.geom = geom
        self.metric = metric
        n = geom.n
        r = fluxes.shape[0]
        B = background_strength(geom, fluxes)
        self.fbg = np.zeros((n, r, r), complex)
        for j in range(n):
            self.fbg[j] = np.diag(0.5 * B[:, j])
        # 2 G^{-1}[k, j] laid out as w[j, k, *grid]
        self.weights = 2 * np.moveaxis(metric.ginv, (-1, -2), (0, 1))
        self.eye = np.eye(r, dtype=complex)

    def curvature11(self, a, theta=None, da=None) -> np.ndarray:
        """``F[j, k] = F_bg + d_j a_k - dbar_k theta_j + [theta_j, a_k]``.

        ``theta=None`` selects the unitary frame ``theta = -a^dagger``, where
        ``dbar_k theta_j = -(d_k a_j)^dagger`` needs no extra transform.
        """
        n = self.geom.n
        if da is None:
            da = self.geom.gradient(a, first_axis=1, directions=range(n))
        if theta is None:
            theta = -dagger(a)
            dth = -dagger(da)
        else:
            dth = self.geom.gradient(theta, first_axis=1, directions=range(n, 2 * n))
        F = np.empty((n, n) + a.shape[1:], complex)
        for j in range(n):
            for k in range(n):
                F[j, k] = da[j, k] - dth[k, j] + site_matmul(theta[j], a[k]) - site_matmul(a[k], theta[j])
            F[j, j] += self.fbg[j]
        return F

    def psi(self, F) -> np.ndarray:
        """``i Lambda F`` from the (1,1) block."""
        n = self.geom.n
        out = np.zeros(F.shape[2:], complex)
        for j in range(n):
            for k in range(n):
                out += self.weights[j, k][..., None, None] * F[j, k]
        return out

    def unitary_psi(self, a) -> np.ndarray:
        return self.psi(self.curvature11(a))

    def heat_rhs(self, a) -> np.ndarray:
        """``da/dt = delbar_A (i Lambda F)`` in the unitary frame."""
        n = self.geom.n
        psi = self.unitary_psi(a)
        dbar = self.geom.gradient(psi, directions=range(n, 2 * n))
        return np.stack([dbar[k] + site_matmul(a[k], psi) - site_matmul(psi, a[k]) for k in range(n)])

    def metric_rhs(self, a, H, lam, da=None, dH=None) -> np.ndarray:
        """``dH/dt = -2 H (i Lambda F_H - lambda Id)``."""
        n = self.geom.n
        if dH is None:
            dH = self.geom.gradient(H, directions=range(n))
        Hinv = np.linalg.inv(H)
        theta = np.stack([site_matmul(Hinv, dH[j] - site_matmul(dagger(a[j]), H)) for j in range(n)])
        psi = self.psi(self.curvature11(a, theta, da))
        return -2 * site_matmul(H, psi - lam * self.eye)


def metric_flow_rhs(bundle: BundleState, metric: MetricField, lam: float) -> np.ndarray:
    """``dH/dt = -2 H (i Lambda F_H - lambda Id)`` per site."""
    return FlowKernel(bundle.geom, metric, bundle.fluxes).metric_rhs(bundle.a, bundle.H, lam)


def connection_flow_rhs(A: ConnectionState, metric: MetricField) -> FormField:
    """``dA/dt = i(delbar_A - del_A) Lambda F`` as an endomorphism-valued 1-form.

    The (0,1)-part is ``delbar_A psi`` and the (1,0)-part ``-del_A psi`` with
    ``psi = i Lambda F``; both are evaluated in the frame of ``A``.
    """
    geom = A.geom
    n = geom.n
    conn = full_connection(A)
    F = curvature(A)
    psi = 1j * metric.contract(F).comps[0]
    grads = geom.gradient(psi, directions=range(2 * n))
    comps = np.empty_like(conn.comps)
    for c in range(2 * n):
        cov = grads[c] + conn.comps[c] @ psi - psi @ conn.comps[c]
        comps[c] = cov if c >= n else -cov
    return FormField(geom, 1, comps, A.rank)


def rhs_cross_check(A: ConnectionState, metric: MetricField) -> float:
    """Relative L2 gap between ``i(delbar_A - del_A) Lambda F`` and ``-D_A^* F - (tau + taubar)^* F``."""
    A = to_unitary_frame(A)
    lhs = connection_flow_rhs(A, metric)
    F = curvature(A)
    conn = full_connection(A)
    rhs = -covariant_adjoint(F, conn, metric, range(A.geom.dim)) - torsion_adjoint_apply(F, metric)
    scale = max(metric.l2_norm(lhs), metric.l2_norm(rhs))
    if scale == 0:
        return 0.0
    return float(metric.l2_norm(lhs - rhs) / scale)


# -- gauge link -----------------------------------------------------------------

def gauge_link(H_t: np.ndarray, H0: np.ndarray) -> np.ndarray:
    """Positive ``H0``-self-adjoint root ``sigma`` of ``h = H0^{-1} H_t``.

    In the frame ``s0 = H0^{1/2}``, ``h`` becomes the positive matrix
    ``s0^{-1} H_t s0^{-1}``; its positive root is mapped back.
    """
    try:
        s0 = hermitian_sqrt(H0)
        s0_inv = hermitian_sqrt(H0, -0.5)
        inner = s0_inv @ H_t @ s0_inv
        root = hermitian_sqrt(0.5 * (inner + dagger(inner)))
    except BundleError as exc:
        raise PositivityLost(str(exc)) from exc
    return s0_inv @ root @ s0


def h0_adjoint(sigma: np.ndarray, H0: np.ndarray) -> np.ndarray:
    """``sigma^{*H0} = H0^{-1} sigma^+ H0``."""
    return np.linalg.solve(H0, dagger(sigma) @ H0)


# -- integrator -----------------------------------------------------------------

def _rk_step(f, y, dt, scheme):
    if scheme == "euler":
        return y + dt * f(y)
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(state, config: FlowConfig, metric: MetricField,
              on_checkpoint: Callable | None = None, observer: Callable | None = None) -> Trajectory:
    """Advance a BundleState by the metric flow or a ConnectionState by the heat flow.

    Connection states are moved to the frame where ``H0`` is the identity
    before integration; stored states are in that frame.  ``on_checkpoint(t,
    state)`` is called for each stored state.  ``observer(state, metric, lam,
    t)`` returns a DiagnosticsRecord and defaults to the standard observables.
    """
    from . import diagnostics

    if observer is None:
        observer = diagnostics.flow_observables
    geom = state.geom
    dt, steps = resolve_dt(config, geom, metric)
    kind = "metric" if isinstance(state, BundleState) else "connection"
    if kind == "connection":
        state = to_unitary_frame(state)
    _, _, lam = degree_slope_lambda(state, metric)
    kernel = FlowKernel(geom, metric, state.fluxes)
    traj = Trajectory(kind, metric, lam, dt)
    n = geom.n

    if kind == "metric":
        a = state.a
        da = geom.gradient(a, first_axis=1, directions=range(n))
        y = state.H.copy()

        def rhs(H):
            return kernel.metric_rhs(a, H, lam, da=da)

        def make(Y):
            return BundleState(geom, a, state.fluxes, Y, state.H0)
    else:
        y = state.a.copy()
        H0 = state.H0
        rhs = kernel.heat_rhs

        def make(Y):
            return ConnectionState(geom, Y, state.fluxes, H0)

    integ0 = integrability_residual(state) if n == 2 and kind == "connection" else 0.0
    integ_limit = 10 * max(integ0, integrability_tolerance(state))
    ym0 = None
    cum = 0.0
    prev = None
    f_ceiling = None

    def record(t, cur):
        nonlocal ym0, cum, prev, f_ceiling
        rec = observer(cur, metric, lam, t)
        if ym0 is None:
            ym0 = rec.ym
            f_ceiling = config.blowup_factor * max(diagnostics.sup_curvature(cur, metric), 1e-300)
        else:
            cum += 0.5 * (t - prev.t) * (rec.dtA_l2sq + prev.dtA_l2sq)
        rec.energy_ident_resid = abs(rec.ym + 2 * cum - ym0) / max(ym0, 1e-300)
        traj.records.append(rec)
        if config.keep_density:
            traj.density_times.append(t)
            traj.densities.append(diagnostics.energy_density(cur, metric))
        prev = rec
        return rec

    cur = make(y)
    record(0.0, cur)
    traj.append_state(0.0, cur)
    if on_checkpoint:
        on_checkpoint(0.0, cur)
    last_good = (0.0, cur)

    for step in range(1, steps + 1):
        t = step * dt
        y = _rk_step(rhs, y, dt, config.scheme)
        if not np.all(np.isfinite(y)):
            raise Blowup(f"non-finite values at t = {t:.6g}", last_good)
        if kind == "metric":
            y = 0.5 * (y + dagger(y))
            if np.linalg.eigvalsh(y).min() <= 0:
                raise PositivityLost(f"H lost positivity at t = {t:.6g}", last_good)
        cur = None
        is_record = step % config.record_every == 0 or step == steps
        is_ckpt = step == steps or (config.checkpoint_every and step % config.checkpoint_every == 0)
        if is_record or is_ckpt:
            cur = make(y)
        if is_record:
            if diagnostics.sup_curvature(cur, metric) > f_ceiling:
                raise Blowup(f"sup|F| exceeded the ceiling at t = {t:.6g}", last_good)
            rec = record(t, cur)
            if rec.integrability_resid > integ_limit:
                raise IntegrabilityLost(
                    f"integrability residual {rec.integrability_resid:.3g} at t = {t:.6g}", last_good)
        if is_ckpt:
            traj.append_state(t, cur)
            if on_checkpoint:
                on_checkpoint(t, cur)
        if cur is not None:
            last_good = (t, cur)
    return traj


# -- equivalence of the two formulations ----------------------------------------

def gauge_invariants(A: ConnectionState, metric: MetricField, sample_sites=None) -> np.ndarray:
    """YM energy, ``||Lambda F||_2`` and eigenvalues of ``i Lambda F`` at sampled sites."""
    from .diagnostics import flow_observables, lambda_f_field

    U = to_unitary_frame(A)
    rec = flow_observables(U, metric, 0.0)
    psi = lambda_f_field(U, metric)
    flat = psi.reshape((-1,) + psi.shape[-2:])
    if sample_sites is None:
        sample_sites = np.linspace(0, flat.shape[0] - 1, 7).astype(int)
    eig = np.linalg.eigvalsh(flat[sample_sites])
    return np.concatenate([[rec.ym, rec.l2_lambda_f], eig.ravel()])


def trajectory_equivalence(traj_H: Trajectory, traj_A: Trajectory) -> np.ndarray:
    """Max relative discrepancy of gauge invariants at each shared checkpoint time.

    For each time the metric-flow state ``H(t)`` is turned into ``sigma(t)(A0)``
    by the gauge link and compared against the heat-flow state.
    """
    if traj_H.kind != "metric" or traj_A.kind != "connection":
        raise ValueError("expected a metric-flow and a connection-flow trajectory")
    s0, sA = traj_H.states[0], traj_A.states[0]
    if s0.geom.shape != sA.geom.shape or s0.rank != sA.rank:
        raise ValueError("trajectories live on mismatched grids")
    metric = traj_A.metric
    A0 = ConnectionState(s0.geom, s0.a, s0.fluxes, s0.H0)
    times_A = np.array(traj_A.times)
    out = []
    for t, st in zip(traj_H.times, traj_H.states):
        idx = np.flatnonzero(np.abs(times_A - t) <= 1e-12 * max(1.0, abs(t)))
        if idx.size == 0:
            continue
        sigma = gauge_link(st.H, s0.H0)
        linked = gauge_act(sigma, A0, s0.H0)
        u = gauge_invariants(linked, metric)
        v = gauge_invariants(traj_A.states[idx[0]], metric)
        scale = max(np.abs(u).max(), np.abs(v).max(), 1e-300)
        out.append((t, float(np.abs(u - v).max() / scale)))
    if not out:
        raise ValueError("trajectories share no checkpoint times")
    return np.array(out)


__all__ = [
    "Blowup", "CflViolation", "FlowConfig", "FlowError", "FlowKernel", "IntegrabilityLost",
    "PositivityLost", "Trajectory", "cfl_timestep", "connection_flow_rhs", "gauge_invariants",
    "gauge_link", "h0_adjoint", "integrate", "metric_flow_rhs", "resolve_dt", "rhs_cross_check",
    "stability_limit", "trajectory_equivalence",
]
