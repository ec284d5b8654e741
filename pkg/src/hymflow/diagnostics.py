"""Monitored quantities along the flows: energies, identities, the weighted
monotone quantity, the concentration scan and the eigenvalue splitting
detector.

All pointwise norms are taken in the frame where the reference bundle
metric is the identity, using the metric-induced inner product on forms.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, fields

import numpy as np

from .bundle import (BundleState, ConnectionState, curvature, full_connection, integrability_residual,
                     to_unitary_frame)
from .geometry import FormField, MetricField, covariant_derivative, scalar_function
from .geometry.torsion import torsion_adjoint_apply


class DiagnosticsError(ValueError):
    pass


class InsufficientCoverage(DiagnosticsError):
    pass


@dataclass
class DiagnosticsRecord:
    t: float
    ym: float
    dtA_l2sq: float
    sup_lambda_f: float
    l2_lambda_f: float
    i_func: float
    he_resid: float
    torsion_pair: float
    energy_ident_resid: float
    integrability_resid: float

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list:
        return [getattr(self, name) for name in self.field_names()]


@dataclass
class DensityMap:
    radius: float
    values: np.ndarray
    eps1: float
    mask: np.ndarray

    @property
    def empty(self) -> bool:
        return not bool(self.mask.any())


@dataclass
class Cluster:
    value: float
    multiplicity: int
    spread: float


@dataclass
class PhiResult:
    radii: np.ndarray
    values: np.ndarray
    verdict: bool
    worst_margin: float
    calib_C: float


# -- per-state quantities -------------------------------------------------------

def unitary(state) -> ConnectionState:
    if isinstance(state, BundleState):
        state = ConnectionState(state.geom, state.a, state.fluxes, state.H)
    return to_unitary_frame(state)


def _is_unitary(state) -> bool:
    return isinstance(state, ConnectionState) and np.array_equal(
        state.H0, np.broadcast_to(np.eye(state.rank), state.H0.shape))


def _frame(state) -> ConnectionState:
    return state if _is_unitary(state) else unitary(state)


def energy_density(state, metric: MetricField, F: FormField | None = None) -> np.ndarray:
    """``e(A) = |F_A|^2`` per site."""
    if F is None:
        F = curvature(_frame(state))
    return metric.norm_sq(F)


def sup_curvature(state, metric: MetricField) -> float:
    return float(np.sqrt(energy_density(state, metric).max()))


def lambda_f_field(state, metric: MetricField) -> np.ndarray:
    """``i Lambda F`` per site in the unitary frame (Hermitian matrices)."""
    U = _frame(state)
    return 1j * metric.contract(curvature(U)).comps[0]


def heat_velocity(U: ConnectionState, metric: MetricField, F=None, conn=None) -> FormField:
    """``dA/dt = i(delbar_A - del_A) Lambda F`` for a unitary-frame state."""
    if F is None:
        F = curvature(U)
    if conn is None:
        conn = full_connection(U)
    psi = 1j * metric.contract(F).comps[0]
    D = covariant_derivative(scalar_function(U.geom, psi, U.rank), conn)
    n = U.geom.n
    sign = np.array([-1.0] * n + [1.0] * n).reshape((-1,) + (1,) * (D.comps.ndim - 1))
    return D.like(D.comps * sign)


def _frob2(M):
    return np.real(np.einsum("...ab,...ab->...", M, np.conj(M)))


def flow_observables(state, metric: MetricField, lam: float, t: float = 0.0) -> DiagnosticsRecord:
    """Energies, suprema and residuals of one state; ``energy_ident_resid`` is left at 0."""
    U = _frame(state)
    conn = full_connection(U)
    F = curvature(U)
    psi = 1j * metric.contract(F).comps[0]
    e = metric.norm_sq(F)
    ym = float(np.real(metric.integrate(e)))
    D = covariant_derivative(scalar_function(U.geom, psi, U.rank), conn)
    i_func = float(np.real(metric.integrate(metric.norm_sq(D))))
    dtA = heat_velocity(U, metric, F, conn)
    dtA_l2sq = float(np.real(metric.integrate(metric.norm_sq(dtA))))
    p2 = _frob2(psi)
    dev = psi - lam * np.eye(U.rank)
    he = float(np.abs(np.linalg.eigvalsh(0.5 * (dev + np.conj(np.swapaxes(dev, -1, -2))))).max())
    tp = float(np.real(torsion_pairing(F, dtA, metric))) if U.geom.n > 1 else 0.0
    return DiagnosticsRecord(
        t=float(t), ym=ym, dtA_l2sq=dtA_l2sq, sup_lambda_f=float(np.sqrt(p2.max())),
        l2_lambda_f=float(np.sqrt(max(np.real(metric.integrate(p2)), 0.0))), i_func=i_func,
        he_resid=he, torsion_pair=tp, energy_ident_resid=0.0,
        integrability_resid=integrability_residual(U) if U.geom.n > 1 else 0.0)


def i_functional(A, metric: MetricField) -> float:
    """``I = int |D_A Lambda F_A|^2 dV``."""
    U = _frame(A)
    psi = lambda_f_field(U, metric)
    D = covariant_derivative(scalar_function(U.geom, psi, U.rank), full_connection(U))
    return float(np.real(metric.integrate(metric.norm_sq(D))))


def torsion_pairing(F: FormField, dtA: FormField, metric: MetricField) -> complex:
    """``int <(tau + taubar)^* F, dA/dt> dV`` (complex; the energy balance uses the real part)."""
    T = torsion_adjoint_apply(F, metric)
    return complex(metric.integrate(metric.inner(T, dtA)))


def torsion_cancellation(F: FormField, dtA: FormField, metric: MetricField):
    """``(pairing, int |T||dA/dt| dV, |pairing| / that integral)`` with ``T = (tau + taubar)^* F``."""
    T = torsion_adjoint_apply(F, metric)
    pairing = complex(metric.integrate(metric.inner(T, dtA)))
    scale = float(np.real(metric.integrate(np.sqrt(metric.norm_sq(T) * metric.norm_sq(dtA)))))
    ratio = abs(pairing) / scale if scale > 0 else 0.0
    return pairing, scale, ratio


def state_torsion_cancellation(state, metric: MetricField):
    U = _frame(state)
    F = curvature(U)
    return torsion_cancellation(F, heat_velocity(U, metric, F), metric)


# -- trajectory quantities ------------------------------------------------------

def _cumtrapz(t, y):
    out = np.zeros_like(y, dtype=float)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * np.diff(t) * (y[1:] + y[:-1]))
    return out


def energy_identity_residual(traj) -> np.ndarray:
    """``|YM(t) + 2 int_0^t ||dA/dt||^2 - YM(0)| / max(YM(0), eps)`` at every record."""
    t = traj.record_times
    ym = traj.series("ym")
    cum = _cumtrapz(t, traj.series("dtA_l2sq"))
    return np.abs(ym + 2 * cum - ym[0]) / max(ym[0], 1e-300)


def _density_at(traj, t):
    times = np.asarray(traj.density_times)
    if not traj.densities:
        raise InsufficientCoverage("trajectory stores no energy densities")
    tol = 1e-12 * max(1.0, abs(t))
    if t < times[0] - tol or t > times[-1] + tol:
        raise InsufficientCoverage(f"time {t:.6g} outside the stored range [{times[0]:.6g}, {times[-1]:.6g}]")
    i = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2)) if len(times) > 1 else 0
    if len(times) == 1:
        return traj.densities[0]
    w = (t - times[i]) / (times[i + 1] - times[i])
    w = min(max(w, 0.0), 1.0)
    return (1 - w) * traj.densities[i] + w * traj.densities[i + 1]


def _ball_weight(geom, x0, R):
    d = geom.displacement(x0)
    return (np.sqrt(np.sum(d ** 2, axis=0)) <= R).astype(float)


def _interval_integral(t, y, a, b):
    """Integral over [a, b] of the piecewise-linear interpolant of samples ``(t, y)``."""
    if b <= a:
        return 0.0
    nodes = np.concatenate([[a], t[(t > a) & (t < b)], [b]])
    vals = np.interp(nodes, t, y)
    return float(np.sum(0.5 * np.diff(nodes) * (vals[1:] + vals[:-1])))


def local_energy_check(traj, x0, R: float, s: float, tau: float, C: float = 10.0):
    """Both sides of the local energy inequality with calibration constant ``C``.

    ``lhs = int_{B_R} e(s)`` and ``rhs = int_{B_2R} e(tau) + 2J + sqrt(C|s-tau| YM0 J / R^2)
    + sqrt(C|s-tau| YM0 J)`` with ``J = int int |dA/dt|^2`` between the two times.
    """
    metric = traj.metric
    geom = metric.geom
    if R <= 0 or R > geom.injectivity_radius / 2 + 1e-12:
        raise DiagnosticsError(f"R = {R} must lie in (0, i_X/2 = {geom.injectivity_radius / 2}]")
    lhs = float(np.real(metric.integrate(_density_at(traj, s) * _ball_weight(geom, x0, R))))
    lead = float(np.real(metric.integrate(_density_at(traj, tau) * _ball_weight(geom, x0, 2 * R))))
    lo, hi = min(s, tau), max(s, tau)
    J = _interval_integral(traj.record_times, traj.series("dtA_l2sq"), lo, hi)
    ym0 = traj.records[0].ym
    span = hi - lo
    rhs = lead + 2 * J + np.sqrt(C * span * ym0 * J / R ** 2) + np.sqrt(C * span * ym0 * J)
    return lhs, float(rhs)


def heat_kernel(geom, x0, s: float, translates: int = 1) -> np.ndarray:
    """Periodized backward heat kernel ``(4 pi s)^{-n} exp(-|x - x0|^2 / 4s)`` on R^{2n}.

    Sums the ``(2 translates + 1)^{2n}`` nearest lattice translates.
    """
    d = geom.displacement(x0)
    p = np.asarray(geom.periods)
    out = np.zeros(geom.shape)
    for shift in itertools.product(range(-translates, translates + 1), repeat=geom.dim):
        off = (np.asarray(shift) * p).reshape((-1,) + (1,) * geom.dim)
        out += np.exp(-np.sum((d + off) ** 2, axis=0) / (4 * s))
    return out / (4 * np.pi * s) ** geom.n


def cutoff(geom, x0, R: float) -> np.ndarray:
    """Piecewise-linear cutoff: 1 on B_{R/2}, 0 outside B_R, gradient 2/R in between."""
    rho = np.sqrt(np.sum(geom.displacement(x0) ** 2, axis=0))
    return np.clip(2 - 2 * rho / R, 0.0, 1.0)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def phi_value(traj, x0, t0: float, r: float, R: float) -> float:
    """``Phi(r) = r^2 int_{t0-4r^2}^{t0-r^2} int e f^2 G dV dt``."""
    metric = traj.metric
    geom = metric.geom
    f2 = cutoff(geom, x0, R) ** 2
    a, b = t0 - 4 * r * r, t0 - r * r
    times = np.asarray(traj.density_times)
    nodes = np.concatenate([[a], times[(times > a) & (times < b)], [b]])
    total = 0.0
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        half = 0.5 * (hi - lo)
        for xg, wg in zip(_GL_X, _GL_W):
            t = lo + half * (xg + 1)
            dens = _density_at(traj, t) * f2 * heat_kernel(geom, x0, t0 - t)
            total += half * wg * float(np.real(metric.integrate(dens)))
    return r * r * total


def phi_monotonicity(traj, u0, r_list, R: float, calib_C: float = 20.0) -> PhiResult:
    """Evaluate ``Phi`` on ``r_list`` and check the almost-monotonicity inequality for all pairs.

    The parabolic cylinder term ``int_{P_R} |F|^2`` is integrated over the part
    of ``[t0 - R^2, t0 + R^2]`` covered by the trajectory.
    """
    x0, t0 = u0
    metric = traj.metric
    geom = metric.geom
    radii = np.sort(np.asarray(r_list, dtype=float))
    if R <= 0 or R > geom.injectivity_radius + 1e-12:
        raise DiagnosticsError(f"R = {R} must lie in (0, i_X]")
    rmax = min(R / 2, np.sqrt(max(t0, 0.0)) / 2)
    if radii[0] <= 0 or radii[-1] > rmax * (1 + 1e-12):
        raise DiagnosticsError(f"radii must lie in (0, {rmax:.6g}]")
    times = np.asarray(traj.density_times)
    if not len(times) or times[0] > t0 - 4 * radii[-1] ** 2 + 1e-12 or times[-1] < t0 - radii[0] ** 2 - 1e-12:
        raise InsufficientCoverage("trajectory does not cover the backward cylinders")
    values = np.array([phi_value(traj, x0, t0, r, R) for r in radii])
    ym0 = traj.records[0].ym
    ball = _ball_weight(geom, x0, R)
    lo, hi = max(times[0], t0 - R * R), min(times[-1], t0 + R * R)
    local = np.array([float(np.real(metric.integrate(d * ball))) for d in traj.densities])
    p_r = _interval_integral(times, local, lo, hi)
    C = calib_C
    worst = np.inf
    for i, j in itertools.combinations(range(len(radii)), 2):
        r1, r2 = radii[i], radii[j]
        bound = (C * np.exp(C * (r2 - r1)) * values[j] + C * (r2 ** 2 - r1 ** 2) * ym0
                 + C * R ** (2 - 2 * geom.n) * p_r)
        worst = min(worst, bound - values[i])
    verdict = bool(worst >= 0) if np.isfinite(worst) else True
    return PhiResult(radii, values, verdict, float(worst), C)


def ball_kernel(geom, r: float) -> np.ndarray:
    """Indicator of the closed ball of radius ``r`` about the origin site."""
    return _ball_weight(geom, np.zeros(geom.dim), r)


def density_scan(F, metric: MetricField, r: float | None = None, eps1: float = 1e-2) -> DensityMap:
    """Scaled local energy ``r^{4-2n} int_{B_r(x)} e dV`` at every site.

    ``F`` is a curvature FormField, a state, or a per-site energy density.
    The radius defaults to two grid cells.
    """
    geom = metric.geom
    if r is None:
        r = 2 * max(geom.spacing)
    if r <= 0 or r > geom.injectivity_radius + 1e-12:
        raise DiagnosticsError(f"radius {r} must lie in (0, i_X = {geom.injectivity_radius}]")
    if isinstance(F, FormField):
        e = metric.norm_sq(F)
    elif isinstance(F, (BundleState, ConnectionState)):
        e = energy_density(F, metric)
    else:
        e = np.asarray(F, dtype=float)
    local = np.real(geom.convolve(e * metric.det, ball_kernel(geom, r))) * geom.cell_volume
    values = np.maximum(r ** (4 - 2 * geom.n) * local, 0.0)
    return DensityMap(float(r), values, float(eps1), values >= eps1)


def cluster_gap(rank: int, volume: float) -> float:
    """Default gap: a fifth of the smallest possible spacing ``2 pi / (r^2 Vol)`` between slopes.

    Slopes of subbundles are degrees over ranks with ranks at most ``r``, so
    distinct values of ``2 pi mu / Vol`` differ by at least this spacing.
    """
    return 0.2 * 2 * np.pi / (rank * rank * volume)


def eigenvalue_clustering(lambda_f_field: np.ndarray, gap: float | None = None, volume: float = 1.0):
    """Pool pointwise eigenvalues and split them at gaps wider than ``gap``.

    Returns clusters sorted by descending value; multiplicity is the
    cluster's share of eigenvalues per site, rounded.
    """
    M = np.asarray(lambda_f_field)
    r = M.shape[-1]
    M = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    ev = np.sort(np.linalg.eigvalsh(M.reshape((-1, r, r))).ravel())[::-1]
    if gap is None:
        gap = cluster_gap(r, volume)
    sites = ev.size // r
    cuts = np.flatnonzero(-np.diff(ev) > gap) + 1
    out = []
    for part in np.split(ev, cuts):
        out.append(Cluster(float(part.mean()), int(round(part.size / sites)), float(part[0] - part[-1])))
    return out


__all__ = [
    "Cluster", "DensityMap", "DiagnosticsError", "DiagnosticsRecord", "InsufficientCoverage", "PhiResult",
    "ball_kernel", "cluster_gap", "cutoff", "density_scan", "eigenvalue_clustering", "energy_density",
    "energy_identity_residual", "flow_observables", "heat_kernel", "heat_velocity", "i_functional",
    "lambda_f_field", "local_energy_check", "phi_monotonicity", "phi_value", "state_torsion_cancellation",
    "sup_curvature", "torsion_cancellation", "torsion_pairing", "unitary",
]
