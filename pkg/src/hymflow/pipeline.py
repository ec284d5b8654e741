"""Orchestration behind the command-line subcommands."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from .bundle import BundleState, connection_of, degree_slope_lambda, direct_sum, make_test_bundle, mode_field
from .checkpoint import read_checkpoint, write_checkpoint
from .config import RunConfig
from .flow import FlowConfig, FlowError, integrate, trajectory_equivalence
from .geometry import build_torus_geometry, make_test_metric, metric_condition_check, omega_norm

CERT_TOL = 1e-8


@dataclass
class Report:
    code: int = 0
    lines: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def say(self, text: str) -> None:
        self.lines.append(text)

    def verdict(self, name: str, ok: bool, detail: str = "") -> None:
        self.verdicts[name] = bool(ok)
        self.say(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))

    def finish(self) -> "Report":
        if self.code == 0 and not all(self.verdicts.values()):
            self.code = 1
        return self


# -- builders -------------------------------------------------------------------

def build_geometry(cfg: RunConfig):
    g = cfg.geometry
    return build_torus_geometry(g.n, g.N, g.periods)


def build_metric(cfg: RunConfig, geom):
    return make_test_metric(geom, cfg.metric.kind, cfg.metric.amplitude, seed=cfg.run.seed)


def _phase_field(geom, amplitude, mode, shift):
    x = geom.coords()
    arg = sum(2 * np.pi * mode[m] * x[m] / geom.periods[m] for m in range(geom.dim))
    return amplitude * np.cos(arg + shift)


def build_bundle(cfg: RunConfig, geom) -> BundleState:
    """Test bundle from the config; ``amplitude`` perturbs the initial metric by ``exp(phi)``."""
    b = cfg.bundle
    n = geom.n
    mode = b.mode or [1] + [0] * (geom.dim - 1)
    amp = b.amplitude
    if b.kind == "trivial_line":
        if amp:
            return make_test_bundle(geom, "conformal_line", phi=mode_field(geom, amp, mode))
        return make_test_bundle(geom, "trivial_line")
    if b.kind == "conformal_line":
        return make_test_bundle(geom, "conformal_line", phi=mode_field(geom, amp, mode))
    if b.kind == "flux_line":
        k = b.flux or [1] * n
        return make_test_bundle(geom, "flux_line", k=k, phi=mode_field(geom, amp, mode) if amp else None)
    if b.kind == "direct_sum":
        parts = [make_test_bundle(geom, "flux_line", k=k,
                                  phi=_phase_field(geom, amp, mode, 1.3 * i) if amp else None)
                 for i, k in enumerate(b.fluxes)]
        return direct_sum(parts)
    cls = b.cls or [0.1] + [0] * (n - 1)
    flux = b.flux or [0] * n
    phi = None
    if amp:
        c = _phase_field(geom, amp, mode, 0.0)
        s = _phase_field(geom, amp, mode, -np.pi / 2)
        phi = np.zeros(geom.shape + (2, 2), complex)
        phi[..., 0, 0], phi[..., 1, 1] = c, -0.5 * c
        phi[..., 0, 1] = 0.5 * (c + 1j * s)
        phi[..., 1, 0] = np.conj(phi[..., 0, 1])
    return make_test_bundle(geom, "extension", cls=cls, flux=flux, phi=phi)


def flow_config(cfg: RunConfig, checkpoint_every=None) -> FlowConfig:
    f = cfg.flow
    return FlowConfig(t_end=f.t_end, dt=f.dt, cfl=f.cfl, scheme=f.scheme, record_every=f.record_every,
                      checkpoint_every=f.checkpoint_every if checkpoint_every is None else checkpoint_every,
                      blowup_factor=f.blowup_factor)


def certify(metric) -> tuple:
    """Metric residuals and whether the Gauduchon and Astheno-Kaehler conditions hold."""
    gaud, ast, kah = metric_condition_check(metric)
    scale = omega_norm(metric)
    ok = gaud <= CERT_TOL * scale and ast <= CERT_TOL * scale
    return (gaud, ast, kah), scale, ok


# -- outputs --------------------------------------------------------------------

def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, records) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dg.DiagnosticsRecord.field_names())
        for rec in records:
            w.writerow([fmt(v) for v in rec.as_row()])


PLOT_STUB = '''"""Plot the diagnostics series written by a run."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "diagnostics.csv"
with open(path) as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t"]) for r in rows]
fig, axes = plt.subplots(2, 2, figsize=(9, 6))
for ax, key in zip(axes.flat, ["ym", "sup_lambda_f", "i_func", "he_resid"]):
    ax.semilogy(t, [max(float(r[key]), 1e-300) for r in rows])
    ax.set_title(key)
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png")
'''


# -- subcommands ----------------------------------------------------------------

def verify_metric(cfg: RunConfig) -> Report:
    rep = Report()
    geom = build_geometry(cfg)
    metric = build_metric(cfg, geom)
    (gaud, ast, kah), scale, ok = certify(metric)
    rep.say(f"metric {cfg.metric.kind} amplitude {cfg.metric.amplitude} n={geom.n} N={geom.N}")
    rep.say(f"min eigenvalue {metric.min_eigenvalue:.6g}  volume {metric.volume:.12g}  |omega| {scale:.6g}")
    rep.say(f"gauduchon_residual {gaud:.6e}")
    rep.say(f"astheno_residual {ast:.6e}")
    rep.say(f"kahler_residual {kah:.6e}")
    rep.verdict("certified_gauduchon_astheno", ok, f"tolerance {CERT_TOL:g} * |omega|")
    return rep.finish()


def _final_checks(rep, cfg, traj, metric, certified, state0):
    d = cfg.diagnostics
    recs = traj.records
    sup0 = recs[0].sup_lambda_f
    sups = traj.series("sup_lambda_f")
    rep.verdict("max_principle", bool(np.all(sups <= sup0 * (1 + 1e-6) + 1e-300)),
                f"max sup|LF| {sups.max():.6g} vs initial {sup0:.6g}")
    l2 = traj.series("l2_lambda_f")
    slack = 1e-8 * cfg.flow.record_every
    rep.verdict("l2_lambda_f_nonincreasing", bool(np.all(np.diff(l2) <= slack)),
                f"largest increase {np.diff(l2).max(initial=0.0):.3g}")
    if certified:
        ym = traj.series("ym")
        rep.verdict("ym_nonincreasing", bool(np.all(np.diff(ym) <= 1e-6 * ym[0] * cfg.flow.record_every)),
                    f"largest increase {np.diff(ym).max(initial=0.0):.3g}")
        resid = recs[-1].energy_ident_resid
        rep.verdict("energy_identity", resid <= d.energy_tol, f"residual {resid:.3e}")
    else:
        rep.say("note: YM monotonicity and energy identity not asserted on an uncertified metric")
    if metric.geom.n == 2 and d.torsion_check:
        if certified:
            ratios = [dg.state_torsion_cancellation(s, metric)[2] for s in (traj.states[0], traj.states[-1])]
            rep.verdict("torsion_cancellation", max(ratios) <= 1e-4, f"ratio {max(ratios):.3e}")
        else:
            rep.say("warning: torsion cancellation check disabled, metric is not Gauduchon/Astheno-Kaehler")
    if metric.geom.n == 2:
        integ = traj.series("integrability_resid")
        tol = 10 * max(integ[0], 1e-8)
        rep.verdict("integrability", bool(integ.max() <= tol), f"max residual {integ.max():.3e}")
    if d.he_tol is not None:
        rep.verdict("hermitian_einstein", recs[-1].he_resid <= d.he_tol, f"he_resid {recs[-1].he_resid:.3e}")
    if d.phi:
        geom = metric.geom
        R = d.phi_R or geom.injectivity_radius
        t0 = traj.record_times[-1]
        radii = d.phi_radii or [min(R / 2, np.sqrt(t0) / 2) / 2 ** k for k in (2, 1, 0)]
        x0 = d.phi_x0 or [0.0] * geom.dim
        res = dg.phi_monotonicity(traj, (x0, t0), radii, R, d.phi_calib)
        rep.say("phi " + " ".join(f"r={r:.4g}:{v:.6e}" for r, v in zip(res.radii, res.values)))
        rep.verdict("phi_monotonicity", res.verdict, f"worst margin {res.worst_margin:.3e}")


def run_pipeline(cfg: RunConfig) -> Report:
    rep = Report()
    out = cfg.output.dir
    geom = build_geometry(cfg)
    metric = build_metric(cfg, geom)
    (gaud, ast, kah), scale, certified = certify(metric)
    rep.say(f"metric {cfg.metric.kind}: gauduchon {gaud:.3e} astheno {ast:.3e} kahler {kah:.3e} "
            f"certified={certified}")
    bundle = build_bundle(cfg, geom)
    deg, slope, lam = degree_slope_lambda(bundle, metric)
    rep.say(f"bundle {cfg.bundle.kind} rank {bundle.rank}: deg {deg:.12g} slope {slope:.12g} lambda {lam:.12g}")
    state = bundle if cfg.flow.formulation == "metric" else connection_of(bundle)
    ckpt_path = os.path.join(out, "final.ckpt")
    saved = {}

    def on_ckpt(t, st):
        saved["last"] = (t, st)
        if cfg.output.checkpoint and cfg.flow.checkpoint_every:
            write_checkpoint(os.path.join(out, f"step-{t:.6f}.ckpt"), st, metric, t)

    try:
        traj = integrate(state, flow_config(cfg), metric, on_checkpoint=on_ckpt)
    except FlowError as exc:
        rep.code = 3
        rep.say(f"error: {type(exc).__name__}: {exc}")
        if exc.last_good is not None and cfg.output.checkpoint:
            t, st = exc.last_good
            path = os.path.join(out, "last_good.ckpt")
            write_checkpoint(path, st, metric, t)
            rep.paths["last_good"] = path
            rep.say(f"last good state at t = {t:.6g} written to {path}")
        return rep
    rep.say(f"steps of dt = {traj.dt:.6g} to t = {traj.record_times[-1]:.6g}")
    if cfg.output.csv:
        path = os.path.join(out, "diagnostics.csv")
        write_csv(path, traj.records)
        rep.paths["csv"] = path
        if cfg.output.plot_stub:
            with open(os.path.join(out, "plot_diagnostics.py"), "w") as fh:
                fh.write(PLOT_STUB)
    if cfg.output.checkpoint:
        t, st = traj.times[-1], traj.states[-1]
        write_checkpoint(ckpt_path, st, metric, t)
        rep.paths["checkpoint"] = ckpt_path
    last = traj.records[-1]
    rep.say(f"he_resid {last.he_resid:.6e}  sup|LF| {last.sup_lambda_f:.6e}  YM {last.ym:.12g}")
    psi = dg.lambda_f_field(traj.states[-1], metric)
    gap = cfg.diagnostics.cluster_gap or dg.cluster_gap(bundle.rank, metric.volume)
    rep.say(f"cluster gap {gap:.6g}")
    for c in dg.eigenvalue_clustering(psi, gap):
        rep.say(f"cluster value {c.value:.10g} multiplicity {c.multiplicity} spread {c.spread:.3e}")
    scan = dg.density_scan(traj.states[-1], metric, cfg.diagnostics.radius, cfg.diagnostics.eps1)
    rep.say(f"sigma scan r={scan.radius:.4g} eps1={scan.eps1:g}: max {scan.values.max():.3e}, "
            f"{int(scan.mask.sum())} sites flagged")
    _final_checks(rep, cfg, traj, metric, certified, state)
    if rep.paths.get("csv"):
        with open(os.path.join(out, "summary.txt"), "w") as fh:
            fh.write("\n".join(rep.lines) + "\n")
    return rep.finish()


def compare_flows(cfg: RunConfig) -> Report:
    rep = Report()
    geom = build_geometry(cfg)
    metric = build_metric(cfg, geom)
    bundle = build_bundle(cfg, geom)
    fc = flow_config(cfg, checkpoint_every=cfg.flow.record_every)
    try:
        trH = integrate(bundle, fc, metric)
        trA = integrate(connection_of(bundle), fc, metric)
    except FlowError as exc:
        rep.code = 3
        rep.say(f"error: {type(exc).__name__}: {exc}")
        return rep
    disc = trajectory_equivalence(trH, trA)
    path = os.path.join(cfg.output.dir, "compare.csv")
    os.makedirs(cfg.output.dir, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "discrepancy"])
        for t, v in disc:
            w.writerow([fmt(t), fmt(v)])
    rep.paths["csv"] = path
    worst = float(disc[:, 1].max())
    rep.say(f"dt {trH.dt:.6g}, {len(disc)} shared times, max discrepancy {worst:.3e}")
    rep.verdict("gauge_equivalence", worst <= 5 * trH.dt, f"bound 5*dt = {5 * trH.dt:.3e}")
    return rep.finish()


def diagnose(path, phi: bool = False, sigma_scan: bool = False, t_window: float | None = None) -> Report:
    rep = Report()
    ck = read_checkpoint(path)
    state, metric = ck.state, ck.metric
    _, _, lam = degree_slope_lambda(state, metric)
    rec = dg.flow_observables(state, metric, lam, ck.t)
    rep.say(f"checkpoint {path}: n={state.geom.n} N={state.geom.N} rank={state.rank} t={ck.t:.6g}")
    for name in dg.DiagnosticsRecord.field_names():
        rep.say(f"{name} {fmt(getattr(rec, name))}")
    for c in dg.eigenvalue_clustering(dg.lambda_f_field(state, metric), volume=metric.volume):
        rep.say(f"cluster value {c.value:.10g} multiplicity {c.multiplicity} spread {c.spread:.3e}")
    if sigma_scan:
        scan = dg.density_scan(state, metric)
        rep.say(f"sigma scan r={scan.radius:.4g} eps1={scan.eps1:g}: max {scan.values.max():.3e}, "
                f"{int(scan.mask.sum())} sites flagged")
    if phi:
        # The formula needs a backward time window: continue the heat flow from the checkpoint.
        geom = state.geom
        R = geom.injectivity_radius / 2
        radii = [0.02, 0.04, 0.08]
        t0 = t_window or 4 * radii[-1] ** 2
        start = state if not isinstance(state, BundleState) else connection_of(state)
        traj = integrate(start, FlowConfig(t_end=t0, cfl=0.5, record_every=1), metric)
        res = dg.phi_monotonicity(traj, ([0.0] * geom.dim, t0), radii, R)
        rep.say("phi " + " ".join(f"r={r:.4g}:{v:.6e}" for r, v in zip(res.radii, res.values)))
        rep.verdict("phi_monotonicity", res.verdict, f"worst margin {res.worst_margin:.3e}")
    return rep.finish()


__all__ = ["Report", "build_bundle", "build_geometry", "build_metric", "certify", "compare_flows",
           "diagnose", "flow_config", "run_pipeline", "verify_metric", "write_csv"]
