"""Line-based run configuration: ``section.key = value`` with ``#`` comments."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

METRIC_KINDS = ("kahler_flat", "kahler_warped", "gauduchon_nonkahler", "hermitian_bump")
BUNDLE_KINDS = ("trivial_line", "conformal_line", "flux_line", "direct_sum", "extension")


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _complexes(text):
    return [complex(v.strip().replace(" ", "")) for v in text.split(",") if v.strip()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _auto_float(text):
    return None if text.strip().lower() == "auto" else float(text)


def _blocks(text):
    """``"1; -1"`` or ``"1, 1; -1, -1"``: one integer vector per block."""
    return [_ints(part) for part in text.split(";") if part.strip()]


@dataclass
class GeometrySection:
    n: int = 1
    N: int = 16
    periods: list | None = None


@dataclass
class MetricSection:
    kind: str = "kahler_flat"
    amplitude: float = 0.0


@dataclass
class BundleSection:
    kind: str = "trivial_line"
    amplitude: float = 0.0
    mode: list | None = None
    flux: list | None = None
    fluxes: list | None = None
    cls: list | None = None


@dataclass
class FlowSection:
    formulation: str = "metric"
    dt: float | None = None
    t_end: float = 0.01
    cfl: float = 0.1
    scheme: str = "rk4"
    record_every: int = 1
    checkpoint_every: int = 0
    blowup_factor: float = 1e6


@dataclass
class DiagnosticsSection:
    eps1: float = 1e-2
    radius: float | None = None
    torsion_check: bool = True
    energy_tol: float = 1e-3
    he_tol: float | None = None
    cluster_gap: float | None = None
    phi: bool = False
    phi_radii: list | None = None
    phi_R: float | None = None
    phi_x0: list | None = None
    phi_calib: float = 20.0


@dataclass
class OutputSection:
    dir: str = "out"
    csv: bool = True
    checkpoint: bool = True
    plot_stub: bool = True


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class RunConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    metric: MetricSection = field(default_factory=MetricSection)
    bundle: BundleSection = field(default_factory=BundleSection)
    flow: FlowSection = field(default_factory=FlowSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    output: OutputSection = field(default_factory=OutputSection)
    run: RunSection = field(default_factory=RunSection)

    def with_overrides(self, dt=None, t_end=None, out=None, seed=None) -> "RunConfig":
        flow, output, run = self.flow, self.output, self.run
        if dt is not None:
            flow = replace(flow, dt=dt)
        if t_end is not None:
            flow = replace(flow, t_end=t_end)
        if out is not None:
            output = replace(output, dir=out)
        if seed is not None:
            run = replace(run, seed=seed)
        cfg = replace(self, flow=flow, output=output, run=run)
        validate(cfg)
        return cfg


_PARSERS = {
    "geometry.n": int, "geometry.N": int, "geometry.periods": _floats,
    "metric.kind": str, "metric.amplitude": float,
    "bundle.kind": str, "bundle.amplitude": float, "bundle.mode": _ints, "bundle.flux": _ints,
    "bundle.fluxes": _blocks, "bundle.cls": _complexes,
    "flow.formulation": str, "flow.dt": _auto_float, "flow.t_end": float, "flow.cfl": float,
    "flow.scheme": str, "flow.record_every": int, "flow.checkpoint_every": int,
    "flow.blowup_factor": float,
    "diagnostics.eps1": float, "diagnostics.radius": _auto_float, "diagnostics.torsion_check": _bool,
    "diagnostics.energy_tol": float, "diagnostics.he_tol": _auto_float,
    "diagnostics.cluster_gap": _auto_float, "diagnostics.phi": _bool, "diagnostics.phi_radii": _floats,
    "diagnostics.phi_R": _auto_float, "diagnostics.phi_x0": _floats, "diagnostics.phi_calib": float,
    "output.dir": str, "output.csv": _bool, "output.checkpoint": _bool, "output.plot_stub": _bool,
    "run.seed": int,
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration; unknown keys and bad values are errors."""
    cfg = RunConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key or not value:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        section, name = key.split(".", 1)
        setattr(getattr(cfg, section), name, parsed)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    g, m, b, f, d = cfg.geometry, cfg.metric, cfg.bundle, cfg.flow, cfg.diagnostics

    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}")

    if g.n not in (1, 2):
        fail("geometry.n", "must be 1 or 2")
    if g.N < 8 or g.N & (g.N - 1):
        fail("geometry.N", "must be a power of two >= 8")
    if g.periods is not None and (len(g.periods) != 2 * g.n or min(g.periods) <= 0):
        fail("geometry.periods", f"need {2 * g.n} positive values")
    if m.kind not in METRIC_KINDS:
        fail("metric.kind", f"unknown kind {m.kind!r}")
    if m.kind == "gauduchon_nonkahler" and g.n != 2:
        fail("metric.kind", "gauduchon_nonkahler requires geometry.n = 2")
    if b.kind not in BUNDLE_KINDS:
        fail("bundle.kind", f"unknown kind {b.kind!r}")
    if b.mode is not None and len(b.mode) != 2 * g.n:
        fail("bundle.mode", f"need {2 * g.n} integers")
    if b.flux is not None and len(b.flux) != g.n:
        fail("bundle.flux", f"need {g.n} integers")
    if b.kind == "direct_sum":
        if not b.fluxes:
            fail("bundle.fluxes", "direct_sum needs one flux vector per block")
        if any(len(v) != g.n for v in b.fluxes):
            fail("bundle.fluxes", f"each block needs {g.n} integers")
    if b.cls is not None and len(b.cls) != g.n:
        fail("bundle.cls", f"need {g.n} coefficients")
    if f.formulation not in ("metric", "connection"):
        fail("flow.formulation", "must be metric or connection")
    if f.scheme not in ("rk4", "euler"):
        fail("flow.scheme", "must be rk4 or euler")
    if not 0 < f.cfl <= 1:
        fail("flow.cfl", "must lie in (0, 1]")
    if f.dt is not None and f.dt <= 0:
        fail("flow.dt", "must be positive")
    if f.t_end < 0:
        fail("flow.t_end", "must be nonnegative")
    if f.record_every < 1:
        fail("flow.record_every", "must be >= 1")
    if f.checkpoint_every < 0:
        fail("flow.checkpoint_every", "must be >= 0")
    if d.eps1 <= 0:
        fail("diagnostics.eps1", "must be positive")
    if d.phi_x0 is not None and len(d.phi_x0) != 2 * g.n:
        fail("diagnostics.phi_x0", f"need {2 * g.n} coordinates")


def config_keys() -> list:
    return sorted(_PARSERS)


__all__ = ["BUNDLE_KINDS", "ConfigError", "METRIC_KINDS", "RunConfig", "config_keys", "parse_config",
           "validate"]
