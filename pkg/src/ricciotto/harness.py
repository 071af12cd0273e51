"""Scenario files, orchestration, persistence and report emission.

A scenario is a TOML file::

    seed = 3

    [geometry]
    kind = "warped-circle"      # warped-circle | warped-sphere | conformal-sphere |
    n = 64                      # round-sphere | cylinder | berger | round-berger
    phi = {mean = 1.0, cos = [0.2]}
    psi = {mean = 1.0, sin = [0.3], cos = [0.0, 0.1]}

    [flow]
    t_final = 0.05
    intervals = 20
    # dt = 1e-4              (optional cap; default is the stability bound)

    [[backward]]
    kind = "conjugate-heat"     # or "fokker-planck"
    tau0 = 0.5
    w0 = {cos = [0.3], exponential = true}   # or {random = 3, amplitude = 0.4}

    [functionals]               # all default to true
    entropy = true
    harnack = true
    fisher = true
    hopf_cole = true
    comparison = true

    [transport]
    samples = 8

    [checks]                    # optional gates on identity residuals
    residual_tol = 1e-8

Profiles are FourierProfile fields; ``exponential = true`` means exp(series).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import entropy as ent
from . import flow as fl
from . import fokker_planck as fp
from . import geometry as geo
from . import perelman as pe
from . import transport as tr

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

GEOMETRY_KINDS = ("warped-circle", "warped-sphere", "conformal-sphere", "round-sphere",
                  "cylinder", "berger", "round-berger")
BACKWARD_KINDS = ("conjugate-heat", "fokker-planck")
STAGES = ("flow", "perelman", "fokker-planck", "compare-perelman", "transport", "entropy-report")
N_RANGE = (8, 2048)


class ConfigError(ValueError):
    """Malformed scenario; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


# ---------------------------------------------------------------- config

@dataclass
class GeometryConfig:
    kind: str = "warped-circle"
    n: int = 64
    phi: dict = field(default_factory=lambda: {"mean": 1.0})
    psi: dict = field(default_factory=lambda: {"mean": 1.0})
    abc: list = field(default_factory=lambda: [0.25, 0.25, 0.25])
    amplitudes: list = field(default_factory=lambda: [0.05])
    radius: float = 1.0
    phi_const: float = 1.0


@dataclass
class FlowSection:
    t_final: float = 0.05
    intervals: int = 20
    dt: float | None = None
    scheme: str = "rk4"


@dataclass
class BackwardSpec:
    kind: str = "conjugate-heat"
    tau0: float | None = None
    w0: dict = field(default_factory=lambda: {"mean": 0.0, "exponential": True})
    phi_source: str = "flow"
    viscosity: float | None = None  # Hopf-Cole eps; default from the Ricci lower bound


@dataclass
class ScenarioConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    flow: FlowSection = field(default_factory=FlowSection)
    backward: list = field(default_factory=list)
    functionals: dict = field(default_factory=lambda: dict.fromkeys(
        ("entropy", "harnack", "fisher", "hopf_cole", "comparison"), True))
    transport: dict = field(default_factory=lambda: {"samples": 8})
    checks: dict = field(default_factory=dict)
    verify: dict = field(default_factory=lambda: {"tolerance_scale": 1.0})
    export: dict = field(default_factory=lambda: {"formats": ["csv", "json", "gnuplot"]})
    seed: int = 0
    output: str | None = None
    name: str = "scenario"

    def to_dict(self):
        return asdict(self)

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def _number(path, value, kind=float, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    value = kind(value)
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    return value


def _profile(path, d):
    if isinstance(d, (int, float)) and not isinstance(d, bool):
        return {"mean": float(d)}
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a table {mean, cos, sin, exponential}")
    allowed = {"mean", "cos", "sin", "exponential", "sine_factor", "random", "amplitude"}
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}", "unknown key")
    for k in ("cos", "sin"):
        if k in d:
            if not isinstance(d[k], list):
                raise ConfigError(f"{path}.{k}", "expected a list of numbers")
            for i, v in enumerate(d[k]):
                _number(f"{path}.{k}[{i}]", v)
    if "mean" in d:
        _number(f"{path}.mean", d["mean"])
    return dict(d)


def _section(data, name, cls, path=None):
    raw = data.get(name, {})
    path = path or name
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a table")
    known = cls.__dataclass_fields__
    for k in raw:
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown key")
    return raw


def parse_config(data):
    """Validate a parsed TOML mapping and build a ScenarioConfig."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a table")
    top = set(ScenarioConfig.__dataclass_fields__)
    for k in data:
        if k not in top:
            raise ConfigError(k, "unknown section")
    g = _section(data, "geometry", GeometryConfig)
    geom = GeometryConfig(**g)
    if geom.kind not in GEOMETRY_KINDS:
        raise ConfigError("geometry.kind", f"unknown geometry {geom.kind!r}; expected one of {GEOMETRY_KINDS}")
    geom.n = _number("geometry.n", geom.n, int, positive=True)
    if not N_RANGE[0] <= geom.n <= N_RANGE[1]:
        raise ConfigError("geometry.n", f"resolution outside supported range {N_RANGE}")
    geom.phi = _profile("geometry.phi", geom.phi)
    geom.psi = _profile("geometry.psi", geom.psi)
    if geom.kind == "berger":
        if not isinstance(geom.abc, list) or len(geom.abc) != 3:
            raise ConfigError("geometry.abc", "expected three coefficients")
        for i, v in enumerate(geom.abc):
            _number(f"geometry.abc[{i}]", v, positive=True)
    if geom.kind == "conformal-sphere":
        if not isinstance(geom.amplitudes, list):
            raise ConfigError("geometry.amplitudes", "expected a list of numbers")
        for i, v in enumerate(geom.amplitudes):
            _number(f"geometry.amplitudes[{i}]", v)
    _number("geometry.radius", geom.radius, positive=True)
    _number("geometry.phi_const", geom.phi_const, positive=True)

    f = FlowSection(**_section(data, "flow", FlowSection))
    f.t_final = _number("flow.t_final", f.t_final, positive=True)
    f.intervals = _number("flow.intervals", f.intervals, int, positive=True)
    if f.intervals < 2:
        raise ConfigError("flow.intervals", "need at least 2 intervals for time derivatives")
    if f.dt is not None:
        f.dt = _number("flow.dt", f.dt, positive=True)
    if f.scheme not in ("rk4", "semi-implicit"):
        raise ConfigError("flow.scheme", f"unknown scheme {f.scheme!r}")

    raw_b = data.get("backward", [])
    if not isinstance(raw_b, list):
        raise ConfigError("backward", "expected an array of tables [[backward]]")
    runs = []
    for i, b in enumerate(raw_b):
        path = f"backward[{i}]"
        if not isinstance(b, dict):
            raise ConfigError(path, "expected a table")
        for k in b:
            if k not in BackwardSpec.__dataclass_fields__:
                raise ConfigError(f"{path}.{k}", "unknown key")
        spec = BackwardSpec(**b)
        if spec.kind not in BACKWARD_KINDS:
            raise ConfigError(f"{path}.kind", f"expected one of {BACKWARD_KINDS}")
        if spec.tau0 is not None:
            spec.tau0 = _number(f"{path}.tau0", spec.tau0, positive=True)
        spec.w0 = _profile(f"{path}.w0", spec.w0)
        if spec.viscosity is not None:
            spec.viscosity = _number(f"{path}.viscosity", spec.viscosity, positive=True)
        if spec.phi_source not in ("flow", "curvature"):
            raise ConfigError(f"{path}.phi_source", "expected 'flow' or 'curvature'")
        runs.append(spec)

    cfg = ScenarioConfig(geometry=geom, flow=f, backward=runs)
    for name in ("functionals", "transport", "checks", "verify", "export"):
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(name, "expected a table")
            getattr(cfg, name).update(data[name])
    for k, v in cfg.functionals.items():
        if not isinstance(v, bool):
            raise ConfigError(f"functionals.{k}", "expected true or false")
    cfg.transport["samples"] = _number("transport.samples", cfg.transport.get("samples", 8), int, positive=True)
    for k, v in cfg.checks.items():
        _number(f"checks.{k}", v, positive=True)
    _number("verify.tolerance_scale", cfg.verify.get("tolerance_scale", 1.0), positive=True)
    for fmt in cfg.export.get("formats", []):
        if fmt not in EXPORT_FORMATS:
            raise ConfigError("export.formats", f"unknown format {fmt!r}")
    if "seed" in data:
        cfg.seed = _number("seed", data["seed"], int)
    if "output" in data:
        cfg.output = str(data["output"])
    if "name" in data:
        cfg.name = str(data["name"])
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<syntax>", str(exc)) from exc
    return parse_config(data)


# ---------------------------------------------------------------- building blocks

def _resolve_profile(d, rng):
    d = dict(d)
    if "random" in d:
        k = int(d.pop("random"))
        amp = float(d.pop("amplitude", 0.3))
        d.setdefault("cos", list(rng.uniform(-amp, amp, k)))
        d.setdefault("sin", list(rng.uniform(-amp, amp, k)))
    d.pop("amplitude", None)
    d["cos"] = tuple(d.get("cos", ()))
    d["sin"] = tuple(d.get("sin", ()))
    return geo.FourierProfile(**d)


def build_state(g, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    if g.kind == "round-berger":
        return geo.round_berger()
    if g.kind == "berger":
        return geo.berger(*g.abc)
    if g.kind == "cylinder":
        return geo.cylinder(g.n, g.radius, g.phi_const)
    if g.kind == "round-sphere":
        return geo.round_sphere(g.n)
    if g.kind == "conformal-sphere":
        return geo.conformal_sphere(g.amplitudes, g.n)
    phi, psi = _resolve_profile(g.phi, rng), _resolve_profile(g.psi, rng)
    maker = geo.warped_circle if g.kind == "warped-circle" else geo.warped_sphere
    return maker(phi, psi, g.n)


def initial_density(spec, state, rng):
    """w0 from a profile table; on the sphere sine modes are dropped (w must be even at the poles)."""
    d = dict(spec.w0)
    d.setdefault("exponential", True)
    d.setdefault("mean", 0.0 if d["exponential"] else 1.0)
    prof = _resolve_profile(d, rng)
    if not state.is_homogeneous and state.mesh.topology == "interval" and prof.sin:
        prof = geo.FourierProfile(prof.mean, prof.cos, (), prof.exponential)
    if state.is_homogeneous:
        return 1.0
    return prof


def run_flow(cfg, state):
    f = cfg.flow
    return fl.run_uniform(state, f.t_final, f.intervals, dt_max=f.dt, scheme=f.scheme)


# ---------------------------------------------------------------- reports and export

EXPORT_FORMATS = ("csv", "json", "gnuplot")


@dataclass
class Report:
    """One table of time series plus scalar checks, ready to export."""
    name: str
    table: dict  # column -> array, first column "t"
    data: dict = field(default_factory=dict)

    def columns(self):
        return list(self.table)


def _fmt(v):
    v = float(v)
    return "nan" if np.isnan(v) else repr(v)


def write_csv(report, path):
    cols = report.columns()
    rows = np.column_stack([np.asarray(report.table[c], float) for c in cols])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], float).reshape(-1, len(rows[0]))
    return {c: body[:, i] for i, c in enumerate(head)}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if not np.isfinite(x) else x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(report, path):
    payload = {"name": report.name, "table": _jsonable(report.table), "data": _jsonable(report.data)}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def read_json(path):
    d = json.loads(Path(path).read_text())
    table = {k: np.array([np.nan if v is None else v for v in col], float) for k, col in d["table"].items()}
    return Report(d["name"], table, d["data"])


def write_gnuplot(report, csv_name, path):
    """A gnuplot script with one panel per column; run it next to the CSV."""
    cols = report.columns()[1:]
    lines = ["# gnuplot script", "set datafile separator ','", "set datafile missing 'nan'",
             "set key autotitle columnhead", f"set terminal pngcairo size 900,{max(300, 220 * len(cols))}",
             f"set output '{Path(path).stem}.png'", f"set multiplot layout {max(len(cols), 1)},1",
             "set xlabel 't'"]
    for i, c in enumerate(cols):
        lines.append(f"plot '{csv_name}' using 1:{i + 2} with linespoints title '{c}'")
    lines.append("unset multiplot")
    Path(path).write_text("\n".join(lines) + "\n")


def export_report(report, out_dir, formats=EXPORT_FORMATS):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt not in EXPORT_FORMATS:
            raise ValueError(f"unknown format {fmt!r}")
    csv_path = out_dir / f"{report.name}.csv"
    if "csv" in formats or "gnuplot" in formats:
        write_csv(report, csv_path)
        paths.append(csv_path)
    if "json" in formats:
        p = out_dir / f"{report.name}.json"
        write_json(report, p)
        paths.append(p)
    if "gnuplot" in formats:
        p = out_dir / f"{report.name}.gp"
        write_gnuplot(report, csv_path.name, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------- manifest

@dataclass
class CheckRecord:
    name: str
    passed: bool
    actual: float
    limit: float
    relation: str
    gated: bool = True

    def line(self):
        tag = ("PASS" if self.passed else "FAIL") if self.gated else "INFO"
        return f"{tag} {self.name}: {self.actual:.4g} {self.relation} {self.limit:.4g}"


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    artifacts: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    output_hash: str = ""
    elapsed: float | None = None
    environment: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.errors and all(c.passed for c in self.checks if c.gated)

    def summary(self):
        return {c.name: ("pass" if c.passed else "fail") if c.gated else "info" for c in self.checks}

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        d["summary"] = self.summary()
        return _jsonable(d)


class _Recorder:
    def __init__(self, cfg):
        self.cfg = cfg
        self.checks = []
        self.errors = []
        self.reports = []

    def gate(self, name, actual, limit, relation="<"):
        actual = float(actual)
        if relation == "<":
            ok = actual < limit
        elif relation == "<=":
            ok = actual <= limit
        elif relation == ">=":
            ok = actual >= limit
        else:
            raise ValueError(relation)
        self.checks.append(CheckRecord(name, bool(ok), actual, float(limit), relation))

    def flag(self, name, ok, actual=np.nan):
        self.checks.append(CheckRecord(name, bool(ok), float(actual), 1.0, "ok" if ok else "violated"))

    def residual(self, name, value):
        """Identity residuals are informational unless [checks] residual_tol is set."""
        tol = self.cfg.checks.get("residual_tol")
        if tol is None:
            self.checks.append(CheckRecord(name, True, float(value), np.nan, "reported", gated=False))
        else:
            self.gate(name, value, tol)

    def error(self, stage, exc):
        self.errors.append({"stage": stage, "type": type(exc).__name__, "message": str(exc),
                            "traceback": traceback.format_exc(limit=4)})


def _flow_stage(rec, cfg, state):
    traj = None
    try:
        traj = run_flow(cfg, state)
    except fl.SingularityError as exc:
        rec.error("flow", exc)
        traj = exc.partial
        if traj is None or len(traj) < 3:
            return None
    vols = np.array([geo.volume(s) for s in traj.states])
    rec.gate("flow: relative volume drift", np.abs(vols / traj.volume - 1).max(), 1e-10)
    if state.is_homogeneous:
        if np.ptp(state.abc) == 0:
            drift = max(np.abs(np.array(s.abc) - np.array(state.abc)).max() for s in traj.states)
            rec.gate("flow: round Berger invariance", drift / max(traj.beta_final, 1e-300), 1e-10)
    else:
        if len(traj) >= 3:
            rec.residual("flow: scalar-curvature evolution residual (max norm)",
                         fl.scalar_evolution_residual(traj).max_norm)
        if cfg.geometry.kind == "cylinder":
            err = 0.0
            for s in traj.states:
                c0 = 1.0 - 2.0 * s.beta / 3.0
                err = max(err, np.abs(s.psi / cfg.geometry.radius - np.sqrt(c0)).max(),
                          np.abs(s.phi / cfg.geometry.phi_const - 1.0 / c0).max())
            rec.gate("flow: cylinder closed form", err, cfg.checks.get("closed_form_tol", 1e-6))
    cols = {"t": traj.times, "mean_R": traj.mean_R(),
            "max_R": np.array([np.abs(c.R).max() for c in traj.curvature_cache]),
            "ricci_lower_bound": np.array([c.ricci_lower_bound for c in traj.curvature_cache]),
            "volume": vols}
    if not state.is_homogeneous:
        cols["min_phi"] = np.array([s.phi.min() for s in traj.states])
        cols["min_psi"] = np.array([s.psi.min() for s in traj.states])
    rec.reports.append(Report("flow", cols, {"states": [s.to_dict() for s in traj.states]}))
    return traj


def _conjugate_heat_stage(rec, cfg, traj, spec, i, rng, stages):
    state = traj.states[0]
    tau0 = spec.tau0 if spec.tau0 is not None else pe.tau_fixed_point(traj.mean_R()[0])
    run = pe.run_conjugate_heat(traj, initial_density(spec, state, rng), tau0=tau0)
    tag = f"backward[{i}] conjugate-heat"
    rec.gate(f"{tag}: mass drift", np.abs(run.masses() - 1).max(), 1e-10)
    rec.gate(f"{tag}: tau ODE vs closed form", run.tau.discrepancy, 1e-8)
    rep = ent.functional_report(run)
    table = rep.table()
    c = rep.columns
    if cfg.functionals.get("entropy", True) and {"perelman", "entropy-report"} & stages:
        rec.gate(f"{tag}: W decomposition gap", np.abs(c["W"] - c["W_decomposed"]).max(), 1e-9)
        rec.gate(f"{tag}: W defective-LSI gap", np.abs(c["W"] - c["W_lsi"]).max(), 1e-9)
        ok, inc = ent.weakly_nonincreasing(c["W"], rep.t)
        rec.flag(f"{tag}: W weakly nonincreasing", ok, inc)
        for k in ("W_rate", "curvature_entropy", "SIRR"):
            if k in rep.residuals:
                rec.residual(f"{tag}: {k} residual", np.abs(rep.residuals[k]).max())
    if cfg.functionals.get("harnack", True) and {"perelman", "entropy-report"} & stages:
        ce = ent.curvature_entropy(run, rep)
        rec.flag(f"{tag}: tau_hat <R>_varpi nonincreasing", ce.nonincreasing, ce.max_increment)
        rec.gate(f"{tag}: Harnack-type slack", ce.harnack.min_slack, -1e-8, ">=")
    data = {"tau0": tau0, "w": run.w}
    if cfg.functionals.get("comparison", True) and "compare-perelman" in stages:
        comp = fp.perelman_comparison(run, spec.phi_source)
        table["pairing"] = comp.pairing
        table["residual_entropy_balance"] = _pad(comp.entropy_balance)
        table["residual_fluctuation"] = comp.fluctuation
        table["residual_pairing_rate"] = _pad(comp.pairing_rate)
        rec.residual(f"{tag}: comparison (a) entropy balance", np.abs(comp.entropy_balance).max())
        rec.residual(f"{tag}: comparison (b) fluctuation pairing", np.abs(comp.fluctuation).max())
        rec.residual(f"{tag}: comparison (c) pairing rate", np.abs(comp.pairing_rate).max())
        data["initial_slope"] = comp.initial_slope
        data["variance0"] = comp.variance0
    rec.reports.append(Report(f"backward{i}_conjugate_heat", table, data))
    return run


def _pad(v):
    return np.concatenate([[np.nan], np.asarray(v, float), [np.nan]])


def _fp_stage(rec, cfg, traj, spec, i, rng):
    state = traj.states[0]
    run = fp.run_backward_fp(traj, initial_density(spec, state, rng), phi_source=spec.phi_source)
    tag = f"backward[{i}] fokker-planck"
    d = run.diagnostics
    rec.gate(f"{tag}: mass drift", np.abs(d["mass"] - 1).max(), 1e-10)
    ok, inc = ent.weakly_nonincreasing(d["S"], run.t)
    rec.flag(f"{tag}: S nonincreasing", ok, inc)
    table = {"t": run.t, "S": d["S"], "I": d["I"], "K": d["K"], "mass": d["mass"]}
    gi = fp.gradient_identity(run)
    table["residual_gradient"] = _pad(gi.residual)
    rec.residual(f"{tag}: dS/dt + I residual", gi.max_norm)
    if cfg.functionals.get("fisher", True) and not state.is_homogeneous:
        fd = fp.fisher_decay(run)
        table["residual_fisher_identity"] = _pad(fd.residual)
        rec.residual(f"{tag}: Fisher identity residual", np.abs(fd.residual).max())
        rec.flag(f"{tag}: dI/dt <= -2 K I + tol", fd.inequality_holds,
                 float((fd.inequality_slack + fd.tolerance).min()))
        lo, hi = fp.maximum_principle(run)
        rec.flag(f"{tag}: maximum principle", lo and hi)
    if cfg.functionals.get("hopf_cole", True) and not state.is_homogeneous:
        eps = spec.viscosity
        if eps is None and d["K"].min() <= 0:
            rec.checks.append(CheckRecord(f"{tag}: viscous HJ residual", True, np.nan, np.nan,
                                          "skipped: no Ricci lower bound > 0 and no viscosity set", gated=False))
        else:
            hj = fp.hj_residual(run, eps)
            table["residual_hj"] = _pad(hj.residual)
            rec.residual(f"{tag}: viscous HJ residual (eps={hj.scale:.3g})", hj.max_norm)
    if "D2" in d:
        table["D2"] = d["D2"]
    rec.reports.append(Report(f"backward{i}_fokker_planck", table,
                              {"w": run.w, "phi": run.phi, "rate": d.get("rate")}))
    return run


def _transport_stage(rec, cfg, runs):
    k_samples = cfg.transport.get("samples", 8)
    for i, run in runs:
        if run.state(0).is_homogeneous:
            continue
        idx = np.unique(np.linspace(0, len(run) - 1, k_samples).round().astype(int))
        cols = {k: [] for k in ("t", "D2", "D1", "var", "pinsker_slack", "talagrand_slack_1",
                                "talagrand_slack_2")}
        for k in idx:
            m, w = run.state(k), run.w[k]
            s = tr.inequality_suite(w, m)
            cols["t"].append(run.t[k])
            cols["D2"].append(s.distances[2])
            cols["D1"].append(s.distances[1])
            cols["var"].append(s.var)
            cols["pinsker_slack"].append(s.pinsker)
            cols["talagrand_slack_1"].append(s.talagrand_like[1])
            cols["talagrand_slack_2"].append(s.talagrand_like[2])
        cols = {k: np.array(v) for k, v in cols.items()}
        tag = f"backward[{i}] {run.kind}"
        rec.gate(f"{tag}: Pinsker slack", cols["pinsker_slack"].min(), -1e-12, ">=")
        if run.kind == "fokker-planck":
            inc = float(np.diff(cols["D2"]).max()) if len(idx) > 1 else 0.0
            rec.gate(f"{tag}: D2 nonincreasing at sampled times", inc, 1e-9 * max(cols["D2"].max(), 1e-300), "<=")
        m = run.state(0)
        if m.n <= 128:
            lp = tr.lp_oracle(tr.TransportProblem.from_state(m, run.w[0], np.ones(m.n)))
            ex = tr.w2_exact_1d(m, run.w[0], np.ones(m.n), representation="atoms")
            rec.gate(f"{tag}: exact W2 vs LP oracle at t=0", abs(lp - ex), 1e-8)
        rec.reports.append(Report(f"backward{i}_transport", cols))


def run_scenario(cfg, out_dir=None, stages=STAGES, deterministic=False, formats=None):
    """Flow, backward runs, functional reports and transport diagnostics; writes every report."""
    t_start = time.time()
    stages = set(stages)
    out_dir = Path(out_dir or cfg.output or "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = tuple(formats or cfg.export.get("formats", EXPORT_FORMATS))
    rng = np.random.default_rng(cfg.seed)
    rec = _Recorder(cfg)
    runs = []
    try:
        state = build_state(cfg.geometry, rng)
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest
        rec.error("geometry", exc)
        state = None
    traj = _flow_stage(rec, cfg, state) if state is not None else None
    if traj is not None and stages - {"flow"}:
        for i, spec in enumerate(cfg.backward):
            want_ch = stages & {"perelman", "entropy-report", "compare-perelman", "transport"}
            want_fp = stages & {"fokker-planck", "transport"}
            try:
                if spec.kind == "conjugate-heat" and want_ch:
                    runs.append((i, _conjugate_heat_stage(rec, cfg, traj, spec, i, rng, stages)))
                elif spec.kind == "fokker-planck" and want_fp:
                    runs.append((i, _fp_stage(rec, cfg, traj, spec, i, rng)))
            except Exception as exc:  # noqa: BLE001
                rec.error(f"backward[{i}]", exc)
        if "transport" in stages:
            try:
                _transport_stage(rec, cfg, runs)
            except Exception as exc:  # noqa: BLE001
                rec.error("transport", exc)
    return _finish(rec, cfg, out_dir, formats, deterministic, t_start)


def _finish(rec, cfg, out_dir, formats, deterministic, t_start):
    artifacts = []
    for rep in rec.reports:
        artifacts += export_report(rep, out_dir, formats)
    manifest = RunManifest(cfg.digest(), __version__, checks=rec.checks, errors=rec.errors)
    h = hashlib.sha256()
    for p in sorted(artifacts):
        if p.suffix in (".csv", ".json"):
            h.update(p.name.encode())
            h.update(p.read_bytes())
    manifest.output_hash = h.hexdigest()
    manifest.artifacts = [p.name for p in artifacts]
    if not deterministic:
        manifest.elapsed = time.time() - t_start
        manifest.environment = {"python": platform.python_version(), "numpy": np.__version__}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True))
    manifest.artifacts.append(path.name)
    return manifest


def verify(level="fast", out_dir=None, scale=1.0, criteria=None, log=None):
    """Run the verification suite and write verify.json; returns (passed, results)."""
    from . import checks

    results, elapsed = checks.run_checks(level, scale, criteria, log)
    passed = all(r.passed for r in results if r.gated)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        failures = [r.to_dict() for r in results if r.gated and not r.passed]
        (out_dir / "verify.json").write_text(json.dumps(_jsonable(
            {"level": level, "tolerance_scale": scale, "passed": passed, "elapsed": elapsed,
             "results": [r.to_dict() for r in results], "failures": failures}), indent=1))
    return passed, results
