"""Scenario runner: synthesis, evaluation, flow and verification with JSON/CSV output."""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .analysis import envelope_check, max_attenuation, sobolev_norm
from .flow import FIELD_SCALES, VelocityField, exit_check, write_trajectories_csv
from .hirota import DomainError, EvaluationError, NSolitonSolution, eta
from .oracle import SolverConfig, ibvp_replay, reference_dx, residual_norm
from .synthesis import (
    SearchExhausted,
    SolitonTrain,
    SynthesisSpec,
    build_train,
    certify,
    synthesize,
    tail_times,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "Scenario",
    "CheckResult",
    "Report",
    "CHECK_ORDER",
    "load_config",
    "load_scenario",
    "run",
    "emit_plot_data",
    "fit_phase_shifts",
    "predicted_shifts",
    "peak_position",
]

CHECK_ORDER = ("conditions", "tails", "envelopes", "exit", "residual", "oracle-replay")

DEFAULT_TOLERANCES = {
    "residual": 1e-5,
    "oracle-replay": 5e-3,
    "envelopes": 1e-12,
    "flow": 1e-8,
}

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Malformed scenario or spec file."""


@dataclass
class Scenario:
    spec: SynthesisSpec
    checks: tuple
    output_dir: str = "solflow-out"
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    velocity: str = "eta"
    exit_grid: int = 16
    envelope_times: int = 16
    envelope_samples: int = 512
    max_solitons: int = 4096

    def __post_init__(self):
        if not self.checks:
            raise ConfigError("checks: at least one check is required")
        bad = [c for c in self.checks if c not in CHECK_ORDER]
        if bad:
            raise ConfigError(f"checks: unknown check(s) {bad}; expected a subset of {list(CHECK_ORDER)}")
        for k, v in self.tolerances.items():
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"tol_{k}: tolerance must be positive, got {v!r}")
        if self.velocity not in FIELD_SCALES:
            raise ConfigError(f"velocity: expected one of {list(FIELD_SCALES)}, got {self.velocity!r}")
        self.checks = tuple(c for c in CHECK_ORDER if c in self.checks)

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))


# -- configuration --------------------------------------------------------------------


def load_config(path) -> dict:
    """Parse a flat JSON or TOML document; errors carry the line where possible."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read ({exc.strerror})") from exc
    if p.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a table/object")
    return data


def _num(d, key, cast=float, required=False, default=None):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"{key}: missing required field")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    return cast(v)


def spec_from_mapping(d: dict) -> SynthesisSpec:
    kw = {k: _num(d, k, required=True) for k in ("L", "T", "delta", "eps1", "eps2")}
    kw["eps_ladder"] = _num(d, "eps_ladder", default=0.5)
    kw["alpha1"] = _num(d, "alpha1")
    try:
        return SynthesisSpec(**kw)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def scenario_from_mapping(d: dict) -> Scenario:
    known = {
        "L", "T", "delta", "eps1", "eps2", "eps_ladder", "alpha1", "checks", "output_dir", "seed",
        "velocity", "exit_grid", "envelope_times", "envelope_samples", "max_solitons",
    }
    tols = {}
    for k in d:
        if k.startswith("tol_"):
            name = k[4:].replace("_", "-")
            if name not in DEFAULT_TOLERANCES:
                raise ConfigError(f"{k}: unknown tolerance; expected tol_ + one of {list(DEFAULT_TOLERANCES)}")
            tols[name] = _num(d, k)
        elif k not in known:
            raise ConfigError(f"{k}: unknown field")
    checks = d.get("checks", list(CHECK_ORDER))
    if isinstance(checks, str):
        checks = [c.strip() for c in checks.split(",") if c.strip()]
    if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
        raise ConfigError(f"checks: expected a list of names, got {checks!r}")
    out = d.get("output_dir", "solflow-out")
    if not isinstance(out, str):
        raise ConfigError(f"output_dir: expected a string, got {out!r}")
    vel = d.get("velocity", "eta")
    if not isinstance(vel, str):
        raise ConfigError(f"velocity: expected a string, got {vel!r}")
    return Scenario(
        spec_from_mapping(d),
        tuple(checks),
        out,
        _num(d, "seed", int, default=0),
        tols,
        vel,
        _num(d, "exit_grid", int, default=16),
        _num(d, "envelope_times", int, default=16),
        _num(d, "envelope_samples", int, default=512),
        _num(d, "max_solitons", int, default=4096),
    )


def load_scenario(path) -> Scenario:
    try:
        return scenario_from_mapping(load_config(path))
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(str(path)) else f"{path}: {msg}") from exc


# -- report ------------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    status: str  # pass | fail | error | skipped
    metrics: dict = field(default_factory=dict)
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass
class Report:
    scenario: dict
    train: dict | None
    checks: list
    exit_code: int
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "train": self.train,
            "checks": {c.name: {"status": c.status, "metrics": c.metrics, "message": c.message} for c in self.checks},
            "passed": self.exit_code == EXIT_PASS,
            "exit_code": self.exit_code,
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- checks ------------------------------------------------------------------------------


def _check_conditions(sc: Scenario, ctx: dict) -> CheckResult:
    spec = sc.spec
    log: list = []
    try:
        tr = synthesize(spec, max_solitons=sc.max_solitons, log=log)
    except SearchExhausted as exc:
        best = exc.best
        ctx["search_log"] = exc.log
        if best is not None:
            tr = build_train(spec, best["alpha1"])
            certify(tr, fast=True)
            ctx["train"] = tr
        return CheckResult("conditions", "fail", {"best": best, "candidates": len(exc.log)}, str(exc))
    ctx["train"] = tr
    ctx["search_log"] = log
    rep = tr.report
    metrics = {
        "alpha1": tr.alpha1,
        "N": tr.N,
        "speed_margin": rep.speed_margin,
        "max_cond1": max(rep.cond1_margins),
        "min_cond2": min(rep.cond2_margins),
        "certified": rep.certified,
        "failed": list(rep.failed),
    }
    return CheckResult("conditions", "pass" if rep.certified else "fail", metrics,
                       "" if rep.certified else f"clauses failed: {rep.failed}")


def _check_tails(sc: Scenario, ctx: dict) -> CheckResult:
    tr: SolitonTrain = ctx["train"]
    spec = sc.spec
    sol = tr.solution()
    start, end = tail_times(spec)
    ns = [sobolev_norm(sol, float(t), spec.L, 2) for t in start]
    ne = [sobolev_norm(sol, float(t), spec.L, 2) for t in end]
    ctx["tail_trace"] = (list(start) + list(end), ns + ne)
    m = {"max_start": max(ns), "max_end": max(ne), "delta": spec.delta}
    ok = max(ns) < spec.delta and max(ne) < spec.delta
    return CheckResult("tails", "pass" if ok else "fail", m)


def _check_envelopes(sc: Scenario, ctx: dict) -> CheckResult:
    tr: SolitonTrain = ctx["train"]
    spec = sc.spec
    tol = sc.tol("envelopes")
    worst = math.inf
    where = None
    for t in np.linspace(0.0, spec.T, sc.envelope_times):
        for k in range(1, tr.N + 1):
            margin, _ = envelope_check(tr, k, float(t), sc.envelope_samples, tol=tol)
            if margin < worst:
                worst, where = margin, (k, float(t))
    att = max_attenuation(tr, np.linspace(0.0, spec.T, sc.envelope_times))
    m = {"min_margin": worst, "at_k_t": where, "max_one_minus_A": att}
    return CheckResult("envelopes", "pass" if worst >= -tol else "fail", m)


def _check_exit(sc: Scenario, ctx: dict) -> CheckResult:
    tr: SolitonTrain = ctx["train"]
    spec = sc.spec
    sol = tr.solution()
    times = [spec.T - spec.eps2, spec.T]
    per = {}
    for name in FIELD_SCALES:
        res = exit_check(VelocityField.named(sol, name), spec.L, spec.T, sc.exit_grid, times=times, tol=sc.tol("flow"))
        per[name] = {"minima": res.minima, "margin": res.margin, "ok": res.ok, "ordered": res.ordered}
        if name == sc.velocity:
            ctx["trajectories"] = res.trajectories
    chosen = per[sc.velocity]
    if tr.report is not None:
        tr.report.exit_margin = chosen["margin"]
    ok = chosen["ok"] and chosen["margin"] > 0 and chosen["ordered"]
    return CheckResult("exit", "pass" if ok else "fail", {"velocity": sc.velocity, "fields": per})


def _check_residual(sc: Scenario, ctx: dict) -> CheckResult:
    tr: SolitonTrain = ctx["train"]
    spec = sc.spec
    rng = np.random.default_rng(sc.seed)
    # jitter the grid so repeated runs with other seeds probe other points
    dx = spec.L / 63
    lo = -0.5 * spec.L + rng.uniform(0, dx)
    cfg = SolverConfig((lo, 1.5 * spec.L), 96, horizon=(0.0, spec.T), samples_t=16)
    r = residual_norm(tr.solution(), cfg)
    tol = sc.tol("residual")
    return CheckResult("residual", "pass" if r <= tol else "fail", {"residual": r, "tol": tol})


def _check_replay(sc: Scenario, ctx: dict) -> CheckResult:
    tr: SolitonTrain = ctx["train"]
    spec = sc.spec
    res = ibvp_replay(tr.solution(), spec.L, (spec.eps1, spec.T - spec.eps2), dx=reference_dx(tr.alpha1))
    ctx["replay"] = res
    tol = sc.tol("oracle-replay")
    return CheckResult("oracle-replay", "pass" if res.deviation <= tol else "fail",
                       {"deviation": res.deviation, "dx": res.dx, "tol": tol})


_CHECKS = {
    "conditions": _check_conditions,
    "tails": _check_tails,
    "envelopes": _check_envelopes,
    "exit": _check_exit,
    "residual": _check_residual,
    "oracle-replay": _check_replay,
}


def run(scenario: Scenario, *, keep_going: bool = False, out_dir=None, write: bool = True) -> Report:
    """Execute the requested checks in dependency order and write the artifacts."""
    ctx: dict = {}
    results = []
    timings = {}
    stop = False
    numeric = False
    checks = scenario.checks
    if "conditions" not in checks:
        checks = ("conditions",) + checks  # every check needs a train
        implicit = True
    else:
        implicit = False
    for name in checks:
        if stop:
            results.append(CheckResult(name, "skipped", message="earlier check failed"))
            continue
        if name != "conditions" and "train" not in ctx:
            results.append(CheckResult(name, "skipped", message="no train available"))
            continue
        t0 = time.perf_counter()
        try:
            res = _CHECKS[name](scenario, ctx)
        except EvaluationError as exc:
            res = CheckResult(name, "error", message=f"{type(exc).__name__}: {exc}")
            numeric = True
        timings[name] = time.perf_counter() - t0
        if implicit and name == "conditions":
            implicit = False
            if "train" not in ctx:
                results.append(res)
                stop = not keep_going
            continue
        results.append(res)
        if not res.passed and not keep_going:
            stop = True
    if numeric:
        code = EXIT_NUMERIC
    elif all(r.passed for r in results if r.name in scenario.checks):
        code = EXIT_PASS
    else:
        code = EXIT_FAIL
    tr = ctx.get("train")
    rep = Report(
        {"spec": asdict(scenario.spec), "checks": list(scenario.checks), "seed": scenario.seed,
         "velocity": scenario.velocity, "tolerances": dict(sorted(scenario.tolerances.items()))},
        None if tr is None else tr.to_dict(),
        results,
        code,
        timings,
    )
    if write:
        out = Path(out_dir or scenario.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(rep.to_json() + "\n")
        (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
        if ctx.get("search_log") is not None:
            (out / "search.json").write_text(json.dumps(_clean(ctx["search_log"]), indent=2, sort_keys=True) + "\n")
        emit_plot_data(ctx, out, scenario)
    return rep


# -- plot data ---------------------------------------------------------------------------


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def emit_plot_data(ctx: dict, out_dir, scenario: Scenario | None = None) -> list[Path]:
    """Write field snapshots, trajectories, tail traces and peak tracks found in ``ctx``."""
    tr = ctx.get("train")
    kinds = ("solution", "trajectories", "tail_trace", "peak_tracks", "phase_shifts")
    if tr is None and not any(ctx.get(k) for k in kinds):
        raise KeyError("no train or plot artifacts in the run context")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    sol = ctx.get("solution") or (tr.solution() if tr is not None else None)
    if scenario is not None and sol is not None:
        spec = scenario.spec
        xs = np.linspace(-0.5 * spec.L, 1.5 * spec.L, 201)
        ts = np.linspace(0.0, spec.T, 11)
        try:
            rows = [(t, x, v) for t in ts for x, v in zip(xs, eta(sol, xs, float(t)))]
            p = out / "field.csv"
            _write_rows(p, ["t", "x", "eta"], rows)
            written.append(p)
        except EvaluationError:
            pass
    if ctx.get("trajectories"):
        tdir = out / "trajectories"
        tdir.mkdir(exist_ok=True)
        p = out / "trajectories.csv"
        write_trajectories_csv(ctx["trajectories"], p)
        written.append(p)
        for i, trj in enumerate(ctx["trajectories"]):
            q = tdir / f"particle_{i:03d}.csv"
            write_trajectories_csv([trj], q)
            written.append(q)
    if ctx.get("tail_trace"):
        p = out / "tail_norms.csv"
        _write_rows(p, ["t", "h2_norm"], zip(*ctx["tail_trace"]))
        written.append(p)
    if tr is not None and tr.N <= 2 and not ctx.get("peak_tracks"):
        # collision data for the pair (or the lone soliton), launched to meet near t = 0
        track: list = []
        ctx["phase_shifts"] = fit_phase_shifts(tr.alphas, track=track)
        ctx["peak_tracks"] = track
    if ctx.get("phase_shifts"):
        p = out / "phase_shifts.json"
        p.write_text(json.dumps(_clean(ctx["phase_shifts"]), indent=2, sort_keys=True) + "\n")
        written.append(p)
    if ctx.get("peak_tracks"):
        p = out / "peak_tracks.csv"
        _write_rows(p, ["soliton", "t", "x_peak", "phase"], ctx["peak_tracks"])
        written.append(p)
    return written


# -- phase shifts --------------------------------------------------------------------------


def predicted_shifts(alphas) -> dict:
    """Asymptotic two-soliton shifts: slow one moves by ln(a)/alpha_slow, fast one by -ln(a)/alpha_fast."""
    a_fast, a_slow = sorted((float(a) for a in alphas), reverse=True)
    la = 2.0 * math.log(abs(a_fast - a_slow) / (a_fast + a_slow))
    return {"slow": la / a_slow, "fast": -la / a_fast}


def peak_position(sol: NSolitonSolution, guess: float, t: float, half_width: float) -> float:
    """Local maximum of eta near guess, located as a root of eta_x."""
    xs = np.linspace(guess - half_width, guess + half_width, 401)
    vals = sol._cumulants(xs, t)
    i = int(np.argmax(vals[0]))
    i = min(max(i, 1), xs.size - 2)
    g = lambda x: float(sol._cumulants(np.array([x]), t)[1, 0])
    lo, hi = xs[i - 1], xs[i + 1]
    if g(lo) * g(hi) > 0:
        return float(xs[i])
    return brentq(g, lo, hi, xtol=1e-14, rtol=1e-15)


def fit_phase_shifts(alphas, phases=None, times=None, track: list | None = None) -> dict:
    """Fit asymptotic phases of each soliton before and after the collision from peak tracks.

    The solitons are launched so that the peaks meet near t = 0; each peak is
    followed at times well before and after, and its phase x_peak - alpha^2 t
    averaged per side.
    """
    alphas = [float(a) for a in alphas]
    phases = [0.0] * len(alphas) if phases is None else [float(s) for s in phases]
    sol = NSolitonSolution(list(zip(alphas, phases)))
    if times is None:
        times = np.concatenate([np.linspace(-12.0, -8.0, 5), np.linspace(8.0, 12.0, 5)])
    times = np.asarray(times, dtype=float)
    out = {}
    names = ["fast", "slow"] if len(alphas) == 2 else [f"s{i}" for i in range(len(alphas))]
    order = np.argsort(alphas)[::-1]
    pred = predicted_shifts(alphas) if len(alphas) == 2 else {}
    for name, i in zip(names, order):
        a, s = alphas[i], phases[i]
        before, after = [], []
        for t in times:
            expect = s + a * a * t
            shift = pred.get(name, 0.0) if t > 0 else 0.0
            x = peak_position(sol, expect + shift, float(t), 3.0 / a)
            phase = x - a * a * t
            (after if t > 0 else before).append(phase)
            if track is not None:
                track.append((name, float(t), x, phase))
        out[name] = {
            "before": float(np.mean(before)) if before else float("nan"),
            "after": float(np.mean(after)) if after else float("nan"),
        }
        out[name]["shift"] = out[name]["after"] - out[name]["before"]
        if name in pred:
            out[name]["predicted"] = pred[name]
    return out
