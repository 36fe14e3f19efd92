"""Soliton-train synthesis for the Lagrangian exit construction.

A train is fixed by its largest amplitude parameter alpha1: N follows from
``soliton_count``, the alphas are a uniform ladder of spread eps_ladder and
the phases interpolate between the two bracketing constraints. ``synthesize``
searches alpha1 on a geometric grid and certifies each candidate a posteriori.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .analysis import log_width_factor, max_attenuation, sobolev_norm
from .hirota import DomainError, EvaluationError, NSolitonSolution

__all__ = [
    "SynthesisSpec",
    "SolitonTrain",
    "ConditionReport",
    "SearchExhausted",
    "soliton_count",
    "alpha_ladder",
    "phases",
    "check_conditions",
    "build_train",
    "certify",
    "search_grid",
    "synthesize",
]

GRID_FACTOR = 1.25
ALPHA_MAX = 512.0
TAIL_SAMPLES = 16
A_SAMPLES = 64
MAX_SOLITONS = 4096


@dataclass(frozen=True)
class SynthesisSpec:
    L: float
    T: float
    delta: float
    eps1: float
    eps2: float
    eps_ladder: float = 0.5
    alpha1: float | None = None

    def __post_init__(self):
        for name in ("L", "T", "delta", "eps_ladder"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive, got {v}")
        for name in ("eps1", "eps2"):
            v = getattr(self, name)
            if not 0 < v < self.T / 2:
                raise DomainError(f"{name} must lie in (0, T/2) = (0, {self.T / 2}), got {v}")
        if not self.transit > 0:
            raise DomainError(f"no transit time: T - eps1 - eps2 = {self.transit}")
        if self.alpha1 is not None and not self.alpha1 > self.eps_ladder:
            raise DomainError(f"alpha1={self.alpha1} must exceed eps_ladder={self.eps_ladder}")

    @property
    def transit(self) -> float:
        return self.T - self.eps1 - self.eps2

    @classmethod
    def from_mapping(cls, d: dict) -> "SynthesisSpec":
        known = {k: d[k] for k in ("L", "T", "delta", "eps1", "eps2", "eps_ladder", "alpha1") if k in d and d[k] is not None}
        missing = [k for k in ("L", "T", "delta", "eps1", "eps2") if k not in known]
        if missing:
            raise KeyError(f"missing spec field(s): {', '.join(missing)}")
        return cls(**{k: float(v) for k, v in known.items()})


@dataclass
class ConditionReport:
    speed_margin: float
    cond1_margins: list
    cond2_margins: list
    tail_norm_start: float | None = None
    tail_norm_end: float | None = None
    tail_lower_bound: bool = False
    attenuation: float | None = None
    exit_margin: float | None = None
    failed: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def speed_ok(self) -> bool:
        return self.speed_margin > 0

    @property
    def feasible(self) -> bool:
        """Speed and both bracketing conditions hold."""
        return (
            self.speed_ok
            and all(m < 0 for m in self.cond1_margins)
            and all(m > 0 for m in self.cond2_margins)
        )

    @property
    def certified(self) -> bool:
        return self.feasible and not self.failed

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(speed_ok=self.speed_ok, feasible=self.feasible, certified=self.certified)
        return d


@dataclass
class SolitonTrain:
    alphas: np.ndarray
    phases: np.ndarray
    spec: SynthesisSpec | None = None
    report: ConditionReport | None = None
    _sol: NSolitonSolution | None = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return len(self.alphas)

    @property
    def alpha1(self) -> float:
        return float(self.alphas[0])

    def solution(self) -> NSolitonSolution:
        if self._sol is None:
            self._sol = NSolitonSolution(list(zip(self.alphas, self.phases)))
        return self._sol

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "alpha1": self.alpha1,
            "alphas": [float(a) for a in self.alphas],
            "phases": [float(s) for s in self.phases],
            "spec": None if self.spec is None else asdict(self.spec),
            "report": None if self.report is None else self.report.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class SearchExhausted(RuntimeError):
    """No alpha1 on the search grid produced a certified train."""

    def __init__(self, message: str, best: dict | None, log: list):
        super().__init__(message)
        self.best = best
        self.log = log


def soliton_count(alpha1: float, L: float) -> int:
    """ceil(4 L alpha1^2 / ln(sqrt(2 alpha1)(1 + sqrt(1 - 1/(2 alpha1)))))."""
    if not L > 0:
        raise DomainError(f"L must be positive, got {L}")
    return math.ceil(4.0 * L * alpha1 * alpha1 / log_width_factor(alpha1))


def alpha_ladder(alpha1: float, eps: float, N: int) -> np.ndarray:
    """Uniform ladder alpha1 > ... > alpha1 - eps."""
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N}")
    if N == 1:
        return np.array([float(alpha1)])
    return alpha1 - eps * np.arange(N) / (N - 1)


def phases(spec: SynthesisSpec, alpha1: float, N: int) -> np.ndarray:
    """s_i interpolating from -alpha1^2 eps1 (i = 0) to L - (alpha1 - eps)^2 (T - eps2) (i = N + 1)."""
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N}")
    i = np.arange(1, N + 1)
    left = -alpha1 * alpha1 * spec.eps1
    right = spec.L - (alpha1 - spec.eps_ladder) ** 2 * (spec.T - spec.eps2)
    return left * (N + 1 - i) / (N + 1) + (i / (N + 1)) * right


def check_conditions(spec: SynthesisSpec, train: SolitonTrain) -> ConditionReport:
    a = np.asarray(train.alphas, dtype=float)
    s = np.asarray(train.phases, dtype=float)
    speed = (a[0] - spec.eps_ladder) ** 2 - spec.L / (spec.T - spec.eps2)
    cond1 = a * a * spec.eps1 + s
    cond2 = s - spec.L + a * a * (spec.T - spec.eps2)
    rep = ConditionReport(float(speed), [float(v) for v in cond1], [float(v) for v in cond2])
    if not rep.speed_ok:
        rep.failed.append("speed")
    if any(m >= 0 for m in rep.cond1_margins):
        rep.failed.append("cond1")
    if any(m <= 0 for m in rep.cond2_margins):
        rep.failed.append("cond2")
    return rep


def build_train(spec: SynthesisSpec, alpha1: float) -> SolitonTrain:
    N = soliton_count(alpha1, spec.L)
    tr = SolitonTrain(alpha_ladder(alpha1, spec.eps_ladder, N), phases(spec, alpha1, N), spec)
    tr.report = check_conditions(spec, tr)
    return tr


def tail_times(spec: SynthesisSpec, samples: int = TAIL_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
    """Sample times in [0, eps1] and [T - eps2, T]."""
    return np.linspace(0.0, spec.eps1, samples), np.linspace(spec.T - spec.eps2, spec.T, samples)


def _tail_max(sol, spec, ts, fast) -> tuple[float, bool]:
    worst, partial = 0.0, False
    for t in ts:
        v = sobolev_norm(sol, float(t), spec.L, 2, stop_above=spec.delta if fast else None)
        worst = max(worst, v)
        if fast and v >= spec.delta:
            return worst, True
    return worst, partial


def certify(train: SolitonTrain, *, fast: bool = True, tail_samples: int = TAIL_SAMPLES, a_samples: int = A_SAMPLES) -> ConditionReport:
    """Fill in tail norms and the attenuation clause of the train's report.

    With ``fast`` the first failing clause ends the certification and norms
    that crossed delta are reported as lower bounds.
    """
    spec = train.spec
    rep = train.report if train.report is not None else check_conditions(spec, train)
    train.report = rep
    if fast and rep.failed:
        return rep
    try:
        sol = train.solution()
        start, end = tail_times(spec, tail_samples)
        # the sample nearest the transit window is the likeliest to fail
        rep.tail_norm_end, lb_end = _tail_max(sol, spec, end, fast)
        if rep.tail_norm_end >= spec.delta:
            rep.failed.append("tail_end")
            rep.tail_lower_bound = lb_end
            if fast:
                return rep
        rep.tail_norm_start, lb_start = _tail_max(sol, spec, start[::-1], fast)
        rep.tail_lower_bound = rep.tail_lower_bound or lb_start
        if rep.tail_norm_start >= spec.delta:
            rep.failed.append("tail_start")
            if fast:
                return rep
        rep.attenuation = max_attenuation(sol, np.linspace(0.0, spec.T, a_samples))
        if rep.attenuation > 0.5:
            rep.failed.append("attenuation")
    except EvaluationError as exc:
        rep.failed.append("evaluation")
        rep.notes.append(str(exc))
    return rep


def search_grid(spec: SynthesisSpec, alpha_max: float = ALPHA_MAX, factor: float = GRID_FACTOR) -> list[float]:
    a = max(1.0, math.sqrt(spec.L / spec.transit) + spec.eps_ladder)
    out = []
    while a <= alpha_max:
        out.append(a)
        a *= factor
    return out


def _summary(tr: SolitonTrain) -> dict:
    r = tr.report
    return {
        "alpha1": tr.alpha1,
        "N": tr.N,
        "speed_margin": r.speed_margin,
        "max_cond1": max(r.cond1_margins),
        "min_cond2": min(r.cond2_margins),
        "tail_norm_start": r.tail_norm_start,
        "tail_norm_end": r.tail_norm_end,
        "tail_lower_bound": r.tail_lower_bound,
        "attenuation": r.attenuation,
        "failed": list(r.failed),
        "notes": list(r.notes),
    }


def _rank(entry: dict):
    order = ["speed", "cond1", "cond2", "evaluation", "tail_end", "tail_start", "attenuation"]
    first = min((order.index(f) for f in entry["failed"]), default=len(order))
    tail = entry["tail_norm_end"] if entry["tail_norm_end"] is not None else math.inf
    return (first, -tail)


def synthesize(
    spec: SynthesisSpec,
    *,
    alpha_max: float = ALPHA_MAX,
    max_solitons: int = MAX_SOLITONS,
    grid: Sequence[float] | None = None,
    log: list | None = None,
) -> SolitonTrain:
    """Build the train for spec.alpha1, or search the smallest certified alpha1.

    Candidates needing more than ``max_solitons`` solitons end the search.
    Raises SearchExhausted, carrying the best candidate's margins and the full
    candidate log, when no grid point is certified.
    """
    if spec.alpha1 is not None:
        tr = build_train(spec, spec.alpha1)
        certify(tr, fast=False)
        return tr
    log = [] if log is None else log
    stop = None
    for a1 in grid if grid is not None else search_grid(spec, alpha_max):
        N = soliton_count(a1, spec.L)
        if N > max_solitons:
            stop = f"alpha1={a1:.6g} needs N={N} > {max_solitons} solitons"
            break
        tr = build_train(spec, a1)
        certify(tr, fast=True)
        log.append(_summary(tr))
        if tr.report.certified:
            return tr
    best = max(log, key=_rank) if log else None
    msg = "no certified train on the alpha1 grid"
    if stop:
        msg += f"; search stopped: {stop}"
    if best is not None:
        msg += f"; best candidate alpha1={best['alpha1']:.6g} (N={best['N']}) failed {best['failed']}"
    raise SearchExhausted(msg, best, log)
