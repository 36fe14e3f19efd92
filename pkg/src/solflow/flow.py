"""Particle flow dPhi/dt = field(Phi, t) for soliton-induced velocity fields."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import GridField
from .hirota import EvalFrame, EvaluationError, NSolitonSolution, eta

__all__ = [
    "FlowError",
    "VelocityField",
    "FlowTrajectory",
    "ExitResult",
    "extend_field",
    "integrate_flow",
    "exit_check",
    "write_trajectories_csv",
    "worker_count",
    "FIELD_SCALES",
]

# named velocity fields: G = eta / 2, eta itself, and the physical-frame y = 6 eta(x - t, t)
FIELD_SCALES = {
    "G": (EvalFrame.SOLITON, 0.5),
    "eta": (EvalFrame.SOLITON, 1.0),
    "y": (EvalFrame.PHYSICAL, 1.0),
}


class FlowError(EvaluationError):
    """Integration failure (step underflow, non-finite field)."""


def worker_count() -> int:
    """Thread cap from SOLFLOW_THREADS (default: cpu count)."""
    raw = os.environ.get("SOLFLOW_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass
class VelocityField:
    """Velocity source with frame, multiplier and optional clamp interval."""

    source: NSolitonSolution | GridField | Callable | float
    frame: EvalFrame = EvalFrame.SOLITON
    scale: float = 1.0
    clamp: tuple[float, float] | None = None
    _interp: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.frame = EvalFrame(self.frame)
        if self.clamp is not None:
            a, b = self.clamp
            if not a <= b:
                raise ValueError(f"clamp interval [{a}, {b}] is empty")
        if isinstance(self.source, GridField):
            from scipy.interpolate import RectBivariateSpline

            g = self.source
            kx = min(3, g.xs.size - 1)
            kt = min(3, g.ts.size - 1)
            self._interp = RectBivariateSpline(g.ts, g.xs, g.values, kx=kt, ky=kx)

    @classmethod
    def named(cls, source, name: str, clamp=None) -> "VelocityField":
        frame, scale = FIELD_SCALES[name]
        return cls(source, frame, scale, clamp)

    def raw(self, x: float, t: float) -> float:
        src = self.source
        if isinstance(src, NSolitonSolution):
            v = eta(src, x, t, self.frame)
        elif self._interp is not None:
            v = float(self._interp(t, x)[0, 0])
        elif callable(src):
            v = src(x, t)
        else:
            v = float(src)
        return self.scale * float(v)

    def __call__(self, x: float, t: float) -> float:
        return extend_field(self, x, t)

    def max_step(self) -> float | None:
        """Step cap that keeps a fast soliton passage from slipping between stages."""
        if isinstance(self.source, NSolitonSolution):
            a = self.source.alpha_max
            speed = a * a + (1.0 if self.frame is EvalFrame.PHYSICAL else 0.0)
            return 0.5 / (a * speed)
        return None


def extend_field(fld: VelocityField, x: float, t: float) -> float:
    """Field value with x clamped to the clamp interval when one is set."""
    if fld.clamp is not None:
        a, b = fld.clamp
        x = min(max(x, a), b)
    return fld.raw(x, t)


@dataclass
class FlowTrajectory:
    x0: float
    ts: np.ndarray
    phis: np.ndarray
    errs: np.ndarray
    error_estimate: float

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.ts.tolist(), self.phis.tolist()))

    def at(self, t: float) -> float:
        """Position at a sampled time (stop times are always sampled)."""
        i = int(np.argmin(np.abs(self.ts - t)))
        if abs(self.ts[i] - t) > 1e-12 * max(1.0, abs(t)):
            return float(np.interp(t, self.ts, self.phis))
        return float(self.phis[i])

    @property
    def displacement(self) -> float:
        return float(self.phis[-1] - self.phis[0])


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def integrate_flow(
    fld: VelocityField | Callable,
    x0: float,
    t0: float,
    t1: float,
    tol: float = 1e-8,
    *,
    stops: Sequence[float] = (),
    max_step: float | None = None,
    h0: float | None = None,
) -> FlowTrajectory:
    """Adaptive Dormand-Prince 5(4) solution of dPhi/dt = fld(Phi, t), Phi(t0) = x0.

    Steps land exactly on every time in ``stops``. The error estimate is the sum
    of the accepted local error estimates.
    """
    if not t1 > t0:
        raise ValueError(f"need t0 < t1, got [{t0}, {t1}]")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    f = fld
    if max_step is None and isinstance(fld, VelocityField):
        max_step = fld.max_step()
    span = t1 - t0
    hmax = span if max_step is None else min(span, max_step)
    marks = sorted({float(s) for s in stops if t0 < s < t1} | {float(t1)})

    def rhs(x, t):
        v = f(x, t)
        if not math.isfinite(v):
            raise FlowError(f"non-finite field value {v} at x={x}, t={t}")
        return v

    t, y = float(t0), float(x0)
    ts, ys, es = [t], [y], [0.0]
    err_total = 0.0
    k1 = rhs(y, t)
    h = min(hmax, h0 if h0 is not None else 0.01 * span)
    hmin = 1e-14 * max(1.0, abs(t1))
    mi = 0
    while mi < len(marks):
        target = marks[mi]
        h = min(h, hmax, target - t)
        if h < hmin and target - t > hmin:
            raise FlowError(f"step size underflow at t={t}, x={y} (h={h:.3g})")
        k = [k1]
        for j in range(1, 7):
            yj = y + h * sum(a * kk for a, kk in zip(_A[j], k))
            k.append(rhs(yj, t + _C[j] * h))
        y5 = y + h * float(np.dot(_B5, k))
        err = abs(h * float(np.dot(_E, k)))
        sc = tol * (1.0 + max(abs(y), abs(y5)))
        ratio = err / sc
        if ratio <= 1.0:
            t_new = target if target - (t + h) <= hmin else t + h
            t, y = t_new, y5
            k1 = k[6]  # first-same-as-last
            err_total += err
            ts.append(t)
            ys.append(y)
            es.append(err_total)
            if t >= target:
                mi += 1
            grow = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio ** (-0.2))
            h = h * grow
        else:
            h = h * max(0.1, 0.9 * ratio ** (-0.2))
    return FlowTrajectory(float(x0), np.array(ts), np.array(ys), np.array(es), err_total)


@dataclass
class ExitResult:
    """Terminal positions at each check time; verdict holds iff every particle reached L."""

    L: float
    times: list
    minima: list
    ok: bool
    ordered: bool
    trajectories: list

    @property
    def min_terminal(self) -> float:
        return min(self.minima)

    @property
    def margin(self) -> float:
        return self.min_terminal - self.L

    def __iter__(self):
        yield self.min_terminal
        yield self.ok


def exit_check(
    fld: VelocityField,
    L: float,
    T: float,
    grid: int = 16,
    *,
    times: Sequence[float] | None = None,
    t0: float = 0.0,
    tol: float = 1e-8,
    workers: int | None = None,
) -> ExitResult:
    """Integrate grid+1 particles from [0, L] and test Phi(x, t) >= L at the check times."""
    if grid < 2:
        raise ValueError(f"grid must be >= 2, got {grid}")
    times = [T] if times is None else sorted(float(s) for s in times)
    xs = np.linspace(0.0, L, grid + 1)
    n = workers or worker_count()

    def run(x0):
        return integrate_flow(fld, float(x0), t0, max(times), tol, stops=times)

    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            trajs = list(ex.map(run, xs))
    else:
        trajs = [run(x0) for x0 in xs]
    minima = [min(tr.at(s) for tr in trajs) for s in times]
    ordered = True
    for s in times:
        pos = np.array([tr.at(s) for tr in trajs])
        slack = 4.0 * max(tr.error_estimate for tr in trajs) + 1e-12
        ordered = ordered and bool(np.all(np.diff(pos) >= -slack))
    ok = all(m >= L for m in minima)
    return ExitResult(float(L), times, minima, ok, ordered, trajs)


def write_trajectories_csv(trajs: Sequence[FlowTrajectory], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x0", "t", "phi", "err"])
        for tr in trajs:
            for t, p, e in zip(tr.ts, tr.phis, tr.errs):
                w.writerow([repr(float(tr.x0)), repr(float(t)), repr(float(p)), repr(float(e))])
