"""Tail norms, soliton widths, attenuation factors A_k and envelope bounds.

Indices k are 1-based and follow decreasing alpha, so k = 1 is the fastest
soliton. G denotes (ln F)_xx = eta / 2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hirota import DomainError, EvaluationError, NSolitonSolution

__all__ = [
    "GridField",
    "width",
    "log_width_factor",
    "sobolev_norm",
    "interaction_factor_A",
    "max_attenuation",
    "neighborhood",
    "envelope_bound",
    "envelope_check",
    "char_displacement_bound",
    "characteristic_field",
    "nondisp_displacement",
    "gauss_legendre_panels",
]

GL_ORDER = 16


@dataclass
class GridField:
    """Scalar field sampled on xs (columns) at times ts (rows)."""

    xs: np.ndarray
    ts: np.ndarray
    values: np.ndarray
    meta: str = "closed-form"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ts = np.atleast_1d(np.asarray(self.ts, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape != (self.ts.size, self.xs.size):
            raise ValueError(
                f"values shape {self.values.shape} does not match (len(ts), len(xs)) = {(self.ts.size, self.xs.size)}"
            )
        for name, a in (("xs", self.xs), ("ts", self.ts)):
            if a.size > 1 and np.any(np.diff(a) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise EvaluationError("grid field holds non-finite samples")

    def row(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.ts - t)))
        if abs(self.ts[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no sample at t={t} (nearest {self.ts[i]})")
        return self.values[i]

    def to_csv(self, path) -> None:
        """One line per sample: t, x, value."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "value"])
            for t, row in zip(self.ts, self.values):
                for x, v in zip(self.xs, row):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(v))])


def _solution(obj) -> NSolitonSolution:
    if isinstance(obj, NSolitonSolution):
        return obj
    sol = getattr(obj, "solution", None)
    if callable(sol):
        return sol()
    raise TypeError(f"cannot extract an N-soliton solution from {type(obj).__name__}")


# -- widths ------------------------------------------------------------------


def log_width_factor(alpha: float) -> float:
    """ln(sqrt(2 alpha) (1 + sqrt(1 - 1/(2 alpha)))), the log of the height-alpha/4 abscissa factor."""
    alpha = float(alpha)
    if not alpha > 0.5:
        raise DomainError(f"width needs alpha > 1/2, got {alpha}")
    val = math.log(math.sqrt(2.0 * alpha) * (1.0 + math.sqrt(1.0 - 1.0 / (2.0 * alpha))))
    if val <= 0.0:
        raise DomainError(f"non-positive width factor at alpha={alpha}")
    return val


def width(alpha: float) -> float:
    """Distance between the two points where a soliton of parameter alpha has height alpha/4."""
    lg = log_width_factor(alpha)
    return 4.0 / float(alpha) * lg


def char_displacement_bound(train) -> tuple[np.ndarray, float]:
    """Per-soliton displacement lower bounds ln(...)/(4 alpha^2) and their sum."""
    alphas = np.asarray(getattr(train, "alphas", train), dtype=float)
    per = np.array([log_width_factor(a) / (4.0 * a * a) for a in alphas])
    return per, float(per.sum())


# -- Sobolev norms -------------------------------------------------------------


def gauss_legendre_panels(a: float, b: float, panels: int, order: int = GL_ORDER):
    """Nodes and weights of the composite Gauss-Legendre rule, shape (panels, order)."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)[:, None]
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    return mid + half * xg, half * wg


def _jet_of(fld, s: int, t: float) -> Callable[[np.ndarray], np.ndarray]:
    """Return x -> array (s+1, n) of the field and its first s derivatives."""
    if isinstance(fld, NSolitonSolution) or hasattr(fld, "solution"):
        sol = _solution(fld)
        return lambda x: sol._cumulants(x, t)[: s + 1]
    if isinstance(fld, GridField):
        from scipy.interpolate import CubicSpline

        spl = CubicSpline(fld.xs, fld.row(t))
        return lambda x: np.stack([spl(x, j) for j in range(s + 1)])
    if callable(fld):
        return lambda x: np.atleast_2d(np.asarray(fld(x, t), dtype=float))[: s + 1]
    raise TypeError(f"unsupported field type {type(fld).__name__}")


def sobolev_norm(fld, t: float, L: float, s: int = 2, panels: int | None = None, stop_above: float | None = None) -> float:
    """H^s(0, L) norm at time t by composite 16-point Gauss-Legendre quadrature.

    ``fld`` is an NSolitonSolution (exact derivatives), a GridField (spline
    derivatives) or a callable (x, t) -> rows [f, f_x, f_xx]. With
    ``stop_above`` the sum is abandoned once it exceeds that norm; the value
    returned is then a lower bound that already exceeds ``stop_above``.
    """
    if s not in (0, 1, 2):
        raise DomainError(f"Sobolev order must be 0, 1 or 2, got {s}")
    if not L > 0:
        raise DomainError(f"L must be positive, got {L}")
    if panels is None:
        try:
            a1 = _solution(fld).alpha_max
        except TypeError:
            a1 = 1.0
        panels = max(64, math.ceil(8.0 * L * a1))
    x, w = gauss_legendre_panels(0.0, L, panels)
    jet = _jet_of(fld, s, t)
    limit = None if stop_above is None else stop_above**2
    total = 0.0
    chunk = 64
    for p0 in range(0, panels, chunk):
        xs = x[p0 : p0 + chunk].ravel()
        vals = jet(xs)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError(f"non-finite field samples at t={t}")
        total += float(np.sum(w[p0 : p0 + chunk].ravel() * np.sum(vals * vals, axis=0)))
        if limit is not None and total > limit:
            break
    return math.sqrt(total)


# -- attenuation factors -------------------------------------------------------


def _sorted_parts(sol: NSolitonSolution):
    return sol._a, sol._s, sol._order


def _caller(sol: NSolitonSolution, theta_sorted: np.ndarray) -> np.ndarray:
    out = np.empty_like(theta_sorted)
    out[sol._order] = theta_sorted
    return out


def neighborhood(train, k: int, t: float, eps1: float | None = None) -> tuple[float, float]:
    """Interval (xi_k^-, xi_k^+) around the k-th soliton at time t."""
    sol = _solution(train)
    n = sol.n
    if not 1 <= k <= n:
        raise IndexError(f"soliton index {k} outside 1..{n}")
    a, s, _ = _sorted_parts(sol)
    if eps1 is None:
        eps1 = getattr(getattr(train, "spec", None), "eps1", None)
    i = k - 1
    c = a[i] ** 2 * t
    if k == 1:
        hi = -a[0] ** 2 * eps1 + c if eps1 is not None else s[0] + c + 20.0 / a[0]
        lo = (3 * s[0] + s[1]) / 4 + c if n > 1 else 2 * (s[0] + c) - hi
        return lo, hi
    hi = (2 * s[i] + s[i - 1]) / 3 + c
    if k == n:
        lo = (4 * s[i] - s[i - 1]) / 3 + c
    else:
        lo = (2 * s[i] + s[i + 1]) / 3 + c
    return lo, hi


def _log_attenuation(sol: NSolitonSolution, k: int, t: float) -> float:
    """ln A_k(t)."""
    a, s, order = _sorted_parts(sol)
    n = sol.n
    if not 1 <= k <= n:
        raise IndexError(f"soliton index {k} outside 1..{n}")
    if n == 1:
        return 0.0
    a3 = a**3
    if k == 1:
        xi = (3 * s[0] + s[1]) / 4 + a[0] ** 2 * t
        theta = -a * (xi - s) + a3 * t
        # 1 + sum over all subsets except {1}
        return -sol.log_tau_sum(_caller(sol, theta), exclude=[[order[0]]])
    lo, hi = neighborhood(sol, k, t, eps1=0.0)
    th_hi = -a * (hi - s) + a3 * t
    th_lo = -a * (lo - s) + a3 * t
    mixed = np.where(np.arange(n) < k - 1, th_hi, th_lo)
    prev = [int(j) for j in order[: k - 1]]
    log_num = sol.log_tau_sum(_caller(sol, mixed), exclude=[prev, prev + [int(order[k - 1])]])
    log_den = sol.log_subset_coefficient(prev) + float(th_hi[: k - 1].sum())
    return -float(np.logaddexp(0.0, log_num - log_den))


def interaction_factor_A(train, k: int, t: float) -> float:
    """A_k(t) in (0, 1]."""
    return math.exp(_log_attenuation(_solution(train), k, t))


def max_attenuation(train, ts: Sequence[float]) -> float:
    """max over k and t in ts of |1 - A_k(t)|."""
    sol = _solution(train)
    worst = 0.0
    for t in ts:
        for k in range(1, sol.n + 1):
            worst = max(worst, -math.expm1(_log_attenuation(sol, k, t)))
    return worst


def _phase_shift_k(sol: NSolitonSolution, k: int, log_A: float) -> float:
    """sigma_k(t) for the k-th soliton given ln A_k(t)."""
    a, s, order = _sorted_parts(sol)
    i = k - 1
    if k == 1:
        return s[0] + log_A / a[0]
    prev = [int(j) for j in order[:i]]
    ratio = sol.log_subset_coefficient(prev + [int(order[i])]) - sol.log_subset_coefficient(prev)
    return s[i] + (log_A + ratio) / a[i]


def _sech2(z):
    e = np.exp(-2.0 * np.abs(z))
    return 4.0 * e / (1.0 + e) ** 2


def envelope_bound(train, k: int, x, t: float) -> np.ndarray:
    """(alpha_k^2 A_k / 4) sech^2(-alpha_k (x - sigma_k - alpha_k^2 t) / 2)."""
    sol = _solution(train)
    la = _log_attenuation(sol, k, t)
    ak = sol._a[k - 1]
    sig = _phase_shift_k(sol, k, la)
    x = np.asarray(x, dtype=float)
    return ak * ak * math.exp(la) / 4.0 * _sech2(-ak * (x - sig - ak * ak * t) / 2.0)


def envelope_check(train, k: int, t: float, samples: int = 512, eps1: float | None = None, tol: float = 1e-12):
    """Minimum of G - bound_k over the k-th neighborhood and the verdict margin >= -tol."""
    sol = _solution(train)
    lo, hi = neighborhood(train, k, t, eps1)
    if not hi > lo:
        raise DomainError(f"empty neighborhood ({lo}, {hi}) for soliton {k} at t={t}")
    xs = np.linspace(lo, hi, samples)
    g = 0.5 * sol._cumulants(xs, t)[0]
    margin = float(np.min(g - envelope_bound(sol, k, xs, t)))
    return margin, margin >= -tol


# -- characteristic lower bound ---------------------------------------------------


def characteristic_field(train, x, t: float) -> np.ndarray:
    """sum_k (alpha_k / 16) 1[x in interval of width w(alpha_k) centered at alpha_k^2 t + sigma_k(t)]."""
    sol = _solution(train)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k in range(1, sol.n + 1):
        ak = sol._a[k - 1]
        c = ak * ak * t + _phase_shift_k(sol, k, _log_attenuation(sol, k, t))
        half = 0.5 * width(ak)
        out = out + np.where(np.abs(x - c) <= half, ak / 16.0, 0.0)
    return out


def nondisp_displacement(train, x0: float, t0: float, t1: float, nt: int = 2000) -> float:
    """Displacement of x0 under the characteristic field frozen at x0 (midpoint rule in t)."""
    ts = np.linspace(t0, t1, nt + 1)
    mids = 0.5 * (ts[1:] + ts[:-1])
    vals = np.array([float(characteristic_field(train, x0, t)) for t in mids])
    return float(np.sum(vals) * (t1 - t0) / nt)
