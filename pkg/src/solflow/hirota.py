"""Exact N-soliton solutions of eta_t + 6 eta eta_x + eta_xxx = 0.

The tau function

    F = sum_S a(S) prod_{i in S} f_i,   f_i = exp(-alpha_i (x - s_i) + alpha_i^3 t)

is a sum of positive terms over subsets S of the soliton indices. Writing the
terms as Gibbs weights p_S, ln F is the cumulant generating function of the
speed sum sigma_S = sum_{i in S} alpha_i, so every x-derivative of ln F is a
cumulant of sigma:

    (ln F)_x^(k) = (-1)^k kappa_k(sigma)

and eta = 2 (ln F)_xx = 2 Var(sigma) is manifestly positive. All terms are
carried as log-magnitudes; nothing is exponentiated before the running maximum
has been subtracted.

Two term generators feed the same cumulant kernel:

* exact: all 2^N subsets, tabulated by doubling over bit masks (N <= max_window);
* window: the dominant subset is located (best index prefix in decreasing-alpha
  order, polished by single flips), every index whose flip costs more than the
  pruning margin is frozen, and only the remaining window is enumerated. The
  frozen indices enter as a constant phase shift of the window solitons, which
  is exact up to terms of relative size exp(-prune).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "EvaluationError",
    "Soliton",
    "EvalFrame",
    "NSolitonSolution",
    "TauValue",
    "interaction_coefficient",
    "tau_derivative",
    "eta",
    "eta_derivatives",
    "eta_jet",
    "time_derivative_eta",
    "third_derivative_eta",
    "fd_step_t",
    "fd_step_x",
]

DENSE_LIMIT = 4096


class DomainError(ValueError):
    """Argument outside the domain of a formula."""


class EvaluationError(ArithmeticError):
    """The evaluator could not produce a trustworthy value."""


class WindowTooWide(EvaluationError):
    """Too many solitons interact at a point for the frozen-window reduction."""


def interaction_coefficient(alpha_k: float, alpha_l: float) -> float:
    """Pairwise interaction coefficient ((a_k - a_l)/(a_k + a_l))**2."""
    if not (alpha_k > 0 and alpha_l > 0):
        raise DomainError(f"amplitude parameters must be positive, got {alpha_k}, {alpha_l}")
    r = (alpha_k - alpha_l) / (alpha_k + alpha_l)
    return r * r


def _log_interaction(alpha_k, alpha_l):
    return 2.0 * (np.log(np.abs(alpha_k - alpha_l)) - np.log(alpha_k + alpha_l))


@dataclass(frozen=True)
class Soliton:
    """One soliton: amplitude alpha**2/2, speed alpha**2, peak at s + alpha**2 t."""

    alpha: float
    s: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"alpha must be positive and finite, got {self.alpha}")
        if not math.isfinite(self.s):
            raise DomainError(f"phase must be finite, got {self.s}")

    @property
    def amplitude(self) -> float:
        return 0.5 * self.alpha**2

    @property
    def speed(self) -> float:
        return self.alpha**2

    def peak(self, t: float) -> float:
        return self.s + self.alpha**2 * t

    def profile(self, x, t):
        """Closed-form sech^2 profile, overflow-free."""
        u = 0.5 * (-self.alpha * (np.asarray(x, dtype=float) - self.s) + self.alpha**3 * t)
        # sech^2(u) = 4 e^{-2|u|} / (1 + e^{-2|u|})^2
        e = np.exp(-2.0 * np.abs(u))
        return 0.5 * self.alpha**2 * 4.0 * e / (1.0 + e) ** 2


class EvalFrame(str, Enum):
    """SOLITON: eta_t + 6 eta eta_x + eta_xxx = 0. PHYSICAL: y(x, t) = 6 eta(x - t, t)."""

    SOLITON = "soliton"
    PHYSICAL = "physical"


@dataclass(frozen=True)
class TauValue:
    """A derivative of F as sign and log-magnitude, with a plain float view."""

    sign: float
    log_abs: float

    @property
    def value(self) -> float:
        if self.log_abs == -math.inf:
            return 0.0
        with np.errstate(over="ignore"):
            return float(self.sign * np.exp(self.log_abs))


def _subset_sums(v: np.ndarray) -> np.ndarray:
    """sum_{i in S} v_i for every mask S (bit i <-> index i); v may carry batch axes."""
    v = np.asarray(v, dtype=float)
    m = v.shape[-1]
    out = np.zeros(v.shape[:-1] + (1 << m,))
    for b in range(m):
        out[..., 1 << b : 1 << (b + 1)] = out[..., : 1 << b] + v[..., b : b + 1]
    return out


def _subset_log_coefficients(lam: np.ndarray) -> np.ndarray:
    """ln a(S) for every mask S, by doubling: adding bit b adds sum_{j in S} lam[b, j]."""
    m = lam.shape[0]
    out = np.zeros(1 << m)
    for b in range(1, m):
        out[1 << b : 1 << (b + 1)] = out[: 1 << b] + _subset_sums(lam[b, :b])
    return out


@dataclass
class _Terms:
    """Log-terms of the tau sum, relative to a frozen part (offset, sigma0, omega0)."""

    logterm: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    offset: float = 0.0
    sigma0: float = 0.0
    omega0: float = 0.0


class NSolitonSolution:
    """Immutable N-soliton solution with precomputed interaction tables.

    Parameters
    ----------
    solitons : sequence of Soliton or (alpha, s) pairs
    max_window : int
        Largest index set that is ever enumerated subset by subset.
    exact_limit : int
        Solutions with at most this many solitons enumerate all 2^N subsets;
        larger ones use the frozen-window reduction.
    prune : float
        Log-margin below which subset terms are dropped (relative size exp(-prune)).
    min_separation : float
        Relative separation under which two alphas count as duplicates.
    """

    def __init__(
        self,
        solitons: Iterable[Soliton | tuple[float, float]],
        *,
        max_window: int = 24,
        exact_limit: int = 12,
        prune: float = 40.0,
        min_separation: float = 1e-9,
    ):
        sols = tuple(s if isinstance(s, Soliton) else Soliton(*s) for s in solitons)
        if not sols:
            raise DomainError("an N-soliton solution needs at least one soliton")
        self.solitons = sols
        self.max_window = int(max_window)
        self.exact_limit = min(int(exact_limit), self.max_window)
        self.prune = float(prune)

        alphas = np.array([s.alpha for s in sols])
        phases = np.array([s.s for s in sols])
        order = np.argsort(-alphas, kind="stable")
        a_sorted = alphas[order]
        if len(sols) > 1:
            gaps = -np.diff(a_sorted)
            rel = gaps / np.maximum(a_sorted[:-1], a_sorted[1:])
            if np.any(rel <= min_separation):
                i = int(np.argmin(rel))
                raise DomainError(
                    f"duplicate amplitude parameters {a_sorted[i]} and {a_sorted[i + 1]}"
                    f" (relative separation {rel[i]:.3g} <= {min_separation})"
                )
        for arr in (alphas, phases):
            arr.setflags(write=False)
        self.alphas = alphas
        self.phases = phases
        self._order = order
        self._a = a_sorted
        self._s = phases[order]
        self._a3 = a_sorted**3
        self._cum_a = np.concatenate([[0.0], np.cumsum(a_sorted)])
        self._cum_a3 = np.concatenate([[0.0], np.cumsum(self._a3)])

        n = len(sols)
        self._lam = self._lam_rows(0, n) if n <= DENSE_LIMIT else None
        # gain of appending index i to the prefix {0..i-1}: sum_{j<i} lam[i, j]
        self._prefix_gain = np.zeros(n)
        for lo in range(0, n, 512):
            hi = min(n, lo + 512)
            rows = self._lam[lo:hi, :hi] if self._lam is not None else self._lam_rows(lo, hi, 0, hi)
            tri = np.tril(np.ones((hi - lo, hi), dtype=bool), k=lo - 1)
            self._prefix_gain[lo:hi] = np.where(tri, rows, 0.0).sum(axis=1)
        if n > 1:
            self._lam_max = float(np.max(-_log_interaction(a_sorted[:-1], a_sorted[1:])))
        else:
            self._lam_max = 0.0
        self._freeze = max(self.prune, 0.5 * (self.prune + self._lam_max))
        self._exact_tables = None

    # -- tables ---------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.solitons)

    @property
    def n(self) -> int:
        return len(self.solitons)

    @property
    def alpha_max(self) -> float:
        return float(self._a[0])

    def _lam_rows(self, lo, hi, clo=0, chi=None):
        """ln a(i, j) for sorted rows lo:hi and columns clo:chi (0 on the diagonal)."""
        chi = self.n if chi is None else chi
        ai = self._a[lo:hi, None]
        aj = self._a[None, clo:chi]
        with np.errstate(divide="ignore"):
            out = _log_interaction(ai, aj)
        rows = np.arange(lo, hi)[:, None]
        cols = np.arange(clo, chi)[None, :]
        return np.where(rows == cols, 0.0, out)

    def coefficient(self, i: int, j: int) -> float:
        """a(i, j) in the caller's index order (0-based)."""
        return interaction_coefficient(self.alphas[i], self.alphas[j])

    @property
    def coeffs(self) -> np.ndarray:
        """Matrix of pairwise coefficients a(i, j), caller's order, zero diagonal."""
        a = self.alphas
        with np.errstate(divide="ignore"):
            c = ((a[:, None] - a[None, :]) / (a[:, None] + a[None, :])) ** 2
        np.fill_diagonal(c, 0.0)
        return c

    def log_subset_coefficient(self, indices: Sequence[int]) -> float:
        """ln a(i_1, ..., i_n) = sum over pairs of ln a(i_k, i_l); 0 for n <= 1."""
        idx = sorted(set(int(i) for i in indices))
        total = 0.0
        for p, i in enumerate(idx):
            for j in idx[p + 1 :]:
                total += float(_log_interaction(self.alphas[i], self.alphas[j]))
        return total

    @property
    def log_coeff_table(self) -> np.ndarray:
        """ln a(S) for all 2^N masks (bit i <-> soliton i in caller's order)."""
        if self.n > self.max_window:
            raise EvaluationError(f"mask table needs N <= {self.max_window}, got {self.n}")
        a = self.alphas
        with np.errstate(divide="ignore"):
            lam = _log_interaction(a[:, None], a[None, :])
        np.fill_diagonal(lam, 0.0)
        return _subset_log_coefficients(lam)

    def exponents(self, x, t) -> np.ndarray:
        """ln f_i(x, t), caller's order; shape x.shape + (N,)."""
        x = np.asarray(x, dtype=float)[..., None]
        return -self.alphas * (x - self.phases) + self.alphas**3 * t

    def _theta_sorted(self, x, t):
        x = np.asarray(x, dtype=float)[..., None]
        return -self._a * (x - self._s) + self._a3 * t

    def _sorted_mask(self, indices) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        inv = np.empty(self.n, dtype=int)
        inv[self._order] = np.arange(self.n)
        for i in indices:
            m[inv[int(i)]] = True
        return m

    # -- term generation ------------------------------------------------------

    def _exact(self):
        """ln a(S), sigma_S, omega_S over all 2^N masks of the sorted indices."""
        if self._exact_tables is None:
            n = self.n
            lam = self._lam if self._lam is not None else self._lam_rows(0, n)
            self._exact_tables = (
                _subset_log_coefficients(lam),
                _subset_sums(self._a),
                _subset_sums(self._a3),
            )
        return self._exact_tables

    def use_exact(self, method: str = "auto") -> bool:
        if method == "exact":
            if self.n > self.max_window:
                raise EvaluationError(f"exact enumeration capped at N={self.max_window}, got N={self.n}")
            return True
        if method == "window":
            return False
        return self.n <= self.exact_limit

    def _window_terms(self, theta: np.ndarray, exclude: Sequence[np.ndarray] = ()) -> _Terms:
        n = self.n
        scores = np.concatenate([[0.0], np.cumsum(theta + self._prefix_gain)])
        k = int(np.argmax(scores))
        cw = self._freeze
        band = 16
        while True:
            lo, hi = max(0, k - band), min(n, k + band)
            if self._lam is not None:
                lam_b = self._lam[lo:hi, lo:hi]
                base = self._lam[lo:hi, :lo].sum(axis=1)
            else:
                lam_b = self._lam_rows(lo, hi, lo, hi)
                base = self._lam_rows(lo, hi, 0, lo).sum(axis=1) if lo else np.zeros(hi - lo)
            idx = np.arange(lo, hi)
            ins = idx < k
            h = theta[lo:hi] + base + lam_b[:, : k - lo].sum(axis=1)
            total = scores[k]
            for _ in range(8 * (hi - lo)):
                gain = np.where(ins, -h, h)
                j = int(np.argmax(gain))
                if gain[j] <= 1e-12:
                    break
                total += gain[j]
                h += (-1.0 if ins[j] else 1.0) * lam_b[:, j]
                ins[j] = not ins[j]
            loose = np.abs(h) < cw
            edge_lo = lo > 0 and loose[0]
            edge_hi = hi < n and loose[-1]
            if not (edge_lo or edge_hi) or (lo == 0 and hi == n):
                break
            band *= 2

        win = np.flatnonzero(loose)
        m = len(win)
        if m > self.max_window or (m > self.exact_limit and self.n <= self.max_window):
            raise WindowTooWide(
                f"{m} solitons interact at this point; window enumeration is capped at {self.max_window}"
            )
        # drop window members from S; h then holds the shifted exponents of the window
        for w in win:
            if ins[w]:
                total -= h[w]
                h -= lam_b[:, w]
                ins[w] = False
        fixed = np.flatnonzero(ins) + lo
        sigma0 = self._cum_a[lo] + float(self._a[fixed].sum())
        omega0 = self._cum_a3[lo] + float(self._a3[fixed].sum())

        gw = lo + win
        lam_w = lam_b[np.ix_(win, win)]
        logterm = _subset_sums(h[win]) + _subset_log_coefficients(lam_w)
        sigma = _subset_sums(self._a[gw])
        omega = _subset_sums(self._a3[gw])
        if len(exclude):
            keep = np.ones(1 << m, dtype=bool)
            for ex in exclude:
                outside = ex.copy()
                outside[gw] = False
                frozen = np.zeros(n, dtype=bool)
                frozen[:lo] = True
                frozen[fixed] = True
                if np.array_equal(outside, frozen):
                    code = int(sum(1 << p for p, g in enumerate(gw) if ex[g]))
                    keep[code] = False
            logterm, sigma, omega = logterm[keep], sigma[keep], omega[keep]
        return _Terms(logterm, sigma, omega, total, sigma0, omega0)

    def terms(self, theta: np.ndarray, method: str = "auto", exclude: Sequence[np.ndarray] = ()) -> _Terms:
        """Log-terms for one exponent vector theta (sorted order)."""
        if self.use_exact(method) or (method == "auto" and self.n <= self.max_window and not self._window_ok(theta)):
            loga, sig, om = self._exact()
            logterm = _subset_sums(theta) + loga
            if len(exclude):
                keep = np.ones(len(logterm), dtype=bool)
                for ex in exclude:
                    keep[int(sum(1 << i for i in np.flatnonzero(ex)))] = False
                return _Terms(logterm[keep], sig[keep], om[keep])
            return _Terms(logterm, sig, om)
        return self._window_terms(theta, exclude)

    def log_tau_sum(self, theta_caller: np.ndarray, exclude: Sequence[Sequence[int]] = (), method: str = "auto") -> float:
        """ln sum_S a(S) exp(theta . S) for an arbitrary exponent vector (caller's order).

        ``exclude`` lists subsets (caller's indices) whose terms are left out.
        """
        theta = np.asarray(theta_caller, dtype=float)[self._order]
        ex = [self._sorted_mask(e) for e in exclude]
        tm = self.terms(theta, method, ex)
        if tm.logterm.size == 0:
            return -math.inf
        return tm.offset + _lse(tm.logterm)

    # -- evaluation -----------------------------------------------------------

    def _cumulants(self, x, t, method="auto"):
        """Cumulant jet at points x (any shape) and scalar t."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty((6, flat.size))
        exact = self.use_exact(method)
        todo = np.arange(flat.size)
        if not exact:
            failed = []
            for p, xv in enumerate(flat):
                try:
                    tm = self._window_terms(self._theta_sorted(xv, t))
                except WindowTooWide:
                    if method == "window" or self.n > self.max_window:
                        raise
                    failed.append(p)
                    continue
                out[:, p] = _jet(tm.logterm[None, :], tm.sigma, tm.omega)[:, 0]
            todo = np.asarray(failed, dtype=int)
        if todo.size:
            loga, sig, om = self._exact()
            chunk = max(1, (1 << 21) // len(loga))
            for c0 in range(0, todo.size, chunk):
                sel = todo[c0 : c0 + chunk]
                th = self._theta_sorted(flat[sel], t)
                out[:, sel] = _jet(_subset_sums(th) + loga, sig, om)
        return out.reshape((6,) + x.shape)

    def _window_ok(self, theta) -> bool:
        try:
            self._window_terms(theta)
        except WindowTooWide:
            return False
        return True


def _lse(v: np.ndarray) -> float:
    m = float(np.max(v))
    if m == -math.inf:
        return m
    return m + math.log(float(np.sum(np.exp(v - m))))


def _jet(logterm: np.ndarray, sigma: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Rows: eta, eta_x, eta_xx, eta_xxx, eta_t (exact), mean speed sum; columns: points.

    logterm has shape (P, M); sigma, omega shape (M,).
    """
    mx = logterm.max(axis=1, keepdims=True)
    w = np.exp(logterm - mx)
    w /= w.sum(axis=1, keepdims=True)
    mu = w @ sigma
    d = sigma[None, :] - mu[:, None]
    e = omega[None, :] - (w @ omega)[:, None]
    d2 = d * d
    m2 = (w * d2).sum(axis=1)
    m3 = (w * d2 * d).sum(axis=1)
    m4 = (w * d2 * d2).sum(axis=1)
    m5 = (w * d2 * d2 * d).sum(axis=1)
    c21 = (w * d2 * e).sum(axis=1)
    return np.stack(
        [
            2.0 * m2,
            -2.0 * m3,
            2.0 * (m4 - 3.0 * m2 * m2),
            -2.0 * (m5 - 10.0 * m3 * m2),
            2.0 * c21,
            mu,
        ]
    )


def _as_solution(sol) -> NSolitonSolution:
    if isinstance(sol, NSolitonSolution):
        return sol
    raise TypeError(f"expected NSolitonSolution, got {type(sol).__name__}")


def tau_derivative(sol: NSolitonSolution, order: int, x: float, t: float, method: str = "auto") -> TauValue:
    """d^order F / dx^order at (x, t) as a sign/log-magnitude pair."""
    sol = _as_solution(sol)
    if order not in (0, 1, 2, 3, 4):
        raise DomainError(f"unsupported derivative order {order}; expected 0..4")
    tm = sol.terms(sol._theta_sorted(float(x), float(t)), method)
    mx = float(np.max(tm.logterm))
    w = np.exp(tm.logterm - mx)
    moment = float(np.sum(w * (tm.sigma0 + tm.sigma) ** order))
    if moment == 0.0:
        return TauValue(1.0, -math.inf)
    return TauValue(float((-1) ** order), tm.offset + mx + math.log(moment))


def eta(sol: NSolitonSolution, x, t: float, frame: EvalFrame = EvalFrame.SOLITON, method: str = "auto"):
    """eta = 2 (ln F)_xx in the soliton frame; 6 eta(x - t, t) in the physical frame."""
    sol = _as_solution(sol)
    frame = EvalFrame(frame)
    xs = np.asarray(x, dtype=float)
    if frame is EvalFrame.PHYSICAL:
        return 6.0 * _scalar(sol._cumulants(xs - t, t, method)[0])
    return _scalar(sol._cumulants(xs, t, method)[0])


def eta_derivatives(sol: NSolitonSolution, x, t: float, method: str = "auto"):
    """(eta, eta_x, eta_xx) in the soliton frame, from exact cumulants."""
    c = _as_solution(sol)._cumulants(x, t, method)
    return _scalar(c[0]), _scalar(c[1]), _scalar(c[2])


def eta_jet(sol: NSolitonSolution, x, t: float, method: str = "auto") -> dict:
    """Exact eta, eta_x, eta_xx, eta_xxx and eta_t (soliton frame)."""
    c = _as_solution(sol)._cumulants(x, t, method)
    return {k: _scalar(v) for k, v in zip(("eta", "eta_x", "eta_xx", "eta_xxx", "eta_t"), c[:5])}


def fd_step_t(sol: NSolitonSolution) -> float:
    return max(1e-6, 1e-4 / sol.alpha_max**3)


def fd_step_x(sol: NSolitonSolution) -> float:
    return 1e-4 / sol.alpha_max


# centered stencils: (offsets, weights) for first derivatives
_D1 = {
    2: ((-1, 1), (-0.5, 0.5)),
    4: ((-2, -1, 1, 2), (1 / 12, -2 / 3, 2 / 3, -1 / 12)),
}


def time_derivative_eta(sol: NSolitonSolution, x, t: float, h: float | None = None, order: int = 4, method: str = "auto"):
    """Centered finite-difference eta_t (soliton frame)."""
    sol = _as_solution(sol)
    h = fd_step_t(sol) if h is None else h
    offs, wts = _D1[order]
    acc = 0.0
    for o, w in zip(offs, wts):
        acc = acc + w * sol._cumulants(x, t + o * h, method)[0]
    return _scalar(acc / h)


def third_derivative_eta(sol: NSolitonSolution, x, t: float, h: float | None = None, order: int = 4, method: str = "auto"):
    """eta_xxx by centered differences of the exact eta_xx."""
    sol = _as_solution(sol)
    h = fd_step_x(sol) if h is None else h
    x = np.asarray(x, dtype=float)
    offs, wts = _D1[order]
    acc = 0.0
    for o, w in zip(offs, wts):
        acc = acc + w * sol._cumulants(x + o * h, t, method)[2]
    return _scalar(acc / h)


def _scalar(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v
