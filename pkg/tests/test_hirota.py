import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from solflow.hirota import (
    DomainError,
    EvalFrame,
    EvaluationError,
    NSolitonSolution,
    Soliton,
    eta,
    eta_derivatives,
    eta_jet,
    interaction_coefficient,
    tau_derivative,
    third_derivative_eta,
    time_derivative_eta,
)


def sech2_profile(alpha, s, x, t):
    z = (-alpha * (x - s) + alpha**3 * t) / 2
    return alpha**2 / 2 / np.cosh(z) ** 2


def plain_tau(alphas, phases, x, t, order):
    """Direct sum over subsets in ordinary floating point (no log scaling)."""
    n = len(alphas)
    total = 0.0
    for mask in range(1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        coef = 1.0
        for p, i in enumerate(idx):
            for j in idx[p + 1:]:
                coef *= ((alphas[i] - alphas[j]) / (alphas[i] + alphas[j])) ** 2
        sig = sum(alphas[i] for i in idx)
        expo = sum(-alphas[i] * (x - phases[i]) + alphas[i] ** 3 * t for i in idx)
        total += (-sig) ** order * coef * math.exp(expo)
    return total


# -- interaction coefficients ----------------------------------------------------


@pytest.mark.parametrize("ak, al, expected", [(1, 1, 0.0), (2, 1, 1 / 9), (3, 1, 0.25), (1, 3, 0.25)])
def test_interaction_coefficient(ak, al, expected):
    assert interaction_coefficient(ak, al) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("ak, al", [(0, 1), (1, -2), (-1, -1)])
def test_interaction_coefficient_domain(ak, al):
    with pytest.raises(DomainError):
        interaction_coefficient(ak, al)


def test_soliton_rejects_bad_alpha():
    with pytest.raises(DomainError):
        Soliton(0.0, 1.0)
    with pytest.raises(DomainError):
        Soliton(-1.0, 0.0)


def test_duplicate_alphas_rejected():
    with pytest.raises(DomainError):
        NSolitonSolution([(2.0, 0.0), (2.0, 1.0)])
    with pytest.raises(DomainError):
        NSolitonSolution([(2.0, 0.0), (2.0 * (1 + 1e-12), 1.0)])


def test_coefficient_tables():
    sol = NSolitonSolution([(2.0, 0.0), (1.0, 0.0), (3.0, 0.0)])
    c = sol.coeffs
    assert c[0, 1] == pytest.approx(1 / 9)
    assert np.all(np.diag(c) == 0)
    tab = sol.log_coeff_table
    assert tab[0] == 0 and tab[1] == 0 and tab[2] == 0 and tab[4] == 0
    assert tab[0b011] == pytest.approx(math.log(1 / 9))
    assert tab[0b111] == pytest.approx(math.log(1 / 9) + math.log(1 / 4) + math.log(1 / 25))
    assert sol.log_subset_coefficient([0, 1, 2]) == pytest.approx(tab[0b111])


# -- tau function ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "solitons, order, expected",
    [
        ([(2.0, 0.0)], 0, 2.0),
        ([(2.0, 0.0)], 1, -2.0),
        ([(2.0, 0.0), (1.0, 0.0)], 0, 3.111111111111111),
    ],
)
def test_tau_derivative_examples(solitons, order, expected):
    v = tau_derivative(NSolitonSolution(solitons), order, 0.0, 0.0)
    assert v.value == pytest.approx(expected, rel=1e-14)


def test_tau_derivative_bad_order():
    sol = NSolitonSolution([(2.0, 0.0)])
    for order in (-1, 5):
        with pytest.raises(DomainError):
            tau_derivative(sol, order, 0.0, 0.0)


@pytest.mark.parametrize("order", [0, 1, 2, 3, 4])
def test_tau_log_domain_matches_plain_sum(order):
    rng = np.random.default_rng(11 + order)
    alphas = [2.5, 1.7, 1.1, 0.6]
    phases = [0.3, -1.0, 0.5, 2.0]
    sol = NSolitonSolution(list(zip(alphas, phases)))
    for _ in range(200):
        x, t = rng.uniform(-6, 6), rng.uniform(-0.5, 0.5)
        ref = plain_tau(alphas, phases, x, t, order)
        got = tau_derivative(sol, order, x, t)
        assert got.value == pytest.approx(ref, rel=1e-12)


def test_tau_no_overflow_for_huge_exponents():
    sol = NSolitonSolution([(50.0, 0.0), (49.0, 0.0)])
    v = tau_derivative(sol, 0, -100.0, 0.0)
    # log F is about 5000 + 4900 + ln a
    assert v.sign == 1.0 and 9000 < v.log_abs < 10000
    e = eta(sol, -100.0, 0.0)
    assert np.isfinite(e) and e >= 0


def test_tau_at_least_one():
    sol = NSolitonSolution([(2.0, -3.0), (1.2, 1.0), (0.7, 4.0)])
    for x in np.linspace(-20, 20, 41):
        assert tau_derivative(sol, 0, x, 0.2).log_abs >= 0


# -- eta ---------------------------------------------------------------------------------


def test_eta_peak_value():
    sol = NSolitonSolution([(2.0, 0.0)])
    assert eta(sol, 0.0, 0.0) == pytest.approx(2.0, rel=1e-14)


def test_eta_peak_tracks_speed():
    sol = NSolitonSolution([(2.0, 0.0)])
    t0 = 0.3
    assert eta(sol, 4 * t0, t0) == pytest.approx(2.0, rel=1e-13)


def test_eta_physical_frame():
    sol = NSolitonSolution([(2.0, 0.0)])
    t = 0.3
    # the physical peak sits at x = t + alpha^2 t with height 6 * alpha^2 / 2
    assert eta(sol, 1.5, t, EvalFrame.PHYSICAL) == pytest.approx(12.0, rel=1e-13)
    assert eta(sol, 0.3, t, EvalFrame.PHYSICAL) == pytest.approx(6 * eta(sol, 0.0, t), rel=1e-14)
    xs = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(eta(sol, xs, t, "physical"), 6 * eta(sol, xs - t, t), rtol=1e-14)


def test_eta_derivatives_single_soliton():
    sol = NSolitonSolution([(2.0, 0.0)])
    e, ex, exx = eta_derivatives(sol, 0.0, 0.0)
    assert e == pytest.approx(2.0)
    assert ex == pytest.approx(0.0, abs=1e-13)
    assert exx == pytest.approx(-4.0, rel=1e-12)
    far = eta_derivatives(sol, 60.0, 0.0)
    assert all(abs(v) < 1e-40 for v in far)


@pytest.mark.parametrize("alpha, s", [(2.0, 0.0), (0.7, -3.0), (5.0, 1.5), (12.0, 0.2)])
def test_single_soliton_reduction(alpha, s):
    rng = np.random.default_rng(3)
    sol = NSolitonSolution([(alpha, s)])
    t = rng.uniform(-1, 1, 2000) / alpha**3
    x = s + alpha**2 * t + rng.uniform(-30, 30, 2000) / alpha
    ref = sech2_profile(alpha, s, x, t)
    got = np.array([eta(sol, xi, ti) for xi, ti in zip(x[:300], t[:300])])
    np.testing.assert_allclose(got, ref[:300], rtol=1e-12)


def test_soliton_profile_matches_solution():
    s = Soliton(3.0, -1.0)
    sol = NSolitonSolution([s])
    xs = np.linspace(-8, 8, 101)
    np.testing.assert_allclose(eta(sol, xs, 0.1), s.profile(xs, 0.1), rtol=1e-12)
    assert s.amplitude == 4.5 and s.speed == 9.0 and s.peak(1.0) == 8.0


@settings(max_examples=60, deadline=None)
@given(
    alphas=st.lists(st.floats(0.3, 6.0), min_size=1, max_size=5, unique=True),
    x=st.floats(-40, 40),
    t=st.floats(-2, 2),
    seed=st.integers(0, 1000),
)
def test_eta_positive(alphas, x, t, seed):
    alphas = sorted(set(round(a, 3) for a in alphas), reverse=True)
    if len(alphas) > 1 and min(-np.diff(alphas)) < 1e-3:
        return
    rng = np.random.default_rng(seed)
    sol = NSolitonSolution([(a, rng.uniform(-5, 5)) for a in alphas])
    v = eta(sol, x, t)
    assert v >= 0 and np.isfinite(v)
    # strictly positive wherever the sech^2 tails are representable
    if all(abs(a * (x - s.s)) < 600 for a, s in zip(alphas, sol.solitons)) and abs(t) < 0.5:
        assert v > 0


def test_derivative_formulas_cross_check():
    """Cumulant derivatives agree with the quotient formulas in tau derivatives."""
    alphas, phases = [2.0, 1.3, 0.8], [0.0, -1.0, 1.5]
    sol = NSolitonSolution(list(zip(alphas, phases)))
    for x in np.linspace(-4, 4, 17):
        t = 0.1
        F = [tau_derivative(sol, k, x, t).value for k in range(5)]
        G = (F[0] * F[2] - F[1] ** 2) / F[0] ** 2
        Gx = (F[0] ** 2 * F[3] - 3 * F[0] * F[1] * F[2] + 2 * F[1] ** 3) / F[0] ** 3
        Gxx = (-4 * F[0] ** 2 * F[1] * F[3] + F[0] ** 3 * F[4] + 12 * F[0] * F[1] ** 2 * F[2]
               - 3 * F[0] ** 2 * F[2] ** 2 - 6 * F[1] ** 4) / F[0] ** 4
        e, ex, exx = eta_derivatives(sol, x, t)
        scale = 1 + abs(F[1] / F[0]) ** 4
        assert e == pytest.approx(2 * G, abs=1e-11 * scale)
        assert ex == pytest.approx(2 * Gx, abs=1e-10 * scale)
        assert exx == pytest.approx(2 * Gxx, abs=1e-9 * scale)


# -- time derivative and finite differences -------------------------------------------------


def test_time_derivative_at_peak():
    sol = NSolitonSolution([(2.0, 0.0)])
    t = 0.25
    assert abs(time_derivative_eta(sol, 4 * t, t)) < 1e-6


def test_time_derivative_travelling_wave():
    sol = NSolitonSolution([(1.0, 0.0)])
    _, ex, _ = eta_derivatives(sol, 0.5, 0.0)
    assert time_derivative_eta(sol, 0.5, 0.0) == pytest.approx(-1.0 * ex, abs=1e-6)


def test_time_derivative_vanishing_amplitude():
    sol = NSolitonSolution([(1e-4, 0.0)])
    assert abs(time_derivative_eta(sol, 0.3, 0.0)) < 1e-12


def test_exact_time_derivative_matches_difference():
    sol = NSolitonSolution([(3.0, 0.0), (1.5, -1.0), (0.8, 2.0)])
    xs = np.linspace(-3, 3, 25)
    jet = eta_jet(sol, xs, 0.05)
    np.testing.assert_allclose(time_derivative_eta(sol, xs, 0.05), jet["eta_t"], atol=1e-6)
    np.testing.assert_allclose(third_derivative_eta(sol, xs, 0.05), jet["eta_xxx"], atol=1e-6)


def test_exact_jet_satisfies_kdv():
    sol = NSolitonSolution([(4.0, 0.0), (2.5, 0.5), (1.0, -0.5), (0.5, 1.0)])
    xs = np.linspace(-5, 5, 101)
    for t in (-0.1, 0.0, 0.07):
        j = eta_jet(sol, xs, t)
        res = j["eta_t"] + 6 * j["eta"] * j["eta_x"] + j["eta_xxx"]
        assert np.max(np.abs(res)) < 1e-10


# -- term generators ----------------------------------------------------------------------


@pytest.mark.parametrize("n", [10, 13, 16])
def test_window_matches_exact(n):
    rng = np.random.default_rng(n)
    alphas = np.sort(rng.uniform(0.5, 4.0, n))[::-1]
    phases = rng.uniform(-15, 5, n)
    sol = NSolitonSolution(list(zip(alphas, phases)))
    xs = np.linspace(-30, 30, 61)
    for t in (-1.0, 0.0, 1.5):
        try:
            w = sol._cumulants(xs, t, "window")
        except EvaluationError:
            continue
        e = sol._cumulants(xs, t, "exact")
        scale = np.max(np.abs(e[:5]), axis=1, keepdims=True)
        assert np.max(np.abs(w[:5] - e[:5]) / scale) < 1e-10


def test_separated_train_uses_window():
    # forty well separated solitons: far beyond full enumeration, cheap through the window
    alphas = np.linspace(3.0, 1.0, 40)
    phases = -np.arange(40) * 8.0
    sol = NSolitonSolution(list(zip(alphas, phases)))
    assert not sol.use_exact()
    # slower solitons sit behind the accumulated shifts of all faster ones (down to about -416)
    xs = np.linspace(-460, 20, 48001)
    e = sol._cumulants(xs, 0.0)[0]
    assert np.all(np.isfinite(e)) and np.all(e >= 0)
    # the leading soliton has nobody ahead of it: unshifted peak alpha^2/2 at its phase,
    # up to the e^-23 tail of its neighbour
    assert eta(sol, 0.0, 0.0) == pytest.approx(4.5, rel=1e-9)
    mass = np.sum(e) * (xs[1] - xs[0])
    assert mass == pytest.approx(2 * alphas.sum(), rel=1e-6)


def test_exact_method_cap():
    sol = NSolitonSolution([(1.0 + 0.01 * i, -3.0 * i) for i in range(30)])
    with pytest.raises(EvaluationError):
        sol._cumulants(np.array([0.0]), 0.0, "exact")


# -- mass --------------------------------------------------------------------------------------


@pytest.mark.parametrize("alphas", [[2.0], [2.0, 1.0], [3.0, 1.7, 0.9], [4.0, 3.1, 2.2, 1.5, 0.8]])
def test_mass_equals_twice_alpha_sum(alphas):
    phases = np.linspace(0.0, -2.0, len(alphas))
    sol = NSolitonSolution(list(zip(alphas, phases)))
    amin = min(alphas)
    for t in np.linspace(-0.5, 0.5, 4):
        peaks = phases + np.array(alphas) ** 2 * t
        lo = peaks.min() - 40 / amin - 5
        hi = peaks.max() + 40 / amin + 5
        mass, _ = quad(lambda x: float(eta(sol, x, t)), lo, hi, limit=400, epsabs=1e-12, epsrel=1e-12)
        assert mass == pytest.approx(2 * sum(alphas), rel=1e-5)
