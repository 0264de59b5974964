import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import solve_ivp

from conftest import riccati_sets
from dcpension.closedform import riccati, riccati_phi32

SETS = riccati_sets()


def rk_reference(p, tau, ts):
    """R(t; tau) from R_t + 1 + b R + sigma_V^2 R^2 / 2 = 0, R(tau) = 0, integrated backward."""
    b = 2 * p.sigma_V * p.rho_LV - p.kappa
    s2 = p.sigma_V**2
    sol = solve_ivp(lambda t, R: -(1 + b * R + 0.5 * s2 * R**2), (tau, ts.min()), [0.0], method="DOP853",
                    t_eval=ts[::-1], rtol=1e-13, atol=1e-15)
    assert sol.success
    return sol.y[0][::-1]


@pytest.mark.parametrize("case", ["positive", "zero", "negative"])
def test_case_detected(case):
    assert riccati(SETS[case]).case == case


def test_zero_case_discriminant_tiny():
    sol = riccati(SETS["zero"])
    assert abs(sol.discriminant) < 1e-12


@pytest.mark.parametrize("case", ["positive", "zero", "negative"])
def test_matches_rk_last_year(case):
    p = SETS[case]
    ts = np.linspace(p.T - 1, p.T, 41)
    np.testing.assert_allclose(riccati_phi32(ts, p.T, p), rk_reference(p, p.T, ts), atol=1e-8, rtol=0)


@pytest.mark.parametrize("case", ["positive", "zero", "negative"])
def test_matches_rk_whole_horizon(case):
    p = SETS[case]
    ts = np.linspace(0.0, p.T, 51)
    ref = rk_reference(p, p.T, ts)
    np.testing.assert_allclose(riccati_phi32(ts, p.T, p), ref, rtol=1e-9, atol=1e-10)


@pytest.mark.parametrize("case", ["positive", "zero", "negative"])
def test_ode_residual_50_points(case):
    p = SETS[case]
    b = 2 * p.sigma_V * p.rho_LV - p.kappa
    s2 = p.sigma_V**2
    R = riccati(p)
    h = 1e-3
    for u in np.linspace(0.05, 1.0, 50):
        # five-point central derivative, truncation O(h^4)
        d = (-R(u + 2 * h) + 8 * R(u + h) - 8 * R(u - h) + R(u - 2 * h)) / (12 * h)
        r = R(u)
        assert abs(d - (1 + b * r + 0.5 * s2 * r * r)) < 1e-8


@pytest.mark.parametrize("case", ["positive", "zero", "negative"])
def test_terminal_behaviour(case):
    p = SETS[case]
    assert riccati_phi32(p.T, p.T, p) == 0.0
    h = 1e-7
    # backward derivative at t = tau equals -1
    assert (riccati_phi32(p.T, p.T, p) - riccati_phi32(p.T - h, p.T, p)) / h == pytest.approx(-1.0, abs=1e-6)


def test_double_root_formula_sign():
    """The double-root solution must carry a minus sign in the denominator."""
    u, b = sp.symbols("u b", positive=True)
    s2 = b**2 / 2  # b^2 = 2 sigma^2
    residual = lambda R: sp.simplify(sp.diff(R, u) - (1 + b * R + s2 * R**2 / 2))
    plus = b / (s2 + s2 * u * b / 2) - b / s2
    minus = b / (s2 - s2 * u * b / 2) - b / s2
    assert residual(minus) == 0
    assert residual(plus) != 0


def test_zero_case_robust_to_tiny_discriminant():
    p = SETS["zero"]
    near = p.replace(kappa=p.kappa * (1 + 1e-9))
    assert riccati(near).case != "zero"
    u = np.linspace(0, 1, 11)
    np.testing.assert_allclose(riccati(near)(u), riccati(p)(u), rtol=1e-7, atol=1e-12)


def test_no_vol_of_variance_is_linear():
    p = SETS["positive"].replace(sigma_V=0.0)
    b = -p.kappa
    u = np.array([0.0, 1e-12, 0.5, 3.0])
    np.testing.assert_allclose(riccati(p)(u), np.expm1(b * u) / b, rtol=1e-14)


def test_positive_case_tends_to_stable_root():
    p = SETS["positive"]
    R = riccati(p)
    b = 2 * p.sigma_V * p.rho_LV - p.kappa
    s2 = p.sigma_V**2
    stable = (-b - math.sqrt(b * b - 2 * s2)) / s2
    assert R(200.0) == pytest.approx(stable, rel=1e-12)


def test_blowup_horizon_matches_rk():
    p = SETS["positive"].replace(rho_LV=0.9, sigma_V=1.5, kappa=0.5)
    R = riccati(p)
    horizon = R.blowup_horizon()
    assert math.isfinite(horizon)
    b = 2 * p.sigma_V * p.rho_LV - p.kappa
    hit = lambda u, r: r[0] - 1e8
    hit.terminal = True
    sol = solve_ivp(lambda u, r: 1 + b * r + 0.5 * p.sigma_V**2 * r**2, (0, 10 * horizon), [0.0],
                    events=hit, rtol=1e-12, atol=1e-14)
    assert sol.t_events[0][0] == pytest.approx(horizon, rel=1e-6)
    with pytest.raises(FloatingPointError):
        R(1.01 * horizon)


def test_t_after_tau_rejected():
    with pytest.raises(ValueError):
        riccati_phi32(2.0, 1.0, SETS["positive"])
