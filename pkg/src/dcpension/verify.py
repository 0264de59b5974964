"""Independent numerical checks of the closed-form solution.

* ``ode_oracle``: backward Runge-Kutta integration of the coefficient ODEs
  and of the Riccati equation, from the terminal conditions.
* ``hjb_residual``/``foc_residual``: the HJB operator assembled term by term
  from the model dynamics (nonlocal jump terms evaluated exactly), applied
  to the closed-form value function at pi*.
* ``ansatz_residuals``: the six monomial brackets of the HJB after
  substituting the quadratic ansatz.
* ``mc_consistency``: Monte Carlo estimate of the objective under pi*.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from .closedform import ClosedForm, solution
from .model import ModelParams, State

ODE_TOL = 1e-10


@dataclass
class ResidualReport:
    check: str
    grid_size: int
    max_abs: float
    max_rel: float
    tol: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.check}: n={self.grid_size} max_abs={self.max_abs:.3e} "
                f"max_rel={self.max_rel:.3e} tol={self.tol:.0e}")


# --------------------------------------------------------------------------- ODE oracle


@dataclass
class OracleResult:
    t: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    phi4: np.ndarray
    phi5: np.ndarray
    phi6: np.ndarray
    nfev: int


def ode_oracle(params: ModelParams, grid, rtol: float = ODE_TOL, atol: float = 1e-12) -> OracleResult:
    """Integrate the V-independent coefficient ODEs backward from T with RK45."""
    cf = ClosedForm(params)
    p, c = params, cf.coeffs
    rate4, rate5 = cf.rate4, cf.rate5

    def rhs(t, y):
        f1, f2, f5, f4, f6 = y
        return [
            -(c.a1 * f1 + cf.src1),
            -(c.a2 * f2 + cf.src2),
            -(rate5 * f5 + 2 * p.xi * f1),
            -(rate4 * f4 + p.xi * f2 - f2 * f5 / (2 * f1) * cf.k45),
            -(-p.lambda_mort * f6 + cf.src6 - f2**2 / (4 * f1) * cf.k6),
        ]

    grid = np.asarray(grid, dtype=float)
    order = np.argsort(-grid)
    y0 = [cf.term1, cf.term2, 0.0, 0.0, cf.term6]
    sol = solve_ivp(rhs, (p.T, float(grid.min())), y0, method="RK45", t_eval=grid[order],
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"ODE oracle failed: {sol.message} (nfev={sol.nfev})")
    ys = np.empty((5, grid.size))
    ys[:, order] = sol.y
    return OracleResult(grid, ys[0], ys[1], ys[3], ys[2], ys[4], sol.nfev)


def riccati_oracle(params: ModelParams, tau: float, t_grid, rtol: float = 1e-12, atol: float = 1e-14):
    """Backward RK45 solution of R_t + 1 + b R + sigma_V^2 R^2 / 2 = 0, R(tau) = 0."""
    b = 2 * params.sigma_V * params.rho_LV - params.kappa
    s2 = params.sigma_V**2
    t_grid = np.asarray(t_grid, dtype=float)
    order = np.argsort(-t_grid)
    sol = solve_ivp(lambda t, R: -(1 + b * R + 0.5 * s2 * R**2), (tau, float(t_grid.min())), [0.0],
                    method="RK45", t_eval=t_grid[order], rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"Riccati oracle failed: {sol.message}")
    out = np.empty(t_grid.size)
    out[order] = sol.y[0]
    return out


def check_ode(params: ModelParams, n_grid: int = 101, tol: float = 1e-6) -> ResidualReport:
    cf = solution(params)
    grid = np.linspace(0.0, params.T, n_grid)
    orc = ode_oracle(params, grid)
    closed = np.array([cf.phi_scalars(t) for t in grid])  # phi1, phi2, phi4, phi5, phi6
    ref = np.stack([orc.phi1, orc.phi2, orc.phi4, orc.phi5, orc.phi6], axis=1)
    err = np.abs(closed - ref)
    per = dict(zip(["phi1", "phi2", "phi4", "phi5", "phi6"], err.max(axis=0).tolist()))
    max_abs = float(err.max())
    return ResidualReport("ode", n_grid, max_abs, float(max_abs / np.abs(ref).max()), tol,
                          max_abs < tol, {"max_abs_by_function": per})


# --------------------------------------------------------------------------- HJB operator


def _dt(f, t: float, T: float, h: float) -> float:
    """Second-order difference in t; one-sided near T where phi is not defined beyond T."""
    if t + h <= T:
        return (f(t + h) - f(t - h)) / (2 * h)
    return (3 * f(t) - 4 * f(t - h) + f(t - 2 * h)) / (2 * h)


class HJB:
    """The HJB operator applied to the closed-form value function at fixed (t, v)."""

    def __init__(self, params: ModelParams, cf: ClosedForm | None = None):
        self.p = params
        self.cf = cf or solution(params)

    def _parts(self, t: float, v: float) -> dict:
        p, cf = self.p, self.cf
        h = 1e-6 * p.T
        phi1, phi2, phi4, phi5, phi6 = cf.phi_scalars(t)
        scal_t = [_dt(lambda s, i=i: cf.phi_scalars(s)[i], t, p.T, h) for i in range(5)]
        phi3, phi3v, phi3vv = cf.phi3(t, v, derivs=True)
        phi3_t = _dt(lambda s: cf.phi3(s, v), t, p.T, h)
        return dict(phi1=phi1, phi2=phi2, phi3=float(phi3), phi4=phi4, phi5=phi5, phi6=phi6,
                    phi3v=float(phi3v), phi3vv=float(phi3vv),
                    phi1t=scal_t[0], phi2t=scal_t[1], phi4t=scal_t[2], phi5t=scal_t[3], phi6t=scal_t[4],
                    phi3t=phi3_t,
                    phi3_jv=cf.phi3(t, v + p.eta_VV), phi3_jc=cf.phi3(t, v + p.eta_Vc))

    def terms(self, state: State, pi: float, parts: dict | None = None) -> dict:
        """Every additive term of Psi(pi), keyed by name."""
        p = self.p
        d = parts or self._parts(state.t, state.v)
        x, l, v = state.x_bar, state.l_bar, state.v

        def phi(xx, ll, p3):
            return d["phi1"] * xx * xx + d["phi2"] * xx + p3 * ll * ll + d["phi4"] * ll + d["phi5"] * xx * ll + d["phi6"]

        f0 = phi(x, l, d["phi3"])
        f_t = (d["phi1t"] * x * x + d["phi2t"] * x + d["phi3t"] * l * l + d["phi4t"] * l
               + d["phi5t"] * x * l + d["phi6t"])
        f_x = 2 * d["phi1"] * x + d["phi2"] + d["phi5"] * l
        f_xx = 2 * d["phi1"]
        f_l = 2 * d["phi3"] * l + d["phi4"] + d["phi5"] * x
        f_ll = 2 * d["phi3"]
        f_xl = d["phi5"]
        f_v = d["phi3v"] * l * l
        f_vv = d["phi3vv"] * l * l
        f_lv = 2 * d["phi3v"] * l

        r0 = p.m + p.zeta**2 / 2
        zz = p.zeta * p.sigma_Pi * p.rho_Pir
        sP2 = p.sigma_Pi**2
        k = p.k_Pi
        lam = p.lambda_mort
        return {
            "phi_t": f_t,
            "running": lam * (p.alpha2 + p.beta2 * (x - p.X2_star)) ** 2,
            "killing": -lam * f0,
            "x_drift": f_x * x * (r0 + pi * (p.mu_S - r0 + zz) - p.mu_Pi + sP2 - zz),
            "contribution": f_x * p.xi * l,
            "x_diffusion": 0.5 * f_xx * x * x * ((1 - pi) ** 2 * p.zeta**2 + pi**2 * p.sigma_SS**2 + sP2
                                                 - 2 * (1 - pi) * zz),
            "l_drift": f_l * l * (p.mu_L - p.mu_Pi + sP2),
            "l_diffusion": 0.5 * f_ll * l * l * (p.sigma_LS**2 + v + sP2),
            "v_drift": f_v * p.kappa * (p.delta - v),
            "v_diffusion": 0.5 * f_vv * p.sigma_V**2 * v,
            "xl_cross": f_xl * x * l * (pi * p.sigma_SS * p.sigma_LS + sP2 - (1 - pi) * zz),
            "lv_cross": f_lv * l * v * p.sigma_V * p.rho_LV,
            "jump_S": p.lambda_S * (phi(x * (1 + pi * p.eta_S), l, d["phi3"]) - f0),
            "jump_L": p.lambda_L * (phi(x, l * (1 + p.eta_LL), d["phi3"]) - f0),
            "jump_V": p.lambda_V * (phi(x, l, d["phi3_jv"]) - f0),
            "jump_c": p.lambda_c * (phi(x, l * (1 + p.eta_Lc), d["phi3_jc"]) - f0),
            "jump_Pi": p.lambda_Pi * (phi(x * (1 + k), l * (1 + k), d["phi3"]) - f0),
        }

    def psi(self, state: State, pi: float, parts: dict | None = None) -> tuple[float, float]:
        """(Psi(pi), largest additive term magnitude)."""
        terms = self.terms(state, pi, parts)
        vals = np.array(list(terms.values()))
        return float(math.fsum(vals)), float(np.abs(vals).max())

    def pi_star(self, state: State, parts: dict | None = None) -> float:
        d = parts or self._parts(state.t, state.v)
        c, x, l = self.cf.coeffs, state.x_bar, state.l_bar
        return (-(2 * d["phi1"] * x + d["phi2"] + d["phi5"] * l) / (2 * d["phi1"] * x) * c.varpi1 / c.varpi4
                - d["phi5"] * l / (2 * d["phi1"] * x) * c.varpi2 / c.varpi4 - c.varpi3 / c.varpi4)

    def dpsi_dpi(self, state: State, pi: float, parts: dict | None = None) -> tuple[float, float]:
        """Analytic derivative of the pi-quadratic and the magnitude of its largest term."""
        d = parts or self._parts(state.t, state.v)
        c, x, l = self.cf.coeffs, state.x_bar, state.l_bar
        terms = [2 * d["phi1"] * x * x * c.varpi4 * pi,
                 (2 * d["phi1"] * x + d["phi2"] + d["phi5"] * l) * x * c.varpi1,
                 d["phi5"] * x * l * c.varpi2,
                 2 * d["phi1"] * x * x * c.varpi3]
        return math.fsum(terms), max(abs(u) for u in terms)


def hjb_residual(state: State, params: ModelParams, d: float = 0.0) -> float:
    """Psi(pi* + d) for the closed-form value function."""
    hjb = HJB(params)
    parts = hjb._parts(state.t, state.v)
    return hjb.psi(state, hjb.pi_star(state, parts) + d, parts)[0]


def foc_residual(state: State, params: ModelParams) -> float:
    hjb = HJB(params)
    parts = hjb._parts(state.t, state.v)
    return hjb.dpsi_dpi(state, hjb.pi_star(state, parts), parts)[0]


def quasi_random_states(params: ModelParams, n: int = 100, seed: int = 7,
                        x_range=(0.1, 5.0), l_range=(0.05, 2.0), v_range=(0.005, 0.5)) -> list[State]:
    pts = qmc.Halton(d=4, scramble=True, seed=seed).random(n)
    lo = np.array([0.0, x_range[0], l_range[0], v_range[0]])
    hi = np.array([params.T, x_range[1], l_range[1], v_range[1]])
    pts = qmc.scale(pts, lo, hi)
    return [State(*map(float, row)) for row in pts]


def check_hjb(params: ModelParams, states=None, tol: float = 1e-6, quad_tol: float = 1e-10,
              offsets=(0.1, 1.0)) -> ResidualReport:
    hjb = HJB(params)
    states = states if states is not None else quasi_random_states(params)
    abs_res, rel_res, quad_err = [], [], []
    for st in states:
        parts = hjb._parts(st.t, st.v)
        ps = hjb.pi_star(st, parts)
        val, scale = hjb.psi(st, ps, parts)
        abs_res.append(abs(val))
        rel_res.append(abs(val) / scale)
        x2w4 = parts["phi1"] * st.x_bar**2 * hjb.cf.coeffs.varpi4
        for d in offsets:
            gap = hjb.psi(st, ps + d, parts)[0] - val
            quad_err.append(abs(gap - x2w4 * d * d) / (x2w4 * d * d))
    max_rel = float(max(rel_res))
    max_quad = float(max(quad_err))
    return ResidualReport("hjb", len(states), float(max(abs_res)), max_rel, tol,
                          max_rel < tol and max_quad < quad_tol,
                          {"max_quadratic_identity_rel": max_quad, "quadratic_identity_tol": quad_tol})


def check_foc(params: ModelParams, states=None, tol: float = 1e-12, fd_tol: float = 1e-6,
              fd_step: float = 1e-6, n_fd: int | None = None) -> ResidualReport:
    hjb = HJB(params)
    states = states if states is not None else quasi_random_states(params)
    rel, fd_rel, second = [], [], []
    for i, st in enumerate(states):
        parts = hjb._parts(st.t, st.v)
        ps = hjb.pi_star(st, parts)
        g, scale = hjb.dpsi_dpi(st, ps, parts)
        rel.append(abs(g) / scale)
        curv = 2 * parts["phi1"] * st.x_bar**2 * hjb.cf.coeffs.varpi4
        for sgn in (1.0, -1.0):
            g1, _ = hjb.dpsi_dpi(st, ps + sgn, parts)
            second.append(abs(g1 - sgn * curv) / curv)
        if n_fd is None or i < n_fd:
            for pi in (ps, ps + 0.5):
                fd = (hjb.psi(st, pi + fd_step, parts)[0] - hjb.psi(st, pi - fd_step, parts)[0]) / (2 * fd_step)
                an, sc = hjb.dpsi_dpi(st, pi, parts)
                fd_rel.append(abs(fd - an) / max(sc, abs(an)))
    max_rel = float(max(rel))
    max_fd = float(max(fd_rel))
    return ResidualReport("foc", len(states), float(max_rel), max_rel, tol,
                          max_rel < tol and max_fd < fd_tol,
                          {"max_fd_rel": max_fd, "fd_tol": fd_tol, "max_second_derivative_rel": float(max(second))})


# --------------------------------------------------------------------------- ansatz brackets


BRACKETS = ("xx", "x", "ll", "l", "xl", "const")


def ansatz_terms(t: float, v: float, params: ModelParams, cf: ClosedForm | None = None) -> dict:
    """Additive terms of the six monomial brackets (coefficients of x^2, x, l^2, l, x l, 1)."""
    p = params
    cf = cf or solution(params)
    c = cf.coeffs
    d = HJB(params, cf)._parts(t, v)
    lc, ec = p.lambda_c, p.eta_Lc
    lam = p.lambda_mort
    return {
        "xx": [d["phi1t"], c.a1 * d["phi1"], lam * p.beta2**2],
        "x": [d["phi2t"], c.a2 * d["phi2"], 2 * lam * (p.alpha2 * p.beta2 - p.beta2**2 * p.X2_star)],
        "ll": [d["phi3t"], (c.a3 + v) * d["phi3"],
               (p.kappa * (p.delta - v) + 2 * p.sigma_V * p.rho_LV * v) * d["phi3v"],
               0.5 * p.sigma_V**2 * v * d["phi3vv"],
               p.lambda_V * (d["phi3_jv"] - d["phi3"]),
               lc * (d["phi3_jc"] - d["phi3"]),
               lc * d["phi3_jc"] * (ec**2 + 2 * ec),
               -d["phi5"] ** 2 / (4 * d["phi1"]) * (c.varpi1 + c.varpi2) ** 2 / c.varpi4,
               p.xi * d["phi5"]],
        "l": [d["phi4t"], c.a4 * d["phi4"], lc * ec * d["phi4"],
              -d["phi2"] * d["phi5"] / (2 * d["phi1"]) * c.varpi1 * (c.varpi1 + c.varpi2) / c.varpi4,
              p.xi * d["phi2"]],
        "xl": [d["phi5t"], c.a5 * d["phi5"], lc * ec * d["phi5"], 2 * p.xi * d["phi1"]],
        "const": [d["phi6t"], -lam * d["phi6"], -d["phi2"] ** 2 / (4 * d["phi1"]) * c.varpi1**2 / c.varpi4,
                  lam * (p.alpha2 - p.beta2 * p.X2_star) ** 2],
    }


def ansatz_residuals(t: float, v: float, params: ModelParams) -> dict:
    """Each bracket's (residual, largest-term magnitude)."""
    out = {}
    for name, terms in ansatz_terms(t, v, params).items():
        out[name] = (math.fsum(terms), max(abs(u) for u in terms))
    return out


def _rel(res: float, scale: float) -> float:
    return 0.0 if scale == 0.0 else abs(res) / scale


def check_ansatz(params: ModelParams, n_t: int = 10, n_v: int = 10, v_range=(0.005, 0.5),
                 tol: float = 1e-6) -> ResidualReport:
    # t = T is excluded: every l^2-bracket term vanishes there identically
    ts = np.linspace(0.0, params.T, n_t + 1)[:-1]
    vs = np.linspace(*v_range, n_v)
    worst = {b: 0.0 for b in BRACKETS}
    worst_abs = 0.0
    for t in ts:
        for v in vs:
            for name, (res, scale) in ansatz_residuals(float(t), float(v), params).items():
                worst[name] = max(worst[name], _rel(res, scale))
                worst_abs = max(worst_abs, abs(res))
    max_rel = max(worst.values())
    return ResidualReport("ansatz", n_t * n_v, worst_abs, max_rel, tol, max_rel < tol,
                          {"max_rel_by_bracket": worst})


# --------------------------------------------------------------------------- Monte Carlo


def mc_consistency(params: ModelParams, n_paths: int = 100_000, steps_per_year: int = 252, seed: int = 42,
                   n_sigma: float = 3.0, probe_paths: int | None = 10_000, mode: str = "written") -> ResidualReport:
    """Monte Carlo estimate of J under the optimal policy against the closed-form value.

    ``probe_paths=None`` skips the convexity probe.
    """
    from .montecarlo import PolicySpec, SimConfig, convexity_probe, simulate

    sim = simulate(SimConfig(n_paths, steps_per_year, seed, PolicySpec("optimal"), mode), params)
    est = sim.estimate()
    phi0 = solution(params).value(0.0, params.X0_real, params.L0_real, params.V0)
    gap = abs(est.mean - phi0)
    ok_value = gap <= n_sigma * est.std_error if est.std_error > 0 else gap <= 1e-4 * abs(phi0)
    details = {
        "J_mc": est.mean, "std_error": est.std_error, "phi0": phi0, "n_paths": est.n_paths,
        "n_aborted": est.n_aborted, "gap_in_std_errors": gap / est.std_error if est.std_error else None,
        "value_check_passed": bool(ok_value),
    }
    passed = bool(ok_value)
    if params.beta2 == 0:
        expected = params.alpha2**2 * -math.expm1(-params.lambda_mort * params.T)
        dev = float(np.max(np.abs(sim.running_loss[~sim.aborted] - expected)))
        details["constant_running_loss"] = {"expected": expected, "max_abs_deviation": dev}
        passed &= dev <= 1e-12 * max(1.0, expected)
    if probe_paths:
        probe = convexity_probe(params, probe_paths, steps_per_year, seed)
        details["convexity_probe"] = probe
        passed &= probe["passed"]
    return ResidualReport("mc", est.n_paths, gap, gap / abs(phi0), n_sigma, bool(passed), details)


def run_checks(params: ModelParams, which: str = "all", mc_paths: int = 100_000, tol: float | None = None,
               probe_paths: int | None = 10_000, seed: int = 42) -> list[ResidualReport]:
    reports = []
    kw = {} if tol is None else {"tol": tol}
    if which in ("all", "ode"):
        reports.append(check_ode(params, **kw))
    if which in ("all", "hjb"):
        reports.append(check_hjb(params, **kw))
    if which in ("all", "foc"):
        reports.append(check_foc(params, **kw))
    if which in ("all", "ansatz"):
        reports.append(check_ansatz(params, **kw))
    if which in ("all", "mc"):
        reports.append(mc_consistency(params, n_paths=mc_paths, seed=seed, probe_paths=probe_paths))
    return reports


def reports_json(reports) -> str:
    return json.dumps({"checks": [r.to_dict() for r in reports],
                       "all_passed": all(r.passed for r in reports)}, indent=2, default=float)
