"""Closed-form value function and optimal investment policy.

The value function is quadratic in real wealth ``x`` and real salary ``l``::

    phi = phi1(t) x^2 + phi2(t) x + phi3(t, v) l^2 + phi4(t) l + phi5(t) x l + phi6(t)

``phi1`` and ``phi2`` are exponentials, ``phi4``/``phi5``/``phi6`` are
Duhamel integrals of scalar linear ODEs, and ``phi3`` is an integral over
terminal times ``tau`` of exponential-affine (in ``v``) solutions whose
exponent solves a scalar Riccati equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import DerivedCoeffs, ModelParams, State, derive
from .quadrature import adaptive_simpson, gauss_legendre

QUAD_TOL = 1e-10
GL_ORDER = 64
DOUBLE_ROOT_THRESHOLD = 1e-12
SINGULAR_WEALTH = 1e-12


def expm1_ratio(a, h):
    """``(exp(a h) - 1) / a``, with the 4-term Taylor series where ``|a h| < 1e-8``."""
    a = np.asarray(a, dtype=float)
    h = np.asarray(h, dtype=float)
    x = a * h
    small = np.abs(x) < 1e-8
    safe_a = np.where(small, 1.0, a)
    series = h * (1.0 + x / 2.0 + x**2 / 6.0 + x**3 / 24.0)
    out = np.where(small, series, np.expm1(x) / safe_a)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------- Riccati


@dataclass(frozen=True)
class RiccatiSolution:
    """Exponent ``R`` of ``exp(R v)`` as a function of time-to-go ``u = tau - t``.

    Solves ``dR/du = 1 + b R + sigma_V^2 R^2 / 2`` with ``R(0) = 0``, i.e. the
    backward equation ``R_t + 1 + b R + sigma_V^2 R^2 / 2 = 0`` with
    ``b = 2 sigma_V rho_LV - kappa``.
    """

    b: float
    sigma2: float
    discriminant: float
    case: str  # "positive" | "zero" | "negative"
    h1: float | None = None
    h2: float | None = None

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise ValueError("Riccati exponent needs t <= tau")
        b, s2, disc = self.b, self.sigma2, self.discriminant
        if s2 == 0.0:
            out = expm1_ratio(b, u)
        elif self.case == "zero":
            out = b * b * u / (2.0 * s2 * (1.0 - 0.5 * b * u))
        elif self.case == "positive":
            sq = math.sqrt(disc)
            g = self.h1 / self.h2
            em = -np.expm1(-sq * u)
            out = self.h1 * em / (1.0 - g * (1.0 - em))
        else:
            sq = math.sqrt(-disc)
            x = 0.5 * sq * u
            # tan-addition form of (sq/s2) tan(atan(b/sq) + x) - b/s2
            out = 2.0 * np.sin(x) / (sq * np.cos(x) - b * np.sin(x))
        out = np.asarray(out, dtype=float)
        if np.any(u > self.blowup_horizon()):
            raise FloatingPointError("Riccati exponent has exploded before tau - t")
        return out if out.ndim else float(out)

    def blowup_horizon(self) -> float:
        b, s2, disc = self.b, self.sigma2, self.discriminant
        if s2 == 0.0:
            return math.inf
        if self.case == "zero":
            return 2.0 / b if b > 0 else math.inf
        if self.case == "positive":
            g = self.h1 / self.h2
            return math.log(g) / math.sqrt(disc) if g > 1 else math.inf
        sq = math.sqrt(-disc)
        return 2.0 * (0.5 * math.pi - math.atan(b / sq)) / sq


def riccati(params: ModelParams) -> RiccatiSolution:
    s2 = params.sigma_V**2
    b = 2.0 * params.sigma_V * params.rho_LV - params.kappa
    disc = b * b - 2.0 * s2
    if abs(disc) < DOUBLE_ROOT_THRESHOLD:
        return RiccatiSolution(b, s2, disc, "zero")
    if disc < 0:
        return RiccatiSolution(b, s2, disc, "negative")
    if s2 == 0.0:
        return RiccatiSolution(b, s2, disc, "positive")
    # roots (-b -+ sqrt(disc)) / s2 of s2/2 h^2 + b h + 1, written without cancellation
    sq = math.sqrt(disc)
    if b <= 0:
        h1, h2 = 2.0 / (sq - b), (sq - b) / s2
    else:
        h1, h2 = -(b + sq) / s2, -2.0 / (b + sq)
    return RiccatiSolution(b, s2, disc, "positive", h1, h2)


def riccati_blowup_horizon(params: ModelParams) -> float:
    return riccati(params).blowup_horizon()


def riccati_phi32(t, tau, params: ModelParams):
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(t > tau):
        raise ValueError(f"riccati_phi32 requires t <= tau (t={t}, tau={tau})")
    return riccati(params)(tau - t)


# --------------------------------------------------------------------------- solution


@dataclass(frozen=True)
class Policy:
    weight: float | None  # None when |x_bar| < 1e-12
    amount: float


class ClosedForm:
    """Evaluator for the six coefficient functions, the value function and pi*."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.coeffs: DerivedCoeffs = derive(params)
        self.riccati = riccati(params)
        p, c = params, self.coeffs
        self.rate4 = c.a4 + p.lambda_c * p.eta_Lc
        self.rate5 = c.a5 + p.lambda_c * p.eta_Lc
        self.src1 = p.lambda_mort * p.beta2**2
        self.src2 = 2.0 * p.lambda_mort * (p.alpha2 * p.beta2 - p.beta2**2 * p.X2_star)
        self.src6 = p.lambda_mort * (p.alpha2 - p.beta2 * p.X2_star) ** 2
        self.term1 = p.beta1**2
        self.term2 = 2.0 * p.beta1 * (p.alpha1 - p.beta1 * p.X1_star)
        self.term6 = (p.alpha1 - p.beta1 * p.X1_star) ** 2
        self.k45 = c.varpi1 * (c.varpi1 + c.varpi2) / c.varpi4
        self.k3 = (c.varpi1 + c.varpi2) ** 2 / c.varpi4
        self.k6 = c.varpi1**2 / c.varpi4
        self._scalars = lru_cache(maxsize=4096)(self._scalars_uncached)

    def _check_t(self, t):
        if np.any(np.asarray(t) > self.params.T):
            raise ValueError(f"t must not exceed T={self.params.T}")

    # closed-form exponentials
    def phi1(self, t):
        h = self.params.T - np.asarray(t, dtype=float)
        a1 = self.coeffs.a1
        return self.src1 * expm1_ratio(a1, h) + self.term1 * np.exp(a1 * h)

    def phi2(self, t):
        h = self.params.T - np.asarray(t, dtype=float)
        a2 = self.coeffs.a2
        return self.src2 * expm1_ratio(a2, h) + self.term2 * np.exp(a2 * h)

    def phi5_gl(self, t):
        """phi5 by a fixed 64-point Gauss-Legendre rule (vectorised; used inside integrands)."""
        t = np.asarray(t, dtype=float)
        xi, r5 = self.params.xi, self.rate5
        if xi == 0.0:
            return np.zeros_like(t)
        return 2.0 * xi * gauss_legendre(lambda s: np.exp(r5 * (s - t[..., None])) * self.phi1(s),
                                         t, self.params.T, GL_ORDER)

    def _duhamel_integrands(self, t: float):
        p = self.params

        def f(s):
            p1 = self.phi1(s)
            p2 = self.phi2(s)
            p5 = self.phi5_gl(s)
            f5 = 2.0 * p.xi * np.exp(self.rate5 * (s - t)) * p1
            f4 = np.exp(self.rate4 * (s - t)) * (p.xi * p2 - p2 * p5 / (2.0 * p1) * self.k45)
            f6 = np.exp(-p.lambda_mort * (s - t)) * (self.src6 - p2**2 / (4.0 * p1) * self.k6)
            return np.stack([f4, f5, f6], axis=-1)

        return f

    def _scalars_uncached(self, t: float):
        res = adaptive_simpson(self._duhamel_integrands(t), t, self.params.T, QUAD_TOL)
        phi4, phi5, phi6 = (float(x) for x in res.value)
        phi6 += self.term6 * math.exp(-self.params.lambda_mort * (self.params.T - t))
        return float(self.phi1(t)), float(self.phi2(t)), phi4, phi5, phi6

    def phi_scalars(self, t: float) -> tuple[float, float, float, float, float]:
        """(phi1, phi2, phi4, phi5, phi6) at time ``t``."""
        self._check_t(t)
        return self._scalars(float(t))

    # phi3 machinery
    def f3(self, tau):
        p1 = self.phi1(tau)
        p5 = self.phi5_gl(tau)
        return -(p5**2) / (4.0 * p1) * self.k3 + self.params.xi * p5

    def f31(self, u):
        """Integrand of the log of tilde-phi31, as a function of time-to-go."""
        p = self.params
        R = self.riccati(u)
        return (self.coeffs.a3 + p.kappa * p.delta * R
                + p.lambda_V * np.expm1(R * p.eta_VV)
                + p.lambda_c * np.expm1(R * p.eta_Vc)
                + p.lambda_c * np.exp(R * p.eta_Vc) * (p.eta_Lc**2 + 2.0 * p.eta_Lc))

    def tilde_phi31(self, t, tau):
        t = np.asarray(t, dtype=float)
        tau = np.asarray(tau, dtype=float)
        if np.any(t > tau):
            raise ValueError("tilde_phi31 requires t <= tau")
        u = tau - t
        G = gauss_legendre(self.f31, np.zeros_like(u), u, GL_ORDER)
        out = np.exp(G) * self.f3(tau)
        return out if out.ndim else float(out)

    def phi3(self, t: float, v, derivs: bool = False):
        """phi3(t, v); with ``derivs`` also d/dv and d2/dv2 (differentiated under the integral).

        ``v`` may be an array.  Returns an array of shape ``v.shape`` (or
        ``(3,) + v.shape`` with ``derivs``).
        """
        self._check_t(t)
        v = np.asarray(v, dtype=float)
        vv = v.reshape(-1)
        if self.params.xi == 0.0 or t == self.params.T:
            out = np.zeros((3, vv.size))
        else:
            def integrand(tau):
                u = tau - t
                R = self.riccati(u)
                base = self.tilde_phi31(t, tau)[:, None] * np.exp(R[:, None] * vv[None, :])
                if not derivs:
                    return base
                return np.concatenate([base, base * R[:, None], base * (R**2)[:, None]], axis=1)

            res = adaptive_simpson(integrand, t, self.params.T, QUAD_TOL)
            out = np.asarray(res.value).reshape(-1, vv.size)
        if derivs:
            return out[:3].reshape((3,) + v.shape)
        return out[0].reshape(v.shape) if v.ndim else float(out[0, 0])

    def phi3_with_error(self, t: float, v: float, tol: float = QUAD_TOL):
        """phi3 value and the quadrature's own error estimate."""
        t = float(t)

        def integrand(tau):
            return self.tilde_phi31(t, tau) * np.exp(self.riccati(tau - t) * v)

        res = adaptive_simpson(integrand, t, self.params.T, tol)
        return float(res.value), res.error

    # assembled quantities
    def components(self, t: float, v: float) -> dict:
        phi1, phi2, phi4, phi5, phi6 = self.phi_scalars(t)
        return {"phi1": phi1, "phi2": phi2, "phi3": self.phi3(t, v), "phi4": phi4,
                "phi5": phi5, "phi6": phi6}

    def value(self, t: float, x, l, v) -> float:
        phi1, phi2, phi4, phi5, phi6 = self.phi_scalars(t)
        phi3 = self.phi3(t, v)
        return phi1 * x * x + phi2 * x + phi3 * l * l + phi4 * l + phi5 * x * l + phi6

    def optimal_amount(self, t: float, x, l):
        phi1, phi2, _, phi5, _ = self.phi_scalars(t)
        return amount_from_phis(self.coeffs, phi1, phi2, phi5, x, l)

    def policy(self, state: State) -> Policy:
        amount = float(self.optimal_amount(state.t, state.x_bar, state.l_bar))
        if abs(state.x_bar) < SINGULAR_WEALTH:
            return Policy(None, amount)
        phi1, phi2, _, phi5, _ = self.phi_scalars(state.t)
        c, x, l = self.coeffs, state.x_bar, state.l_bar
        weight = (-(2 * phi1 * x + phi2 + phi5 * l) / (2 * phi1 * x) * c.varpi1 / c.varpi4
                  - phi5 * l / (2 * phi1 * x) * c.varpi2 / c.varpi4 - c.varpi3 / c.varpi4)
        return Policy(weight, amount)


def amount_from_phis(c: DerivedCoeffs, phi1, phi2, phi5, x, l):
    """Optimal amount in the stock, ``pi* x``; smooth through ``x = 0``."""
    return -((2 * phi1 * x + phi2 + phi5 * l) * c.varpi1 + phi5 * l * c.varpi2
             + 2 * phi1 * x * c.varpi3) / (2 * phi1 * c.varpi4)


# --------------------------------------------------------------------------- module API


@lru_cache(maxsize=32)
def solution(params: ModelParams) -> ClosedForm:
    return ClosedForm(params)


def tilde_phi31(t, tau, params: ModelParams):
    return solution(params).tilde_phi31(t, tau)


def phi3(t: float, v, params: ModelParams):
    return solution(params).phi3(t, v)


def phi_scalars(t: float, params: ModelParams):
    return solution(params).phi_scalars(t)


def value_function(state: State, params: ModelParams) -> float:
    return solution(params).value(state.t, state.x_bar, state.l_bar, state.v)


def optimal_policy(state: State, params: ModelParams) -> Policy:
    return solution(params).policy(state)
