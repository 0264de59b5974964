"""Model parameters, validation and the derived coefficient blocks.

All coefficients are time-constant.  Parameters load from a flat JSON
document whose keys are exactly the field names of :class:`ModelParams`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path


@dataclass(frozen=True)
class ModelParams:
    # riskless asset: dS0/S0 = (m + zeta^2/2) dt + zeta dW_r, S0(0) = exp(r)
    m: float
    zeta: float
    r: float
    # stock
    mu_S: float
    sigma_SS: float
    eta_S: float
    lambda_S: float
    # salary
    mu_L: float
    sigma_LS: float
    eta_LL: float
    eta_Lc: float
    lambda_L: float
    lambda_c: float
    # salary variance (additive jumps)
    kappa: float
    delta: float
    sigma_V: float
    eta_VV: float
    eta_Vc: float
    lambda_V: float
    # price index
    mu_Pi: float
    sigma_Pi: float
    eta_Pi: float
    lambda_Pi: float
    # correlations
    rho_Pir: float
    rho_LV: float
    # plan and objective
    xi: float
    lambda_mort: float
    T: float
    alpha1: float
    beta1: float
    X1_star: float
    alpha2: float
    beta2: float
    X2_star: float
    # initial real state
    X0_real: float
    L0_real: float
    V0: float

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def k_Pi(self) -> float:
        """Real-quantity jump factor eta_Pi^2 - eta_Pi applied on inflation jumps."""
        return self.eta_Pi**2 - self.eta_Pi


@dataclass(frozen=True)
class DerivedCoeffs:
    varpi1: float
    varpi2: float
    varpi3: float
    varpi4: float
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class State:
    t: float
    x_bar: float
    l_bar: float
    v: float


class InvalidParamsError(ValueError):
    """Raised with the complete list of violated constraints."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid model parameters:\n  " + "\n  ".join(self.violations))


FIELD_NAMES = tuple(f.name for f in fields(ModelParams))


def check(params: ModelParams) -> list[str]:
    """Return every violated constraint as a readable string (empty if valid)."""
    p = params
    out: list[str] = []

    def need(ok: bool, rule: str, **vals):
        if not ok:
            shown = ", ".join(f"{k}={v!r}" for k, v in vals.items())
            out.append(f"{rule} ({shown})")

    for name in FIELD_NAMES:
        val = getattr(p, name)
        if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
            out.append(f"{name} must be a finite number ({name}={val!r})")
    if out:
        return out

    for name in ("eta_S", "eta_LL", "eta_Lc", "eta_Pi"):
        need(getattr(p, name) > -1, f"{name} > -1", **{name: getattr(p, name)})
    need(p.eta_VV >= 0, "eta_VV >= 0", eta_VV=p.eta_VV)
    need(p.eta_Vc >= 0, "eta_Vc >= 0", eta_Vc=p.eta_Vc)
    need(2 * p.kappa * p.delta > p.sigma_V**2, "2*kappa*delta > sigma_V^2",
         kappa=p.kappa, delta=p.delta, sigma_V=p.sigma_V)
    need(-1 < p.rho_Pir < 1, "rho_Pir in (-1, 1)", rho_Pir=p.rho_Pir)
    need(-1 < p.rho_LV < 1, "rho_LV in (-1, 1)", rho_LV=p.rho_LV)
    need(0 <= p.xi <= 1, "xi in [0, 1]", xi=p.xi)
    need(p.T > 0, "T > 0", T=p.T)
    need(p.lambda_mort >= 0, "lambda_mort >= 0", lambda_mort=p.lambda_mort)
    need(p.alpha1 > 0, "alpha1 > 0", alpha1=p.alpha1)
    need(p.alpha2 > 0, "alpha2 > 0", alpha2=p.alpha2)
    need(p.beta1 < 0, "beta1 < 0", beta1=p.beta1)
    need(p.beta2 < 0, "beta2 < 0", beta2=p.beta2)
    need(p.V0 > 0, "V0 > 0", V0=p.V0)
    need(p.X0_real > 0, "X0_real > 0", X0_real=p.X0_real)
    need(p.L0_real > 0, "L0_real > 0", L0_real=p.L0_real)
    for name in ("lambda_S", "lambda_L", "lambda_c", "lambda_V", "lambda_Pi"):
        need(getattr(p, name) >= 0, f"{name} >= 0", **{name: getattr(p, name)})
    need(p.sigma_V >= 0, "sigma_V >= 0", sigma_V=p.sigma_V)

    varpi4 = p.zeta**2 + p.sigma_SS**2 + p.lambda_S * p.eta_S**2
    need(varpi4 > 0, "varpi4 > 0", zeta=p.zeta, sigma_SS=p.sigma_SS,
         lambda_S=p.lambda_S, eta_S=p.eta_S)

    # phi3 is only finite while the variance Riccati exponent stays bounded on [0, T]
    from .closedform import riccati_blowup_horizon

    horizon = riccati_blowup_horizon(p)
    need(horizon > p.T, "Riccati exponent finite on [0, T]", blowup_horizon=horizon, T=p.T)
    return out


def validate(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged if valid, else raise with all violations."""
    violations = check(params)
    if violations:
        raise InvalidParamsError(violations)
    return params


def derive_varpi(p: ModelParams) -> tuple[float, float, float, float]:
    zz = p.zeta * p.sigma_Pi * p.rho_Pir
    varpi1 = p.mu_S - (p.m + p.zeta**2 / 2) + zz + p.lambda_S * p.eta_S
    varpi2 = zz + p.sigma_SS * p.sigma_LS
    varpi3 = zz - p.zeta**2
    varpi4 = p.zeta**2 + p.sigma_SS**2 + p.lambda_S * p.eta_S**2
    return varpi1, varpi2, varpi3, varpi4


def derive_a(p: ModelParams, varpi: tuple[float, float, float, float]) -> tuple[float, ...]:
    w1, w2, w3, w4 = varpi
    lam = p.lambda_mort
    k = p.k_Pi
    k2 = k**2 + 2 * k  # (1 + k)^2 - 1
    zz = p.zeta * p.sigma_Pi * p.rho_Pir
    r0 = p.m + p.zeta**2 / 2
    sP2 = p.sigma_Pi**2

    a1 = (p.zeta**2 - 4 * zz - lam + 2 * (r0 - p.mu_Pi + sP2) + sP2
          + p.lambda_Pi * k2 - (w1 + w3) ** 2 / w4)
    a2 = r0 - p.mu_Pi + sP2 - zz - lam + p.lambda_Pi * k - w1 * (w1 + w3) / w4
    a3 = (2 * (p.mu_L - p.mu_Pi + sP2) + p.sigma_LS**2 + sP2 - lam
          + p.lambda_L * p.eta_LL**2 + 2 * p.lambda_L * p.eta_LL + p.lambda_Pi * k2)
    a4 = p.mu_L - p.mu_Pi + sP2 - lam + p.lambda_L * p.eta_LL + p.lambda_Pi * k
    a5 = (r0 - 2 * p.mu_Pi + 3 * sP2 - 2 * zz + p.mu_L + p.lambda_L * p.eta_LL
          + p.lambda_Pi * k2 - lam - (w1**2 + w1 * w2 + w1 * w3 + w2 * w3) / w4)
    return a1, a2, a3, a4, a5


def derive(p: ModelParams) -> DerivedCoeffs:
    varpi = derive_varpi(p)
    return DerivedCoeffs(*varpi, *derive_a(p, varpi))


def params_from_dict(data: dict) -> ModelParams:
    unknown = sorted(set(data) - set(FIELD_NAMES))
    missing = [n for n in FIELD_NAMES if n not in data]
    problems = [f"unknown key {k!r}" for k in unknown] + [f"missing key {k!r}" for k in missing]
    if problems:
        raise InvalidParamsError(problems)
    return ModelParams(**{n: data[n] for n in FIELD_NAMES})


def load_params(path: str | Path) -> ModelParams:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise InvalidParamsError(["config must be a JSON object"])
    return params_from_dict(data)


def baseline_path():
    return resources.files("dcpension") / "data" / "baseline.json"


def baseline() -> ModelParams:
    """The shipped baseline configuration."""
    return params_from_dict(json.loads(baseline_path().read_text()))
