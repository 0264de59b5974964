"""Optimal DC pension investment under jump diffusions with common-shock dependence."""

from .closedform import ClosedForm, Policy, optimal_policy, phi3, phi_scalars, riccati_phi32, value_function
from .model import (DerivedCoeffs, InvalidParamsError, ModelParams, State, baseline, derive, derive_a,
                    derive_varpi, load_params, validate)

__all__ = [
    "ClosedForm", "Policy", "optimal_policy", "phi3", "phi_scalars", "riccati_phi32", "value_function",
    "DerivedCoeffs", "InvalidParamsError", "ModelParams", "State", "baseline", "derive", "derive_a",
    "derive_varpi", "load_params", "validate",
]
