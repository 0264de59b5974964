import json
import math

import pytest

from dcpension.model import baseline


@pytest.fixture(scope="session")
def base():
    return baseline()


def riccati_sets():
    """Parameter sets realising a positive, zero and negative Riccati discriminant."""
    p = baseline()
    s, rho = p.sigma_V, p.rho_LV
    zero = p.replace(kappa=2 * s * rho + math.sqrt(2) * s, delta=0.2)  # b = -sqrt(2) sigma_V
    negative = p.replace(kappa=0.1, delta=0.5)
    return {"positive": p, "zero": zero, "negative": negative}


def zero_noise(p, mu_Pi=None):
    """No diffusion or jumps reach real wealth and the optimal weight is 0."""
    q = p.replace(zeta=0.0, mu_S=p.m, lambda_S=0.0, sigma_Pi=0.0, lambda_Pi=0.0, xi=0.0)
    return q if mu_Pi is None else q.replace(mu_Pi=mu_Pi)


@pytest.fixture
def config_file(tmp_path):
    def write(params, name="params.json"):
        path = tmp_path / name
        path.write_text(json.dumps(params.to_dict()))
        return str(path)
    return write
