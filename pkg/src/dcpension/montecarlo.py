"""Monte Carlo simulation of real wealth, real salary and salary variance.

Paths are simulated in fixed-size blocks.  Block ``j`` draws from its own
stream keyed by ``(seed, j)``, blocks are reduced in index order, so results
only depend on ``(seed, n_paths, steps_per_year)`` and the policy never
changes which random numbers are consumed (common random numbers across
policies).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .closedform import amount_from_phis, solution
from .model import ModelParams

BLOCK_SIZE = 8192
MAX_ABORT_FRACTION = 1e-3
MODES = ("written", "exact")
PROBE_OFFSETS = (0.0, 0.05, -0.05, 0.1, -0.1, 0.25, -0.25)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicySpec:
    kind: str = "optimal"  # "optimal" | "constant" | "perturbed"
    value: float = 0.0     # weight for "constant", offset on the weight for "perturbed"

    def __post_init__(self):
        if self.kind not in ("optimal", "constant", "perturbed"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise ValueError("policy parameter must be finite")

    @classmethod
    def parse(cls, text: str) -> "PolicySpec":
        """Parse ``optimal``, ``constant:<w>`` or ``perturbed:<d>``."""
        kind, _, arg = text.partition(":")
        if kind == "optimal" and not arg:
            return cls("optimal")
        if kind in ("constant", "perturbed") and arg:
            return cls(kind, float(arg))
        raise ValueError(f"bad policy spec {text!r}")

    def __str__(self):
        return self.kind if self.kind == "optimal" else f"{self.kind}:{self.value!r}"


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    steps_per_year: int = 252
    seed: int = 0
    policy: PolicySpec = PolicySpec()
    mode: str = "written"

    def __post_init__(self):
        if self.n_paths < 1 or self.steps_per_year < 1:
            raise ValueError("n_paths and steps_per_year must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class ObjectiveEstimate:
    mean: float
    std_error: float
    n_paths: int
    n_aborted: int = 0

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n_paths": self.n_paths,
                "n_aborted": self.n_aborted}


@dataclass
class StepIncrements:
    dW_r: np.ndarray
    dW_S: np.ndarray
    dW_L: np.ndarray
    dW_V: np.ndarray
    dW_Pi: np.ndarray
    dN_S: np.ndarray
    dN_L: np.ndarray
    dN_c: np.ndarray
    dN_V: np.ndarray
    dN_Pi: np.ndarray


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=(block,))))


def jump_intensities(p: ModelParams) -> np.ndarray:
    return np.array([p.lambda_S, p.lambda_L, p.lambda_c, p.lambda_V, p.lambda_Pi], dtype=float)


class _JumpSampler:
    """Five independent Poisson counts per path via their superposition.

    One uniform decides the total count by inverse CDF; only paths with at
    least one event draw a multinomial split across the five processes.
    """

    def __init__(self, intensities: np.ndarray, dt: float):
        self.total = float(intensities.sum()) * dt
        self.probs = intensities / intensities.sum() if self.total > 0 else None
        if self.total > 0:
            k = np.arange(64)
            logpmf = -self.total + k * math.log(self.total) - np.array([math.lgamma(i + 1) for i in k])
            self.cdf = np.cumsum(np.exp(logpmf))
            self.cdf = self.cdf[: int(np.searchsorted(self.cdf, 1.0 - 1e-18)) + 1]

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        counts = np.zeros((5, size), dtype=np.int64)
        if self.total == 0:
            return counts
        u = rng.random(size)
        hit = np.flatnonzero(u >= self.cdf[0])
        if hit.size:
            n = np.searchsorted(self.cdf, u[hit], side="right")
            counts[:, hit] = rng.multinomial(n, self.probs).T
        return counts


def _gaussians(rng, size, dt, p: ModelParams, buf=None):
    z = rng.standard_normal((5, size)) if buf is None else rng.standard_normal(out=buf)
    z *= math.sqrt(dt)
    # Cholesky pairs: row 3 becomes dW_V (paired with dW_L), row 4 becomes dW_Pi (paired with dW_r)
    z[3] *= math.sqrt(1.0 - p.rho_LV**2)
    z[3] += p.rho_LV * z[2]
    z[4] *= math.sqrt(1.0 - p.rho_Pir**2)
    z[4] += p.rho_Pir * z[0]
    return z[0], z[1], z[2], z[3], z[4]


def draw_increments(rng: np.random.Generator, dt: float, params: ModelParams, size: int,
                    sampler: _JumpSampler | None = None, buf: np.ndarray | None = None) -> StepIncrements:
    """Correlated Brownian increments (Cholesky pairs (r, Pi) and (L, V)) and Poisson counts."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    sampler = sampler or _JumpSampler(jump_intensities(params), dt)
    gauss = _gaussians(rng, size, dt, params, buf)
    n = sampler(rng, size)
    return StepIncrements(*gauss, n[0], n[1], n[2], n[3], n[4])


# --------------------------------------------------------------------------- one Euler step


def step_variance(v, inc: StepIncrements, dt: float, p: ModelParams):
    vp = np.maximum(v, 0.0)
    v_new = v + p.kappa * (p.delta - vp) * dt + p.sigma_V * np.sqrt(vp) * inc.dW_V
    v_new = v_new + p.eta_VV * inc.dN_V + p.eta_Vc * inc.dN_c
    return np.maximum(v_new, 0.0)


def step_state(x, l, v, inc: StepIncrements, amount, dt: float, p: ModelParams):
    """Euler step of (real wealth, real salary, variance); ``amount`` = pi x at the left limit."""
    r0 = p.m + 0.5 * p.zeta**2
    zz = p.zeta * p.sigma_Pi * p.rho_Pir
    k = p.k_Pi
    sP2 = p.sigma_Pi**2
    vp = np.maximum(v, 0.0)

    v_new = step_variance(v, inc, dt, p)
    l_new = l * (1.0 + (p.mu_L - p.mu_Pi + sP2) * dt + p.sigma_LS * inc.dW_S + np.sqrt(vp) * inc.dW_L
                 - p.sigma_Pi * inc.dW_Pi + p.eta_LL * inc.dN_L + p.eta_Lc * inc.dN_c + k * inc.dN_Pi)
    x_new = (x + (x * (r0 - p.mu_Pi + sP2 - zz) + amount * (p.mu_S - r0 + zz) + p.xi * l) * dt
             + (x - amount) * p.zeta * inc.dW_r + amount * p.sigma_SS * inc.dW_S - x * p.sigma_Pi * inc.dW_Pi
             + amount * p.eta_S * inc.dN_S + x * k * inc.dN_Pi)
    return x_new, l_new, v_new


def step_nominal(X, L, Pi, v, inc: StepIncrements, amount, dt: float, p: ModelParams):
    """Euler step of nominal wealth, nominal salary and the price index; ``amount`` is nominal."""
    r0 = p.m + 0.5 * p.zeta**2
    vp = np.maximum(v, 0.0)
    v_new = step_variance(v, inc, dt, p)
    L_new = L * (1.0 + p.mu_L * dt + p.sigma_LS * inc.dW_S + np.sqrt(vp) * inc.dW_L
                 + p.eta_LL * inc.dN_L + p.eta_Lc * inc.dN_c)
    X_new = (X + (X * r0 + amount * (p.mu_S - r0) + p.xi * L) * dt + (X - amount) * p.zeta * inc.dW_r
             + amount * p.sigma_SS * inc.dW_S + amount * p.eta_S * inc.dN_S)
    Pi_new = Pi * (1.0 + p.mu_Pi * dt + p.sigma_Pi * inc.dW_Pi + p.eta_Pi * inc.dN_Pi)
    return X_new, L_new, Pi_new, v_new


# --------------------------------------------------------------------------- objective


def running_weights(lam: float, h: float) -> tuple[float, float]:
    """Exact weights of a linear interpolant of the loss against lam exp(-lam u) on [0, h]."""
    x = lam * h
    total = -math.expm1(-x)
    if abs(x) < 1e-4:
        w1 = x / 2 - x * x / 3 + x**3 / 8 - x**4 / 30
    else:
        w1 = (total - x * math.exp(-x)) / x
    return total - w1, w1


@dataclass
class SimResult:
    objective: np.ndarray
    terminal_x_bar: np.ndarray
    running_loss: np.ndarray
    terminal_loss: np.ndarray
    aborted: np.ndarray

    def estimate(self) -> ObjectiveEstimate:
        good = self.objective[~self.aborted]
        n = good.size
        if n == 0:
            raise SimulationError("every path aborted")
        mean = float(np.mean(good))
        if n == 1 or np.all(good == good[0]):
            se = 0.0
        else:
            se = float(np.std(good, ddof=1) / math.sqrt(n))
        return ObjectiveEstimate(mean, se, n, int(self.aborted.sum()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "terminal_x_bar", "running_loss", "terminal_loss"])
            for i in range(self.objective.size):
                w.writerow([i, f"{self.terminal_x_bar[i]:.17g}", f"{self.running_loss[i]:.17g}",
                            f"{self.terminal_loss[i]:.17g}"])


def _time_grid(p: ModelParams, steps_per_year: int):
    n_steps = max(1, int(round(p.T * steps_per_year)))
    return n_steps, p.T / n_steps


def simulate(config: SimConfig, params: ModelParams) -> SimResult:
    p = params
    n_steps, dt = _time_grid(p, config.steps_per_year)
    grid = np.linspace(0.0, p.T, n_steps + 1)
    cf = solution(p)
    coeffs = cf.coeffs
    policy = config.policy
    if policy.kind != "constant":
        phi1 = cf.phi1(grid)
        phi2 = cf.phi2(grid)
        phi5 = cf.phi5_gl(grid)

    lam = p.lambda_mort
    w0, w1 = running_weights(lam, dt)
    disc = np.exp(-lam * grid)
    sampler = _JumpSampler(jump_intensities(p), dt)

    # the constant alpha2^2 part of the running loss is integrated in closed form; only the
    # state-dependent remainder goes through the quadrature
    constant_part = p.alpha2**2 * -math.expm1(-lam * p.T)

    def loss2(x):
        d = p.beta2 * (x - p.X2_star)
        return d * (2 * p.alpha2 + d)

    outs = []
    n_blocks = -(-config.n_paths // BLOCK_SIZE)
    for b in range(n_blocks):
        size = min(BLOCK_SIZE, config.n_paths - b * BLOCK_SIZE)
        rng = block_rng(config.seed, b)
        buf = np.empty((5, size))
        x = np.full(size, p.X0_real)
        l = np.full(size, p.L0_real)
        v = np.full(size, p.V0)
        if config.mode == "exact":
            X, L, Pi = x.copy(), l.copy(), np.ones(size)
        running = np.zeros(size)
        prev_loss = loss2(x)
        with np.errstate(all="ignore"):
            for n in range(n_steps):
                if policy.kind == "constant":
                    amount = policy.value * x
                else:
                    amount = amount_from_phis(coeffs, phi1[n], phi2[n], phi5[n], x, l)
                    if policy.kind == "perturbed":
                        amount = amount + policy.value * x
                inc = draw_increments(rng, dt, p, size, sampler, buf)
                if config.mode == "written":
                    x, l, v = step_state(x, l, v, inc, amount, dt, p)
                else:
                    X, L, Pi, v = step_nominal(X, L, Pi, v, inc, amount * Pi, dt, p)
                    x, l = X / Pi, L / Pi
                cur_loss = loss2(x)
                running += disc[n] * (w0 * prev_loss + w1 * cur_loss)
                prev_loss = cur_loss
            running = constant_part + running
            terminal = (p.alpha1 + p.beta1 * (x - p.X1_star)) ** 2 * disc[-1]
            total = running + terminal
        outs.append((total, x, running, terminal))

    total, x, running, terminal = (np.concatenate(col) for col in zip(*outs))
    aborted = ~np.isfinite(total)
    if aborted.sum() > MAX_ABORT_FRACTION * config.n_paths:
        raise SimulationError(f"{int(aborted.sum())} of {config.n_paths} paths produced a non-finite state")
    return SimResult(total, x, running, terminal, aborted)


def estimate_objective(config: SimConfig, params: ModelParams) -> ObjectiveEstimate:
    return simulate(config, params).estimate()


def convexity_probe(params: ModelParams, n_paths: int, steps_per_year: int = 252, seed: int = 42,
                    offsets=PROBE_OFFSETS, n_se: float = 2.0) -> dict:
    """J under perturbed-optimal(d) with common random numbers.

    On each side of d=0 the estimates must be non-decreasing in |d|; a step
    may dip by at most ``n_se`` standard errors of the paired path-wise
    difference (the relevant error under common random numbers).
    """
    runs = {d: simulate(SimConfig(n_paths, steps_per_year, seed, PolicySpec("perturbed", d)), params)
            for d in offsets}
    steps = []
    for sign in (1.0, -1.0):
        side = sorted((d for d in offsets if d * sign >= 0), key=abs)
        for lo, hi in zip(side, side[1:]):
            ok_paths = ~(runs[lo].aborted | runs[hi].aborted)
            diff = runs[hi].objective[ok_paths] - runs[lo].objective[ok_paths]
            se = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
            mean = float(np.mean(diff))
            steps.append({"from": lo, "to": hi, "increase": mean, "std_error": se,
                          "passed": bool(mean >= -n_se * se)})
    return {"passed": all(s["passed"] for s in steps), "n_paths": n_paths,
            "estimates": {repr(d): r.estimate().to_dict() for d, r in runs.items()}, "steps": steps}


# --------------------------------------------------------------------------- moments


def analytic_moments(params: ModelParams, t: float) -> tuple[float, float, float]:
    """(E[S(t)]/S(0), E[L(t)]/L(0), E[V(t)]) for the nominal stock, nominal salary and variance."""
    if t < 0:
        raise ValueError("t must be >= 0")
    p = params
    es = math.exp((p.mu_S + p.lambda_S * p.eta_S) * t)
    el = math.exp((p.mu_L + p.lambda_L * p.eta_LL + p.lambda_c * p.eta_Lc) * t)
    jumps = p.lambda_V * p.eta_VV + p.lambda_c * p.eta_Vc
    if p.kappa == 0:
        ev = p.V0 + (p.kappa * p.delta + jumps) * t
    else:
        theta = p.delta + jumps / p.kappa
        ev = theta + (p.V0 - theta) * math.exp(-p.kappa * t)
    return es, el, ev


def simulate_moments(params: ModelParams, times, n_paths: int, steps_per_year: int = 252, seed: int = 0) -> dict:
    """Sample means and standard errors of S/S0, L/L0 and V at the requested times."""
    p = params
    times = sorted(float(t) for t in times)
    dt = 1.0 / steps_per_year
    marks = {int(round(t * steps_per_year)): t for t in times}
    n_steps = max(marks)
    sampler = _JumpSampler(jump_intensities(p), dt)
    sums = {t: np.zeros((3, 2)) for t in times}
    n_blocks = -(-n_paths // BLOCK_SIZE)
    for b in range(n_blocks):
        size = min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE)
        rng = block_rng(seed, b)
        s = np.ones(size)
        l = np.ones(size)
        v = np.full(size, p.V0)
        for n in range(1, n_steps + 1):
            inc = draw_increments(rng, dt, p, size, sampler)
            vp = np.maximum(v, 0.0)
            s = s * (1.0 + p.mu_S * dt + p.sigma_SS * inc.dW_S + p.eta_S * inc.dN_S)
            l = l * (1.0 + p.mu_L * dt + p.sigma_LS * inc.dW_S + np.sqrt(vp) * inc.dW_L
                     + p.eta_LL * inc.dN_L + p.eta_Lc * inc.dN_c)
            v = step_variance(v, inc, dt, p)
            if n in marks:
                arr = np.stack([s, l, v])
                sums[marks[n]] += np.stack([arr.sum(axis=1), (arr**2).sum(axis=1)], axis=1)
    out = {}
    for t, acc in sums.items():
        mean = acc[:, 0] / n_paths
        var = (acc[:, 1] - n_paths * mean**2) / (n_paths - 1)
        se = np.sqrt(np.maximum(var, 0.0) / n_paths)
        out[t] = {"S": (mean[0], se[0]), "L": (mean[1], se[1]), "V": (mean[2], se[2])}
    return out
