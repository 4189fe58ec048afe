"""Inference procedures over a field: sphere tracing, gradient descent,
adaptive-stop gradient descent, unadjusted Langevin, and tempered HMC.

All samplers operate on a batch of chains at once (a single start point is
promoted to a batch of one).  Every call that evaluates the field on the
batch counts as one NFE, so the reported NFE equals the per-sample number of
field evaluations regardless of batch width.  Random draws come from one
generator seeded per run, drawn in a fixed order, which makes batched runs
reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .field import NumericError

SAMPLER_KINDS = ("sphere_tracing", "gradient_descent", "adaptive_gd", "ula", "hmc")

# Analytic floor of the smoothed distance sqrt(d^2 + c0) at the default c0.
DEFAULT_STOP_THRESHOLD = 1.05 * math.sqrt(0.01)


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "sphere_tracing"
    eta: float = 1.0
    max_steps: int = 100
    stop_threshold: float = DEFAULT_STOP_THRESHOLD
    patience: int = 10

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"kind must be one of {SAMPLER_KINDS}")
        if not (self.eta >= 0):
            raise ValueError("eta must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.stop_threshold < 0:
            raise ValueError("stop_threshold must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class HmcConfig:
    mass: float = 1.0
    sigma: float = 0.25
    leapfrog_steps: int = 5
    leapfrog_eps: float = 0.2
    n_proposals: int = 16
    seed: int = 0

    def __post_init__(self):
        if min(self.mass, self.sigma, self.leapfrog_eps) <= 0:
            raise ValueError("mass, sigma, leapfrog_eps must be positive")
        if self.leapfrog_steps < 1 or self.n_proposals < 1:
            raise ValueError("leapfrog_steps and n_proposals must be >= 1")

    @property
    def nfe(self) -> int:
        return 1 + self.n_proposals * (self.leapfrog_steps + 1)


@dataclass
class Trajectory:
    """Recorded states of a (batched) sampling run.

    ``states`` has shape (T+1, n, D); ``u_values`` (T+1, n); ``step_norms``
    (T, n).  ``steps_taken`` holds the per-chain count of steps before the
    chain froze.  ``nfe`` counts batched field evaluations.
    """

    states: np.ndarray
    u_values: np.ndarray
    step_norms: np.ndarray
    nfe: int
    stopped_early: bool
    accept_count: int = 0
    steps_taken: np.ndarray | None = None
    metadata: dict = dc_field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.states.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def chain(self, i: int = 0) -> np.ndarray:
        return self.states[:, i, :]

    def save_csv(self, path: str | Path, chain: int = 0) -> None:
        """Export one chain: rows ``step,u,step_norm,x0,...,x{D-1}``."""
        d = self.states.shape[2]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "u", "step_norm"] + [f"x{j}" for j in range(d)])
            for k in range(self.states.shape[0]):
                sn = 0.0 if k == 0 else float(self.step_norms[k - 1, chain])
                w.writerow(
                    [k, repr(float(self.u_values[k, chain])), repr(sn)]
                    + [repr(float(v)) for v in self.states[k, chain]]
                )


def _as_batch(x0: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x0, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x.copy(), False


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite state at step {step}")


def _descent(model, x0, cfg: SamplerConfig, scale_by_u: bool, adaptive: bool) -> Trajectory:
    x, _ = _as_batch(x0)
    n = x.shape[0]
    states = [x.copy()]
    u_values = []
    step_norms = []
    active = np.ones(n, dtype=bool)
    inc_count = np.zeros(n, dtype=np.int64)
    steps_taken = np.zeros(n, dtype=np.int64)
    prev_u = None
    nfe = 0
    k = 0
    while True:
        u, v = model.eval_batch(x)
        nfe += 1
        u_values.append(u.copy())
        if adaptive:
            if prev_u is not None:
                inc_count = np.where(u > prev_u, inc_count + 1, 0)
                active &= inc_count < cfg.patience
            prev_u = u
        else:
            active &= u >= cfg.stop_threshold
        if k == cfg.max_steps or not active.any():
            break
        step = cfg.eta * v
        if scale_by_u:
            step = step * u[:, None]
        step = np.where(active[:, None], step, 0.0)
        x = x - step
        _check_finite(x, k + 1)
        steps_taken += active.astype(np.int64)
        states.append(x.copy())
        step_norms.append(np.linalg.norm(step, axis=1))
        k += 1
    return Trajectory(
        states=np.stack(states),
        u_values=np.stack(u_values),
        step_norms=np.stack(step_norms) if step_norms else np.zeros((0, n)),
        nfe=nfe,
        stopped_early=bool(np.all(steps_taken < cfg.max_steps)),
        steps_taken=steps_taken,
    )


def sphere_trace(model, x0, cfg: SamplerConfig) -> Trajectory:
    """Iterate x <- x - eta * u(x) * v(x) until max_steps or u < threshold."""
    return _descent(model, x0, cfg, scale_by_u=True, adaptive=False)


def grad_descent(model, x0, cfg: SamplerConfig) -> Trajectory:
    """Iterate x <- x - eta * v(x) until max_steps or u < threshold."""
    return _descent(model, x0, cfg, scale_by_u=False, adaptive=False)


def adaptive_gd(model, x0, cfg: SamplerConfig) -> Trajectory:
    """Gradient descent that freezes a chain after ``patience`` consecutive
    increases of u (counted on arrival at each new state)."""
    return _descent(model, x0, cfg, scale_by_u=False, adaptive=True)


def hmc_refine(model, x_init, hmc: HmcConfig, defer_initial_eval: bool = False) -> Trajectory:
    """Metropolis-adjusted HMC on the tempered potential U(x)/sigma^2.

    Each proposal runs ``leapfrog_steps`` leapfrog updates with momentum
    ~ N(0, mass*I) and the potential gradient scaled by 1/sigma^2, then
    accepts or rejects on the Hamiltonian difference
    H = U/sigma^2 + ||p||^2/(2*mass).  Rejected chains restore their previous
    state exactly.  NFE = 1 + n_proposals * (leapfrog_steps + 1); with
    ``defer_initial_eval`` the u-record of the start state is taken from the
    first proposal's own evaluation, saving the leading NFE (used when the
    caller just produced the start state from another sampler step).
    """
    x, _ = _as_batch(x_init)
    n, d = x.shape
    rng = np.random.default_rng(hmc.seed)
    inv_s2 = 1.0 / (hmc.sigma**2)
    m = hmc.mass
    eps = hmc.leapfrog_eps
    L = hmc.leapfrog_steps

    non_conservative = getattr(model, "config", None) is not None and getattr(
        model.config, "mode", "gradient"
    ) == "direct"

    nfe = 0
    states = [x.copy()]
    u_values = [None]
    if not defer_initial_eval:
        u, _ = model.eval_batch(x)
        nfe = 1
        u_values[0] = u.copy()
    step_norms = []
    accept_count = 0

    for j in range(hmc.n_proposals):
        u_cur, g_cur = model.eval_batch(x)
        nfe += 1
        if u_values[0] is None:
            u_values[0] = u_cur.copy()
        p0 = rng.normal(size=(n, d)) * math.sqrt(m)
        h_old = u_cur * inv_s2 + (p0**2).sum(axis=1) / (2.0 * m)

        p = p0 - 0.5 * eps * g_cur * inv_s2
        xp = x + eps * p / m
        for l in range(L):
            u_p, g_p = model.eval_batch(xp)
            nfe += 1
            if l < L - 1:
                p = p - eps * g_p * inv_s2
                xp = xp + eps * p / m
            else:
                p = p - 0.5 * eps * g_p * inv_s2
        _check_finite(xp, j + 1)
        h_new = u_p * inv_s2 + (p**2).sum(axis=1) / (2.0 * m)

        log_u = np.log(rng.uniform(size=n))
        accept = log_u < -(h_new - h_old)
        accept &= np.isfinite(h_new)
        accept_count += int(accept.sum())
        x = np.where(accept[:, None], xp, x)
        u = np.where(accept, u_p, u_cur)
        states.append(x.copy())
        u_values.append(u.copy())
        step_norms.append(np.linalg.norm(states[-1] - states[-2], axis=1))

    return Trajectory(
        states=np.stack(states),
        u_values=np.stack(u_values),
        step_norms=np.stack(step_norms),
        nfe=nfe,
        stopped_early=False,
        accept_count=accept_count,
        steps_taken=np.full(n, hmc.n_proposals, dtype=np.int64),
        metadata={
            "accept_rate": accept_count / (n * hmc.n_proposals),
            "non_conservative_potential": bool(non_conservative),
        },
    )


def ula_refine(
    model,
    x_init,
    cfg: SamplerConfig,
    sigma: float = 1.0,
    noise_scale: float = 1.0,
    seed: int = 0,
) -> Trajectory:
    """Unadjusted Langevin: x <- x - eta * v/sigma^2 + noise_scale*sqrt(2*eta)*xi."""
    x, _ = _as_batch(x_init)
    n, d = x.shape
    rng = np.random.default_rng(seed)
    inv_s2 = 1.0 / (sigma**2)
    states = [x.copy()]
    u_values = []
    step_norms = []
    nfe = 0
    for k in range(cfg.max_steps + 1):
        u, v = model.eval_batch(x)
        nfe += 1
        u_values.append(u.copy())
        if k == cfg.max_steps:
            break
        step = cfg.eta * v * inv_s2
        noise = noise_scale * math.sqrt(2.0 * cfg.eta) * rng.normal(size=(n, d))
        x = x - step + noise
        _check_finite(x, k + 1)
        states.append(x.copy())
        step_norms.append(np.linalg.norm(step - noise, axis=1))
    return Trajectory(
        states=np.stack(states),
        u_values=np.stack(u_values),
        step_norms=np.stack(step_norms) if step_norms else np.zeros((0, n)),
        nfe=nfe,
        stopped_early=False,
        steps_taken=np.full(n, cfg.max_steps, dtype=np.int64),
    )


def sweep_step_sizes(base_eta: float) -> list[float]:
    """The robustness grid {eta/2, eta, 2*eta, 4*eta}."""
    return [base_eta / 2.0, base_eta, 2.0 * base_eta, 4.0 * base_eta]


def run_pipeline(
    model,
    x_init,
    jump_eta: float = 1.0,
    hmc: HmcConfig | None = None,
) -> tuple[np.ndarray, int, Trajectory]:
    """One deterministic sphere-tracing jump followed by HMC refinement.

    The jump consumes one field evaluation; each HMC proposal consumes
    leapfrog_steps + 1, so the default configuration totals
    1 + 16 * 6 = 97 NFE.  Returns (final points, total NFE, hmc trajectory).
    """
    hmc = hmc or HmcConfig()
    x, _ = _as_batch(x_init)
    u0, v0 = model.eval_batch(x)
    x1 = x - jump_eta * u0[:, None] * v0
    _check_finite(x1, 1)
    refined = hmc_refine(model, x1, hmc, defer_initial_eval=True)
    return refined.final, 1 + refined.nfe, refined
