"""Training objectives for distance-like fields.

The one-step loss penalizes the squared error of the one-step projection
``x - u(x) v(x)`` against the target, normalized by the squared pair
displacement (plus a stabilizer), which reweights supervision toward closer
targets.  The directional eikonal loss regresses ``v`` onto the smoothed
unit displacement ``(x - s) / sqrt(||x - s||^2 + c0)``, pinning the field's
offset and sign.  A plain and a time-reweighted flow-matching regression are
provided as baselines.

Each loss has a public numpy-facing wrapper plus a jax-traceable core
(``*_core``) used for parameter gradients; in gradient mode the cores
contain input-gradients of the network, so their parameter gradients are
second-order and must go through :func:`distfield.field.loss_gradients`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import jax.numpy as jnp

from .data import PairBatch, as_pair_arrays
from .field import FieldConfig, FieldModel, apply_uv, loss_gradients

FM_WEIGHT_MODES = ("none", "inverse_one_minus_t_sq")


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 0.01
    c0: float = 0.01
    lambda1: float = 0.1
    lambda2: float = 1.0
    fm_weight_mode: str = "none"
    unnormalized_osl: bool = False  # ablation: drop the one-step denominator

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be > 0")
        if not (self.c0 > 0):
            raise ValueError("c0 must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1/lambda2 must be >= 0")
        if self.fm_weight_mode not in FM_WEIGHT_MODES:
            raise ValueError(f"fm_weight_mode must be one of {FM_WEIGHT_MODES}")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "c0": self.c0,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "fm_weight_mode": self.fm_weight_mode,
            "unnormalized_osl": self.unnormalized_osl,
        }


def denoise(model, x: np.ndarray) -> np.ndarray:
    """One-step projection x - u(x) v(x); works on (D,) or (n, D)."""
    xa = np.asarray(x, dtype=np.float64)
    out = model.eval(xa)
    if xa.ndim == 1:
        return xa - out.u * out.v
    return xa - np.asarray(out.u)[:, None] * out.v


def one_step_core(config: FieldConfig, params, x, s, epsilon, unnormalized=False):
    u, v = apply_uv(config, params, x)
    resid = ((x - u[:, None] * v - s) ** 2).sum(axis=1)
    if unnormalized:
        return jnp.mean(resid)
    denom = ((x - s) ** 2).sum(axis=1) + epsilon
    return jnp.mean(resid / denom)


def eikonal_core(config: FieldConfig, params, x, s, c0):
    _, v = apply_uv(config, params, x)
    diff = x - s
    target = diff / jnp.sqrt((diff**2).sum(axis=1) + c0)[:, None]
    return jnp.mean(((v - target) ** 2).sum(axis=1))


def flow_matching_core(config: FieldConfig, params, x, s, x0, t, weight_mode):
    _, v = apply_uv(config, params, x)
    delta = s - x0
    sq = ((v - delta) ** 2).sum(axis=1)
    if weight_mode == "inverse_one_minus_t_sq":
        sq = sq * (1.0 - t) ** -2
    return jnp.mean(sq)


def combined_core(config: FieldConfig, params, x, s, cfg: LossConfig):
    total = 0.0
    if cfg.lambda1 != 0.0:
        total = total + cfg.lambda1 * one_step_core(
            config, params, x, s, cfg.epsilon, cfg.unnormalized_osl
        )
    if cfg.lambda2 != 0.0:
        total = total + cfg.lambda2 * eikonal_core(config, params, x, s, cfg.c0)
    return total


def one_step_loss(model: FieldModel, pairs, epsilon: float, unnormalized: bool = False) -> float:
    """Mean of ||denoise(x) - s||^2 / (||x - s||^2 + epsilon) over the batch."""
    if not (epsilon > 0):
        raise ValueError("epsilon must be > 0")
    b = as_pair_arrays(pairs)
    return float(
        one_step_core(
            model.config, jnp.asarray(model.params), jnp.asarray(b.x), jnp.asarray(b.s_data),
            epsilon, unnormalized,
        )
    )


def directional_eikonal_loss(model: FieldModel, pairs, c0: float) -> float:
    """Mean of ||v(x) - (x - s)/sqrt(||x - s||^2 + c0)||^2 over the batch."""
    if not (c0 > 0):
        raise ValueError("c0 must be > 0")
    b = as_pair_arrays(pairs)
    return float(
        eikonal_core(
            model.config, jnp.asarray(model.params), jnp.asarray(b.x), jnp.asarray(b.s_data), c0
        )
    )


def flow_matching_loss(model: FieldModel, pairs, weight_mode: str = "none") -> float:
    """Mean of w(t) ||v(x) - (s - x0)||^2 with w = 1 or (1 - t)^-2."""
    if weight_mode not in FM_WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {FM_WEIGHT_MODES}")
    b = as_pair_arrays(pairs)
    if np.any(b.t >= 1.0):
        raise ValueError("pairs with t >= 1 are outside the loss domain")
    return float(
        flow_matching_core(
            model.config, jnp.asarray(model.params), jnp.asarray(b.x), jnp.asarray(b.s_data),
            jnp.asarray(b.x0), jnp.asarray(b.t), weight_mode,
        )
    )


def combined_loss(model: FieldModel, pairs, cfg: LossConfig) -> float:
    """lambda1 * one-step + lambda2 * directional-eikonal."""
    b = as_pair_arrays(pairs)
    return float(
        combined_core(
            model.config, jnp.asarray(model.params), jnp.asarray(b.x), jnp.asarray(b.s_data), cfg
        )
    )


def combined_loss_gradient(model: FieldModel, pairs, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """(value, d/dparams) of the combined loss; exact, incl. second-order terms."""
    b = as_pair_arrays(pairs)
    x = jnp.asarray(b.x)
    s = jnp.asarray(b.s_data)
    val = combined_loss(model, b, cfg)
    grad = loss_gradients(model, lambda p: combined_core(model.config, p, x, s, cfg))
    return val, grad
