"""Differentiable scalar/direction field networks.

A field model maps a point ``x`` to a distance-like scalar ``u(x)`` and a
direction ``v(x)``.  Two wirings are supported:

- ``gradient`` mode: a single scalar MLP; ``v`` is the exact input-gradient
  of ``u``, obtained by reverse-mode differentiation.  Parameter gradients of
  losses that contain ``v`` therefore involve second-order derivatives,
  handled exactly by nesting automatic differentiation (never by finite
  differences).
- ``direct`` mode: a shared trunk with separate scalar and direction heads;
  ``u`` and ``v`` are independent outputs.

All math runs in float64.  Models are immutable; evaluation is a pure
function of (params, input).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp

CHECKPOINT_VERSION = 1

ACTIVATIONS = {
    "swish": jax.nn.swish,
    "selu": jax.nn.selu,
    "tanh": jnp.tanh,
}


class ConfigError(ValueError):
    """Invalid field configuration."""


class ShapeError(ValueError):
    """Input shape does not match the model."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in a numeric computation."""


@dataclass(frozen=True)
class FieldConfig:
    input_dim: int
    hidden_widths: tuple[int, ...] = (128, 128, 128)
    activation: str = "swish"
    mode: str = "gradient"
    seed: int = 0
    output_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise ConfigError("hidden_widths must be a nonempty list of positive ints")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {tuple(ACTIVATIONS)}")
        if self.mode not in ("gradient", "direct"):
            raise ConfigError("mode must be 'gradient' or 'direct'")
        if not (self.output_scale > 0):
            raise ConfigError("output_scale must be positive")

    def layer_shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        """(weight, bias) shapes: trunk layers, scalar head, then direction head."""
        shapes = []
        prev = self.input_dim
        for w in self.hidden_widths:
            shapes.append(((w, prev), (w,)))
            prev = w
        shapes.append(((1, prev), (1,)))
        if self.mode == "direct":
            shapes.append(((self.input_dim, prev), (self.input_dim,)))
        return shapes

    @property
    def param_count(self) -> int:
        return sum(w[0] * w[1] + b[0] for (w, b) in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "mode": self.mode,
            "seed": self.seed,
            "output_scale": self.output_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "FieldConfig":
        return FieldConfig(
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(d["hidden_widths"]),
            activation=str(d["activation"]),
            mode=str(d["mode"]),
            seed=int(d["seed"]),
            output_scale=float(d["output_scale"]),
        )


@dataclass(frozen=True)
class FieldOutput:
    u: float | np.ndarray
    v: np.ndarray


def _split_params(config: FieldConfig, params):
    mats = []
    i = 0
    for (wsh, bsh) in config.layer_shapes():
        wn = wsh[0] * wsh[1]
        W = params[i : i + wn].reshape(wsh)
        i += wn
        b = params[i : i + bsh[0]]
        i += bsh[0]
        mats.append((W, b))
    return mats


def _scalar_u(config: FieldConfig, params, x):
    """u at a single point; traceable in both params and x."""
    act = ACTIVATIONS[config.activation]
    layers = _split_params(config, params)
    n_trunk = len(config.hidden_widths)
    h = x
    for (W, b) in layers[:n_trunk]:
        h = act(W @ h + b)
    Wu, bu = layers[n_trunk]
    return (Wu @ h + bu)[0]


def _uv_single(config: FieldConfig, params, x):
    """(u, v) at a single point; traceable in both params and x."""
    if config.mode == "gradient":
        u, v = jax.value_and_grad(lambda xx: _scalar_u(config, params, xx))(x)
        return u, v
    act = ACTIVATIONS[config.activation]
    layers = _split_params(config, params)
    n_trunk = len(config.hidden_widths)
    h = x
    for (W, b) in layers[:n_trunk]:
        h = act(W @ h + b)
    Wu, bu = layers[n_trunk]
    Wv, bv = layers[n_trunk + 1]
    u = (Wu @ h + bu)[0]
    v = config.output_scale * (Wv @ h + bv)
    return u, v


@lru_cache(maxsize=32)
def _jitted_eval(config: FieldConfig):
    def batched(params, xs):
        return jax.vmap(lambda x: _uv_single(config, params, x))(xs)

    return jax.jit(batched)


@dataclass(frozen=True)
class FieldModel:
    """Immutable network: configuration plus a flat float64 parameter vector."""

    config: FieldConfig
    params: np.ndarray

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64)
        if p.ndim != 1 or p.size != self.config.param_count:
            raise ConfigError(
                f"params must be a flat vector of length {self.config.param_count}, got {p.shape}"
            )
        if not np.all(np.isfinite(p)):
            raise NumericError("params must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @property
    def param_count(self) -> int:
        return self.params.size

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    def with_params(self, params: np.ndarray) -> "FieldModel":
        return replace(self, params=np.array(params, dtype=np.float64))

    def eval(self, x: np.ndarray) -> FieldOutput:
        """Evaluate (u, v) at one point (D,) or a batch (n, D)."""
        xa = np.asarray(x, dtype=np.float64)
        single = xa.ndim == 1
        xa = np.atleast_2d(xa)
        if xa.ndim != 2 or xa.shape[1] != self.input_dim:
            raise ShapeError(f"expected points of dimension {self.input_dim}, got shape {np.shape(x)}")
        if not np.all(np.isfinite(xa)):
            raise NumericError("field input must be finite")
        fn = _jitted_eval(self.config)
        u, v = fn(jnp.asarray(self.params), jnp.asarray(xa))
        u = np.asarray(u)
        v = np.asarray(v)
        if single:
            return FieldOutput(u=float(u[0]), v=v[0])
        return FieldOutput(u=u, v=v)

    def eval_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.eval(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return np.asarray(out.u), out.v


def init_field(config: FieldConfig) -> FieldModel:
    """He-style uniform fan-in initialization, deterministic in config.seed.

    Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases zero.  The
    direction head (direct mode) is initialized the same way and rescaled by
    ``output_scale`` at evaluation time.
    """
    rng = np.random.default_rng(config.seed)
    chunks = []
    for (wsh, bsh) in config.layer_shapes():
        fan_in = wsh[1]
        bound = math.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=wsh[0] * wsh[1]))
        chunks.append(np.zeros(bsh[0]))
    return FieldModel(config=config, params=np.concatenate(chunks))


def loss_gradients(model: FieldModel, loss_fn: Callable, *args) -> np.ndarray:
    """Exact gradient of ``loss_fn(params, *args)`` w.r.t. the flat params.

    ``loss_fn`` must be jax-traceable and return a scalar; it may evaluate
    the field through :func:`apply_uv` so that gradient-mode losses contain
    input-gradients of the network (their parameter gradient then requires
    nested differentiation, which jax performs exactly).
    """
    g = jax.grad(loss_fn)(jnp.asarray(model.params), *args)
    g = np.asarray(g)
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericError(f"non-finite loss gradient at parameter index {bad}")
    return g


def apply_uv(config: FieldConfig, params, xs):
    """Traceable batched (u, v): xs of shape (n, D) -> ((n,), (n, D))."""
    return jax.vmap(lambda x: _uv_single(config, params, x))(xs)


def save_checkpoint(model: FieldModel, path: str | Path) -> None:
    """Write config + params as JSON; floats round-trip bit-exactly."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": [float(v) for v in model.params],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> FieldModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    config = FieldConfig.from_dict(doc["config"])
    return FieldModel(config=config, params=np.array(doc["params"], dtype=np.float64))


class RadialField:
    """Closed-form smoothed distance field to a finite point set.

    u(x) = sign * sqrt(min_i ||x - s_i||^2 + offset) and v = grad u =
    (x - s*) / u, where s* is the closest set point.  Satisfies the same
    one-step projection x - u*v = s* for every offset >= 0 and sign; used as
    the ground-truth oracle for samplers and distance-error metrics.
    """

    def __init__(self, points: np.ndarray, offset: float = 0.0, sign: float = 1.0):
        self.points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if offset < 0:
            raise ConfigError("offset must be >= 0")
        if sign not in (1.0, -1.0, 1, -1):
            raise ConfigError("sign must be +1 or -1")
        self.offset = float(offset)
        self.sign = float(sign)

    @property
    def input_dim(self) -> int:
        return self.points.shape[1]

    def eval_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d2 = ((x[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argmin(d2, axis=1)
        g = d2[np.arange(len(x)), nearest]
        u = self.sign * np.sqrt(g + self.offset)
        if np.any(u == 0.0):
            raise NumericError("field value is zero: direction undefined (offset=0 on the set)")
        v = (x - self.points[nearest]) / u[:, None]
        return u, v

    def eval(self, x: np.ndarray) -> FieldOutput:
        xa = np.asarray(x, dtype=np.float64)
        u, v = self.eval_batch(np.atleast_2d(xa))
        if xa.ndim == 1:
            return FieldOutput(u=float(u[0]), v=v[0])
        return FieldOutput(u=u, v=v)
