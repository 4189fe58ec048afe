"""Optimization loop: pair sampling -> combined loss -> exact gradients -> Adam/SGD."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path

import numpy as np
import jax
import jax.numpy as jnp

from .data import COUPLINGS, PointCloud, TimeDistribution, sample_pairs
from .field import FieldConfig, FieldModel, save_checkpoint
from .losses import LossConfig, eikonal_core, one_step_core

ADAM_EPS = 1e-8


class TrainingDiverged(FloatingPointError):
    """Raised when the loss goes non-finite; carries the last good model."""

    def __init__(self, message: str, last_model: FieldModel, checkpoint_path: Path | None):
        super().__init__(message)
        self.last_model = last_model
        self.checkpoint_path = checkpoint_path


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 512
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    loss: LossConfig = dc_field(default_factory=LossConfig)
    coupling: str = "minibatch_closest_without_replacement"
    t_dist: TimeDistribution = dc_field(default_factory=TimeDistribution)
    seed: int = 0
    checkpoint_every: int = 0
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (self.lr >= 0):
            raise ValueError("lr must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}")


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, float, float]] = dc_field(default_factory=list)

    def append(self, step: int, osl: float, del_: float, total: float, grad_norm: float):
        self.rows.append((step, osl, del_, total, grad_norm))

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "osl", "del", "total", "grad_norm"])
            for step, osl, del_, total, gn in self.rows:
                w.writerow([step, repr(osl), repr(del_), repr(total), repr(gn)])

    def totals(self) -> np.ndarray:
        return np.array([r[3] for r in self.rows])


def adam_update(params, grad, m, v, step, lr, beta1, beta2, eps=ADAM_EPS, weight_decay=0.0):
    """One bias-corrected Adam step (decoupled weight decay); step is 1-based."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay != 0.0:
        params = params - lr * weight_decay * params
    return params, m, v


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


@lru_cache(maxsize=16)
def _jitted_value_grad(config: FieldConfig, loss_cfg: LossConfig):
    def objective(params, x, s):
        osl = one_step_core(config, params, x, s, loss_cfg.epsilon, loss_cfg.unnormalized_osl)
        del_ = eikonal_core(config, params, x, s, loss_cfg.c0)
        total = loss_cfg.lambda1 * osl + loss_cfg.lambda2 * del_
        return total, (osl, del_)

    return jax.jit(jax.value_and_grad(objective, has_aux=True))


def train(
    model: FieldModel,
    target: PointCloud,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[FieldModel, TrainLog]:
    """Run the full training loop; deterministic given (model, target, cfg).

    Per step: draw a coupled pair batch, evaluate the combined loss and its
    exact parameter gradient, clip by global norm, and apply the optimizer
    update.  A non-finite loss or gradient aborts with the last good
    checkpoint retained.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    steps_per_epoch = max(1, target.n // cfg.batch_size)
    n_steps = cfg.epochs * steps_per_epoch
    step_seeds = np.random.SeedSequence(cfg.seed).generate_state(n_steps, dtype=np.uint64)

    value_grad = _jitted_value_grad(model.config, cfg.loss)
    params = np.array(model.params)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    log = TrainLog()
    last_ckpt: Path | None = None
    last_good = params

    for k in range(1, n_steps + 1):
        batch = sample_pairs(
            target, cfg.batch_size, t_dist=cfg.t_dist, coupling=cfg.coupling,
            seed=int(step_seeds[k - 1]),
        )
        (total, (osl, del_)), grad = value_grad(
            jnp.asarray(params), jnp.asarray(batch.x), jnp.asarray(batch.s_data)
        )
        total = float(total)
        grad = np.asarray(grad)
        if not np.isfinite(total) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(
                f"non-finite loss/gradient at step {k}", model.with_params(last_good), last_ckpt
            )
        grad, raw_norm = clip_by_global_norm(grad, cfg.grad_clip)
        if cfg.optimizer == "adam":
            params, m, v = adam_update(
                params, grad, m, v, k, cfg.lr, cfg.betas[0], cfg.betas[1],
                weight_decay=cfg.weight_decay,
            )
        else:
            params = params - cfg.lr * grad
            if cfg.weight_decay != 0.0:
                params = params - cfg.lr * cfg.weight_decay * params
        last_good = params
        log.append(k, float(osl), float(del_), total, raw_norm)

        if out_path is not None and cfg.checkpoint_every > 0 and k % cfg.checkpoint_every == 0:
            last_ckpt = out_path / f"checkpoint_step{k}.json"
            save_checkpoint(model.with_params(params), last_ckpt)

    trained = model.with_params(params)
    if out_path is not None:
        save_checkpoint(trained, out_path / "checkpoint.json")
        log.save_csv(out_path / "train_log.csv")
    return trained, log
