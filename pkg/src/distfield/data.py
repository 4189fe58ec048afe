"""Synthetic point-cloud datasets and the noised-pair sampling process.

Training pairs are built by linear interpolation between a standard-normal
draw ``x0`` and a dataset target ``s``: ``x = (1 - t) * x0 + t * s`` with the
interpolation coefficient ``t`` drawn from a user-chosen distribution on
(0, 1).  Several minibatch coupling strategies control how targets are
assigned to the ``x0`` draws before interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

CLOUD_LABELS = ("source", "target", "generated")

COUPLINGS = (
    "random",
    "minibatch_ot",
    "minibatch_closest_with_replacement",
    "minibatch_closest_without_replacement",
)


class DataError(ValueError):
    """Invalid argument or configuration for a dataset operation."""


@dataclass(frozen=True)
class PointCloud:
    """A finite set of D-dimensional points with provenance."""

    points: np.ndarray  # (n, D) float64
    label: str = "target"
    seed: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise DataError("points must be a nonempty (n, D) array")
        if not np.all(np.isfinite(pts)):
            raise DataError("points must be finite")
        if self.label not in CLOUD_LABELS:
            raise DataError(f"label must be one of {CLOUD_LABELS}")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def save_csv(self, path: str | Path) -> None:
        """Write one point per row with header ``x0,...,x{D-1}``."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(self.dim)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])

    @staticmethod
    def load_csv(path: str | Path, label: str = "target") -> "PointCloud":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise DataError(f"{path}: no data rows")
        pts = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
        return PointCloud(pts, label=label)


@dataclass(frozen=True)
class GmmSpec:
    """Isotropic Gaussian mixture: per component (mean, cov_scale, weight).

    ``cov_scale`` is the variance of each coordinate, i.e. the covariance is
    ``cov_scale * I``.  Weights must sum to 1.
    """

    means: np.ndarray       # (K, D)
    cov_scales: np.ndarray  # (K,)
    weights: np.ndarray     # (K,)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        cov = np.atleast_1d(np.asarray(self.cov_scales, dtype=np.float64))
        wts = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if not (len(means) == len(cov) == len(wts)):
            raise DataError("means, cov_scales, weights must have equal length")
        if np.any(cov <= 0) or np.any(wts < 0):
            raise DataError("cov_scales must be positive and weights nonnegative")
        if abs(float(wts.sum()) - 1.0) > 1e-9:
            raise DataError("weights must sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov_scales", cov)
        object.__setattr__(self, "weights", wts)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Mixture log-density at points ``x`` of shape (n, D) or (D,)."""
        xa = np.asarray(x, dtype=np.float64)
        single = xa.ndim == 1
        xa = np.atleast_2d(xa)
        d = self.dim
        sq = ((xa[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore"):
            log_comp = (
                -0.5 * sq / self.cov_scales[None, :]
                - 0.5 * d * np.log(2 * np.pi * self.cov_scales)[None, :]
                + np.log(self.weights)[None, :]
            )
        m = log_comp.max(axis=1, keepdims=True)
        out = m[:, 0] + np.log(np.exp(log_comp - m).sum(axis=1))
        return float(out[0]) if single else out


@dataclass(frozen=True)
class TimeDistribution:
    """Distribution of the interpolation coefficient; support within (0, 1)."""

    kind: str = "uniform"
    t_min: float = 0.0
    t_max: float = 0.999

    def __post_init__(self):
        if self.kind != "uniform":
            raise DataError(f"unsupported time distribution kind {self.kind!r}")
        if not (0.0 <= self.t_min < self.t_max < 1.0):
            raise DataError("need 0 <= t_min < t_max < 1")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.t_min, self.t_max, size=n)

    def density(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        inside = (t >= self.t_min) & (t <= self.t_max)
        return np.where(inside, 1.0 / (self.t_max - self.t_min), 0.0)


@dataclass(frozen=True)
class TrainingPair:
    """One noised sample with its target, coefficient, and originating noise."""

    x: np.ndarray
    s_data: np.ndarray
    t: float
    x0: np.ndarray


@dataclass
class PairBatch(Sequence):
    """Array-of-struct view over a batch of training pairs."""

    x: np.ndarray       # (b, D)
    s_data: np.ndarray  # (b, D)
    t: np.ndarray       # (b,)
    x0: np.ndarray      # (b, D)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i) -> TrainingPair:
        if isinstance(i, slice):
            return PairBatch(self.x[i], self.s_data[i], self.t[i], self.x0[i])
        return TrainingPair(self.x[i], self.s_data[i], float(self.t[i]), self.x0[i])

    def __iter__(self) -> Iterator[TrainingPair]:
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def as_pair_arrays(pairs) -> PairBatch:
    """Normalize a PairBatch or iterable of TrainingPair into arrays."""
    if isinstance(pairs, PairBatch):
        return pairs
    pairs = list(pairs)
    if not pairs:
        raise DataError("empty batch of pairs")
    return PairBatch(
        x=np.stack([np.asarray(p.x, dtype=np.float64) for p in pairs]),
        s_data=np.stack([np.asarray(p.s_data, dtype=np.float64) for p in pairs]),
        t=np.array([float(p.t) for p in pairs], dtype=np.float64),
        x0=np.stack([np.asarray(p.x0, dtype=np.float64) for p in pairs]),
    )


def two_moons(n: int, noise_std: float = 0.05, seed: int = 0) -> PointCloud:
    """Two interleaved unit half-circles with isotropic Gaussian jitter.

    Moon A is the upper arc of the unit circle centered at the origin; moon B
    is the lower arc of the unit circle centered at (1, 0.5).  Points split
    evenly between the two arcs, angles drawn uniformly.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    if noise_std < 0:
        raise DataError("noise_std must be >= 0")
    rng = np.random.default_rng(seed)
    n_a = (n + 1) // 2
    n_b = n - n_a
    th_a = rng.uniform(0.0, np.pi, n_a)
    th_b = rng.uniform(0.0, np.pi, n_b)
    a = np.stack([np.cos(th_a), np.sin(th_a)], axis=1)
    b = np.stack([1.0 - np.cos(th_b), 0.5 - np.sin(th_b)], axis=1)
    pts = np.concatenate([a, b], axis=0)
    if noise_std > 0:
        pts = pts + rng.normal(0.0, noise_std, size=pts.shape)
    return PointCloud(pts, label="target", seed=seed)


def eight_gaussians(n: int, radius: float = 4.0, std: float = 0.3, seed: int = 0) -> PointCloud:
    """Mixture of 8 equal-weight Gaussians at 45-degree spacing on a circle."""
    if n < 1:
        raise DataError("n must be >= 1")
    if radius <= 0 or std <= 0:
        raise DataError("radius and std must be positive")
    rng = np.random.default_rng(seed)
    angles = np.arange(8) * (np.pi / 4.0)
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    comp = rng.integers(0, 8, size=n)
    pts = centers[comp] + rng.normal(0.0, std, size=(n, 2))
    return PointCloud(pts, label="source", seed=seed)


def eight_gaussian_centers(radius: float = 4.0) -> np.ndarray:
    angles = np.arange(8) * (np.pi / 4.0)
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def gmm_sample(spec: GmmSpec, n: int, seed: int = 0, label: str = "target") -> PointCloud:
    """Draw n i.i.d. points from an isotropic Gaussian mixture."""
    if n < 1:
        raise DataError("n must be >= 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(spec.n_components, size=n, p=spec.weights)
    std = np.sqrt(spec.cov_scales[comp])[:, None]
    pts = spec.means[comp] + std * rng.normal(size=(n, spec.dim))
    return PointCloud(pts, label=label, seed=seed)


def default_8d_gmm(sigma: float = 0.5) -> tuple[GmmSpec, GmmSpec]:
    """Default 8D benchmark mixture: (source, target) specs.

    Source: two components at +/- 4*e1.  Target: four components at
    4*(+/-e2 +/- e3).  All isotropic with standard deviation ``sigma`` in the
    full 8D space (remaining coordinates are zero-mean with the same sigma).
    """
    d = 8
    src_means = np.zeros((2, d))
    src_means[0, 0] = 4.0
    src_means[1, 0] = -4.0
    tgt_means = np.zeros((4, d))
    k = 0
    for s2 in (+1.0, -1.0):
        for s3 in (+1.0, -1.0):
            tgt_means[k, 1] = 4.0 * s2
            tgt_means[k, 2] = 4.0 * s3
            k += 1
    cov = sigma**2
    source = GmmSpec(src_means, np.full(2, cov), np.full(2, 0.5))
    target = GmmSpec(tgt_means, np.full(4, cov), np.full(4, 0.25))
    return source, target


def heterogeneous_norm_cloud(
    n: int = 1024,
    dim: int = 256,
    norm_min: float = 8.0,
    norm_max: float = 24.0,
    jitter: float = 0.5,
    seed: int = 0,
) -> PointCloud:
    """High-dimensional cloud whose point norms vary widely.

    Directions are uniform on the sphere, radii uniform in
    [norm_min, norm_max], plus small Gaussian jitter.  Nearest-neighbor
    assignment of near-noise queries against such a cloud concentrates on
    the few smallest-norm points, which makes it a compact test bed for
    hub formation.
    """
    if n < 1 or dim < 1:
        raise DataError("n and dim must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(norm_min, norm_max, size=n)
    pts = dirs * radii[:, None] + rng.normal(0.0, jitter, size=(n, dim))
    return PointCloud(pts, label="target", seed=seed)


def _greedy_match_without_replacement(x0: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Globally greedy matching: repeatedly take the closest unused pair.

    Returns for each x0 row the index of its assigned target row; every
    target is used exactly once (requires equal counts).
    """
    b = x0.shape[0]
    cost = ((x0[:, None, :] - targets[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(cost, axis=None, kind="stable")
    assign = np.full(b, -1, dtype=np.int64)
    used_t = np.zeros(b, dtype=bool)
    remaining = b
    for flat in order:
        i, j = divmod(int(flat), b)
        if assign[i] >= 0 or used_t[j]:
            continue
        assign[i] = j
        used_t[j] = True
        remaining -= 1
        if remaining == 0:
            break
    return assign


def sample_pairs(
    target: PointCloud,
    batch: int,
    t_dist: TimeDistribution | None = None,
    coupling: str = "random",
    seed: int = 0,
) -> PairBatch:
    """Draw a batch of training pairs from the interpolation process.

    ``x0`` is standard normal; targets are drawn uniformly from ``target``
    and then (depending on ``coupling``) re-assigned within the batch before
    interpolation:

    - ``random``: keep the uniform draws.
    - ``minibatch_ot``: exact minimum-cost assignment between the batch of
      x0 draws and the batch of targets under squared Euclidean cost.
    - ``minibatch_closest_with_replacement``: each x0 takes its nearest
      in-batch target; one target may serve many x0.
    - ``minibatch_closest_without_replacement``: targets are drawn without
      replacement from the dataset and matched greedily (globally closest
      pair first), each target used once.
    """
    if batch < 1:
        raise DataError("batch must be >= 1")
    if coupling not in COUPLINGS:
        raise DataError(f"unknown coupling {coupling!r}")
    t_dist = t_dist or TimeDistribution()
    rng = np.random.default_rng(seed)
    pts = target.points
    n, d = pts.shape

    if coupling == "minibatch_closest_without_replacement":
        if batch > n:
            raise DataError(
                f"batch {batch} exceeds dataset size {n} for without-replacement coupling"
            )
        idx = rng.choice(n, size=batch, replace=False)
    else:
        idx = rng.integers(0, n, size=batch)
    x0 = rng.normal(size=(batch, d))
    t = t_dist.sample(rng, batch)
    s = pts[idx]

    if coupling == "minibatch_ot":
        cost = ((x0[:, None, :] - s[None, :, :]) ** 2).sum(axis=2)
        rows, cols = linear_sum_assignment(cost)
        s = s[cols[np.argsort(rows)]]
    elif coupling == "minibatch_closest_with_replacement":
        cost = ((x0[:, None, :] - s[None, :, :]) ** 2).sum(axis=2)
        s = s[np.argmin(cost, axis=1)]
    elif coupling == "minibatch_closest_without_replacement":
        assign = _greedy_match_without_replacement(x0, s)
        s = s[assign]

    x = (1.0 - t)[:, None] * x0 + t[:, None] * s
    return PairBatch(x=x, s_data=s, t=t, x0=x0)
