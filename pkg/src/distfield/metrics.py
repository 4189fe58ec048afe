"""Point-cloud distances, distance-estimation error, and coverage/hub analysis.

Conventions (the literature varies): the Wasserstein-2 value is the square
root of the mean matched squared cost under an exact assignment; Chamfer is
the symmetric mean *squared* nearest-neighbor distance; Hausdorff is the
usual max-min Euclidean distance.  Nearest-neighbor scans are brute force
with lowest-index tie-breaking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import DataError, PointCloud, TimeDistribution

W2_DEFAULT_CAP = 2048


@dataclass(frozen=True)
class MetricReport:
    w2: float
    hausdorff: float
    chamfer: float
    n_a: int
    n_b: int
    w2_method: str

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value", "method", "n_a", "n_b"])
            w.writerow(["w2", repr(self.w2), self.w2_method, self.n_a, self.n_b])
            w.writerow(["hausdorff", repr(self.hausdorff), "exact", self.n_a, self.n_b])
            w.writerow(["chamfer", repr(self.chamfer), "exact", self.n_a, self.n_b])


@dataclass
class CoverageCurve:
    t_bins: list[float]         # bin centers
    coverage: list[float]
    topk_mass: list[float]
    k: int = 8

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_center", "coverage", f"top{self.k}_mass"])
            for t, c, m in zip(self.t_bins, self.coverage, self.topk_mass):
                w.writerow([repr(t), repr(c), repr(m)])


def _check_clouds(a: PointCloud, b: PointCloud) -> None:
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")


def nn_sq_dists(query: np.ndarray, ref: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Min squared Euclidean distance from each query row to the ref cloud."""
    out = np.empty(query.shape[0])
    ref_sq = (ref**2).sum(axis=1)
    for lo in range(0, query.shape[0], chunk):
        q = query[lo : lo + chunk]
        d2 = (q**2).sum(axis=1)[:, None] - 2.0 * q @ ref.T + ref_sq[None, :]
        out[lo : lo + chunk] = np.maximum(d2.min(axis=1), 0.0)
    return out


def nn_indices(query: np.ndarray, ref: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Index of the nearest ref row per query row (lowest index on ties)."""
    out = np.empty(query.shape[0], dtype=np.int64)
    ref_sq = (ref**2).sum(axis=1)
    for lo in range(0, query.shape[0], chunk):
        q = query[lo : lo + chunk]
        d2 = (q**2).sum(axis=1)[:, None] - 2.0 * q @ ref.T + ref_sq[None, :]
        out[lo : lo + chunk] = d2.argmin(axis=1)
    return out


def hausdorff(a: PointCloud, b: PointCloud) -> float:
    """max(max-min distance a->b, b->a), Euclidean."""
    _check_clouds(a, b)
    d_ab = nn_sq_dists(a.points, b.points).max()
    d_ba = nn_sq_dists(b.points, a.points).max()
    return float(np.sqrt(max(d_ab, d_ba)))


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean squared nearest-neighbor distance."""
    _check_clouds(a, b)
    return float(nn_sq_dists(a.points, b.points).mean() + nn_sq_dists(b.points, a.points).mean())


def _w2_exact(a: np.ndarray, b: np.ndarray) -> float:
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def w2(a: PointCloud, b: PointCloud, cap: int = W2_DEFAULT_CAP, seed: int = 0) -> tuple[float, str]:
    """Empirical Wasserstein-2 between equal-size clouds.

    Up to ``cap`` points the exact assignment is solved; above it the value
    is the average of exact solutions over disjoint random subsamples whose
    count is the smallest that fits under the cap.
    """
    _check_clouds(a, b)
    if a.n != b.n:
        raise DataError(f"exact W2 needs equal sizes, got {a.n} vs {b.n}")
    n = a.n
    if n <= cap:
        return _w2_exact(a.points, b.points), "exact"
    k = int(np.ceil(n / cap))
    m = n // k
    rng = np.random.default_rng(seed)
    perm_a = rng.permutation(n)
    perm_b = rng.permutation(n)
    vals = [
        _w2_exact(a.points[perm_a[i * m : (i + 1) * m]], b.points[perm_b[i * m : (i + 1) * m]])
        for i in range(k)
    ]
    return float(np.mean(vals)), "subsampled"


def metric_report(a: PointCloud, b: PointCloud, cap: int = W2_DEFAULT_CAP, seed: int = 0) -> MetricReport:
    val, method = w2(a, b, cap=cap, seed=seed)
    return MetricReport(
        w2=val, hausdorff=hausdorff(a, b), chamfer=chamfer(a, b),
        n_a=a.n, n_b=b.n, w2_method=method,
    )


@dataclass
class MapeBin:
    lo: float
    hi: float
    count: int
    mape_u: float       # u vs smoothed distance, percent
    std_u: float
    mape_uv: float      # ||u v|| vs raw distance, percent
    std_uv: float


@dataclass
class MapeSummary:
    bins: list[MapeBin]
    empty_bins: list[int]
    median_ape_u: float
    median_ape_uv: float

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count", "mape_u", "std_u", "mape_uv", "std_uv"])
            for b in self.bins:
                w.writerow(
                    [repr(b.lo), repr(b.hi), b.count, repr(b.mape_u), repr(b.std_u),
                     repr(b.mape_uv), repr(b.std_uv)]
                )


def distance_mape(model, pairs, c0: float, n_bins: int = 10) -> MapeSummary:
    """Binned absolute percentage error of the field's distance estimates.

    Per pair, compares (i) u(x) to the smoothed truth sqrt(||x - s||^2 + c0)
    and (ii) ||u(x) v(x)|| to the raw displacement norm, binned by the raw
    displacement norm.  Pairs closer than 1e-12 are skipped for (ii).
    """
    from .data import as_pair_arrays

    b = as_pair_arrays(pairs)
    u, v = model.eval_batch(b.x)
    dist = np.linalg.norm(b.x - b.s_data, axis=1)
    truth_u = np.sqrt(dist**2 + c0)
    ape_u = np.abs(u - truth_u) / truth_u * 100.0
    step_len = np.abs(u) * np.linalg.norm(v, axis=1)
    ok = dist > 1e-12
    ape_uv = np.where(ok, np.abs(step_len - dist) / np.where(ok, dist, 1.0) * 100.0, np.nan)

    edges = np.linspace(dist.min(), dist.max() + 1e-12, n_bins + 1)
    bins: list[MapeBin] = []
    empty = []
    for i in range(n_bins):
        mask = (dist >= edges[i]) & (dist < edges[i + 1])
        if not mask.any():
            empty.append(i)
            continue
        au = ape_u[mask]
        auv = ape_uv[mask][np.isfinite(ape_uv[mask])]
        bins.append(
            MapeBin(
                lo=float(edges[i]), hi=float(edges[i + 1]), count=int(mask.sum()),
                mape_u=float(au.mean()), std_u=float(au.std()),
                mape_uv=float(auv.mean()) if auv.size else float("nan"),
                std_uv=float(auv.std()) if auv.size else float("nan"),
            )
        )
    finite_uv = ape_uv[np.isfinite(ape_uv)]
    return MapeSummary(
        bins=bins,
        empty_bins=empty,
        median_ape_u=float(np.median(ape_u)),
        median_ape_uv=float(np.median(finite_uv)) if finite_uv.size else float("nan"),
    )


def coverage_curve(
    target: PointCloud,
    n_per_bin: int,
    t_edges: np.ndarray,
    k: int = 8,
    seed: int = 0,
) -> CoverageCurve:
    """Nearest-neighbor coverage of the target across interpolation bins.

    Per bin: draw Gaussian noises, pair each with a uniform target, form the
    interpolation at an in-bin coefficient, and assign it to its nearest
    target point.  Coverage is the fraction of targets hit at least once;
    topk_mass is the share of assignments captured by the k most-hit targets.
    """
    t_edges = np.asarray(t_edges, dtype=np.float64)
    if t_edges.ndim != 1 or t_edges.size < 2:
        raise DataError("t_edges must hold at least two bin edges")
    rng = np.random.default_rng(seed)
    pts = target.points
    n, d = pts.shape
    centers, cov, topk = [], [], []
    for lo, hi in zip(t_edges[:-1], t_edges[1:]):
        x0 = rng.normal(size=(n_per_bin, d))
        idx = rng.integers(0, n, size=n_per_bin)
        t = rng.uniform(lo, hi, size=n_per_bin)
        x = (1.0 - t)[:, None] * x0 + t[:, None] * pts[idx]
        nn = nn_indices(x, pts)
        counts = np.bincount(nn, minlength=n)
        centers.append(float((lo + hi) / 2.0))
        cov.append(float((counts > 0).sum() / n))
        topk.append(float(np.sort(counts)[::-1][:k].sum() / n_per_bin))
    return CoverageCurve(t_bins=centers, coverage=cov, topk_mass=topk, k=k)


def coupling_concentration(
    target: PointCloud,
    coupling: str,
    batch: int = 256,
    n_batches: int = 64,
    k: int = 8,
    t_dist: TimeDistribution | None = None,
    seed: int = 0,
) -> float:
    """Top-k share of target usage across coupled training batches.

    A mode-collapse detector: couplings that funnel many noise draws onto
    few targets produce a high value.
    """
    from .data import sample_pairs

    seeds = np.random.SeedSequence(seed).generate_state(n_batches, dtype=np.uint64)
    pts = target.points
    counts = np.zeros(target.n, dtype=np.int64)
    for i in range(n_batches):
        pb = sample_pairs(target, batch, t_dist=t_dist, coupling=coupling, seed=int(seeds[i]))
        used = nn_indices(pb.s_data, pts)  # map chosen targets back to dataset rows
        counts += np.bincount(used, minlength=target.n)
    total = counts.sum()
    return float(np.sort(counts)[::-1][:k].sum() / total)
