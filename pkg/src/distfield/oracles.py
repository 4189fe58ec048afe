"""Closed-form and Monte-Carlo loss-minimizer oracles.

At a fixed query point x, each training objective has an exact population
minimizer under the interpolation process of :mod:`distfield.data`:

- flow matching: the posterior mean of the displacement ``(s_i - x)/(1 - t)``
  over the joint posterior on (target index, coefficient);
- reweighted flow matching: the same mean under the extra time weight
  ``(1 - t)^-2``;
- one-step loss: a posterior- and inverse-distance-weighted average of the
  targets, ``s_hat = sum_i pi_i w_i s_i / sum_i pi_i w_i`` with
  ``w_i = 1/(||x - s_i||^2 + eps)``;
- directional eikonal loss: ``sum_i pi_i (x - s_i)/sqrt(||x - s_i||^2 + c0)``
  (pointing away from the data; negate for a denoising direction).

The posterior index weights are
``pi_i ~ integral p_T(t) (1-t)^{-d} exp(-||x - t s_i||^2 / (2 (1-t)^2)) dt``,
evaluated by quadrature over a shared log-space kernel grid.  Independent
Monte-Carlo estimators of the same quantities (self-normalized importance
sampling from the forward process) serve as drift detectors, and a
self-normalized sampler extends the minimizers to continuous Gaussian-mixture
targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.stats import chi2

from .data import GmmSpec, PointCloud, TimeDistribution

MINIMIZER_KINDS = ("fm", "rfm", "osl", "del")
DEFAULT_ESS_FLOOR = 200.0


class OracleError(ValueError):
    pass


class DegeneratePosteriorError(OracleError):
    """Every posterior weight underflowed; the query is too far from the data."""


class UndefinedAngleError(OracleError):
    """Angle analysis received a zero vector."""


@dataclass(frozen=True)
class QuadratureSpec:
    nodes: int = 64
    scheme: str = "gauss_legendre"
    t_min: float = 0.0
    t_max: float = 0.999

    def __post_init__(self):
        if self.nodes < 8:
            raise OracleError("nodes must be >= 8")
        if self.scheme not in ("gauss_legendre", "trapezoid"):
            raise OracleError("scheme must be 'gauss_legendre' or 'trapezoid'")
        if not (0.0 <= self.t_min < self.t_max < 1.0):
            raise OracleError("need 0 <= t_min < t_max < 1 (a node at t=1 is singular)")

    @staticmethod
    def for_dist(t_dist: TimeDistribution, nodes: int = 64, scheme: str = "gauss_legendre"):
        return QuadratureSpec(nodes=nodes, scheme=scheme, t_min=t_dist.t_min, t_max=t_dist.t_max)

    def grid(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights on (t_min, t_max).

        For high-dimensional kernels (dim >= 64) the integrand concentrates
        sharply near t_max, so the interval is split into panels refined
        geometrically toward t_max.
        """
        if self.scheme == "trapezoid":
            t = np.linspace(self.t_min, self.t_max, self.nodes)
            w = np.full(self.nodes, (self.t_max - self.t_min) / (self.nodes - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            return t, w
        if dim < 64:
            edges = np.array([self.t_min, self.t_max])
        else:
            n_panels = 8
            fracs = 0.5 ** np.arange(n_panels, 0, -1)
            fracs = np.concatenate([[0.0], np.cumsum(fracs) / fracs.sum()])
            edges = self.t_min + (self.t_max - self.t_min) * fracs
        per = max(8, self.nodes // (len(edges) - 1))
        z, zw = leggauss(per)
        ts, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            ts.append(0.5 * (z + 1.0) * (b - a) + a)
            ws.append(zw * 0.5 * (b - a))
        return np.concatenate(ts), np.concatenate(ws)


@dataclass
class MinimizerReport:
    """All closed-form minimizers at one query point."""

    x: np.ndarray
    pi: np.ndarray      # (N,) posterior index weights
    g_fm: np.ndarray    # flow-matching minimizer
    g_rfm: np.ndarray   # (1-t)^-2 reweighted flow-matching minimizer
    f_os: np.ndarray    # one-step displacement s_hat - x
    h_de: np.ndarray    # directional-eikonal minimizer (away from data)
    s_hat: np.ndarray   # one-step destination


@dataclass
class AngleReport:
    angle_os_fm: float
    angle_os_de: float
    angle_fm_de: float
    additivity_ratio: float
    degenerate: bool = False


def _log_posterior_grid(
    x: np.ndarray,
    points: np.ndarray,
    t_dist: TimeDistribution,
    quad: QuadratureSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Log of the joint (index, node) posterior kernel, including quadrature
    and prior-density weights.  Returns (log_grid (N, Q), t (Q,))."""
    d = points.shape[1]
    t, w = quad.grid(d)
    diff = x[None, None, :] - t[None, :, None] * points[:, None, :]   # (N, Q, D)
    sq = (diff**2).sum(axis=2)
    with np.errstate(divide="ignore"):
        log_pt = np.log(t_dist.density(t))
    log_grid = (
        log_pt[None, :]
        - d * np.log1p(-t)[None, :]
        - sq / (2.0 * (1.0 - t[None, :]) ** 2)
        + np.log(w)[None, :]
    )
    return log_grid, t


def _normalized_grid(log_grid: np.ndarray) -> np.ndarray:
    m = log_grid.max()
    if not np.isfinite(m):
        raise DegeneratePosteriorError("all posterior weights underflowed")
    g = np.exp(log_grid - m)
    return g / g.sum()


def posterior_index(
    x: np.ndarray,
    dataset: PointCloud,
    t_dist: TimeDistribution | None = None,
    quad: QuadratureSpec | None = None,
) -> np.ndarray:
    """Posterior probability that each dataset point generated the query."""
    x = np.asarray(x, dtype=np.float64)
    t_dist = t_dist or TimeDistribution()
    quad = quad or QuadratureSpec.for_dist(t_dist)
    log_grid, _ = _log_posterior_grid(x, dataset.points, t_dist, quad)
    joint = _normalized_grid(log_grid)
    pi = joint.sum(axis=1)
    return pi / pi.sum()


def minimizer_report(
    x: np.ndarray,
    dataset: PointCloud,
    t_dist: TimeDistribution | None = None,
    quad: QuadratureSpec | None = None,
    epsilon: float = 0.01,
    c0: float = 0.01,
) -> MinimizerReport:
    """Compute all four minimizers from one shared posterior kernel grid."""
    x = np.asarray(x, dtype=np.float64)
    t_dist = t_dist or TimeDistribution()
    quad = quad or QuadratureSpec.for_dist(t_dist)
    S = dataset.points
    log_grid, t = _log_posterior_grid(x, S, t_dist, quad)
    joint = _normalized_grid(log_grid)                      # (N, Q)
    pi = joint.sum(axis=1)
    pi = pi / pi.sum()

    delta = (S[:, None, :] - x[None, None, :]) / (1.0 - t)[None, :, None]
    g_fm = np.einsum("nq,nqd->d", joint, delta)

    rw = joint * (1.0 - t[None, :]) ** -2
    g_rfm = np.einsum("nq,nqd->d", rw, delta) / rw.sum()

    r2 = ((x[None, :] - S) ** 2).sum(axis=1)
    omega = 1.0 / (r2 + epsilon)
    s_hat = (pi * omega) @ S / float((pi * omega).sum())

    h_de = (pi[:, None] * (x[None, :] - S) / np.sqrt(r2 + c0)[:, None]).sum(axis=0)

    return MinimizerReport(x=x, pi=pi, g_fm=g_fm, g_rfm=g_rfm, f_os=s_hat - x, h_de=h_de, s_hat=s_hat)


def fm_minimizer(x, dataset, t_dist=None, quad=None, weight_mode: str = "none") -> np.ndarray:
    rep = minimizer_report(x, dataset, t_dist, quad)
    if weight_mode == "none":
        return rep.g_fm
    if weight_mode == "inverse_one_minus_t_sq":
        return rep.g_rfm
    raise OracleError(f"unknown weight_mode {weight_mode!r}")


def osl_minimizer(x, dataset, t_dist=None, quad=None, epsilon: float = 0.01):
    rep = minimizer_report(x, dataset, t_dist, quad, epsilon=epsilon)
    return rep.s_hat, rep.f_os


def del_minimizer(x, dataset, t_dist=None, quad=None, c0: float = 0.01) -> np.ndarray:
    rep = minimizer_report(x, dataset, t_dist, quad, c0=c0)
    return rep.h_de


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedAngleError("angle of a zero vector is undefined")
    c = float(np.dot(a, b) / (na * nb))
    return math.acos(min(1.0, max(-1.0, c)))


def angle_analysis(report: MinimizerReport) -> AngleReport:
    """Pairwise angles between the denoising-oriented minimizers.

    Uses f_os, g_fm, and the negated eikonal minimizer -h_de so that all
    three vectors share the toward-data orientation.  The additivity ratio
    is angle(f, g) / (angle(f, h) + angle(g, h)); it equals 1 exactly when h
    lies in the planar cone spanned by f and g.
    """
    f = report.f_os
    g = report.g_fm
    h = -report.h_de
    a_fg = _angle(f, g)
    a_fh = _angle(f, h)
    a_gh = _angle(g, h)
    denom = a_fh + a_gh
    degenerate = a_fg < 1e-12 or denom < 1e-12
    ratio = a_fg / denom if denom > 0 else float("nan")
    return AngleReport(
        angle_os_fm=a_fg, angle_os_de=a_fh, angle_fm_de=a_gh,
        additivity_ratio=ratio, degenerate=degenerate,
    )


def radial_family_check(x, s_closest, C: float, sign: float) -> float:
    """Residual of the one-step projection under the smoothed-distance family.

    d_hat = sign * sqrt(||x - s||^2 + C) with the analytic gradient
    (x - s)/d_hat projects x back onto s for every C >= 0 and sign; the
    returned residual ||(x - d_hat * grad) - s|| should be at machine-epsilon
    scale.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s_closest, dtype=np.float64)
    if C < 0:
        raise OracleError("C must be >= 0")
    if sign not in (1.0, -1.0, 1, -1):
        raise OracleError("sign must be +1 or -1")
    g = float(((x - s) ** 2).sum())
    d_hat = sign * math.sqrt(g + C)
    if d_hat == 0.0:
        raise OracleError("d_hat = 0: the projection family is singular here")
    grad = (x - s) / d_hat
    return float(np.linalg.norm((x - d_hat * grad) - s))


# ---------------------------------------------------------------------------
# Monte-Carlo oracles (drift detectors for the closed forms)
# ---------------------------------------------------------------------------


@dataclass
class McMinimizerReport:
    report: MinimizerReport
    se_pi: np.ndarray
    se_g_fm: np.ndarray
    se_g_rfm: np.ndarray
    se_f_os: np.ndarray
    se_h_de: np.ndarray
    ess: float


def _snis(w: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Self-normalized estimate and per-coordinate standard error."""
    sw = w.sum()
    est = (w[:, None] * phi).sum(axis=0) / sw
    se = np.sqrt((w[:, None] ** 2 * (phi - est) ** 2).sum(axis=0)) / sw
    return est, se


def mc_minimizer_report(
    x: np.ndarray,
    dataset: PointCloud,
    t_dist: TimeDistribution | None = None,
    n_samples: int = 1_000_000,
    seed: int = 0,
    epsilon: float = 0.01,
    c0: float = 0.01,
) -> McMinimizerReport:
    """Monte-Carlo estimate of every minimizer with standard errors.

    Samples (index, t) from the forward prior and importance-weights by the
    Gaussian likelihood of the query under the interpolation law, i.e. a
    self-normalized estimator of the same posterior expectations computed in
    closed form by :func:`minimizer_report` (which it deliberately does not
    share code with).
    """
    x = np.asarray(x, dtype=np.float64)
    t_dist = t_dist or TimeDistribution()
    rng = np.random.default_rng(seed)
    S = dataset.points
    N, d = S.shape
    idx = rng.integers(0, N, size=n_samples)
    t = t_dist.sample(rng, n_samples)
    s = S[idx]
    sq = ((x[None, :] - t[:, None] * s) ** 2).sum(axis=1)
    logw = -d * np.log1p(-t) - sq / (2.0 * (1.0 - t) ** 2)
    logw -= logw.max()
    w = np.exp(logw)
    sw = w.sum()
    ess = float(sw**2 / (w**2).sum())

    onehot = np.zeros((n_samples, N))
    onehot[np.arange(n_samples), idx] = 1.0
    pi, se_pi = _snis(w, onehot)

    delta = (s - x[None, :]) / (1.0 - t)[:, None]
    g_fm, se_fm = _snis(w, delta)
    wr = w * (1.0 - t) ** -2
    g_rfm, se_rfm = _snis(wr, delta)

    r2 = ((x[None, :] - s) ** 2).sum(axis=1)
    wo = w / (r2 + epsilon)
    s_hat, se_shat = _snis(wo, s)

    h_term = (x[None, :] - s) / np.sqrt(r2 + c0)[:, None]
    h_de, se_h = _snis(w, h_term)

    rep = MinimizerReport(
        x=x, pi=pi / pi.sum(), g_fm=g_fm, g_rfm=g_rfm, f_os=s_hat - x, h_de=h_de, s_hat=s_hat
    )
    return McMinimizerReport(
        report=rep, se_pi=se_pi, se_g_fm=se_fm, se_g_rfm=se_rfm,
        se_f_os=se_shat, se_h_de=se_h, ess=ess,
    )


# ---------------------------------------------------------------------------
# Continuous (Gaussian-mixture) targets via self-normalized IS
# ---------------------------------------------------------------------------


@dataclass
class GmmMinimizers:
    g_fm: np.ndarray
    g_rfm: np.ndarray
    f_os: np.ndarray
    h_de: np.ndarray
    s_hat: np.ndarray
    ess: float
    warnings: list = dc_field(default_factory=list)

    def direction(self, kind: str) -> np.ndarray:
        if kind == "fm":
            return self.g_fm
        if kind == "rfm":
            return self.g_rfm
        if kind == "osl":
            return self.f_os
        if kind == "del":
            return -self.h_de
        raise OracleError(f"unknown minimizer kind {kind!r}")


def gmm_minimizers(
    x: np.ndarray,
    target: GmmSpec,
    t_dist: TimeDistribution | None = None,
    n_samples: int = 200_000,
    seed: int = 0,
    epsilon: float = 0.01,
    c0: float = 0.01,
    ess_floor: float = DEFAULT_ESS_FLOOR,
) -> GmmMinimizers:
    """Minimizers against a continuous mixture target.

    Proposes (s, t) from the forward process (s from the mixture, t from the
    coefficient distribution) and self-normalizes with the interpolation
    likelihood of the query.  An effective sample size below ``ess_floor``
    attaches a variance warning rather than failing.
    """
    x = np.asarray(x, dtype=np.float64)
    t_dist = t_dist or TimeDistribution()
    rng = np.random.default_rng(seed)
    d = target.dim
    comp = rng.choice(target.n_components, size=n_samples, p=target.weights)
    s = target.means[comp] + np.sqrt(target.cov_scales[comp])[:, None] * rng.normal(
        size=(n_samples, d)
    )
    t = t_dist.sample(rng, n_samples)
    sq = ((x[None, :] - t[:, None] * s) ** 2).sum(axis=1)
    logw = -d * np.log1p(-t) - sq / (2.0 * (1.0 - t) ** 2)
    logw -= logw.max()
    w = np.exp(logw)
    ess = float(w.sum() ** 2 / (w**2).sum())
    warnings = []
    if ess < ess_floor:
        warnings.append(f"effective sample size {ess:.1f} below floor {ess_floor:.0f}")

    delta = (s - x[None, :]) / (1.0 - t)[:, None]
    g_fm, _ = _snis(w, delta)
    g_rfm, _ = _snis(w * (1.0 - t) ** -2, delta)
    r2 = ((x[None, :] - s) ** 2).sum(axis=1)
    s_hat, _ = _snis(w / (r2 + epsilon), s)
    h_de, _ = _snis(w, (x[None, :] - s) / np.sqrt(r2 + c0)[:, None])
    return GmmMinimizers(
        g_fm=g_fm, g_rfm=g_rfm, f_os=s_hat - x, h_de=h_de, s_hat=s_hat, ess=ess,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Oracle-driven trajectories
# ---------------------------------------------------------------------------


@dataclass
class OracleTrajectory:
    states: np.ndarray                 # (steps+1, D)
    turning_angles: np.ndarray         # (max(steps-1, 0),) radians
    log_density: np.ndarray | None     # (steps+1,) target mixture log-density
    outlierness: np.ndarray | None     # (steps+1,) -log p-value, chi-square
    kind: str = "osl"
    ess_min: float | None = None
    warnings: list = dc_field(default_factory=list)

    @property
    def mean_turning_angle_deg(self) -> float:
        if self.turning_angles.size == 0:
            return 0.0
        return float(np.degrees(self.turning_angles.mean()))


def _mixture_outlierness(x: np.ndarray, gmm: GmmSpec) -> float:
    z2 = (((x[None, :] - gmm.means) ** 2).sum(axis=1) / gmm.cov_scales).min()
    return float(-chi2.logsf(z2, df=gmm.dim))


def oracle_trajectory(
    x0: np.ndarray,
    minimizer_kind: str,
    dataset_or_gmm,
    eta: float,
    steps: int,
    t_dist: TimeDistribution | None = None,
    quad: QuadratureSpec | None = None,
    epsilon: float = 0.01,
    c0: float = 0.01,
    n_samples: int = 200_000,
    seed: int = 0,
    scoring_gmm: GmmSpec | None = None,
) -> OracleTrajectory:
    """Iterate x <- x + eta * (denoising direction of the chosen minimizer).

    Against a point-cloud target the direction comes from the closed-form
    report; against a mixture target it comes from the self-normalized
    sampler.  Records per-step turning angles and, when a mixture is
    available for scoring, the target log-density and a chi-square
    outlierness (-log p of the nearest component's Mahalanobis distance).
    """
    if minimizer_kind not in MINIMIZER_KINDS:
        raise OracleError(f"minimizer_kind must be one of {MINIMIZER_KINDS}")
    x = np.asarray(x0, dtype=np.float64).copy()
    t_dist = t_dist or TimeDistribution()
    is_gmm = isinstance(dataset_or_gmm, GmmSpec)
    score_gmm = scoring_gmm if scoring_gmm is not None else (dataset_or_gmm if is_gmm else None)
    seeds = np.random.SeedSequence(seed).generate_state(steps, dtype=np.uint64)

    states = [x.copy()]
    ess_min = None
    warnings: list = []
    for k in range(steps):
        if is_gmm:
            mins = gmm_minimizers(
                x, dataset_or_gmm, t_dist, n_samples=n_samples, seed=int(seeds[k]),
                epsilon=epsilon, c0=c0,
            )
            direction = mins.direction(minimizer_kind)
            ess_min = mins.ess if ess_min is None else min(ess_min, mins.ess)
            for wmsg in mins.warnings:
                warnings.append(f"step {k}: {wmsg}")
        else:
            rep = minimizer_report(x, dataset_or_gmm, t_dist, quad, epsilon=epsilon, c0=c0)
            if minimizer_kind == "fm":
                direction = rep.g_fm
            elif minimizer_kind == "rfm":
                direction = rep.g_rfm
            elif minimizer_kind == "osl":
                direction = rep.f_os
            else:
                direction = -rep.h_de
        x = x + eta * direction
        states.append(x.copy())

    states = np.stack(states)
    moves = np.diff(states, axis=0)
    angles = []
    for a, b in zip(moves[:-1], moves[1:]):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            angles.append(0.0)
        else:
            c = float(np.dot(a, b) / (na * nb))
            angles.append(math.acos(min(1.0, max(-1.0, c))))
    log_density = outlier = None
    if score_gmm is not None:
        log_density = np.array([score_gmm.log_density(s) for s in states])
        outlier = np.array([_mixture_outlierness(s, score_gmm) for s in states])
    return OracleTrajectory(
        states=states,
        turning_angles=np.array(angles),
        log_density=log_density,
        outlierness=outlier,
        kind=minimizer_kind,
        ess_min=ess_min,
        warnings=warnings,
    )
