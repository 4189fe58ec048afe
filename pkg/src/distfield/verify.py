"""Self-contained invariant and oracle checks, runnable from the CLI.

Each check is independent and cheap enough for a fresh-checkout smoke run;
the pytest suite re-runs the expensive variants at full sample counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import jax.numpy as jnp

from . import data, field, losses, metrics, oracles, samplers, trainer


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _fd_param_grad(loss_of_params: Callable, params: np.ndarray, coords, h: float = 1e-6):
    grad = {}
    for c in coords:
        p_hi = params.copy()
        p_lo = params.copy()
        p_hi[c] += h
        p_lo[c] -= h
        grad[c] = (loss_of_params(p_hi) - loss_of_params(p_lo)) / (2 * h)
    return grad


def _small_model(mode: str, seed: int = 0) -> field.FieldModel:
    cfg = field.FieldConfig(input_dim=2, hidden_widths=(16, 16), mode=mode, seed=seed)
    return field.init_field(cfg)


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def run_checks(seed: int = 0, mc_samples: int = 200_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []

    def check(name: str, fn: Callable[[], str]):
        try:
            detail = fn()
            out.append(CheckResult(name, True, detail))
        except Exception as exc:  # noqa: BLE001 - any failure fails the check
            out.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))

    # --- projection invariance of the smoothed-distance family ---
    for C in (0.0, 1.0, 7.0):
        for sign in (1.0, -1.0):
            def radial(C=C, sign=sign):
                worst = 0.0
                for d in (1, 2, 8):
                    for _ in range(1000 // 3):
                        x = rng.normal(size=d) * 3
                        s = rng.normal(size=d) * 3
                        if C == 0.0 and np.allclose(x, s):
                            continue
                        worst = max(worst, oracles.radial_family_check(x, s, C, sign))
                assert worst < 1e-10, f"residual {worst:.2e}"
                return f"max residual {worst:.2e}"

            check(f"radial_family C={C:g} sign={int(sign):+d}", radial)

    # --- field construction ---
    def init_det():
        cfg = field.FieldConfig(input_dim=2, hidden_widths=(32, 32), seed=7)
        a = field.init_field(cfg)
        b = field.init_field(cfg)
        assert np.array_equal(a.params, b.params)
        return f"{a.param_count} params identical"

    check("init determinism", init_det)

    def seed_sensitivity():
        c1 = field.FieldConfig(input_dim=2, hidden_widths=(32,), seed=1)
        c2 = field.FieldConfig(input_dim=2, hidden_widths=(32,), seed=2)
        assert not np.array_equal(field.init_field(c1).params, field.init_field(c2).params)
        return "seed changes params"

    check("init seed sensitivity", seed_sensitivity)

    def param_count():
        cfg = field.FieldConfig(input_dim=2, hidden_widths=(128, 128, 128), mode="gradient")
        expected = (2 * 128 + 128) + 2 * (128 * 128 + 128) + (128 * 1 + 1)
        assert cfg.param_count == expected
        cfg_d = field.FieldConfig(input_dim=2, hidden_widths=(128, 128, 128), mode="direct")
        assert cfg_d.param_count == expected + 128 * 2 + 2
        return f"gradient {expected}, direct {cfg_d.param_count}"

    check("param count formula", param_count)

    def grad_consistency():
        model = _small_model("gradient")
        h = 1e-5
        worst = 0.0
        for _ in range(20):
            x = rng.normal(size=2)
            outp = model.eval(x)
            fd = np.zeros(2)
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd[j] = (model.eval(x + e).u - model.eval(x - e).u) / (2 * h)
            worst = max(worst, np.linalg.norm(outp.v - fd) / max(np.linalg.norm(fd), 1e-12))
        assert worst < 1e-5, f"rel err {worst:.2e}"
        return f"v vs FD rel err {worst:.2e}"

    check("gradient-mode v equals grad u", grad_consistency)

    def head_separation():
        model = _small_model("direct")
        x = rng.normal(size=2)
        u0 = model.eval(x).u
        p = np.array(model.params)
        head = model.config.layer_shapes()[-1]
        n_head = head[0][0] * head[0][1] + head[1][0]
        p[-n_head:] += 0.5
        assert abs(field.FieldModel(model.config, p).eval(x).u - u0) == 0.0
        return "u unchanged under direction-head perturbation"

    check("direct-mode head separation", head_separation)

    def batching():
        model = _small_model("gradient")
        xs = rng.normal(size=(5, 2))
        outb = model.eval(xs)
        for i in range(5):
            o = model.eval(xs[i])
            assert np.allclose(o.u, outb.u[i], atol=1e-12)
            assert np.allclose(o.v, outb.v[i], atol=1e-12)
        return "batch equals single-point calls"

    check("batching equivalence", batching)

    def roundtrip(tmpname="/tmp/distfield_verify_ckpt.json"):
        model = _small_model("direct", seed=3)
        field.save_checkpoint(model, tmpname)
        loaded = field.load_checkpoint(tmpname)
        assert np.array_equal(loaded.params, model.params)
        assert loaded.config == model.config
        return "checkpoint bit-exact"

    check("checkpoint round-trip", roundtrip)

    # --- loss gradients vs finite differences ---
    pairs = data.sample_pairs(data.two_moons(64, seed=1), 16, seed=2)
    x_j, s_j = jnp.asarray(pairs.x), jnp.asarray(pairs.s_data)
    x0_j, t_j = jnp.asarray(pairs.x0), jnp.asarray(pairs.t)

    def loss_fd(name, core):
        model = _small_model("gradient", seed=5)
        g = field.loss_gradients(model, core)
        coords = rng.choice(model.param_count, size=10, replace=False)
        fd = _fd_param_grad(lambda p: float(core(jnp.asarray(p))), np.array(model.params), coords)
        worst = max(_rel_err(g[c], fd[c]) for c in coords)
        assert worst < 1e-4, f"rel err {worst:.2e}"
        return f"grad vs FD rel err {worst:.2e}"

    model_cfg = _small_model("gradient", seed=5).config
    check(
        "one-step loss gradient vs FD",
        lambda: loss_fd("osl", lambda p: losses.one_step_core(model_cfg, p, x_j, s_j, 0.01)),
    )
    check(
        "eikonal loss gradient vs FD",
        lambda: loss_fd("del", lambda p: losses.eikonal_core(model_cfg, p, x_j, s_j, 0.01)),
    )
    check(
        "flow-matching loss gradient vs FD",
        lambda: loss_fd(
            "fm",
            lambda p: losses.flow_matching_core(
                model_cfg, p, x_j, s_j, x0_j, t_j, "inverse_one_minus_t_sq"
            ),
        ),
    )
    check(
        "combined loss gradient vs FD",
        lambda: loss_fd(
            "combined", lambda p: losses.combined_core(model_cfg, p, x_j, s_j, losses.LossConfig())
        ),
    )

    # --- pair sampling ---
    def pair_identity():
        pb = data.sample_pairs(data.two_moons(128, seed=3), 64, seed=4)
        recon = (1.0 - pb.t)[:, None] * pb.x0 + pb.t[:, None] * pb.s_data
        assert np.array_equal(recon, pb.x)
        return "x == (1-t) x0 + t s exactly"

    check("interpolation identity", pair_identity)

    def ot_optimality():
        tgt = data.two_moons(64, seed=5)
        ident = data.sample_pairs(tgt, 32, coupling="random", seed=6)
        ot = data.sample_pairs(tgt, 32, coupling="minibatch_ot", seed=6)
        c_id = ((ident.x0 - ident.s_data) ** 2).sum()
        c_ot = ((ot.x0 - ot.s_data) ** 2).sum()
        assert c_ot <= c_id + 1e-9, f"{c_ot} > {c_id}"
        return f"assignment cost {c_ot:.2f} <= random {c_id:.2f}"

    check("ot coupling optimality", ot_optimality)

    # --- posterior oracles ---
    ds = data.PointCloud(rng.normal(size=(8, 2)) * 2.0)
    t_dist = data.TimeDistribution()

    def quad_convergence():
        x = rng.normal(size=2)
        p64 = oracles.posterior_index(x, ds, t_dist, oracles.QuadratureSpec.for_dist(t_dist, 64))
        p128 = oracles.posterior_index(x, ds, t_dist, oracles.QuadratureSpec.for_dist(t_dist, 128))
        rel = float(np.max(np.abs(p64 - p128) / p128))
        assert rel < 1e-6, f"rel diff {rel:.2e}"
        return f"64 vs 128 nodes rel diff {rel:.2e}"

    check("quadrature convergence", quad_convergence)

    def posterior_symmetry():
        two = data.PointCloud(np.array([[1.5, 0.0], [-1.5, 0.0]]))
        pi = oracles.posterior_index(np.zeros(2), two, t_dist)
        assert np.allclose(pi, [0.5, 0.5], atol=1e-12)
        return f"pi = {pi.round(6).tolist()}"

    check("posterior symmetry", posterior_symmetry)

    x_q = rng.normal(size=2)
    rep = oracles.minimizer_report(x_q, ds, t_dist)
    mc = oracles.mc_minimizer_report(x_q, ds, t_dist, n_samples=mc_samples, seed=11)

    def against_mc(name, closed, est, se):
        def fn():
            z = np.abs(closed - est) / np.maximum(se, 1e-12)
            assert np.all(z < 4.0), f"z = {z.round(2)}"
            return f"max z = {float(z.max()):.2f}"

        return fn

    check("fm minimizer vs MC", against_mc("fm", rep.g_fm, mc.report.g_fm, mc.se_g_fm))
    check("rfm minimizer vs MC", against_mc("rfm", rep.g_rfm, mc.report.g_rfm, mc.se_g_rfm))
    check("one-step minimizer vs MC", against_mc("osl", rep.s_hat, mc.report.s_hat, mc.se_f_os))
    check("eikonal minimizer vs MC", against_mc("del", rep.h_de, mc.report.h_de, mc.se_h_de))

    def hull_membership():
        from scipy.optimize import linprog

        # s_hat is a convex combination iff a feasible weight vector exists
        N = ds.n
        res = linprog(
            c=np.zeros(N),
            A_eq=np.vstack([ds.points.T, np.ones(N)]),
            b_eq=np.concatenate([rep.s_hat, [1.0]]),
            bounds=[(0, 1)] * N,
            method="highs",
        )
        assert res.success, "no convex combination found"
        return "s_hat inside dataset hull"

    check("one-step destination in convex hull", hull_membership)

    def hde_bound():
        for _ in range(20):
            r = oracles.minimizer_report(rng.normal(size=2) * 2, ds, t_dist)
            assert np.linalg.norm(r.h_de) < 1.0
        return "||h_de|| < 1 at 20 random queries"

    check("eikonal minimizer norm bound", hde_bound)

    def planar_additivity():
        r = oracles.minimizer_report(rng.normal(size=2) * 1.5, ds, t_dist)
        a = oracles.angle_analysis(r)
        if not a.degenerate:
            assert abs(a.additivity_ratio - 1.0) < 0.05 or a.additivity_ratio < 1.0
        return f"ratio {a.additivity_ratio:.4f}"

    check("2D angle additivity", planar_additivity)

    # --- samplers ---
    def hmc_nfe():
        f = field.RadialField(np.zeros((1, 2)), offset=0.01)
        traj = samplers.hmc_refine(f, np.ones(2), samplers.HmcConfig(seed=1))
        assert traj.nfe == 97, f"nfe {traj.nfe}"
        return "defaults give 97 NFE"

    check("hmc NFE accounting", hmc_nfe)

    def hmc_tiny_eps():
        f = field.RadialField(np.zeros((1, 2)), offset=0.01)
        cfg = samplers.HmcConfig(leapfrog_eps=1e-4, n_proposals=50, seed=2)
        traj = samplers.hmc_refine(f, rng.normal(size=(20, 2)), cfg)
        rate = traj.metadata["accept_rate"]
        assert rate > 0.999, f"accept rate {rate}"
        return f"accept rate {rate:.4f} at eps=1e-4"

    check("hmc energy conservation limit", hmc_tiny_eps)

    def ula_zero_noise():
        f = field.RadialField(np.zeros((1, 1)), offset=0.01)
        cfg = samplers.SamplerConfig(kind="ula", eta=0.05, max_steps=20)
        x0 = np.array([[1.0]])
        a = samplers.ula_refine(f, x0, cfg, sigma=1.0, noise_scale=0.0, seed=3)
        b = samplers.grad_descent(
            f, x0, samplers.SamplerConfig(kind="gradient_descent", eta=0.05, max_steps=20,
                                          stop_threshold=0.0)
        )
        assert np.allclose(a.states[-1], b.states[-1], atol=1e-12)
        return "noise-free ULA matches gradient descent"

    check("ula reduces to gradient descent", ula_zero_noise)

    def trace_exact():
        f = field.RadialField(np.zeros((1, 1)), offset=0.0)
        cfg = samplers.SamplerConfig(eta=1.0, max_steps=1, stop_threshold=0.0)
        traj = samplers.sphere_trace(f, np.array([3.0]), cfg)
        assert abs(traj.final[0, 0]) < 1e-12
        return "x0=3 lands on 0 in one step"

    check("sphere tracing one-step exactness", trace_exact)

    # --- metrics ---
    def zero_metrics():
        a = data.PointCloud(rng.normal(size=(16, 2)))
        r = metrics.metric_report(a, a)
        assert r.w2 == 0.0 and r.hausdorff == 0.0 and r.chamfer == 0.0
        return "all zero on identical clouds"

    check("metrics vanish on identical clouds", zero_metrics)

    def w2_bruteforce():
        import itertools

        a = data.PointCloud(rng.normal(size=(3, 2)))
        b = data.PointCloud(rng.normal(size=(3, 2)))
        val, method = metrics.w2(a, b)
        best = min(
            np.mean([((a.points[i] - b.points[p[i]]) ** 2).sum() for i in range(3)])
            for p in itertools.permutations(range(3))
        )
        assert abs(val - np.sqrt(best)) < 1e-12 and method == "exact"
        return f"matches 3! brute force: {val:.6f}"

    check("w2 vs factorial brute force", w2_bruteforce)

    def hand_metrics():
        a = data.PointCloud(np.array([[0.0]]))
        b = data.PointCloud(np.array([[3.0]]))
        assert metrics.hausdorff(a, b) == 3.0
        assert metrics.chamfer(a, b) == 18.0
        c = data.PointCloud(np.array([[0.0], [10.0]]))
        assert metrics.hausdorff(c, a) == 10.0
        return "1D hand values match"

    check("hand-computed metric values", hand_metrics)

    def adam_reference():
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([0.1, -0.2, 0.3])
        m = np.zeros(3)
        v = np.zeros(3)
        lr, b1, b2 = 0.1, 0.9, 0.999
        p1, m1, v1 = trainer.adam_update(p, g, m, v, 1, lr, b1, b2)
        m_ref = (1 - b1) * g
        v_ref = (1 - b2) * g**2
        p_ref = p - lr * (m_ref / (1 - b1)) / (np.sqrt(v_ref / (1 - b2)) + trainer.ADAM_EPS)
        assert np.allclose(p1, p_ref, atol=1e-15)
        return "first-step recurrence matches"

    check("adam reference recurrence", adam_reference)

    def sampler_determinism():
        f = field.RadialField(np.zeros((1, 2)), offset=0.01)
        cfg = samplers.HmcConfig(seed=9)
        t1 = samplers.hmc_refine(f, np.ones((4, 2)), cfg)
        t2 = samplers.hmc_refine(f, np.ones((4, 2)), cfg)
        assert np.array_equal(t1.states, t2.states)
        return "seeded runs identical"

    check("sampler determinism", sampler_determinism)

    return out
