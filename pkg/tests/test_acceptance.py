"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The heavy end-to-end
criteria (7-9) drive the full engine on the shipped benchmark families at
desk scale; everything is seeded and deterministic.
"""

import math
import time

import numpy as np
import pytest
import torch

from transferbo.acquisition import (
    ConstraintPosterior,
    expected_improvement,
    probability_of_feasibility,
    probability_of_improvement,
)
from transferbo.benchmarks import evaluate, make_problem
from transferbo.engine import (
    RunConfig,
    evaluations_to_reach,
    run_optimization,
    write_trace,
)
from transferbo.gp import ArdKernel, GpModel, assemble_gram
from transferbo.neural_kernel import NeuralKernel, min_gram_eigenvalue
from transferbo.nsga2 import nondominated_sort
from transferbo.transfer import ShallowNet, TransferGp

PASS = "PASS criterion {n}: {text}"


def report(n, text):
    print(PASS.format(n=n, text=text))


def _dense_posterior(k, kq, kdiag, noise, y):
    a_inv = np.linalg.inv(k + noise * np.eye(len(y)))
    mean = kq @ a_inv @ y
    var = kdiag - np.einsum("qi,ij,qj->q", kq, a_inv, kq)
    return mean, var


# ---------------------------------------------------------------------------
# 1. GP correctness: Cholesky path vs dense inverse
# ---------------------------------------------------------------------------

def test_criterion_1_gp_posterior_matches_dense_oracle():
    start = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    for trial in range(50):
        n = int(rng.integers(3, 51))
        d = int(rng.integers(1, 9))
        x = rng.uniform(size=(n, d))
        y = np.sin(3 * x.sum(axis=1)) + 0.1 * rng.normal(size=n)
        kernel = ArdKernel(amplitude=float(rng.uniform(0.5, 2.0)),
                           lengthscales=rng.uniform(0.2, 1.2, size=d))
        noise = float(rng.uniform(1e-6, 1e-2))
        model = GpModel(x, y, kernel, noise_variance=noise, standardize=False)
        xq = rng.uniform(size=(8, d))
        post = model.posterior(xq)
        kq = kernel.cross(torch.as_tensor(xq), torch.as_tensor(x)).detach().numpy()
        mean, var = _dense_posterior(assemble_gram(kernel, x), kq,
                                     np.full(8, kernel.amplitude), noise, y)
        scale = max(1.0, np.abs(mean).max())
        worst = max(worst,
                    np.abs(post.mean - mean).max() / scale,
                    np.abs(post.variance - np.maximum(var, 0)).max()
                    / max(1.0, np.abs(var).max()))
    elapsed = time.time() - start
    assert worst < 1e-8
    assert elapsed < 10.0
    report(1, f"Cholesky posterior vs dense inverse, 50 datasets: "
              f"max rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Neural-kernel PSD
# ---------------------------------------------------------------------------

def test_criterion_2_neural_kernel_gram_psd():
    rng = np.random.default_rng(202)
    worst = math.inf
    for draw in range(100):
        d = int(rng.integers(1, 6))
        kernel = NeuralKernel.initialize(d, seed=draw)
        kernel.theta = kernel.theta + rng.normal(0.0, 0.4, size=kernel.theta.size)
        x = rng.uniform(size=(30, d))
        gram = kernel.gram(torch.as_tensor(x)).detach().numpy()
        bound = -1e-6 * np.trace(gram)
        eig = min_gram_eigenvalue(kernel, x)
        assert eig >= bound, f"draw {draw}: min eig {eig} < {bound}"
        worst = min(worst, eig / max(np.trace(gram), 1e-300))
    report(2, f"100 random kernels x 30 points PSD; worst eig/trace {worst:.2e}")


# ---------------------------------------------------------------------------
# 3. Gradient fidelity (autodiff vs central finite differences)
# ---------------------------------------------------------------------------

def _fd_gradient(get_value, set_theta, theta0, rel_step=1e-5):
    grad = np.zeros_like(theta0)
    for i in range(theta0.size):
        h = rel_step * max(1.0, abs(theta0[i]))
        t = theta0.copy()
        t[i] += h
        set_theta(t)
        up = get_value()
        t[i] -= 2 * h
        set_theta(t)
        down = get_value()
        grad[i] = (up - down) / (2 * h)
    set_theta(theta0)
    return grad


def test_criterion_3_gradients_match_finite_differences():
    rng = np.random.default_rng(303)
    worst_gp = 0.0
    for trial in range(10):
        d = int(rng.integers(1, 4))
        x = rng.uniform(size=(12, d))
        y = np.sin(4 * x[:, 0]) + 0.2 * rng.normal(size=12)
        kernel = NeuralKernel.initialize(d, seed=trial)
        kernel.theta = kernel.theta + rng.normal(0.0, 0.15, size=kernel.theta.size)
        model = GpModel(x, y, kernel, noise_variance=5e-3)
        _, g_ad = model.mll_value_and_grad()
        g_fd = _fd_gradient(model.log_marginal_likelihood,
                            lambda t: setattr(model, "theta", t), model.theta)
        worst_gp = max(worst_gp,
                       np.abs(g_ad - g_fd).max() / max(1.0, np.abs(g_fd).max()))
    assert worst_gp < 1e-4

    worst_tr = 0.0
    for trial in range(10):
        rng_t = np.random.default_rng(7000 + trial)
        xs = rng_t.uniform(size=(8, 3))
        ys = np.cos(3 * xs[:, 0]) + xs[:, 2]
        source = GpModel(xs, ys, ArdKernel(lengthscales=0.4, ndim=3),
                         noise_variance=1e-3)
        model = TransferGp([source], target_dim=2, n_target_metrics=1,
                           width=4, seed=trial, noise_variance=0.02)
        model.set_target_data(rng_t.uniform(size=(5, 2)),
                              rng_t.normal(size=(5, 1)))
        _, g_ad = model.value_and_grad()
        g_fd = _fd_gradient(model.log_likelihood,
                            lambda t: setattr(model, "theta", t), model.theta)
        worst_tr = max(worst_tr,
                       np.abs(g_ad - g_fd).max() / max(1.0, np.abs(g_fd).max()))
    assert worst_tr < 1e-4
    report(3, f"gradient fidelity: GP-likelihood max rel err {worst_gp:.2e}, "
              f"transfer-likelihood {worst_tr:.2e} (10 configs each)")


# ---------------------------------------------------------------------------
# 4. Acquisition correctness
# ---------------------------------------------------------------------------

def test_criterion_4_acquisitions_vs_monte_carlo():
    rng = np.random.default_rng(404)
    for trial in range(20):
        mu = float(rng.uniform(-2, 2))
        v = float(rng.uniform(0.01, 4.0))
        y = float(rng.uniform(-2, 2))
        mc_rng = np.random.default_rng(5000 + trial)
        samples = mc_rng.normal(mu, math.sqrt(v), size=10**6)
        imp = np.maximum(samples - y, 0.0)
        ei_mc, ei_se = imp.mean(), imp.std() / 1000.0
        pi_mc = (samples > y).mean()
        pi_se = math.sqrt(max(pi_mc * (1 - pi_mc), 1e-12)) / 1000.0
        assert abs(expected_improvement(mu, v, y) - ei_mc) <= 3 * ei_se
        assert abs(probability_of_improvement(mu, v, y) - pi_mc) <= max(3 * pi_se, 1e-5)
    for v in (0.5, 1.0, 7.3):
        c = ConstraintPosterior(mean=np.array([2.0]), variance=np.array([v]),
                                threshold=2.0)
        assert probability_of_feasibility([c])[0] == 0.5
    report(4, "EI/PI within 3 SE of 1e6-sample Monte Carlo (20 configs); "
              "PF(boundary) = 0.5 exactly")


# ---------------------------------------------------------------------------
# 5. First-order propagation fidelity
# ---------------------------------------------------------------------------

def test_criterion_5_propagation_matches_monte_carlo():
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(600 + trial)
        xs = rng.uniform(size=(60, 2))
        ys = np.sin(4 * xs[:, 0]) + xs[:, 1] ** 2
        source = GpModel(xs, ys, ArdKernel(lengthscales=0.3, ndim=2),
                         noise_variance=1e-5, standardize=False)
        decoder = ShallowNet.near_identity(1, 1, width=16, seed=trial, noise=0.3)
        with torch.no_grad():
            decoder.b2 += 2.5
        model = TransferGp([source], target_dim=2, n_target_metrics=1,
                           encoder=ShallowNet.near_identity(
                               2, 2, width=4, noise=0.0, activation="identity"),
                           decoder=decoder, standardize_targets=False)
        xq = rng.uniform(0.2, 0.8, size=(3, 2))
        post = source.posterior(xq)
        assert np.sqrt(post.variance).max() <= 0.1
        mean, var = model.predict(xq)
        for i in range(3):
            samples = rng.normal(post.mean[i], math.sqrt(post.variance[i]),
                                 size=10**5)
            with torch.no_grad():
                pushed = decoder.forward(torch.tensor(samples[:, None])).numpy()[:, 0]
            worst = max(worst,
                        abs(mean[i, 0] - pushed.mean()) / abs(pushed.mean()),
                        abs(var[i, 0] - pushed.var()) / pushed.var())
    assert worst < 0.05
    report(5, f"first-order propagation vs 1e5-sample Monte Carlo: "
              f"max rel err {worst:.3f} (20 configs)")


# ---------------------------------------------------------------------------
# 6. Nondominated sorting vs brute force
# ---------------------------------------------------------------------------

def test_criterion_6_front0_matches_bruteforce():
    rng = np.random.default_rng(606)
    for trial in range(200):
        n = int(rng.integers(4, 65))
        objs = rng.normal(size=(n, 3))
        if trial % 3 == 0:
            objs = np.round(objs, 1)  # force ties
        front0 = sorted(nondominated_sort(objs)[0])
        brute = sorted(
            i for i in range(n)
            if not any(((objs[j] >= objs[i]).all() and (objs[j] > objs[i]).any())
                       for j in range(n) if j != i))
        assert front0 == brute, f"trial {trial}"
    report(6, "front-0 identical to O(n^2) brute force on 200 random sets")


# ---------------------------------------------------------------------------
# 10. Determinism
# ---------------------------------------------------------------------------

def test_criterion_10_traces_reproduce_byte_for_byte(tmp_path):
    problem = make_problem("constrained_branin_2d")
    paths = []
    for run in range(2):
        cfg = RunConfig(problem=problem, batch_size=3, n_iterations=2,
                        n_initial=6, mode="constrained", transfer=False,
                        seed=21, fit_steps=25, fit_restarts=1, refresh_steps=10,
                        population=16, generations=5)
        result = run_optimization(cfg)
        path = tmp_path / f"trace_{run}.csv"
        write_trace(str(path), result, problem)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    report(10, "identical (config, seed) reproduces the CSV trace byte-for-byte")


# ---------------------------------------------------------------------------
# 7 - 9. End-to-end engine behaviour on the shipped families
# ---------------------------------------------------------------------------

def _fit_source_from_run(src_run, dim, n_metrics, steps=80):
    return [GpModel.fit(src_run.x, src_run.metrics[:, j],
                        NeuralKernel.initialize(dim, seed=j),
                        steps=steps, restarts=1, seed=j)
            for j in range(n_metrics)]


def test_criterion_7_convergence_on_grid_verified_optimum():
    start = time.time()
    problem = make_problem("constrained_branin_2d")
    grid = np.linspace(0.0, 1.0, 1000)
    uu = np.array(np.meshgrid(grid, grid)).reshape(2, -1).T
    vals = evaluate(problem, uu)
    feas = problem.feasible(vals)
    optimum = -vals[feas, 0].min()   # maximization convention

    bests = []
    for seed in range(5):
        cfg = RunConfig(problem=problem, batch_size=4, n_iterations=30,
                        n_initial=10, mode="constrained", transfer=False,
                        seed=seed, fit_steps=150, fit_restarts=2,
                        refresh_steps=50, population=60, generations=30)
        result = run_optimization(cfg)
        assert result.n_evaluations <= 200
        bests.append(result.best_value)
    elapsed = time.time() - start
    median_best = float(np.median(bests))
    gap = (optimum - median_best) / abs(optimum)
    assert gap <= 0.01, f"median best {median_best} vs optimum {optimum}"
    assert elapsed < 180.0
    report(7, f"median of 5 seeds within {gap*100:.2f}% of the grid optimum "
              f"in <=130 evaluations ({elapsed:.0f}s)")


def test_criterion_8_transfer_benefit():
    start = time.time()
    src_problem = make_problem("two_stage_analog", variant="source")
    src_cfg = RunConfig(problem=src_problem, batch_size=8, n_iterations=12,
                        n_initial=104, mode="constrained", transfer=False,
                        seed=77, fit_steps=90, fit_restarts=1, refresh_steps=20,
                        population=64, generations=24)
    src_run = run_optimization(src_cfg)
    assert src_run.n_evaluations == 200   # the 200-sample source
    source_models = _fit_source_from_run(src_run, 10, 4)

    problem = make_problem("two_stage_analog")
    ratios = []
    for seed in range(7):
        common = dict(problem=problem, batch_size=8, n_iterations=6,
                      n_initial=40, mode="constrained", seed=seed,
                      fit_steps=100, fit_restarts=2, refresh_steps=20,
                      transfer_fit_steps=170, transfer_refresh_steps=40,
                      population=64, generations=24)
        off = run_optimization(RunConfig(transfer=False, **common))
        on = run_optimization(RunConfig(transfer=True, **common),
                      source_models=source_models)
        b_off = off.best_value
        assert b_off is not None, f"baseline seed {seed} found no feasible point"
        e_off = evaluations_to_reach(off.incumbent_trace, b_off - 1e-9)
        e_on = evaluations_to_reach(on.incumbent_trace, b_off - 1e-9)
        ratios.append(math.inf if e_on is None else e_on / e_off)
    no_harm = sum(r <= 1.0 for r in ratios)
    median = float(np.median(ratios))
    elapsed = time.time() - start
    assert no_harm >= 4, f"ratios {ratios}"
    assert median <= 0.8, f"ratios {ratios}"
    report(8, f"transfer-on reaches the baseline's final best at "
              f"median {median:.2f}x its evaluations "
              f"({no_harm}/7 seeds <= 1.0x, {elapsed:.0f}s)")


def test_criterion_9_negative_transfer_safety():
    start = time.time()
    adv_problem = make_problem("constrained_branin_2d", variant="adversarial")
    adv_cfg = RunConfig(problem=adv_problem, batch_size=6, n_iterations=15,
                        n_initial=30, mode="constrained", transfer=False,
                        seed=99, fit_steps=80, fit_restarts=1, refresh_steps=20,
                        population=50, generations=20)
    adv_run = run_optimization(adv_cfg)
    adversarial_source = _fit_source_from_run(adv_run, 2, 2, steps=60)

    problem = make_problem("constrained_branin_2d")
    safe = 0
    details = []
    for seed in range(5):
        common = dict(problem=problem, batch_size=4, n_iterations=30,
                      n_initial=10, mode="constrained", seed=seed,
                      fit_steps=120, fit_restarts=2, refresh_steps=40,
                      transfer_fit_steps=120, transfer_refresh_steps=25,
                      population=50, generations=24)
        off = run_optimization(RunConfig(transfer=False, **common))
        on = run_optimization(RunConfig(transfer=True, **common),
                      source_models=adversarial_source)
        share_2 = on.state.w2 / (on.state.w1 + on.state.w2)
        within = (on.best_value is not None and off.best_value is not None
                  and on.best_value >= off.best_value - 0.05 * abs(off.best_value))
        details.append((round(share_2, 3), within))
        if within and share_2 > 0.5:
            safe += 1
    elapsed = time.time() - start
    assert safe >= 4, f"per-seed (w2 share, within 5%): {details}"
    report(9, f"adversarial source contained on {safe}/5 seeds "
              f"(w2 share and final best preserved, {elapsed:.0f}s)")
