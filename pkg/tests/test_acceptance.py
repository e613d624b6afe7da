"""End-to-end acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL (or WARN) line; the lines are collected in the
terminal summary.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from neurotopo.diagnostics import (
    check_measure_preservation,
    check_no_merge_split,
    check_jacobian_svs,
    check_well_definedness,
    trajectory,
)
from neurotopo.geometry import ManifoldSpec, sample
from neurotopo.harness import validate_config, run
from neurotopo.models import net_oracle
from neurotopo.particles import ParticleCollection
from neurotopo.rules import Adam, GradientDescent, Momentum, check_equivariance, quadratic_oracle
from neurotopo.sharpness import one_step_loss_decrease, power_iteration
from neurotopo.topology import betti_numbers, betti_oracle, betti_profile, build_rips, pairwise_distances


def status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def random_net(seed, d, h, n=64):
    rng = np.random.default_rng(seed)
    oracle = net_oracle(d, 1, rng.normal(size=(n, d)), rng.normal(size=(n, 1)))
    return oracle, ParticleCollection(rng.normal(size=(h, d + 1)))


def packed_state(rule, x, rng):
    packed = rule.pack(x).data.copy()
    k = x.dim
    if rule.blocks >= 2:
        packed[:, k : 2 * k] = rng.normal(size=x.data.shape) * 0.1
    if rule.blocks == 3:
        packed[:, 2 * k :] = rng.uniform(0, 0.1, size=x.data.shape)
    return ParticleCollection(packed)


def test_1_equivariance(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for rule in (GradientDescent(0.01), Momentum(0.01), Adam(0.01)):
        for seed in range(5):
            oracle, x = random_net(seed, 8, 32)
            x = packed_state(rule, x, np.random.default_rng(100 + seed))
            rep = check_equivariance(rule.bind(oracle, t=3), x, trials=20, seed=seed)
            worst = max(worst, rep.max_deviation)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10
    verdict(1, "equivariance", status(ok), f"max deviation {worst:.2e}", elapsed, 10)
    assert ok


def test_2_duplicate_drift(verdict):
    t0 = time.perf_counter()
    drifts = {}
    for rule in (GradientDescent(0.01), Momentum(0.005), Adam(1e-3)):
        oracle, x = random_net(7, 2, 16)
        drifts[rule.name] = check_well_definedness(rule, oracle, x, 1000)
    elapsed = time.perf_counter() - t0
    ok = drifts["gd"] == 0.0 and drifts["momentum"] == 0.0 and drifts["adam"] <= 1e-12 and elapsed < 10
    verdict(2, "duplicated-neuron drift", status(ok), ", ".join(f"{k}={v:.1e}" for k, v in drifts.items()), elapsed, 10)
    assert ok


def test_3_pairwise_bounds_on_quadratics(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    ok_band, worst_merge = True, 0.0
    for trial in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        lam = np.sort(rng.uniform(0.1, 5.0, 4))[::-1]
        a = q @ np.diag(lam) @ q.T
        oracle = quadratic_oracle(a)
        top = lam[0]
        eta = 0.5 / top
        x0 = ParticleCollection(rng.normal(size=(12, 4)))
        traj = trajectory(GradientDescent(eta), oracle, x0, 5)
        rep = check_no_merge_split(GradientDescent(eta), traj, k_hat_per_step=[top] * 5)
        ok_band &= rep.min_ratio >= 1 - eta * top - 1e-9 and rep.max_ratio <= 1 + eta * top + 1e-9
        base = rng.normal(size=4)
        pair = ParticleCollection(np.vstack([base, base + rng.uniform(0.5, 3) * q[:, 0]]))
        after = trajectory(GradientDescent(1 / top), oracle, pair, 1)[1].data
        worst_merge = max(worst_merge, float(np.linalg.norm(after[0] - after[1])))
    elapsed = time.perf_counter() - t0
    ok = ok_band and worst_merge <= 1e-12 and elapsed < 5
    verdict(3, "pairwise ratio band and merge at 1/lambda", status(ok), f"band ok={ok_band}, merged distance {worst_merge:.1e}", elapsed, 5)
    assert ok


def test_4_betti_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(44)
    mismatches = 0
    for _ in range(500):
        n = int(rng.integers(1, 9))
        pts = rng.normal(size=(n, int(rng.integers(1, 4))))
        dm = pairwise_distances(pts)
        cx = build_rips(dm, float(rng.uniform(0.05, 1.2) * max(dm.diameter, 1e-3)), 3)
        mismatches += betti_numbers(cx).as_tuple() != betti_oracle(cx).as_tuple()
    octa = build_rips(pairwise_distances(np.vstack([np.eye(3), -np.eye(3)])), 1.5)
    square = build_rips(pairwise_distances(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])), 1.2)
    isolated = build_rips(pairwise_distances(np.array([[0.0], [5.0], [10.0]])), 1.0)
    fixtures = [betti_numbers(c).as_tuple() for c in (octa, square, isolated)]
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and fixtures == [(1, 0, 1), (1, 1, 0), (3, 0, 0)] and elapsed < 60
    verdict(4, "Betti oracle equivalence", status(ok), f"{mismatches} mismatches in 500 clouds, fixtures {fixtures}", elapsed, 60)
    assert ok


def test_5_sphere_initialization(verdict):
    t0 = time.perf_counter()
    prof = betti_profile(sample(ManifoldSpec("sphere", 1024, seed=0)))
    elapsed = time.perf_counter() - t0
    ok = prof.as_tuple() == (1, 0, 1) and elapsed < 120
    verdict(5, "sphere initialization profile", status(ok), f"{prof.as_tuple()} at scale {prof.scale_used:.3f}", elapsed, 120)
    assert ok


def phase_config(tmp_path: Path, name, eta, steps, measure, rule="gd"):
    return validate_config({
        "seed": 0,
        "model": {"input_dim": 1, "output_dim": 1, "hidden": 1000},
        "data": {"kind": "teacher", "hidden_star": 50},
        "init": {"kind": "manifold", "manifold": {"kind": "disjoint_circles"}},
        "rule": {"rule": rule, "eta": eta},
        "steps": steps,
        "measure": measure,
        "output_dir": str(tmp_path / name),
    })


def longest_run(mask) -> int:
    best = cur = 0
    for m in mask:
        cur = cur + 1 if m else 0
        best = max(best, cur)
    return best


def test_6_topological_phase_behaviour(tmp_path, verdict):
    t0 = time.perf_counter()
    small = run(phase_config(tmp_path, "small", 1e-3, 2000, {"log_every": 50, "betti_every": 50, "sharpness_every": 50}))
    t_small = time.perf_counter() - t0
    _, ek = small.column("eta_times_k")
    _, b0 = small.column("b0")
    small_ok = (
        small.manifest["steps_completed"] >= 2000 and np.all(ek < 0.7) and np.all(b0 == 2)
        and len(small.events["merges"]) == 0 and t_small < 300
    )

    t1 = time.perf_counter()
    large = run(phase_config(tmp_path, "large", 5e-3, 60, {"log_every": 1, "betti_every": 5, "sharpness_every": 1}))
    t_large = time.perf_counter() - t1
    ek_steps, ek_l = large.column("eta_times_k")
    b0_steps, b0_l = large.column("b0")
    assert np.array_equal(np.diff(ek_steps), np.ones(len(ek_steps) - 1))
    above = longest_run(ek_l > 1)
    drops = b0_steps[b0_l < 2]
    merges = len(large.events["merges"])
    large_ok = above >= 10 and (merges > 0 or drops.size > 0) and t_large < 300

    ok = small_ok and large_ok
    detail = (
        f"small eta=1e-3: max eta*k {ek.max():.2f}, b0 values {sorted(set(b0.astype(int).tolist()))}, "
        f"{len(small.events['merges'])} merges; large eta=5e-3: {above} consecutive steps eta*k>1, "
        f"{merges} merges, b0 drop at steps {drops[:3].astype(int).tolist()}"
    )
    verdict(6, "topological phase behaviour", status(ok), detail, max(t_small, t_large), 300)
    assert small_ok and large_ok


def test_7_eta_star_optimality(verdict):
    t0 = time.perf_counter()
    k = 3.0
    oracle = quadratic_oracle(k, 3)
    x = ParticleCollection([[1.0, -0.5, 2.0], [0.3, 0.3, -1.0]])
    grid = [j / 10 / k for j in range(1, 20)]
    dec = [r.decrease for r in one_step_loss_decrease(oracle, x, grid)]
    best = grid[int(np.argmax(dec))]
    nearest = grid[int(np.argmin([abs(g - 1 / k) for g in grid]))]
    at_two = one_step_loss_decrease(oracle, x, [2 / k])[0].decrease
    elapsed = time.perf_counter() - t0
    ok = best == nearest and at_two <= 1e-9 and elapsed < 1
    verdict(7, "eta* maximises one-step decrease", status(ok), f"argmax {best:.4f} vs 1/K {1 / k:.4f}, decrease at 2/K {at_two:.1e}", elapsed, 1)
    assert ok


def dense_hessian(oracle, x, h=1e-5):
    n = x.data.size
    flat = x.data.reshape(-1)
    hess = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        gp = oracle.flat_gradient(flat + e, x.data.shape)
        gm = oracle.flat_gradient(flat - e, x.data.shape)
        hess[:, j] = (gp - gm) / (2 * h)
    return 0.5 * (hess + hess.T)


def test_8_sharpness_estimator(verdict):
    t0 = time.perf_counter()
    worst_net = 0.0
    for seed, (d, h) in enumerate([(1, 20), (2, 40), (3, 60), (9, 48)]):
        oracle, x = random_net(seed, d, h, n=80)
        assert x.data.size <= 500
        top = float(np.max(np.abs(np.linalg.eigvalsh(dense_hessian(oracle, x)))))
        est = power_iteration(oracle, x, tol=1e-8, max_iters=5000)
        worst_net = max(worst_net, abs(est.k_hat - top) / top)
    rng = np.random.default_rng(8)
    worst_quad = 0.0
    all_converged = True
    for _ in range(10):
        # power iteration needs a spectral gap; keep the top eigenvalue >= 1% clear of the rest
        lam = rng.uniform(0.1, 10.0, size=6)
        lam[0] = lam[1:].max() * rng.uniform(1.01, 2.0)
        est = power_iteration(quadratic_oracle(lam), ParticleCollection(rng.normal(size=(3, 6))), tol=1e-12, max_iters=5000)
        all_converged &= est.converged
        worst_quad = max(worst_quad, abs(est.k_hat - lam.max()) / lam.max())
    elapsed = time.perf_counter() - t0
    ok = worst_net <= 1e-3 and worst_quad <= 1e-6 and all_converged and elapsed < 30
    verdict(8, "sharpness estimator", status(ok), f"net rel err {worst_net:.1e}, quadratic rel err {worst_quad:.1e}", elapsed, 30)
    assert ok


def test_9_jacobian_band(verdict):
    t0 = time.perf_counter()
    oracle, x = random_net(9, 2, 50, n=100)
    k = power_iteration(oracle, x, tol=1e-9, max_iters=5000).k_hat
    eta = 0.5 / k
    rep = check_jacobian_svs(GradientDescent(eta), oracle, x, k, samples=10, seed=0, tol=1e-3)
    elapsed = time.perf_counter() - t0
    ok = rep.ok and abs(eta * k - 0.5) <= 1e-12 and elapsed < 30
    verdict(9, "Jacobian band", status(ok), f"singular values in [{rep.min_sv:.4f}, {rep.max_sv:.4f}], band [{rep.band[0]:.4f}, {rep.band[1]:.4f}]", elapsed, 30)
    assert ok


def test_10_measure_preservation(verdict):
    t0 = time.perf_counter()
    oracle, x = random_net(10, 2, 30, n=100)
    mult = np.ones(30, dtype=int)
    mult[0] = 3
    x = ParticleCollection(x.data, mult)
    k = power_iteration(oracle, x, tol=1e-8, max_iters=2000).k_hat
    eta = 0.3 / k
    traj = trajectory(GradientDescent(eta), oracle, x, 300)
    eks = [eta * power_iteration(oracle, s, tol=1e-6, max_iters=500).k_hat for s in traj[:-1:50]]
    small = check_measure_preservation(traj, np.repeat(eks, 50)[: len(traj) - 1])
    small_ok = small.ok and small.changes == [] and max(eks) < 1

    lam = np.array([4.0, 1.0])
    big_x = ParticleCollection([[1.0, 0.5], [-2.0, 0.5], [0.0, 3.0], [1.0, -2.0]], [3, 1, 1, 1])
    big = check_measure_preservation(trajectory(GradientDescent(0.25), quadratic_oracle(lam), big_x, 3), [1.0] * 3)
    big_ok = big.ok and len(big.changes) > 0 and all(c[1] >= 1 for c in big.changes)
    elapsed = time.perf_counter() - t0
    ok = small_ok and big_ok and elapsed < 120
    detail = (
        f"small-eta histogram {small.initial[:3]}... unchanged (max eta*k {max(eks):.2f}); "
        f"eta*k=1 run changed {big.initial} -> {big.final}, all changes at eta*k>=1"
    )
    verdict(10, "measure preservation", status(ok), detail, elapsed, 120)
    assert ok


def test_11_adam_progressive_sharpening(tmp_path, verdict):
    t0 = time.perf_counter()
    log = run(phase_config(tmp_path, "adam", 1e-4, 3000, {"log_every": 100, "betti_every": 100, "sharpness_every": 100}, rule="adam"))
    elapsed = time.perf_counter() - t0
    steps, k = log.column("k_hat")
    _, ek = log.column("eta_times_k")
    betti_steps = log.column("b0")[0]
    betti = np.column_stack([log.column(c)[1] for c in ("b0", "b1", "b2")])
    assert np.array_equal(betti_steps, steps)
    ratio = k / k[0]
    changed = np.flatnonzero(np.any(betti != betti[0], axis=1))
    first_change = int(steps[changed[0]]) if changed.size else None
    crossed = np.flatnonzero(ek > 1)
    first_cross = int(steps[crossed[0]]) if crossed.size else None
    sharpened = ratio.max() >= 2
    if first_change is not None:
        reached = np.flatnonzero(ratio >= 2)
        sharpened = sharpened and reached.size > 0 and steps[reached[0]] < first_change
    ordered = first_change is None or (first_cross is not None and first_cross < first_change)
    trend = sharpened and ordered
    detail = (
        f"k_hat ratio max {ratio.max():.3f} (baseline {k[0]:.1f}), max eta*k {ek.max():.3f}, "
        f"first Betti change {first_change}, first eta*k>1 {first_cross}"
    )
    verdict(11, "Adam progressive sharpening", "PASS" if trend else "WARN", detail, elapsed, 600)
    if not trend:
        warnings.warn(f"progressive-sharpening trend absent: {detail}")
    assert elapsed < 600 and not log.manifest["diverged"]
    assert ordered, "a Betti change preceded eta*k exceeding 1"
