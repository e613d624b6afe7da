"""Post-hoc structural checks of a run directory."""

from __future__ import annotations

import numpy as np

from ..diagnostics import (
    TrajectoryCheckReport,
    check_jacobian_svs,
    check_measure_preservation,
    check_well_definedness,
)
from ..models import net_oracle
from ..particles import ParticleCollection
from ..rules import check_equivariance, make_rule
from ..sharpness import power_iteration
from .runner import RunLog, _eval_slice, build_data

JACOBIAN_MAX_DIM = 64


def sharpness_oracle(log: RunLog):
    cfg = log.config()
    m = cfg["model"]
    z, y = build_data(cfg).train()
    sl = _eval_slice(len(z), cfg["sharpness"]["batch"])
    return net_oracle(m["input_dim"], m["output_dim"], z[sl], y[sl], m["loss"])


def sharpness_at(log: RunLog, step_index: int):
    cfg = log.config()
    sc = cfg["sharpness"]
    theta = log.snapshot(step_index)
    return power_iteration(sharpness_oracle(log), ParticleCollection(theta.data), max_iters=sc["max_iters"], tol=sc["tol"], seed=cfg["seed"])


def check_run(run_dir, drift_steps: int = 20, jacobian_samples: int = 10) -> TrajectoryCheckReport:
    """Aggregate trajectory checks for a finished run."""
    log = RunLog.load(run_dir)
    cfg = log.config()
    rule = make_rule(cfg["rule"])
    eta = rule.eta
    oracle = sharpness_oracle(log)
    rows = log.metrics()
    events = log.events
    report = TrajectoryCheckReport(steps_checked=int(log.manifest["steps_completed"]))
    report.merge_events = [tuple(e) for e in events["merges"]]
    report.split_events = [tuple(e) for e in events["splits"]]

    for r in rows:
        if r["max_pair_ratio"] is not None and r["eta_times_k"] is not None:
            report.max_pair_ratio_excess = max(report.max_pair_ratio_excess, r["max_pair_ratio"] - 1.0 - r["eta_times_k"])

    steps = log.snapshot_steps()
    traj = [log.snapshot(s) for s in steps]
    traj = [x if x.multiplicity is not None else ParticleCollection(x.data, np.ones(x.count, dtype=int)) for x in traj]
    ek_rows = [(r["step"], r["eta_times_k"]) for r in rows if r["eta_times_k"] is not None]
    series = []
    for a, b in zip(steps[:-1], steps[1:]):
        vals = [v for s, v in ek_rows if a <= s <= b]
        series.append(max(vals) if vals else float("nan"))
    if len(traj) > 1:
        mp = check_measure_preservation(traj, series, steps=steps)
        report.multiplicity_histogram_ok = mp.ok
        if mp.changes:
            report.notes.append(f"histogram changes (step, eta*k, attributed): {mp.changes}")

    final = traj[-1]
    packed = rule.pack(ParticleCollection(final.data))
    report.max_equivariance_dev = check_equivariance(rule.bind(oracle), packed, trials=5, seed=cfg["seed"]).max_deviation
    report.duplicate_drift = check_well_definedness(rule, oracle, traj[0], min(drift_steps, max(1, report.steps_checked)))

    if final.dim > JACOBIAN_MAX_DIM:
        report.notes.append(f"Jacobian band skipped: neuron dim {final.dim} > {JACOBIAN_MAX_DIM}")
    else:
        est = power_iteration(oracle, ParticleCollection(final.data), max_iters=cfg["sharpness"]["max_iters"], tol=cfg["sharpness"]["tol"], seed=cfg["seed"])
        if eta * est.k_hat < 1:
            jr = check_jacobian_svs(rule, oracle, ParticleCollection(final.data), est.k_hat, samples=jacobian_samples, seed=cfg["seed"])
            report.jacobian_sv_range = (jr.min_sv, jr.max_sv)
            if not jr.ok:
                report.notes.append(f"Jacobian singular values outside band {jr.band}")
        else:
            report.notes.append(f"Jacobian band not claimed at final state: eta*k_hat = {eta * est.k_hat:.4g}")
    return report
