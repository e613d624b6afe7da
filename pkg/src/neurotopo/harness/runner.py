"""The training run: initialization, the update loop and scheduled measurements.

A run directory holds

* ``manifest.json``: config echo, versions, seeds, timing, snapshot index,
  divergence and early-stop status;
* ``metrics.csv``: one row per logged step with the columns in
  ``METRIC_COLUMNS``; measurements not taken at a step are left empty;
* ``events.json``: merge and split events and the divergence record;
* ``snapshots/step_XXXXXXXX.csv``: neuron positions (parameter blocks only).

Metrics and snapshots depend only on the config, so two runs of the same
config are byte-identical. Wall-clock figures live in the manifest alone.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
from scipy.spatial.distance import pdist
from threadpoolctl import threadpool_limits

from .. import __version__
from ..diagnostics import MergeTracker
from ..errors import ConfigError, DegenerateCloudError, NumericError
from ..geometry import ManifoldSpec, embed, embed_neurons, sample
from ..models import Dataset, TeacherSpec, TwoLayerNet, accuracy, batch_stream, forward, generate_teacher_dataset, load_mnist, net_oracle
from ..particles import ParticleCollection, read_csv, step, write_csv
from ..rules import make_rule
from ..sharpness import power_iteration
from ..topology import BettiProfile, betti_profile
from .config import RunConfig, validate_config

METRIC_COLUMNS = [
    "step", "loss", "test_metric", "b0", "b1", "b2", "scale",
    "k_hat", "eta_star", "eta_times_k", "min_pair_dist", "max_pair_ratio",
]


@dataclass
class RunLog:
    run_dir: Path
    manifest: dict

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / "metrics.csv"

    @property
    def events(self) -> dict:
        return json.loads((self.run_dir / "events.json").read_text())

    def metrics(self) -> list[dict]:
        """Metric rows with numbers parsed and empty cells as ``None``."""
        with open(self.metrics_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out = []
        for r in rows:
            parsed = {}
            for k, v in r.items():
                if v == "":
                    parsed[k] = None
                elif k in ("step", "b0", "b1", "b2"):
                    parsed[k] = int(v)
                else:
                    parsed[k] = float(v)
            out.append(parsed)
        return out

    def column(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Steps and values of the rows where ``name`` was measured."""
        rows = [r for r in self.metrics() if r[name] is not None]
        return np.array([r["step"] for r in rows]), np.array([r[name] for r in rows], dtype=float)

    def snapshot_steps(self) -> list[int]:
        return [s["step"] for s in self.manifest["snapshots"]]

    def snapshot(self, step_index: int) -> ParticleCollection:
        for s in self.manifest["snapshots"]:
            if s["step"] == step_index:
                return read_csv(self.run_dir / s["file"])
        raise KeyError(f"no snapshot at step {step_index}; available: {self.snapshot_steps()}")

    def config(self) -> RunConfig:
        return validate_config(self.manifest["config"], self.manifest.get("config_dir", "."), check_files=False)

    @classmethod
    def load(cls, run_dir) -> "RunLog":
        run_dir = Path(run_dir)
        path = run_dir / "manifest.json"
        if not path.is_file():
            raise FileNotFoundError(f"{run_dir} is not a run directory (no manifest.json)")
        return cls(run_dir, json.loads(path.read_text()))


# -- building blocks -------------------------------------------------------------


def _seeds(cfg: RunConfig) -> dict:
    s = cfg["seed"]
    return {
        "teacher": cfg["data"].get("seed", s),
        "data": cfg["data"].get("seed", s) + 1,
        "init": cfg["init"].get("seed", s + 2),
        "batches": s + 3,
    }


def build_data(cfg: RunConfig) -> Dataset:
    d, c = cfg["model"]["input_dim"], cfg["model"]["output_dim"]
    spec = cfg["data"]
    seeds = _seeds(cfg)
    if spec["kind"] == "teacher":
        if c != 1:
            raise ConfigError("teacher data has a single output; set model.output_dim to 1")
        teacher = TeacherSpec.sample(spec["hidden_star"], d, seeds["teacher"])
        return generate_teacher_dataset(teacher, spec["n"], d, seeds["data"], spec["train_fraction"])
    z, y = load_mnist(cfg.path(spec["images"]), cfg.path(spec["labels"]), spec.get("limit"))
    if "test_images" in spec:
        zt, yt = load_mnist(cfg.path(spec["test_images"]), cfg.path(spec["test_labels"]), spec.get("limit"))
        n_train = z.shape[0]
        z, y = np.vstack([z, zt]), np.vstack([y, yt])
        return Dataset(z, y, n_train / z.shape[0])
    return Dataset(z, y, spec.get("train_fraction", 0.7))


def build_init(cfg: RunConfig) -> ParticleCollection:
    m = cfg["model"]
    h, d, c = m["hidden"], m["input_dim"], m["output_dim"]
    init = cfg["init"]
    seed = _seeds(cfg)["init"]
    if init["kind"] == "gaussian":
        return ParticleCollection(np.random.default_rng(seed).normal(0.0, init["std"], size=(h, d + c)))
    mspec = dict(init["manifold"])
    mspec["n"] = h
    mspec.setdefault("seed", seed)
    pts = sample(ManifoldSpec.from_dict(mspec))
    pts = pts.with_data(init["scale"] * pts.data)
    mode = init["embed"]
    if mode == "direct":
        if pts.dim != d + c:
            raise ConfigError(f"manifold points have dim {pts.dim} but neurons have dim {d + c}; choose another init.embed")
        return pts
    if mode == "neurons":
        return embed_neurons(pts, d, c, init["output_scale"], seed)
    return embed(pts, d + c, seed, mode="pad" if mode == "pad" else "frame")


def _eval_slice(n: int, cap) -> slice:
    return slice(0, n if cap is None else min(n, cap))


class _Measurer:
    """Betti numbers and sharpness of a parameter cloud; keeps the warm start."""

    def __init__(self, cfg: RunConfig, sharp_oracle):
        self.cfg = cfg
        self.oracle = sharp_oracle
        self.v = None
        self.subsampled: list[int] = []

    def betti(self, t: int, theta: np.ndarray) -> BettiProfile:
        topo = self.cfg["topology"]
        scale = topo["scale"] if topo["scale_mode"] == "fixed" else None
        try:
            prof = betti_profile(
                theta, scale=scale, max_dim=topo["max_dim"], collapse=topo["collapse"],
                subsample=topo["subsample_cap"], seed=self.cfg["seed"],
            )
        except DegenerateCloudError:
            return BettiProfile(1, 0, 0, 0.0, theta.shape[0], {"degenerate": True})
        if "subsampled_from" in prof.meta:
            self.subsampled.append(t)
        return prof

    def sharpness(self, theta: np.ndarray):
        sc = self.cfg["sharpness"]
        est = power_iteration(self.oracle, ParticleCollection(theta), max_iters=sc["max_iters"], tol=sc["tol"], seed=self.cfg["seed"], v0=self.v)
        self.v = est.vector
        return est


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _due(t: int, every) -> bool:
    return every is not None and t % every == 0


def run(cfg: RunConfig, quiet: bool = True) -> RunLog:
    """Train according to ``cfg`` and write the run directory."""
    threads = os.environ.get("NEUROTOPO_THREADS")
    limit = int(threads) if threads else None
    with threadpool_limits(limits=limit):
        return _run(cfg, limit, quiet)


def _run(cfg: RunConfig, threads, quiet: bool) -> RunLog:
    started = time.time()
    out = cfg.output_dir
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    for old in (out / "snapshots").glob("step_*.csv"):
        old.unlink()

    m = cfg["model"]
    d, c, loss_kind = m["input_dim"], m["output_dim"], m["loss"]
    data = build_data(cfg)
    z_tr, y_tr = data.train()
    z_te, y_te = data.test()
    ev = cfg["measure"]["eval_samples"]
    z_ev, y_ev = z_tr[_eval_slice(len(z_tr), ev)], y_tr[_eval_slice(len(z_tr), ev)]
    z_te, y_te = z_te[_eval_slice(len(z_te), ev)], y_te[_eval_slice(len(z_te), ev)]
    train_oracle = net_oracle(d, c, z_ev, y_ev, loss_kind)
    sb = cfg["sharpness"]["batch"]
    sl = _eval_slice(len(z_tr), sb)
    measurer = _Measurer(cfg, net_oracle(d, c, z_tr[sl], y_tr[sl], loss_kind))

    rule = make_rule(cfg["rule"])
    eta = rule.eta
    theta0 = build_init(cfg)
    x = rule.pack(theta0)

    meas = cfg["measure"]
    log_every, betti_every = meas["log_every"], meas["betti_every"]
    sharp_every, snap_every, pairs_every = meas["sharpness_every"], meas["snapshot_every"], meas["pairs_every"]
    eval_every = meas["eval_every"] if meas["eval_every"] is not None else log_every
    stop = cfg["stop"]

    tracker = MergeTracker(cfg["merge_tol"])
    tracker.update(0, theta0)
    pool = ThreadPoolExecutor(max_workers=1) if cfg["pipelined"] else None

    rows: list[dict] = []
    snapshots: list[dict] = []
    losses: dict[int, float] = {}
    pending_ratio = None
    pending_min = None
    divergence = None
    stopped_early = None

    def test_metric(theta):
        net = TwoLayerNet(d, c, ParticleCollection(theta))
        if loss_kind == "cross_entropy":
            return accuracy(net, z_te, y_te)
        return float(np.mean(np.sum((forward(net, z_te) - y_te) ** 2, axis=1)))

    def snapshot(t, theta_pc):
        name = f"snapshots/step_{t:08d}.csv"
        write_csv(theta_pc, out / name)
        snapshots.append({"step": t, "file": name})

    def observe(t, x_cur, final=False):
        nonlocal pending_ratio, pending_min
        theta_pc = rule.theta(x_cur)
        theta = np.array(theta_pc.data)
        row = {k: None for k in METRIC_COLUMNS}
        row["step"] = t
        due_any = final or t == 0
        if _due(t, log_every) or final or t == 0:
            row["loss"] = loss_at(t, x_cur)
            due_any = True
        if _due(t, eval_every) or final or t == 0:
            row["test_metric"] = test_metric(theta)
            due_any = True
        if _due(t, betti_every) or (final and betti_every is not None):
            row["_betti"] = pool.submit(measurer.betti, t, theta) if pool else measurer.betti(t, theta)
            due_any = True
        if _due(t, sharp_every) or (final and sharp_every is not None):
            row["_sharp"] = pool.submit(measurer.sharpness, theta) if pool else measurer.sharpness(theta)
            due_any = True
        if _due(t, snap_every) or final or t == 0:
            snapshot(t, theta_pc)
            due_any = True
        if not due_any:
            return
        if pending_min is not None:
            row["min_pair_dist"] = pending_min
        if pending_ratio is not None:
            row["max_pair_ratio"] = pending_ratio
        pending_ratio = pending_min = None
        rows.append(row)

    def loss_at(t, x_cur):
        if t not in losses:
            losses[t] = train_oracle.loss(rule.theta(x_cur))
        return losses[t]

    def finalize(t, x_cur):
        nonlocal pending_min, pending_ratio
        if rows and rows[-1]["step"] == t:
            last = rows.pop()
            if snapshots and snapshots[-1]["step"] == t:
                snapshots.pop()
            pending_min = _combine(min, last["min_pair_dist"], pending_min)
            pending_ratio = _combine(max, last["max_pair_ratio"], pending_ratio)
        observe(t, x_cur, final=True)

    n = theta0.count
    if n > 1:
        pending_min = float(pdist(theta0.data).min())
    prev_d = pdist(theta0.data) if n > 1 and _due(1, pairs_every) else None
    observe(0, x, final=cfg["steps"] == 0)

    batches = batch_stream(len(z_tr), cfg["batch_size"], _seeds(cfg)["batches"])
    t = 0
    for t in range(1, cfg["steps"] + 1):
        idx = next(batches)
        oracle = net_oracle(d, c, z_tr[idx], y_tr[idx], loss_kind)
        try:
            x_next = step(x, rule.update(oracle, x, t), eta)
        except NumericError as exc:
            divergence = {"step": t, "message": str(exc)}
            t -= 1
            break
        x = x_next
        theta_now = rule.theta(x).data
        dist = None
        if n > 1 and _due(t, pairs_every):
            dist = pdist(theta_now)
            pending_min = _combine(min, float(dist.min()), pending_min)
            if prev_d is not None and (prev_d > 0).any():
                ok = prev_d > 0
                pending_ratio = _combine(max, float(np.max(dist[ok] / prev_d[ok])), pending_ratio)
            tracker.update(t, theta_now, dist)
        if n > 1 and _due(t + 1, pairs_every):
            prev_d = dist if dist is not None else pdist(theta_now)
        try:
            final = t == cfg["steps"]
            tol = stop["loss_delta_tol"]
            if tol is not None and _due(t, log_every):
                w = stop["window"]
                if (t - w) in losses and abs(loss_at(t, x) - losses[t - w]) < tol:
                    stopped_early = t
                    final = True
            observe(t, x, final=final)
        except NumericError as exc:
            divergence = {"step": t, "message": str(exc)}
            break
        if final:
            break

    if divergence is not None:
        try:
            finalize(t, x)
        except NumericError:
            pass

    for row in rows:
        b = row.pop("_betti", None)
        s = row.pop("_sharp", None)
        if b is not None:
            b = b.result() if pool else b
            row.update(b0=b.b0, b1=b.b1, b2=b.b2, scale=b.scale_used)
        if s is not None:
            s = s.result() if pool else s
            row.update(k_hat=s.k_hat, eta_star=s.eta_star, eta_times_k=eta * s.k_hat)
    if pool:
        pool.shutdown()

    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in METRIC_COLUMNS])

    events = {
        "merge_tol": tracker.merge_tol,
        "merges": [list(e) for e in tracker.merges],
        "splits": [list(e) for e in tracker.splits],
        "divergence": divergence,
    }
    (out / "events.json").write_text(json.dumps(events, indent=1) + "\n")

    manifest = {
        "config": cfg.raw,
        "config_dir": str(cfg.base_dir.resolve()),
        "versions": {"neurotopo": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "seeds": _seeds(cfg),
        "rule": rule.name,
        "eta": eta,
        "n_train": int(len(z_tr)),
        "n_test": int(data.test()[0].shape[0]),
        "threads": threads,
        "steps_completed": t,
        "diverged": divergence is not None,
        "divergence_step": None if divergence is None else divergence["step"],
        "stopped_early": stopped_early,
        "betti_subsampled_steps": measurer.subsampled,
        "snapshots": snapshots,
        "notes": cfg["notes"],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_clock_s": round(time.time() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    if not quiet:
        status = "diverged" if divergence else "done"
        print(f"{status}: {t} steps, {len(rows)} metric rows -> {out}")
    return RunLog(out, manifest)


def _combine(fn, a, b):
    if a is None:
        return b
    if b is None:
        return a
    return fn(a, b)
