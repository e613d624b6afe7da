"""Checks of the structural guarantees over real training trajectories.

The update map of a permutation-equivariant rule with step ``eta`` below
``1 / K`` moves every pair of particles by a bounded ratio, never merges or
splits particles, and preserves the multiplicity distribution. The functions
here measure each of those statements on recorded trajectories.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist

from .errors import PreconditionError
from .particles import ParticleCollection, check_step_size, step
from .rules import GradientOracle


@dataclass
class TrajectoryCheckReport:
    steps_checked: int = 0
    max_equivariance_dev: float = 0.0
    max_pair_ratio_excess: float = 0.0
    merge_events: list = field(default_factory=list)
    split_events: list = field(default_factory=list)
    duplicate_drift: float = 0.0
    multiplicity_histogram_ok: bool = True
    jacobian_sv_range: tuple | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["merge_events"] = [list(e) for e in self.merge_events]
        d["split_events"] = [list(e) for e in self.split_events]
        if self.jacobian_sv_range is not None:
            d["jacobian_sv_range"] = list(self.jacobian_sv_range)
        return d


def _packed_start(rule, oracle: GradientOracle, x0: ParticleCollection) -> ParticleCollection:
    if x0.dim == oracle.dim and hasattr(rule, "pack"):
        return rule.pack(x0)
    return x0


def trajectory(rule, oracle: GradientOracle, x0: ParticleCollection, steps: int, eta: float | None = None) -> list[ParticleCollection]:
    """States ``x_0 .. x_steps`` of the packed dynamics, starting from unpacked or packed ``x0``."""
    eta = check_step_size(rule.eta if eta is None else eta)
    x = _packed_start(rule, oracle, x0)
    out = [x]
    for t in range(1, steps + 1):
        x = step(x, rule.update(oracle, x, t), eta)
        out.append(x)
    return out


def _find_duplicate(data: np.ndarray):
    n = data.shape[0]
    for i in range(n):
        same = np.flatnonzero(np.all(data[i + 1 :] == data[i], axis=1))
        if same.size:
            return i, i + 1 + int(same[0])
    return None


def check_well_definedness(rule, oracle: GradientOracle, x0: ParticleCollection, steps: int, eta: float | None = None) -> float:
    """Largest distance reached by a duplicated pair along the trajectory.

    When ``x0`` has no exactly duplicated rows, a copy of particle 0 is
    appended first.
    """
    eta = check_step_size(rule.eta if eta is None else eta)
    pair = _find_duplicate(x0.data)
    if pair is None:
        mult = None if x0.multiplicity is None else np.append(x0.multiplicity, 1)
        x0 = ParticleCollection(np.vstack([x0.data, x0.data[:1]]), mult)
        pair = (0, x0.count - 1)
    i, j = pair
    x = _packed_start(rule, oracle, x0)
    drift = 0.0
    for t in range(1, steps + 1):
        x = step(x, rule.update(oracle, x, t), eta)
        drift = max(drift, float(np.linalg.norm(x.data[i] - x.data[j])))
    return drift


# -- pairwise bounds -------------------------------------------------------------


@dataclass
class PairBoundReport:
    steps_checked: int
    min_ratio: float
    max_ratio: float
    max_pair_ratio_excess: float
    identity_residual: float
    k_pairwise: list
    violations: list  # (step, i, j, ratio, classification)


def pair_ratio_stats(x0: np.ndarray, x1: np.ndarray) -> tuple[float, float, float]:
    """``(min d', min r, max r)`` over pairs with ``d > 0`` between two states."""
    d0 = pdist(x0)
    d1 = pdist(x1)
    ok = d0 > 0
    if not ok.any():
        return float(d1.min(initial=0.0)), 1.0, 1.0
    r = d1[ok] / d0[ok]
    return float(d1.min()), float(r.min()), float(r.max())


def check_no_merge_split(rule, traj: list[ParticleCollection], k_hat_per_step=None, eta: float | None = None) -> PairBoundReport:
    """Check ``1 - eta k <= d'/d <= 1 + eta k`` for every pair and step.

    ``k`` is the supplied per-step sharpness, or the per-step pairwise
    estimate ``max ||U_i - U_j|| / d_ij`` read off the trajectory. A pair that
    breaks the bound for a supplied ``k`` while the pairwise estimate exceeds
    it is labelled ``"inconclusive"``: the supplied value underestimates the
    true constant there.
    """
    if len(traj) < 2:
        raise PreconditionError("trajectory needs at least two states")
    eta = check_step_size(rule.eta if eta is None else eta)
    steps = len(traj) - 1
    if k_hat_per_step is not None and len(k_hat_per_step) < steps:
        raise PreconditionError(f"need {steps} sharpness values, got {len(k_hat_per_step)}")
    iu = np.triu_indices(traj[0].count, 1)
    lo, hi, excess, ident = np.inf, -np.inf, 0.0, 0.0
    ks, violations = [], []
    for t in range(steps):
        a, b = traj[t].data, traj[t + 1].data
        d0 = pdist(a)
        d1 = pdist(b)
        du = pdist(b - a) / eta
        ok = d0 > 0
        if not ok.any():
            ks.append(0.0)
            continue
        r = d1[ok] / d0[ok]
        k_pair = float(np.max(du[ok] / d0[ok]))
        ks.append(k_pair)
        ident = max(ident, float(np.max(np.abs(d1[ok] - d0[ok]) - eta * du[ok])))
        lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
        k = k_pair if k_hat_per_step is None else float(k_hat_per_step[t])
        tol = 1e-9 + 1e-6 * eta * k
        dev = np.abs(r - 1.0) - eta * k
        excess = max(excess, float(max(dev.max(), 0.0)))
        bad = np.flatnonzero(dev > tol)
        if bad.size:
            label = "inconclusive" if k_pair > k else "violation"
            pairs = np.flatnonzero(ok)[bad]
            for p, rr in zip(pairs, r[bad]):
                violations.append((t + 1, int(iu[0][p]), int(iu[1][p]), float(rr), label))
    if lo is np.inf:
        lo = hi = 1.0
    return PairBoundReport(steps, lo, hi, excess, ident, ks, violations)


# -- merges ----------------------------------------------------------------------


class MergeTracker:
    """Streaming merge/split detection with hysteresis.

    A pair merges when its distance drops below ``merge_tol`` after having
    been above ``hysteresis * merge_tol``; a merged pair splits when it
    climbs back above ``hysteresis * merge_tol``.
    """

    def __init__(self, merge_tol: float | None = None, hysteresis: float = 10.0, relative: float = 1e-7):
        self.merge_tol = merge_tol
        self.hysteresis = hysteresis
        self.relative = relative
        self.merges: list = []
        self.splits: list = []
        self._armed = None
        self._merged = None

    def update(self, step_index: int, points, distances=None) -> list:
        """Feed the state at ``step_index``; ``distances`` may pass a precomputed ``pdist``."""
        data = points.data if isinstance(points, ParticleCollection) else np.asarray(points)
        n = data.shape[0]
        if n < 2:
            return []
        d = pdist(data) if distances is None else distances
        if self.merge_tol is None:
            diam = float(d.max())
            if not diam > 0:
                raise PreconditionError("cannot derive a merge tolerance from a fully coincident cloud")
            self.merge_tol = self.relative * diam
        if not self.merge_tol > 0:
            raise PreconditionError("merge_tol must be positive")
        far = d > self.hysteresis * self.merge_tol
        if self._armed is None:
            self._armed = far.copy()
            self._merged = np.zeros_like(far)
            self._n = n
            return []
        close = d < self.merge_tol
        new = self._armed & close & ~self._merged
        split = self._merged & far
        found = []
        if new.any() or split.any():
            self._merged = (self._merged | new) & ~split
            iu = np.triu_indices(n, 1)
            found = [(step_index, int(iu[0][k]), int(iu[1][k])) for k in np.flatnonzero(new)]
            self.splits.extend((step_index, int(iu[0][k]), int(iu[1][k])) for k in np.flatnonzero(split))
            self.merges.extend(found)
        self._armed |= far
        return found


def check_injectivity(traj, merge_tol: float | None = None, steps=None) -> tuple[list, list]:
    """Merge and split events ``(step, i, j)`` along a trajectory of particle states."""
    tracker = MergeTracker(merge_tol)
    steps = range(len(traj)) if steps is None else steps
    for s, x in zip(steps, traj):
        tracker.update(s, x)
    return tracker.merges, tracker.splits


# -- Jacobian band ---------------------------------------------------------------


@dataclass(frozen=True)
class JacobianReport:
    min_sv: float
    max_sv: float
    band: tuple
    ok: bool
    particles: tuple


def single_particle_jacobian(rule, oracle: GradientOracle, x: ParticleCollection, i: int, eta: float, h: float | None = None) -> np.ndarray:
    """Finite-difference Jacobian of ``y -> y + eta U_i(X with row i set to y)`` at ``y = x_i``."""
    y0 = x.data[i]
    h = 1e-5 * (1.0 + float(np.linalg.norm(y0))) if h is None else h
    jac = np.empty((x.dim, x.dim))
    base = np.array(x.data)
    for k in range(x.dim):
        cols = []
        for sgn in (1.0, -1.0):
            moved = base.copy()
            moved[i, k] += sgn * h
            xm = x.with_data(moved)
            cols.append(moved[i] + eta * rule.update(oracle, xm).data[i])
        jac[:, k] = (cols[0] - cols[1]) / (2.0 * h)
    return jac


def check_jacobian_svs(rule, oracle: GradientOracle, x: ParticleCollection, k_hat: float, samples: int = 10, seed: int = 0, eta: float | None = None, tol: float = 1e-3, h: float | None = None) -> JacobianReport:
    """Singular values of single-particle Jacobians against ``[1 - eta k, 1 + eta k]``."""
    eta = check_step_size(rule.eta if eta is None else eta)
    if not eta * k_hat < 1:
        raise PreconditionError(f"eta * k_hat = {eta * k_hat:.4g} >= 1; the band is only claimed below 1")
    x = _packed_start(rule, oracle, x)
    idx = np.random.default_rng(seed).choice(x.count, size=min(samples, x.count), replace=False)
    svs = np.concatenate([np.linalg.svd(single_particle_jacobian(rule, oracle, x, int(i), eta, h), compute_uv=False) for i in idx])
    band = (1.0 - eta * k_hat - tol, 1.0 + eta * k_hat + tol)
    lo, hi = float(svs.min()), float(svs.max())
    return JacobianReport(lo, hi, band, bool(lo >= band[0] and hi <= band[1]), tuple(int(i) for i in np.sort(idx)))


# -- multiplicities --------------------------------------------------------------


def coincidence_histogram(x: ParticleCollection, tol: float = 1e-9) -> tuple:
    """Sorted class totals of multiplicity over groups of coincident particles."""
    n = x.count
    if n == 1:
        return (int(x.weights[0]),)
    d = pdist(x.data)
    iu = np.triu_indices(n, 1)
    close = d <= tol
    graph = coo_matrix((np.ones(int(close.sum())), (iu[0][close], iu[1][close])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    totals = np.bincount(labels, weights=x.weights)
    return tuple(sorted((int(t) for t in totals), reverse=True))


@dataclass
class MeasureReport:
    ok: bool
    first_failure: int | None
    changes: list  # (step, eta_k, attributed)
    initial: tuple
    final: tuple


def check_measure_preservation(traj, eta_k_series, tol: float = 1e-9, steps=None) -> MeasureReport:
    """Compare coincidence-class histograms between consecutive states.

    ``eta_k_series[t]`` is ``eta * k_hat`` for the transition out of state
    ``t``. A change across a transition with ``eta * k_hat >= 1`` is recorded
    as attributed; any other change fails the check.
    """
    if traj[0].multiplicity is None:
        raise PreconditionError("initial collection carries no multiplicity vector")
    steps = list(range(len(traj))) if steps is None else list(steps)
    if len(eta_k_series) < len(traj) - 1:
        raise PreconditionError("need one eta*k value per transition")
    prev = coincidence_histogram(traj[0], tol)
    first = prev
    changes, failure = [], None
    for t in range(1, len(traj)):
        cur = coincidence_histogram(traj[t], tol)
        if cur != prev:
            ek = float(eta_k_series[t - 1])
            attributed = ek >= 1.0
            changes.append((steps[t], ek, attributed))
            if not attributed and failure is None:
                failure = steps[t]
        prev = cur
    return MeasureReport(failure is None, failure, changes, first, prev)
