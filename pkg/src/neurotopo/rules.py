"""Permutation-equivariant update rules and empirical property checkers.

Every rule maps a whole collection ``X`` to an update collection ``U(X)`` so
that one training step is ``particles.step(X, U(X), eta)``. Stateful
optimizers are packed: each particle row carries its optimizer state next to
its parameters, which keeps the rule stateless and equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError, PreconditionError
from .particles import (
    ParticleCollection,
    Permutation,
    apply_permutation,
    check_step_size,
    pairwise_distance_matrix,
)

Rule = Callable[[ParticleCollection], ParticleCollection]


class GradientOracle:
    """Loss and per-particle gradient of a permutation-symmetric loss.

    ``fn`` maps an ``N x D`` array to ``(loss, grad)`` with ``grad`` of the
    same shape. The oracle validates shapes and finiteness.
    """

    def __init__(self, fn, dim: int, name: str = "oracle"):
        self.fn = fn
        self.dim = int(dim)
        self.name = name

    def __call__(self, x: ParticleCollection) -> tuple[float, ParticleCollection]:
        if x.dim != self.dim:
            raise DimensionError(f"{self.name} expects dim {self.dim}, got {x.dim}")
        loss, grad = self.fn(x.data)
        loss = float(loss)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != x.data.shape:
            raise DimensionError(f"{self.name} returned gradient of shape {grad.shape}, expected {x.data.shape}")
        if not np.isfinite(loss):
            raise NumericError(f"{self.name}: non-finite loss {loss}")
        return loss, ParticleCollection(grad)

    def loss(self, x: ParticleCollection) -> float:
        return self(x)[0]

    def flat_gradient(self, theta: np.ndarray, shape) -> np.ndarray:
        _, g = self(ParticleCollection(np.reshape(theta, shape)))
        return g.data.reshape(-1)


def quadratic_oracle(curvature, dim: int | None = None) -> GradientOracle:
    """``L = 1/2 sum_i x_i^T A x_i``.

    ``curvature`` may be a scalar (``A = lam * I``, needs ``dim``), a length-D
    vector (diagonal ``A``) or a symmetric ``D x D`` matrix.
    """
    c = np.asarray(curvature, dtype=np.float64)
    if c.ndim == 0:
        if dim is None:
            raise PreconditionError("scalar curvature needs dim")
        a = float(c) * np.eye(dim)
    elif c.ndim == 1:
        a = np.diag(c)
    else:
        a = c
        if not np.allclose(a, a.T):
            raise PreconditionError("curvature matrix must be symmetric")
    a = 0.5 * (a + a.T)

    def fn(x):
        g = x @ a
        return 0.5 * float(np.sum(g * x)), g

    return GradientOracle(fn, a.shape[0], name="quadratic")


def gradient_check(oracle: GradientOracle, x: ParticleCollection, directions: int = 8, seed: int = 0) -> float:
    """Worst relative mismatch between ``<grad, v>`` and a central difference of the loss."""
    rng = np.random.default_rng(seed)
    _, g = oracle(x)
    h = 1e-5 * (1.0 + np.linalg.norm(x.data))
    worst = 0.0
    for _ in range(directions):
        v = rng.normal(size=x.data.shape)
        v /= np.linalg.norm(v)
        lp = oracle.loss(x.with_data(x.data + h * v))
        lm = oracle.loss(x.with_data(x.data - h * v))
        fd = (lp - lm) / (2 * h)
        an = float(np.sum(g.data * v))
        worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-12))
    return worst


# -- packed state ----------------------------------------------------------------


@dataclass(frozen=True)
class MomentumPackedCollection:
    """Rows are ``(theta_i, p_i)``; ``p`` is the heavy-ball buffer."""

    base: ParticleCollection
    mu: float = 0.9

    def __post_init__(self):
        if self.base.dim % 2:
            raise DimensionError(f"momentum rows must have even width, got {self.base.dim}")
        if not 0 <= self.mu < 1:
            raise PreconditionError(f"mu must be in [0, 1), got {self.mu}")

    @property
    def theta_dim(self) -> int:
        return self.base.dim // 2

    @property
    def theta(self) -> np.ndarray:
        return self.base.data[:, : self.theta_dim]

    @property
    def buffer(self) -> np.ndarray:
        return self.base.data[:, self.theta_dim :]


@dataclass(frozen=True)
class AdamPackedCollection:
    """Rows are ``(theta_i, m_i, v_i)``, each block ``theta_dim`` wide."""

    base: ParticleCollection
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 1

    def __post_init__(self):
        if self.base.dim % 3:
            raise DimensionError(f"Adam rows must have width divisible by 3, got {self.base.dim}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise PreconditionError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise PreconditionError("epsilon must be positive")
        if int(self.t) < 1:
            raise PreconditionError(f"Adam step counter must be >= 1, got {self.t}")
        if (self.second_moment < 0).any():
            raise PreconditionError("negative second-moment entry")

    @property
    def theta_dim(self) -> int:
        return self.base.dim // 3

    @property
    def theta(self) -> np.ndarray:
        return self.base.data[:, : self.theta_dim]

    @property
    def first_moment(self) -> np.ndarray:
        k = self.theta_dim
        return self.base.data[:, k : 2 * k]

    @property
    def second_moment(self) -> np.ndarray:
        k = self.theta_dim
        return self.base.data[:, 2 * k :]


# -- update maps -----------------------------------------------------------------


def gd_update(oracle: GradientOracle, x: ParticleCollection) -> ParticleCollection:
    _, g = oracle(x)
    return ParticleCollection(-g.data)


def momentum_update(oracle: GradientOracle, x: MomentumPackedCollection, eta) -> ParticleCollection:
    """Packed heavy ball: one step gives ``p+ = mu p + g`` and ``theta+ = theta - eta p+``."""
    eta = check_step_size(eta)
    _, g = oracle(ParticleCollection(x.theta))
    g = g.data
    p = x.buffer
    u_theta = -(x.mu * p + g)
    u_p = ((x.mu - 1.0) * p + g) / eta
    return ParticleCollection(np.hstack([u_theta, u_p]))


def adam_update(oracle: GradientOracle, x: AdamPackedCollection, eta, ordering: str = "lagged") -> ParticleCollection:
    """Packed Adam update.

    ``ordering="lagged"`` uses the moments currently stored in the row for the
    parameter block, so the parameter step lags the moment update by one
    iteration. ``ordering="standard"`` first forms the updated moments, which
    reproduces textbook Adam exactly.
    """
    eta = check_step_size(eta)
    if ordering not in ("lagged", "standard"):
        raise PreconditionError(f"unknown adam_ordering {ordering!r}")
    _, g = oracle(ParticleCollection(x.theta))
    g = g.data
    m, v = x.first_moment, x.second_moment
    b1, b2, eps, t = x.beta1, x.beta2, x.epsilon, int(x.t)
    if ordering == "standard":
        m_use = b1 * m + (1.0 - b1) * g
        v_use = b2 * v + (1.0 - b2) * g * g
    else:
        m_use, v_use = m, v
    u_theta = -(m_use / (1.0 - b1**t)) / (eps + np.sqrt(v_use / (1.0 - b2**t)))
    u_m = (1.0 - b1) / eta * (g - m)
    u_v = (1.0 - b2) / eta * (g * g - v)
    return ParticleCollection(np.hstack([u_theta, u_m, u_v]))


# -- rule objects used by the harness and diagnostics ---------------------------


@dataclass
class GradientDescent:
    eta: float
    name = "gd"
    blocks = 1

    def pack(self, theta: ParticleCollection) -> ParticleCollection:
        return theta

    def theta(self, x: ParticleCollection) -> ParticleCollection:
        return x

    def update(self, oracle: GradientOracle, x: ParticleCollection, t: int = 1) -> ParticleCollection:
        return gd_update(oracle, x)

    def bind(self, oracle: GradientOracle, t: int = 1) -> Rule:
        return lambda x: self.update(oracle, x, t)


@dataclass
class Momentum(GradientDescent):
    mu: float = 0.9
    name = "momentum"
    blocks = 2

    def pack(self, theta):
        return ParticleCollection(np.hstack([theta.data, np.zeros_like(theta.data)]), theta.multiplicity)

    def theta(self, x):
        return ParticleCollection(x.data[:, : x.dim // 2], x.multiplicity)

    def update(self, oracle, x, t=1):
        return momentum_update(oracle, MomentumPackedCollection(x, self.mu), self.eta)


@dataclass
class Adam(GradientDescent):
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    ordering: str = "lagged"
    name = "adam"
    blocks = 3

    def pack(self, theta):
        z = np.zeros_like(theta.data)
        return ParticleCollection(np.hstack([theta.data, z, z]), theta.multiplicity)

    def theta(self, x):
        return ParticleCollection(x.data[:, : x.dim // 3], x.multiplicity)

    def update(self, oracle, x, t=1):
        packed = AdamPackedCollection(x, self.beta1, self.beta2, self.epsilon, t)
        return adam_update(oracle, packed, self.eta, self.ordering)


def make_rule(spec: dict):
    """Build a rule from the JSON rule spec (``{"rule": "gd"|"momentum"|"adam", "eta": ...}``)."""
    kind = spec.get("rule", "gd")
    eta = check_step_size(spec["eta"])
    if kind == "gd":
        return GradientDescent(eta)
    if kind == "momentum":
        return Momentum(eta, mu=spec.get("mu", 0.9))
    if kind == "adam":
        return Adam(
            eta,
            beta1=spec.get("beta1", 0.9),
            beta2=spec.get("beta2", 0.999),
            epsilon=spec.get("epsilon", 1e-8),
            ordering=spec.get("adam_ordering", "lagged"),
        )
    raise PreconditionError(f"unknown rule {kind!r}")


# -- property checkers -----------------------------------------------------------


@dataclass(frozen=True)
class EquivarianceReport:
    max_deviation: float
    trials: int


def check_equivariance(rule: Rule, x: ParticleCollection, trials: int = 20, seed: int = 0, permutations=None) -> EquivarianceReport:
    """Max over permutations of ``||U(PX) - P U(X)||_inf``."""
    if permutations is None:
        if trials < 1:
            raise PreconditionError("trials must be >= 1")
        rng = np.random.default_rng(seed)
        permutations = [Permutation.random(x.count, rng) for _ in range(trials)]
    base = rule(x)
    worst = 0.0
    for p in permutations:
        lhs = rule(apply_permutation(p, x)).data
        rhs = apply_permutation(p, base).data
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return EquivarianceReport(worst, len(permutations))


@dataclass(frozen=True)
class ContinuityEstimate:
    k_pairwise: float
    k_perturb: float
    k_sup_entry: float
    degenerate: bool = False


def pairwise_update_ratio(u: np.ndarray, x: np.ndarray) -> tuple[float, bool]:
    """``max_{d_ij > 0} ||u_i - u_j|| / ||x_i - x_j||`` and a flag for all-coincident input."""
    dx = pairwise_distance_matrix(x)
    du = pairwise_distance_matrix(u)
    iu = np.triu_indices(x.shape[0], 1)
    dx, du = dx[iu], du[iu]
    ok = dx > 0
    if not ok.any():
        return 0.0, True
    return float(np.max(du[ok] / dx[ok])), False


def estimate_continuity(rule: Rule, x: ParticleCollection, perturbations: int = 32, radius: float | None = None, seed: int = 0) -> ContinuityEstimate:
    """Empirical lower bounds on the continuity constant of ``rule`` at ``x``.

    Perturbations alternate between moving one particle and moving two, with
    norm exactly ``radius``.
    """
    if x.count < 2:
        raise PreconditionError("need at least two particles")
    if radius is None:
        radius = 1e-3 * (1.0 + float(np.mean(np.linalg.norm(x.data, axis=1))))
    if not radius > 0:
        raise PreconditionError("radius must be positive")
    rng = np.random.default_rng(seed)
    u0 = rule(x).data
    k_pair, degenerate = pairwise_update_ratio(u0, x.data)

    k_pert = 0.0
    k_sup = 0.0
    for trial in range(perturbations):
        touched = rng.choice(x.count, size=1 + trial % 2, replace=False)
        delta = np.zeros_like(x.data)
        delta[touched] = rng.normal(size=(len(touched), x.dim))
        delta *= radius / np.linalg.norm(delta)
        du = rule(x.with_data(x.data + delta)).data - u0
        k_pert = max(k_pert, float(np.linalg.norm(du)) / radius)
        k_sup = max(k_sup, 2.0 * float(np.max(np.linalg.norm(du, axis=1))) / radius)
    return ContinuityEstimate(k_pair, k_pert, k_sup, degenerate)
