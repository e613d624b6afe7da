"""Top Hessian eigenvalue by matrix-free power iteration.

The Hessian action is a central difference of the oracle's gradient, so any
loss with a gradient oracle works. The sharpness ``k_hat`` sets the critical
step ``eta_star = 1 / k_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, PreconditionError
from .particles import ParticleCollection
from .rules import GradientOracle


@dataclass(frozen=True)
class SharpnessEstimate:
    k_hat: float
    eta_star: float
    iterations_used: int
    residual: float
    converged: bool = True
    vector: np.ndarray | None = None


def _default_h(x: ParticleCollection) -> float:
    return 1e-4 * (1.0 + float(np.linalg.norm(x.data)))


def hvp(oracle: GradientOracle, x: ParticleCollection, v, h: float | None = None) -> np.ndarray:
    """Hessian-vector product ``H v`` as a flat vector (central differences)."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != x.data.size:
        raise PreconditionError(f"direction has {v.shape[0]} entries, expected {x.data.size}")
    nv = float(np.linalg.norm(v))
    if not nv > 0:
        raise PreconditionError("direction must be non-zero")
    h = _default_h(x) if h is None else float(h)
    if not h > 0:
        raise PreconditionError("finite-difference step must be positive")
    vhat = (v / nv).reshape(x.data.shape)
    try:
        _, gp = oracle(x.with_data(x.data + h * vhat))
        _, gm = oracle(x.with_data(x.data - h * vhat))
    except NumericError as exc:
        raise NumericError(f"non-finite gradient during Hessian probe: {exc}", getattr(exc, "index", None)) from exc
    return (gp.data - gm.data).reshape(-1) * (nv / (2.0 * h))


def power_iteration(
    oracle: GradientOracle,
    x: ParticleCollection,
    max_iters: int = 200,
    tol: float = 1e-4,
    seed: int = 0,
    v0=None,
    h: float | None = None,
) -> SharpnessEstimate:
    """Largest-magnitude Hessian eigenvalue.

    Iterates ``v <- Hv / ||Hv||`` and tracks the Rayleigh quotient ``q``. The
    reported residual is relative, ``||Hv - q v|| / |q|``; iteration stops once
    it drops below ``tol``. ``v0`` warm-starts from a previous eigenvector.
    """
    if max_iters < 1:
        raise PreconditionError("max_iters must be >= 1")
    if not tol > 0:
        raise PreconditionError("tol must be positive")
    h = _default_h(x) if h is None else h
    if v0 is None:
        v = np.random.default_rng(seed).normal(size=x.data.size)
    else:
        v = np.asarray(v0, dtype=np.float64).reshape(-1).copy()
    v /= np.linalg.norm(v)

    best = (0.0, np.inf, v)
    q, res = 0.0, np.inf
    it = 0
    for it in range(1, max_iters + 1):
        hv = hvp(oracle, x, v, h)
        q = float(v @ hv)
        if q == 0.0:
            return SharpnessEstimate(0.0, np.inf, it, 0.0, True, v)
        res = float(np.linalg.norm(hv - q * v)) / abs(q)
        if res < best[1]:
            best = (q, res, v)
        if res <= tol:
            break
        v = hv / np.linalg.norm(hv)
    else:
        q, res, v = best
        k = abs(q)
        return SharpnessEstimate(k, 1.0 / k, it, res, False, v)
    k = abs(q)
    return SharpnessEstimate(k, 1.0 / k, it, res, True, v)


@dataclass(frozen=True)
class LossDecrease:
    eta: float
    decrease: float  # nan when the trial point gave a non-finite loss


def one_step_loss_decrease(oracle: GradientOracle, x: ParticleCollection, etas) -> list[LossDecrease]:
    """Exact ``L(x) - L(x - eta * grad L(x))`` for each trial step size."""
    etas = [float(e) for e in etas]
    if not etas:
        raise PreconditionError("need at least one step size")
    if any(not e > 0 for e in etas):
        raise PreconditionError("step sizes must be positive")
    l0, g = oracle(x)
    out = []
    for eta in etas:
        try:
            l1 = oracle.loss(x.with_data(x.data - eta * g.data))
            out.append(LossDecrease(eta, l0 - l1))
        except NumericError:
            out.append(LossDecrease(eta, float("nan")))
    return out
