"""Seeded samplers for initial neuron clouds and embeddings into neuron space."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PreconditionError, SamplingError
from .particles import ParticleCollection

KINDS = ("circle", "disjoint_circles", "annulus_two_holes", "sphere", "torus", "disjoint_tori", "genus2")
MAX_PROPOSALS = 1_000_000

DEFAULTS = {
    "circle": {"radius": 1.0, "center": [0.0, 0.0]},
    "disjoint_circles": {"radius": 1.0, "centers": [[-2.0, 0.0], [2.0, 0.0]]},
    # ellipse with two round holes; a planar stand-in for a genus-2 shape
    "annulus_two_holes": {"semi_axes": [2.6, 1.6], "hole_radius": 0.9, "hole_centers": [[-1.25, 0.0], [1.25, 0.0]]},
    "sphere": {"radius": 1.0},
    "torus": {"R": 2.0, "r": 1.0},
    "disjoint_tori": {"R": 2.0, "r": 1.0, "offsets": [[0.0, 0.0, 0.0], [0.0, 0.0, 5.0]]},
    "genus2": {"s": 36.0, "t": 0.04},
}


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    n: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown manifold kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if int(self.n) < 1:
            raise PreconditionError("sample count n must be >= 1")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise PreconditionError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        for key in ("radius", "R", "r", "hole_radius", "s", "t"):
            if key in self.resolved() and not self.resolved()[key] > 0:
                raise PreconditionError(f"{key} must be positive")
        if self.kind == "annulus_two_holes" and min(self.resolved()["semi_axes"]) <= 0:
            raise PreconditionError("semi_axes must be positive")

    def resolved(self) -> dict:
        out = dict(DEFAULTS[self.kind])
        out.update(self.params)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldSpec":
        d = dict(d)
        try:
            kind, n = d.pop("kind"), d.pop("n")
        except KeyError as exc:
            raise PreconditionError(f"manifold spec missing field {exc}") from None
        seed = d.pop("seed", 0)
        params = d.pop("params", {})
        params.update(d)
        return cls(kind, int(n), int(seed), params)


def _split(n: int, parts: int) -> list[int]:
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _circle(rng, n, radius, center):
    t = rng.uniform(0.0, 2 * np.pi, n)
    return np.c_[radius * np.cos(t), radius * np.sin(t)] + np.asarray(center, dtype=float)


def _sphere(rng, n, radius):
    g = rng.normal(size=(n, 3))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def _torus(rng, n, R, r):
    u = rng.uniform(0.0, 2 * np.pi, n)
    v = rng.uniform(0.0, 2 * np.pi, n)
    return np.c_[(R + r * np.cos(v)) * np.cos(u), (R + r * np.cos(v)) * np.sin(u), r * np.sin(v)]


def _annulus_two_holes(rng, n, semi_axes, hole_radius, hole_centers):
    a, b = semi_axes
    holes = np.asarray(hole_centers, dtype=float)
    out, proposals = [], 0
    while sum(len(o) for o in out) < n:
        if proposals >= MAX_PROPOSALS:
            raise SamplingError(f"rejection sampling reached only {sum(len(o) for o in out)} of {n} points")
        m = min(max(2 * n, 256), MAX_PROPOSALS - proposals)
        p = rng.uniform([-a, -b], [a, b], size=(m, 2))
        proposals += m
        inside = (p[:, 0] / a) ** 2 + (p[:, 1] / b) ** 2 <= 1.0
        for c in holes:
            inside &= np.sum((p - c) ** 2, axis=1) > hole_radius**2
        out.append(p[inside])
    return np.concatenate(out)[:n]


def genus2_residual(points, s: float = 36.0, t: float = 0.04) -> np.ndarray:
    x, y, z = np.asarray(points, dtype=float).T
    return ((x**2 - 1) * x**2 + y**2) ** 2 + z**2 / s - t


def _genus2_grad(p, s):
    x, y, z = p.T
    g = (x**2 - 1) * x**2 + y**2
    return np.c_[2 * g * (4 * x**3 - 2 * x), 2 * g * 2 * y, 2 * z / s]


def _genus2(rng, n, s, t):
    zmax = np.sqrt(s * t)
    # |(x^2-1)x^2 + y^2| <= sqrt(t) bounds the footprint
    xmax = np.sqrt((1 + np.sqrt(1 + 4 * np.sqrt(t))) / 2)
    ymax = np.sqrt(0.25 + np.sqrt(t))
    lo, hi = np.array([-xmax, -ymax, -zmax]), np.array([xmax, ymax, zmax])
    out, proposals = [], 0
    while sum(len(o) for o in out) < n:
        if proposals >= MAX_PROPOSALS:
            raise SamplingError(f"genus-2 projection reached only {sum(len(o) for o in out)} of {n} points")
        m = min(max(2 * n, 256), MAX_PROPOSALS - proposals)
        p = rng.uniform(lo, hi, size=(m, 3))
        proposals += m
        for _ in range(60):
            f = genus2_residual(p, s, t)
            g = _genus2_grad(p, s)
            gg = np.sum(g * g, axis=1)
            ok = gg > 1e-12
            p[ok] -= (f[ok] / gg[ok])[:, None] * g[ok]
        f = genus2_residual(p, s, t)
        good = np.isfinite(f) & (np.abs(f) <= 1e-10) & np.all(np.abs(p) <= 2 * hi, axis=1)
        out.append(p[good])
    return np.concatenate(out)[:n]


def sample(spec: ManifoldSpec) -> ParticleCollection:
    """Draw ``spec.n`` points on the named manifold; deterministic given the seed."""
    rng = np.random.default_rng(spec.seed)
    p = spec.resolved()
    n = spec.n
    if spec.kind == "circle":
        pts = _circle(rng, n, p["radius"], p["center"])
    elif spec.kind == "disjoint_circles":
        parts = _split(n, len(p["centers"]))
        pts = np.concatenate([_circle(rng, k, p["radius"], c) for k, c in zip(parts, p["centers"])])
    elif spec.kind == "annulus_two_holes":
        pts = _annulus_two_holes(rng, n, p["semi_axes"], p["hole_radius"], p["hole_centers"])
    elif spec.kind == "sphere":
        pts = _sphere(rng, n, p["radius"])
    elif spec.kind == "torus":
        pts = _torus(rng, n, p["R"], p["r"])
    elif spec.kind == "disjoint_tori":
        parts = _split(n, len(p["offsets"]))
        pts = np.concatenate([_torus(rng, k, p["R"], p["r"]) + np.asarray(o, float) for k, o in zip(parts, p["offsets"])])
    else:
        pts = _genus2(rng, n, p["s"], p["t"])
    return ParticleCollection(pts)


def random_frame(target_dim: int, dim: int, seed: int = 0) -> np.ndarray:
    """A ``target_dim x dim`` matrix with orthonormal columns."""
    g = np.random.default_rng(seed).normal(size=(target_dim, dim))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def embed(points: ParticleCollection, target_dim: int, seed: int = 0, mode: str = "frame") -> ParticleCollection:
    """Isometric embedding into ``target_dim`` dimensions.

    ``mode="frame"`` uses a seeded random orthonormal frame; ``mode="pad"``
    appends zero coordinates.
    """
    dim = points.dim
    if target_dim < dim:
        raise DimensionError(f"cannot embed {dim}-dimensional points into {target_dim} dimensions")
    if mode == "pad":
        data = np.hstack([points.data, np.zeros((points.count, target_dim - dim))])
    elif mode == "frame":
        data = points.data @ random_frame(target_dim, dim, seed).T
    else:
        raise PreconditionError(f"unknown embed mode {mode!r}")
    return ParticleCollection(data, points.multiplicity)


def embed_neurons(points: ParticleCollection, input_dim: int, output_dim: int, output_scale: float = 0.1, seed: int = 0) -> ParticleCollection:
    """Place a low-dimensional cloud into neuron space ``(w, a)``.

    The input block gets an orthonormal image of each point and the output
    block a second orthonormal image scaled by ``output_scale``, or zeros when
    the output block is too small to hold one. Either way the map is a
    similarity (distances scale by ``sqrt(1 + output_scale**2)`` or by 1), so
    Rips topology at the adaptive scale is unchanged.
    """
    dim = points.dim
    if input_dim < dim:
        raise DimensionError(f"input block of size {input_dim} cannot hold {dim}-dimensional points")
    w = points.data @ random_frame(input_dim, dim, seed).T
    if output_dim >= dim:
        a = output_scale * points.data @ random_frame(output_dim, dim, seed + 1).T
    else:
        a = np.zeros((points.count, output_dim))
    return ParticleCollection(np.hstack([w, a]), points.multiplicity)
