"""Finite indexed collections of D-dimensional particles.

A :class:`ParticleCollection` holds one neuron per row. Collections are
immutable: every operation returns a new collection and the underlying
array is flagged read-only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DimensionError, NumericError, PreconditionError


@dataclass(frozen=True, eq=False)
class ParticleCollection:
    data: np.ndarray
    multiplicity: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionError(f"particle data must be a non-empty N x D matrix, got shape {data.shape}")
        bad = ~np.isfinite(data)
        if bad.any():
            row = int(np.argwhere(bad)[0, 0])
            raise NumericError(f"non-finite value in particle {row}", index=row)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

        if self.multiplicity is not None:
            mult = np.array(self.multiplicity, dtype=np.int64, copy=True).reshape(-1)
            if mult.shape[0] != data.shape[0]:
                raise DimensionError(f"multiplicity has length {mult.shape[0]}, expected {data.shape[0]}")
            if (mult < 1).any():
                raise PreconditionError("multiplicities must be >= 1")
            mult.flags.writeable = False
            object.__setattr__(self, "multiplicity", mult)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Multiplicities, defaulting to all ones."""
        if self.multiplicity is None:
            return np.ones(self.count, dtype=np.int64)
        return self.multiplicity

    def with_data(self, data) -> "ParticleCollection":
        return ParticleCollection(data, self.multiplicity)

    def __len__(self):
        return self.count

    def __repr__(self):
        return f"ParticleCollection(count={self.count}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection on ``0..N-1``; ``mapping[i]`` is the source row of output row ``i``."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.array(self.mapping, dtype=np.int64, copy=True).reshape(-1)
        n = m.shape[0]
        if n == 0 or not np.array_equal(np.sort(m), np.arange(n)):
            raise PreconditionError("mapping is not a bijection on 0..N-1")
        m.flags.writeable = False
        object.__setattr__(self, "mapping", m)

    def __len__(self):
        return self.mapping.shape[0]

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(len(self))
        return Permutation(inv)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(rng.permutation(n))

    @classmethod
    def transposition(cls, n: int, i: int, j: int) -> "Permutation":
        m = np.arange(n)
        m[i], m[j] = j, i
        return cls(m)


def check_step_size(eta) -> float:
    eta = float(eta)
    if not (eta > 0 and np.isfinite(eta)):
        raise PreconditionError(f"step size must be a positive finite real, got {eta}")
    return eta


def _same_shape(x: ParticleCollection, y: ParticleCollection):
    if x.data.shape != y.data.shape:
        raise DimensionError(f"shape mismatch: {x.data.shape} vs {y.data.shape}")


def apply_permutation(p: Permutation, x: ParticleCollection) -> ParticleCollection:
    """Return ``PX``: row ``i`` of the result is row ``p.mapping[i]`` of ``x``."""
    if len(p) != x.count:
        raise DimensionError(f"permutation of length {len(p)} applied to {x.count} particles")
    mult = None if x.multiplicity is None else x.multiplicity[p.mapping]
    return ParticleCollection(x.data[p.mapping], mult)


def collection_distance(x: ParticleCollection, y: ParticleCollection) -> float:
    _same_shape(x, y)
    return float(np.sqrt(np.sum((x.data - y.data) ** 2)))


def pair_distance(x: ParticleCollection, i: int, j: int) -> float:
    n = x.count
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"particle index out of range for {n} particles: ({i}, {j})")
    return float(np.linalg.norm(x.data[i] - x.data[j]))


def step(x: ParticleCollection, u: ParticleCollection, eta) -> ParticleCollection:
    """One update ``x_i + eta * u_i``; multiplicity is carried over."""
    _same_shape(x, u)
    eta = check_step_size(eta)
    return ParticleCollection(x.data + eta * u.data, x.multiplicity)


def pairwise_distance_matrix(points: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix, exactly symmetric with a zero diagonal."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 1:
        return np.zeros((1, 1))
    return squareform(pdist(pts))


# -- CSV snapshot format: header x0..x{D-1},mult; 17 significant digits ----------


def write_csv(x: ParticleCollection, path) -> None:
    path = Path(path)
    header = [f"x{k}" for k in range(x.dim)] + ["mult"]
    mult = x.weights
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, m in zip(x.data, mult):
            w.writerow([format(v, ".17g") for v in row] + [str(int(m))])


def read_csv(path) -> ParticleCollection:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DimensionError(f"{path}: empty point-cloud file")
    header = rows[0]
    has_mult = header[-1] == "mult"
    ncoord = len(header) - 1 if has_mult else len(header)
    if ncoord < 1 or header[:ncoord] != [f"x{k}" for k in range(ncoord)]:
        raise DimensionError(f"{path}: unexpected header {header}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DimensionError(f"{path}: no particles")
    data = np.array([[float(v) for v in r[:ncoord]] for r in body])
    mult = np.array([int(r[ncoord]) for r in body]) if has_mult else None
    if mult is not None and (mult == 1).all():
        mult = None
    return ParticleCollection(data, mult)
