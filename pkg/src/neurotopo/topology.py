"""Vietoris-Rips complexes and their Betti numbers b0, b1, b2.

Two independent routes are provided:

* :func:`betti_numbers` reduces boundary matrices over GF(2). Columns are
  Python ints used as bitsets; reduction runs top-down with clearing.
* :func:`betti_oracle` uses union-find for b0 and exact rational ranks of the
  signed boundary matrices (fraction-free elimination) for b1 and b2.

For large clouds :func:`betti_profile` first shrinks the neighbourhood graph
with vertex and edge domination collapses. Each collapse removes a dominated
vertex or edge, which preserves the homotopy type of the flag complex and
therefore every Betti number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCloudError, MalformedComplexError, PreconditionError, SimplexBudgetError
from .particles import ParticleCollection, pairwise_distance_matrix

SNAP = 1e-12
DEFAULT_BUDGET = 50_000_000
ORACLE_CAP = 2000


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    entries: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.entries, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 1:
            raise PreconditionError("distance matrix must be square and non-empty")
        object.__setattr__(self, "entries", d)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.entries.max())


@dataclass(frozen=True)
class RipsComplex:
    scale: float
    simplices_by_dim: tuple  # tuple of lists of sorted vertex tuples, index = dimension

    @property
    def max_dim(self) -> int:
        return len(self.simplices_by_dim) - 1

    def counts(self) -> list[int]:
        return [len(s) for s in self.simplices_by_dim]

    @property
    def size(self) -> int:
        return sum(self.counts())


@dataclass(frozen=True)
class BettiProfile:
    b0: int
    b1: int
    b2: int
    scale_used: float
    n_points: int
    meta: dict = field(default_factory=dict, compare=False)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.b0, self.b1, self.b2)


def pairwise_distances(points) -> DistanceMatrix:
    data = points.data if isinstance(points, ParticleCollection) else np.asarray(points, dtype=np.float64)
    return DistanceMatrix(pairwise_distance_matrix(data))


def adaptive_scale(dm: DistanceMatrix) -> float:
    """A quarter of the cloud diameter."""
    if dm.n < 2:
        raise DegenerateCloudError("adaptive scale needs at least two points")
    diam = dm.diameter
    if not diam > 0:
        raise DegenerateCloudError("all points coincide")
    return diam / 4.0


def _threshold(scale: float) -> float:
    return scale + SNAP * max(1.0, abs(scale))


def _bits(x: int):
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def _neighbour_bitsets(dm: DistanceMatrix, scale: float) -> list[int]:
    """Open neighbourhoods as bitsets (no self loops)."""
    adj = dm.entries <= _threshold(scale)
    np.fill_diagonal(adj, False)
    out = []
    for row in adj:
        idx = np.flatnonzero(row)
        out.append(sum(1 << int(i) for i in idx))
    return out


def flag_complex(neighbours: list[int], scale: float, max_dim: int = 3, budget: int = DEFAULT_BUDGET, vertices=None) -> RipsComplex:
    """Clique complex of a graph given by open-neighbourhood bitsets.

    Simplices are enumerated by ordered expansion, so each dimension comes
    out in lexicographic order.
    """
    if max_dim not in (1, 2, 3):
        raise PreconditionError(f"max_dim must be 1, 2 or 3, got {max_dim}")
    n = len(neighbours)
    verts = list(range(n)) if vertices is None else sorted(vertices)
    up = [nb >> (v + 1) << (v + 1) for v, nb in enumerate(neighbours)]
    levels = [[(v,) for v in verts]] + [[] for _ in range(max_dim)]
    total = len(verts)

    def expand(simplex, cand):
        nonlocal total
        k = len(simplex)
        for u in _bits(cand):
            s = simplex + (u,)
            levels[k].append(s)
            total += 1
            if total > budget:
                raise SimplexBudgetError(f"Rips complex exceeds the simplex budget of {budget}")
            if k < max_dim:
                expand(s, cand & up[u])

    for v in verts:
        expand((v,), up[v])
    return RipsComplex(float(scale), tuple(levels))


def build_rips(dm: DistanceMatrix, scale: float, max_dim: int = 3, budget: int = DEFAULT_BUDGET) -> RipsComplex:
    """Vietoris-Rips complex: every clique of points pairwise within ``scale``."""
    if not scale > 0:
        raise PreconditionError("scale must be positive")
    return flag_complex(_neighbour_bitsets(dm, scale), scale, max_dim, budget)


def _face_index(complex_: RipsComplex, k: int) -> dict:
    return {s: i for i, s in enumerate(complex_.simplices_by_dim[k])}


def _faces(s: tuple):
    return [s[:i] + s[i + 1 :] for i in range(len(s))]


def _boundary_columns(complex_: RipsComplex, k: int, skip=frozenset()) -> list[int]:
    """Bitset columns of the boundary map from k-simplices to (k-1)-simplices."""
    index = _face_index(complex_, k - 1)
    cols = []
    for j, s in enumerate(complex_.simplices_by_dim[k]):
        if j in skip:
            continue
        col = 0
        for f in _faces(s):
            i = index.get(f)
            if i is None:
                raise MalformedComplexError(f"face {f} of simplex {s} is missing")
            col |= 1 << i
        cols.append((j, col))
    return cols


def _reduce_gf2(columns) -> tuple[int, set]:
    """Column reduction over GF(2); returns the rank and the set of pivot rows."""
    pivots: dict[int, int] = {}
    for _, col in columns:
        while col:
            low = col.bit_length() - 1
            other = pivots.get(low)
            if other is None:
                pivots[low] = col
                break
            col ^= other
    return len(pivots), set(pivots)


def boundary_ranks(complex_: RipsComplex) -> list[int]:
    """``ranks[k]`` = rank of the boundary map on k-simplices over GF(2); ``ranks[0] = 0``."""
    top = complex_.max_dim
    ranks = [0] * (top + 2)
    cleared: set = set()
    for k in range(top, 0, -1):
        rank, lows = _reduce_gf2(_boundary_columns(complex_, k, skip=cleared))
        ranks[k] = rank
        cleared = lows
    return ranks[: top + 1]


def _betti_from_ranks(counts, ranks, top):
    ranks = list(ranks) + [0, 0]
    counts = list(counts) + [0, 0, 0]
    b = [counts[k] - ranks[k] - ranks[k + 1] for k in range(3)]
    # b2 needs the dim-3 boundary; lower max_dim gives skeleton values
    return b


def betti_numbers(complex_: RipsComplex) -> BettiProfile:
    counts = complex_.counts()
    ranks = boundary_ranks(complex_)
    b0, b1, b2 = _betti_from_ranks(counts, ranks, complex_.max_dim)
    return BettiProfile(b0, b1, b2, complex_.scale, counts[0], {"counts": counts, "ranks": ranks})


def euler_characteristic(complex_: RipsComplex) -> int:
    return sum((-1) ** k * c for k, c in enumerate(complex_.counts()))


# -- oracle ----------------------------------------------------------------------


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)

    def components(self) -> int:
        return sum(1 for i in self.parent if self.find(i) == i)


def components(vertices, edges) -> int:
    uf = _UnionFind(vertices)
    for e in edges:
        uf.union(e[0], e[1])
    return uf.components()


def _signed_boundary(complex_: RipsComplex, k: int) -> np.ndarray:
    rows = _face_index(complex_, k - 1)
    cols = complex_.simplices_by_dim[k]
    m = np.zeros((len(rows), len(cols)), dtype=object)
    m[...] = 0
    for j, s in enumerate(cols):
        for i, f in enumerate(_faces(s)):
            m[rows[f], j] = (-1) ** i
    return m


def rational_rank(matrix) -> int:
    """Rank over the rationals by fraction-free (Bareiss) elimination."""
    m = np.array(matrix, dtype=object)
    if m.size == 0:
        return 0
    nrows, ncols = m.shape
    rank, prev = 0, 1
    for col in range(ncols):
        if rank == nrows:
            break
        nz = [r for r in range(rank, nrows) if m[r, col] != 0]
        if not nz:
            continue
        p = nz[0]
        if p != rank:
            m[[rank, p]] = m[[p, rank]]
        piv = m[rank, col]
        below = m[rank + 1 :, col : col + 1]
        m[rank + 1 :, col + 1 :] = (m[rank + 1 :, col + 1 :] * piv - below * m[rank, col + 1 :]) // prev
        m[rank + 1 :, col] = 0
        prev = piv
        rank += 1
    return rank


def betti_oracle(complex_: RipsComplex) -> BettiProfile:
    """Betti numbers by a route independent of :func:`betti_numbers`."""
    if complex_.size > ORACLE_CAP:
        raise PreconditionError(f"oracle limited to {ORACLE_CAP} simplices, complex has {complex_.size}")
    s = complex_.simplices_by_dim
    counts = complex_.counts() + [0, 0, 0]
    verts = [v[0] for v in s[0]]
    edges = s[1] if len(s) > 1 else []
    b0 = components(verts, edges)
    r2 = rational_rank(_signed_boundary(complex_, 2)) if complex_.max_dim >= 2 and counts[2] else 0
    r3 = rational_rank(_signed_boundary(complex_, 3)) if complex_.max_dim >= 3 and counts[3] else 0
    b1 = counts[1] - (counts[0] - b0) - r2
    b2 = counts[2] - r2 - r3
    return BettiProfile(b0, b1, b2, complex_.scale, counts[0])


# -- reduction of large clouds -----------------------------------------------------


def collapse_graph(neighbours: list[int]) -> tuple[list[int], list[int]]:
    """Remove dominated vertices and dominated edges until none remain.

    A vertex ``v`` is dominated by ``w`` when the closed neighbourhood of ``v``
    lies inside that of ``w``; an edge ``ab`` is dominated by ``w`` when the
    common closed neighbourhood of ``a`` and ``b`` lies inside that of ``w``.
    Returns the pruned open neighbourhoods and the surviving vertices.
    """
    n = len(neighbours)
    closed = [nb | (1 << v) for v, nb in enumerate(neighbours)]
    alive = set(range(n))
    changed = True
    while changed:
        changed = False
        for v in sorted(alive):
            cv = closed[v]
            for w in _bits(cv ^ (1 << v)):
                if cv & ~closed[w] == 0:
                    for u in _bits(cv ^ (1 << v)):
                        closed[u] &= ~(1 << v)
                    closed[v] = 0
                    alive.discard(v)
                    changed = True
                    break
        for a in sorted(alive):
            for b in _bits(closed[a] >> (a + 1) << (a + 1)):
                common = closed[a] & closed[b]
                for w in _bits(common & ~((1 << a) | (1 << b))):
                    if common & ~closed[w] == 0:
                        closed[a] &= ~(1 << b)
                        closed[b] &= ~(1 << a)
                        changed = True
                        break
    opened = [(c & ~(1 << v)) if v in alive else 0 for v, c in enumerate(closed)]
    return opened, sorted(alive)


def farthest_point_subsample(dm: DistanceMatrix, k: int, seed: int = 0) -> np.ndarray:
    """Indices of ``k`` points chosen greedily by farthest-point sampling."""
    n = dm.n
    if k >= n:
        return np.arange(n)
    first = int(np.random.default_rng(seed).integers(n))
    chosen = [first]
    dist = dm.entries[first].copy()
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        np.minimum(dist, dm.entries[nxt], out=dist)
    return np.sort(np.array(chosen))


def betti_profile(
    points,
    scale: float | None = None,
    max_dim: int = 3,
    collapse: bool = True,
    subsample: int | None = None,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> BettiProfile:
    """Betti numbers of the Rips complex of a point cloud.

    ``scale=None`` uses the adaptive scale of the full cloud. With
    ``subsample`` set, clouds larger than that are reduced by farthest-point
    sampling first (recorded in ``meta``).
    """
    dm = pairwise_distances(points)
    n_full = dm.n
    if scale is None:
        scale = adaptive_scale(dm)
    meta: dict = {}
    if subsample is not None and n_full > subsample:
        keep = farthest_point_subsample(dm, subsample, seed)
        dm = DistanceMatrix(dm.entries[np.ix_(keep, keep)])
        meta["subsampled_from"] = n_full
    nbrs = _neighbour_bitsets(dm, scale)
    if collapse:
        nbrs, alive = collapse_graph(nbrs)
        meta["collapsed_vertices"] = len(alive)
        cx = flag_complex(nbrs, scale, max_dim, budget, vertices=alive)
    else:
        cx = flag_complex(nbrs, scale, max_dim, budget)
    prof = betti_numbers(cx)
    meta["counts"] = prof.meta["counts"]
    return BettiProfile(prof.b0, prof.b1, prof.b2, float(scale), dm.n, meta)
