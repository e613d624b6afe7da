import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from neurotopo.errors import DegenerateCloudError, MalformedComplexError, PreconditionError, SimplexBudgetError
from neurotopo.topology import (
    DistanceMatrix,
    RipsComplex,
    adaptive_scale,
    betti_numbers,
    betti_oracle,
    betti_profile,
    build_rips,
    components,
    euler_characteristic,
    farthest_point_subsample,
    pairwise_distances,
    rational_rank,
)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
OCTAHEDRON = np.vstack([np.eye(3), -np.eye(3)])


def rips(points, scale, max_dim=3):
    return build_rips(pairwise_distances(points), scale, max_dim)


def both(cx):
    return betti_numbers(cx).as_tuple(), betti_oracle(cx).as_tuple()


def brute_force_cliques(dm: np.ndarray, scale: float, k: int):
    n = dm.shape[0]
    return [c for c in itertools.combinations(range(n), k + 1) if all(dm[i, j] <= scale for i, j in itertools.combinations(c, 2))]


def test_pairwise_distances_examples():
    assert pairwise_distances(np.array([[0.0, 0.0], [3.0, 4.0]])).entries[0, 1] == 5.0
    np.testing.assert_array_equal(pairwise_distances(np.array([[1.0, 1.0]])).entries, [[0.0]])
    d = pairwise_distances(np.array([[1.0, 2.0], [1.0, 2.0]])).entries
    assert d[0, 1] == 0.0 and np.array_equal(d, d.T) and np.all(np.diag(d) == 0)


def test_adaptive_scale_examples():
    assert adaptive_scale(pairwise_distances(np.array([[0.0], [8.0]]))) == 2.0
    assert abs(adaptive_scale(pairwise_distances(SQUARE)) - np.sqrt(2) / 4) <= 1e-15
    with pytest.raises(DegenerateCloudError):
        adaptive_scale(pairwise_distances(np.ones((3, 2))))
    with pytest.raises(DegenerateCloudError):
        adaptive_scale(pairwise_distances(np.ones((1, 2))))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_adaptive_scale_homogeneous(seed, c):
    pts = np.random.default_rng(seed).normal(size=(7, 3))
    a = adaptive_scale(pairwise_distances(pts))
    assert abs(adaptive_scale(pairwise_distances(c * pts)) - c * a) <= 1e-12 * c * a


def test_build_rips_examples():
    far = rips(np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]) * 2, 1.0)
    assert far.counts()[:2] == [3, 0]
    sq = rips(SQUARE, 1.2)
    assert sq.counts() == [4, 4, 0, 0]
    assert (0, 2) not in sq.simplices_by_dim[1] and (1, 3) not in sq.simplices_by_dim[1]
    tri = rips(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]]), 1.0)
    assert tri.counts()[:3] == [3, 3, 1]


def test_build_rips_validation():
    with pytest.raises(PreconditionError):
        rips(SQUARE, 1.0, max_dim=4)
    with pytest.raises(PreconditionError):
        rips(SQUARE, 0.0)


def test_betti_fixtures():
    assert both(rips(np.array([[0.0], [5.0], [10.0]]), 1.0)) == ((3, 0, 0),) * 2
    assert both(rips(SQUARE, 1.2)) == ((1, 1, 0),) * 2
    octa = rips(OCTAHEDRON, 1.5)
    assert octa.counts() == [6, 12, 8, 0]
    assert both(octa) == ((1, 0, 1),) * 2


def test_two_disjoint_triangles():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.8]])
    assert both(rips(np.vstack([tri, tri + 10]), 1.1)) == ((2, 0, 0),) * 2


def test_dense_circle_fixture():
    t = np.linspace(0, 2 * np.pi, 60, endpoint=False)
    circle = np.column_stack([np.cos(t), np.sin(t)])
    assert both(rips(circle, 0.3)) == ((1, 1, 0),) * 2


def test_malformed_complex_rejected():
    bad = RipsComplex(1.0, ([(0,), (1,), (2,)], [(0, 1), (1, 2)], [(0, 1, 2)]))
    with pytest.raises(MalformedComplexError):
        betti_numbers(bad)


def test_simplex_budget():
    pts = np.random.default_rng(0).normal(size=(30, 2)) * 0.01
    with pytest.raises(SimplexBudgetError):
        build_rips(pairwise_distances(pts), 1.0, budget=100)


def test_oracle_size_cap():
    pts = np.random.default_rng(1).normal(size=(40, 2)) * 0.01
    with pytest.raises(PreconditionError):
        betti_oracle(rips(pts, 1.0))


def test_rational_rank_against_numpy():
    rng = np.random.default_rng(2)
    for _ in range(30):
        m = rng.integers(-1, 2, size=(rng.integers(1, 8), rng.integers(1, 8)))
        assert rational_rank(m) == np.linalg.matrix_rank(m.astype(float))
    assert rational_rank(np.zeros((3, 0), dtype=int)) == 0


def test_union_find_components():
    assert components(range(5), [(0, 1), (3, 4)]) == 3
    assert components([7], []) == 1


def test_clique_enumeration_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        pts = rng.uniform(size=(9, 2))
        dm = pairwise_distances(pts)
        scale = float(rng.uniform(0.1, 0.7))
        cx = build_rips(dm, scale)
        for k in range(4):
            assert cx.simplices_by_dim[k] == brute_force_cliques(dm.entries, scale, k)


def random_cloud(rng):
    n = int(rng.integers(1, 9))
    d = int(rng.integers(1, 4))
    pts = rng.normal(size=(n, d))
    dm = pairwise_distances(pts)
    scale = float(rng.uniform(0.05, 1.2) * max(dm.diameter, 1e-3))
    return dm, scale


def test_oracle_equivalence_on_500_random_clouds():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        dm, scale = random_cloud(rng)
        cx = build_rips(dm, scale, 3)
        fast, slow = betti_numbers(cx), betti_oracle(cx)
        assert fast.as_tuple() == slow.as_tuple()
        assert fast.b0 == components(range(dm.n), cx.simplices_by_dim[1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_euler_poincare(seed):
    dm, scale = random_cloud(np.random.default_rng(seed))
    cx = build_rips(dm, scale, 3)
    prof = betti_numbers(cx)
    counts, ranks = prof.meta["counts"], prof.meta["ranks"]
    b3 = counts[3] - ranks[3]
    assert prof.b0 - prof.b1 + prof.b2 - b3 == euler_characteristic(cx)
    assert prof.b0 >= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0), st.floats(0.0, 1.0))
def test_edges_monotone_in_scale(seed, s, extra):
    dm = pairwise_distances(np.random.default_rng(seed).uniform(size=(10, 2)))
    small = set(build_rips(dm, s, 1).simplices_by_dim[1])
    big = set(build_rips(dm, s + extra, 1).simplices_by_dim[1])
    assert small <= big


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_isometry_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(int(rng.integers(2, 9)), 3))
    moved = pts @ Rotation.random(random_state=seed).as_matrix().T + rng.normal(size=3) * 5
    assert np.max(np.abs(pairwise_distances(pts).entries - pairwise_distances(moved).entries)) <= 1e-9
    a, b = betti_profile(pts, collapse=False), betti_profile(moved, collapse=False)
    assert a.as_tuple() == b.as_tuple()


def test_snap_tolerance_keeps_boundary_edges():
    pts = np.array([[0.0, 0.0], [0.1 + 0.2, 0.0]])
    assert rips(pts, 0.3).counts()[1] == 1


@pytest.mark.parametrize("seed", range(8))
def test_collapse_preserves_betti(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 2 * np.pi, 80)
    pts = np.column_stack([np.cos(t), np.sin(t)]) + rng.normal(scale=0.05, size=(80, 2))
    pts = np.vstack([pts, rng.normal(size=(20, 2)) * 0.3 + [4, 0]])
    for scale in (0.3, 0.6, 1.5):
        a = betti_profile(pts, scale, collapse=True)
        b = betti_profile(pts, scale, collapse=False)
        assert a.as_tuple() == b.as_tuple()
        assert a.meta["collapsed_vertices"] <= 100


def test_betti_profile_adaptive_and_subsample():
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    circle = np.column_stack([np.cos(t), np.sin(t)])
    prof = betti_profile(circle)
    assert prof.as_tuple() == (1, 1, 0) and prof.scale_used == pytest.approx(0.5)
    sub = betti_profile(circle, subsample=100)
    assert sub.as_tuple() == (1, 1, 0) and sub.n_points == 100 and sub.meta["subsampled_from"] == 400


def test_farthest_point_subsample_deterministic():
    dm = pairwise_distances(np.random.default_rng(5).normal(size=(50, 3)))
    a, b = farthest_point_subsample(dm, 10, seed=3), farthest_point_subsample(dm, 10, seed=3)
    np.testing.assert_array_equal(a, b)
    assert len(np.unique(a)) == 10
    np.testing.assert_array_equal(farthest_point_subsample(dm, 60), np.arange(50))


def test_distance_matrix_validation():
    with pytest.raises(PreconditionError):
        DistanceMatrix(np.zeros((2, 3)))
