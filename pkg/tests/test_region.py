import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from macalloc.channel import FadingProcess, UserChain
from macalloc.region import (AveragedRegion, GaussianMacRegion, RegionError, as_mask,
                             averaged_region_exact, awgn_capacity, estimate_averaged_region,
                             expand, feasibility_report, is_feasible, linear_maximize,
                             on_dominant_face, rank, rank_table, region_distance,
                             vertex_for_order)

# frozen with mpmath at 30 digits
HALF_LN2 = 0.346573590279972654708616060729
HALF_LN3 = 0.549306144334054845697622618461
HALF_LN4 = 0.693147180559945309417232121458
R2_VERTEX_LOW = HALF_LN3 - HALF_LN2  # 0.5 ln(3/2)

powers_st = st.lists(st.floats(0.05, 20.0), min_size=1, max_size=6)


def region_st(max_m=6):
    return st.integers(1, max_m).flatmap(lambda m: st.tuples(
        st.lists(st.floats(0.05, 20.0), min_size=m, max_size=m),
        st.lists(st.floats(0.05, 5.0), min_size=m, max_size=m),
        st.floats(0.1, 5.0)).map(lambda t: GaussianMacRegion(*t)))


def test_awgn_capacity_values():
    assert awgn_capacity(0.0, 1.0) == 0.0
    assert awgn_capacity(1.0, 1.0) == pytest.approx(HALF_LN2, abs=1e-15)
    assert awgn_capacity(3.0, 1.0) == pytest.approx(HALF_LN4, abs=1e-15)


@pytest.mark.parametrize("p,n0", [(-1.0, 1.0), (1.0, 0.0), (float("nan"), 1.0), (1.0, -2.0)])
def test_awgn_capacity_rejects(p, n0):
    with pytest.raises(RegionError):
        awgn_capacity(p, n0)


def test_rank_two_user(two_user):
    assert rank(two_user, [0]) == pytest.approx(HALF_LN2, abs=1e-15)
    assert rank(two_user, {0, 1}) == pytest.approx(HALF_LN3, abs=1e-15)
    assert rank(two_user, []) == 0.0
    with pytest.raises(RegionError):
        rank(two_user, [2])


def test_feasibility_report_examples(two_user):
    assert feasibility_report(two_user, [0.0, 0.0]) == []
    rep = feasibility_report(two_user, [0.3, 0.3])
    assert [s for s, _ in rep] == [(0, 1)]
    assert rep[0][1] == pytest.approx(0.0506938556659451543, abs=1e-15)
    rep = feasibility_report(two_user, [0.4, 0.4])
    assert sorted(s for s, _ in rep) == [(0,), (0, 1), (1,)]


def test_dominant_face(two_user):
    assert on_dominant_face(two_user, [HALF_LN2, R2_VERTEX_LOW])
    assert not on_dominant_face(two_user, [0.0, 0.0])
    assert not on_dominant_face(two_user, [0.1, 0.1])
    with pytest.raises(RegionError):
        on_dominant_face(two_user, [0.4, 0.4])


def test_linear_maximize_examples(two_user):
    np.testing.assert_allclose(linear_maximize(two_user, [2, 1]), [HALF_LN2, R2_VERTEX_LOW],
                               atol=1e-15)
    np.testing.assert_allclose(linear_maximize(two_user, [1, 2]), [R2_VERTEX_LOW, HALF_LN2],
                               atol=1e-15)
    assert np.all(linear_maximize(two_user, [0, 0]) == 0)
    with pytest.raises(RegionError):
        linear_maximize(two_user, [-1, 1])


def test_linear_maximize_ties_by_index(two_user):
    np.testing.assert_allclose(linear_maximize(two_user, [1, 1]), [HALF_LN2, R2_VERTEX_LOW])


def test_expand_and_distance(two_user):
    e = expand(two_user, 0.1)
    assert rank(e, [0]) == pytest.approx(0.44657359027997265, abs=1e-15)
    assert rank(e, []) == 0.0
    assert region_distance(two_user, e) == pytest.approx(0.1, abs=1e-15)
    assert region_distance(two_user, expand(two_user, 0.0)) == 0.0
    with pytest.raises(RegionError):
        expand(two_user, -0.1)


def test_region_distance_example(two_user):
    other = GaussianMacRegion([1, 1], [1.1, 1.0], 1.0)
    want = max(abs(0.5 * math.log(2.1) - HALF_LN2), 0.0, abs(0.5 * math.log(3.1) - HALF_LN3))
    assert region_distance(two_user, other) == pytest.approx(want, abs=1e-15)
    with pytest.raises(RegionError):
        region_distance(two_user, GaussianMacRegion([1, 1, 1]))


def test_region_json_roundtrip():
    r = GaussianMacRegion([1, 2], [0.5, 1.5], 2.0)
    back = GaussianMacRegion.from_json(__import__("json").dumps(r.to_dict()))
    np.testing.assert_array_equal(rank_table(back), rank_table(r))


def test_invalid_regions():
    with pytest.raises(RegionError):
        GaussianMacRegion([1.0, 0.0])
    with pytest.raises(RegionError):
        GaussianMacRegion([1.0], [-1.0])
    with pytest.raises(RegionError):
        GaussianMacRegion([1.0], [1.0], 0.0)


def test_as_mask_forms():
    assert as_mask([0, 2], 3) == 0b101
    assert as_mask(0b11, 3) == 0b11
    with pytest.raises(RegionError):
        as_mask([3], 3)


@given(region_st())
def test_submodular_and_monotone(region):
    m = region.m
    t = rank_table(region)
    full = (1 << m) - 1
    for S in range(1 << m):
        for T in range(1 << m):
            lhs = t[S] + t[T]
            rhs = t[S | T] + t[S & T]
            assert lhs >= rhs - 1e-12
            nested = (S & T) == S or (S & T) == T
            if nested:
                assert abs(lhs - rhs) <= 1e-12
            else:
                assert lhs - rhs > 1e-12 * max(1.0, lhs)
        if S != full:
            for i in range(m):
                assert t[S | (1 << i)] >= t[S]


@given(region_st(), st.lists(st.floats(0.01, 10.0), min_size=6, max_size=6))
def test_linear_maximize_beats_every_vertex(region, w):
    m = region.m
    mu = np.asarray(w[:m])
    r = linear_maximize(region, mu)
    assert is_feasible(region, r)
    assert on_dominant_face(region, r)
    best = mu @ r
    for perm in itertools.permutations(range(m)):
        assert mu @ vertex_for_order(region, perm) <= best + 1e-12


@given(region_st(4), region_st(4), region_st(4))
def test_region_distance_metric(a, b, c):
    if not (a.m == b.m == c.m):
        return
    assert region_distance(a, a) == 0.0
    assert region_distance(a, b) == region_distance(b, a)
    assert region_distance(a, c) <= region_distance(a, b) + region_distance(b, c) + 1e-15


def _nearest_point_dist(region, x):
    # exact Euclidean projection onto a polymatroid of M <= 3 by active-set
    # enumeration: try every family of tight constraints (subsets and
    # coordinate bounds) and keep the nearest feasible candidate
    m = region.m
    t = rank_table(region)
    rows = []
    for S in range(1, 1 << m):
        a = np.array([(S >> i) & 1 for i in range(m)], dtype=float)
        rows.append((a, t[S]))
    for i in range(m):
        a = np.zeros(m)
        a[i] = -1.0
        rows.append((a, 0.0))
    best = np.inf if not is_feasible(region, x) else 0.0
    for k in range(1, m + 1):
        for act in itertools.combinations(range(len(rows)), k):
            A = np.array([rows[j][0] for j in act])
            b = np.array([rows[j][1] for j in act])
            if np.linalg.matrix_rank(A) < k:
                continue
            lam = np.linalg.solve(A @ A.T, A @ x - b)
            y = x - A.T @ lam
            if is_feasible(region, y, 1e-9):
                best = min(best, float(np.linalg.norm(x - y)))
    return best


@given(region_st(3), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_expanded_vertices_within_delta(region, delta, seed):
    rng = np.random.default_rng(seed)
    e = expand(region, delta)
    for _ in range(3):
        v = vertex_for_order(e, rng.permutation(region.m))
        assert _nearest_point_dist(region, v) <= delta + 1e-9


def test_averaged_region_constant_process_equals_fixed():
    proc = FadingProcess.constant([0.7, 1.3])
    fixed = GaussianMacRegion([2.0, 1.0], [0.7, 1.3], 1.0)
    mc = estimate_averaged_region(proc, [2.0, 1.0], 1.0, 50, 3)
    np.testing.assert_allclose(rank_table(mc), rank_table(fixed), rtol=0, atol=1e-15)
    np.testing.assert_allclose(rank_table(averaged_region_exact(proc, [2.0, 1.0], 1.0)),
                               rank_table(fixed), atol=1e-15)


def test_averaged_region_two_state_converges():
    chain = UserChain([0.5, 1.5], [[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5])
    proc = FadingProcess((chain,))
    want = 0.5 * (awgn_capacity(0.5, 1.0) + awgn_capacity(1.5, 1.0))
    est = estimate_averaged_region(proc, [1.0], 1.0, 40_000, 7)
    assert abs(rank(est, [0]) - want) < 4 * est.stderr[1]
    assert rank(averaged_region_exact(proc, [1.0], 1.0), [0]) == pytest.approx(want, abs=1e-15)


def test_averaged_region_deterministic_and_submodular():
    chain = UserChain([0.2, 1.0, 3.0], np.full((3, 3), 1 / 3), None)
    proc = FadingProcess.iid(chain, 3)
    a = estimate_averaged_region(proc, [1, 2, 3], 1.0, 500, 11)
    b = estimate_averaged_region(proc, [1, 2, 3], 1.0, 500, 11)
    np.testing.assert_array_equal(rank_table(a), rank_table(b))
    t = rank_table(a)
    for S in range(8):
        for T in range(8):
            assert t[S] + t[T] >= t[S | T] + t[S & T] - 1e-12
    assert isinstance(a, AveragedRegion)
