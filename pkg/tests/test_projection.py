import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from macalloc.projection import (Configuration, approximate_project, approximate_project_trace,
                                 count_violations, elevation_of, find_violated,
                                 most_violated_subset, project_onto_constraint,
                                 rate_split_check)
from macalloc.region import (AveragedRegion, GaussianMacRegion, RegionError, feasibility_report,
                             is_feasible, on_dominant_face, rank, rank_table, vertex_for_order)

HALF_LN2 = 0.346573590279972654708616060729
HALF_LN3 = 0.549306144334054845697622618461
SYM_PROJ = 0.274653072167027422848811309231
ELEV_QUARTER_LN2 = 1.41421356237309504880168872421


def test_elevation_values():
    cfg = Configuration.initial([1.0, 1.0, 1.0], [HALF_LN2, 0.25 * math.log(2), 0.5 * math.log(3)],
                                1.0)
    e = elevation_of(cfg)
    assert e[0] == pytest.approx(0.0, abs=1e-15)
    assert e[1] == pytest.approx(ELEV_QUARTER_LN2, abs=1e-14)
    assert e[2] == pytest.approx(-0.5, abs=1e-15)
    assert elevation_of(Configuration.initial([1.0], [0.0], 1.0))[0] == np.inf
    with pytest.raises(RegionError):
        elevation_of(Configuration.initial([0.0], [0.1], 1.0))


def test_configuration_merge():
    cfg = Configuration.initial([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], 1.0).merge(2, 0)
    np.testing.assert_allclose(cfg.powers, [4.0, 2.0])
    np.testing.assert_allclose(cfg.rates, [0.4, 0.2])
    assert cfg.members == ((0, 2), (1,))


def test_rate_split_examples():
    res = rate_split_check([1, 1], [0.3, 0.3])
    assert not res.codable and res.violated == (0, 1)
    vertex = [HALF_LN2, HALF_LN3 - HALF_LN2]
    res = rate_split_check([1, 1], vertex)
    assert res.codable and res.order == (1, 0)
    assert rate_split_check([1, 1], [0.0, 0.0]).codable
    res = rate_split_check([1, 1], [0.4, 0.1])
    assert not res.codable and 0 in res.violated
    assert res.to_dict()["verdict"] == "violated"


def test_rate_split_rejects_bad_input():
    with pytest.raises(RegionError):
        rate_split_check([1, 1], [0.1])
    with pytest.raises(RegionError):
        rate_split_check([1, 1], [-0.1, 0.1])


def test_find_violated_examples(two_user):
    assert find_violated(two_user, [0.1, 0.1]) is None
    assert find_violated(two_user, [0.3, 0.3]) == (0, 1)
    assert 0 in find_violated(two_user, [0.4, 0.1])
    assert most_violated_subset(two_user, [0.3, 0.3]) == (0, 1)


def test_project_onto_constraint_examples():
    np.testing.assert_allclose(project_onto_constraint([0.4, 0.4], [0, 1], HALF_LN3),
                               [SYM_PROJ, SYM_PROJ], atol=1e-15)
    np.testing.assert_allclose(project_onto_constraint([0.5, 0.1], [0], HALF_LN2),
                               [HALF_LN2, 0.1], atol=1e-15)
    y = np.array([0.2, 0.3])
    np.testing.assert_allclose(project_onto_constraint(y, [0, 1], 0.5), y, atol=1e-15)
    with pytest.raises(RegionError):
        project_onto_constraint(y, [], 0.5)


def test_approximate_project_examples(two_user):
    np.testing.assert_allclose(approximate_project([0.4, 0.4], two_user),
                               [SYM_PROJ, SYM_PROJ], atol=1e-15)
    y = np.array([0.1, 0.2])
    np.testing.assert_array_equal(approximate_project(y, two_user), y)
    np.testing.assert_array_equal(approximate_project([-1.0, 0.1], two_user), [0.0, 0.1])
    with pytest.raises(RegionError):
        approximate_project([0.1], two_user)


def test_count_violations_examples(two_user):
    assert count_violations(two_user, [0.1, 0.1]) == 0
    assert count_violations(two_user, [0.4, 0.4]) == 3
    assert count_violations(two_user, [0.6, 0.0]) == 2


def test_table_region_path_matches_gaussian(rng):
    for _ in range(50):
        m = int(rng.integers(2, 6))
        reg = GaussianMacRegion(rng.uniform(0.1, 5, m), rng.uniform(0.2, 2, m), 1.0)
        tab = AveragedRegion(reg.powers, 1.0, rank_table(reg))
        y = rng.uniform(0, 1.5, m)
        a = approximate_project(y, reg)
        b = approximate_project(y, tab)
        assert is_feasible(reg, a) and is_feasible(reg, b)


def random_case(draw_m, seed):
    rng = np.random.default_rng(seed)
    reg = GaussianMacRegion(rng.uniform(0.1, 10, draw_m), rng.uniform(0.1, 3, draw_m),
                            float(rng.uniform(0.2, 3)))
    return rng, reg


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_projection_feasible_monotone_nonexpansive(m, seed):
    rng, reg = random_case(m, seed)
    y = rng.uniform(0, 2.0, m) * rank(reg, [0]) * 2
    x = approximate_project(y, reg)
    assert feasibility_report(reg, x) == []
    assert np.all(x <= np.maximum(y, 0) + 1e-15)
    for _ in range(5):
        v = vertex_for_order(reg, rng.permutation(m))
        z = v * rng.uniform(0, 1, m)
        assert np.linalg.norm(x - z) <= np.linalg.norm(y - z) + 1e-9


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_rate_split_agrees_with_enumeration(m, seed):
    rng, reg = random_case(m, seed)
    v = vertex_for_order(reg, rng.permutation(m))
    r = v * rng.uniform(0.7, 1.15, m)
    res = rate_split_check(reg.powers, r, reg.gains, reg.noise)
    exhaustive = feasibility_report(reg, r, tol=1e-12)
    assert res.codable == (not exhaustive)
    if not res.codable:
        assert sum(r[i] for i in res.violated) > rank(reg, res.violated)


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_codable_order_certifies_group_by_group(m, seed):
    rng, reg = random_case(m, seed)
    r = vertex_for_order(reg, rng.permutation(m)) * rng.uniform(0.3, 1.0, m)
    res = rate_split_check(reg.powers, r, reg.gains, reg.noise)
    assert res.codable
    assert sorted(res.order) == list(range(m))
    q = reg.effective_powers
    later = float(q.sum())
    for g in res.groups:
        later -= float(q[list(g)].sum())
        cap = 0.5 * math.log1p(q[list(g)].sum() / (reg.noise + later))
        assert r[list(g)].sum() <= cap * (1 + 1e-12) + 1e-15


def test_projection_trace_visits_each_subset_once(rng):
    for _ in range(200):
        m = int(rng.integers(2, 8))
        reg = GaussianMacRegion(rng.uniform(0.1, 5, m), None, 1.0)
        y = rng.uniform(0, 3, m)
        pr = approximate_project_trace(y, reg)
        assert len(set(pr.projected)) == len(pr.projected)


def test_projection_with_tied_elevations():
    # users pushed onto their single-user capacity tie at elevation 0
    reg = GaussianMacRegion([1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0], 1.0)
    x = approximate_project([5.0, 5.0, 5.0, 5.0], reg)
    assert is_feasible(reg, x)
    assert on_dominant_face(reg, x)
