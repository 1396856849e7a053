import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from macalloc.bounds import TrackingParameters
from macalloc.channel import FadingProcess, geometric_chain, sample_path
from macalloc.policies import (GreedySolver, PolicyError, _arrival_mean, approximate_policy_run,
                               greedy_run, greedy_step, greedy_upload, improved_policy_run,
                               queue_policy_run, queue_upload, renewal_ratio)
from macalloc.region import GaussianMacRegion, awgn_capacity, is_feasible, linear_maximize
from macalloc.solvers import brute_force_optimum
from macalloc.utility import UtilityModel

U = UtilityModel.alpha_fair([1.5, 1.0], 2.0)
P = [4.0, 4.0]


def test_greedy_step_linear_is_vertex():
    h = np.array([0.7, 1.3])
    r = greedy_step(h, UtilityModel.linear([1.0, 2.0]), P)
    np.testing.assert_allclose(r, linear_maximize(GaussianMacRegion(P, h), [1, 2]), atol=1e-6)


def test_greedy_step_symmetric():
    r = greedy_step([1.0, 1.0], UtilityModel.alpha_fair([1, 1], 1.0), [1, 1])
    assert r[0] == pytest.approx(r[1], abs=1e-7)


def test_greedy_step_matches_brute_force():
    reg = GaussianMacRegion([1, 1], [1, 1], 1.0)
    np.testing.assert_allclose(greedy_step([1, 1], U, [1, 1]), brute_force_optimum(reg, U),
                               atol=1e-4)


def test_greedy_solver_cache_and_subsets():
    s = GreedySolver(U, P)
    a = s([1.0, 0.5])
    b = s([1.0, 0.5])
    np.testing.assert_array_equal(a, b)
    assert len(s.cache) == 1
    only = s([1.0, 0.5], [False, True])
    assert only[0] == 0.0
    assert only[1] == pytest.approx(awgn_capacity(2.0, 1.0), abs=1e-9)


def test_greedy_run_trace():
    proc = FadingProcess.iid(geometric_chain(1.0, 0.8), 2)
    path = sample_path(proc, 300, 4)
    tr = greedy_run(path, U, P)
    assert len(tr) == 300 and tr.m == 2
    for t in range(300):
        assert is_feasible(GaussianMacRegion(P, path.gains[t]), tr.rates[t])
    np.testing.assert_allclose(tr.avg_rates[-1], tr.rates.mean(axis=0))
    np.testing.assert_array_equal(tr.measured, np.arange(300))


def constant_path(n, h=(1.0, 0.6)):
    return sample_path(FadingProcess.constant(list(h)), n, 0)


@pytest.mark.parametrize("k", [1, 3, 10])
def test_approximate_constant_channel_converges(k):
    path = constant_path(4000)
    target = greedy_step(path.gains[0], U, P)
    # a poor slot-0 point forces the blocks to do the work
    tr = approximate_policy_run(path, U, P, 1.0, TrackingParameters(k, 2e-4, 1.0),
                                solver=lambda h: np.array([0.2, 0.2]))
    assert np.linalg.norm(tr.rates[-1] - target) < 1e-4
    vals = tr.utility
    assert np.all(np.diff(vals) >= -1e-12)
    assert vals[-1] > vals[0] + 0.1


def test_approximate_block_structure():
    proc = FadingProcess.iid(geometric_chain(1.0, 0.8), 2)
    path = sample_path(proc, 100, 1)
    tr = approximate_policy_run(path, U, P, 1.0, TrackingParameters(7, 1e-3, 1.0))
    for n in range(1, 100):
        assert tr.measured[n] == 7 * ((n - 1) // 7)
    # the output is constant inside a block
    for n in range(1, 100):
        if (n - 1) % 7:
            np.testing.assert_array_equal(tr.rates[n], tr.rates[n - 1])


def test_improved_constant_channel_holds():
    path = constant_path(500)
    tr = improved_policy_run(path, U, P, 1.0, gamma=0.1, k=5, alpha=1e-3)
    np.testing.assert_array_equal(tr.extra["thresholds"], [0])
    # the slot-0 greedy point is already optimal, so iterating keeps it
    np.testing.assert_allclose(tr.rates, np.broadcast_to(tr.rates[0], tr.rates.shape),
                               atol=1e-9)


def test_improved_tiny_gamma_crosses_every_changing_slot():
    chain = geometric_chain(1.0, 1.0, n_levels=3, stay=0.0)
    path = sample_path(FadingProcess.iid(chain, 2), 200, 7)
    W = 0.5 * np.abs(np.diff(path.gains, axis=0)) @ np.asarray(P)
    tr = improved_policy_run(path, U, P, 1.0, gamma=1e-9, k=2, alpha=1e-3)
    want = [0] + [t for t in range(1, 200) if W[t - 1] > 0]
    np.testing.assert_array_equal(tr.extra["thresholds"], want)


def test_renewal_ratio():
    assert renewal_ratio([0, 10, 20, 30], 31, 10) == pytest.approx(31 / 30)
    assert renewal_ratio([0, 10, 20, 30], 30, 10) == pytest.approx(30 / 20)
    assert renewal_ratio([0], 30, 10) == math.inf


def test_policy_argument_errors():
    path = constant_path(10)
    with pytest.raises(PolicyError):
        improved_policy_run(path, U, P, 1.0, gamma=0.0, k=1, alpha=0.1)
    with pytest.raises(PolicyError):
        queue_policy_run(path, U, P, 1.0, K=0.0, D=1.0)
    with pytest.raises(PolicyError):
        queue_policy_run(path, UtilityModel.linear([1, 1]), P, 1.0, K=1.0, D=1.0)
    with pytest.raises(PolicyError):
        greedy_upload(path, U, P, 1.0, [1.0, -1.0])


def test_arrival_mean_capped_at_empty_queue():
    np.testing.assert_array_equal(_arrival_mean(U, np.zeros(2), 1.0, 2.5), [2.5, 2.5])
    np.testing.assert_allclose(_arrival_mean(U, np.array([4.0, 1.0]), 1.0, 10.0),
                               [math.sqrt(1.5 / 4), 1.0])


def test_queue_first_slot_admits_d():
    tr = queue_policy_run(constant_path(5), U, P, 1.0, K=0.5, D=2.0)
    np.testing.assert_array_equal(tr.extra["admitted"][0], [2.0, 2.0])
    np.testing.assert_array_equal(tr.queues[0], [0.0, 0.0])


def test_queue_single_user_reaches_capacity():
    h, p = 1.5, 2.0
    u = UtilityModel.alpha_fair([1.0], 1.0)
    path = sample_path(FadingProcess.constant([h]), 100_000, 0)
    tr = queue_policy_run(path, u, [p], 1.0, K=50.0, D=5.0)
    cap = awgn_capacity(h * p, 1.0)
    assert abs(tr.avg_rates[-1, 0] - cap) <= 0.02 * cap
    assert abs(tr.extra["admitted"].mean() - cap) <= 0.02 * cap


def test_queue_poisson_reproducible():
    proc = FadingProcess.iid(geometric_chain(1.0, 0.8), 2)
    path = sample_path(proc, 500, 2)
    a = queue_policy_run(path, U, P, 1.0, 0.5, 2.0, arrivals="poisson", seed=9)
    b = queue_policy_run(path, U, P, 1.0, 0.5, 2.0, arrivals="poisson", seed=9)
    np.testing.assert_array_equal(a.rates, b.rates)
    np.testing.assert_array_equal(a.queues, b.queues)
    with pytest.raises(PolicyError):
        queue_policy_run(path, U, P, 1.0, 0.5, 2.0, arrivals="bursty")


@given(st.integers(0, 1000))
def test_queue_conservation(seed):
    proc = FadingProcess.iid(geometric_chain(1.0, 1.0), 2)
    path = sample_path(proc, 200, seed)
    tr = queue_policy_run(path, U, P, 1.0, 0.5, 2.0, arrivals="poisson", seed=seed)
    x_end = tr.queues[-1] - tr.extra["served"][-1] + tr.extra["admitted"][-1]
    np.testing.assert_allclose(tr.extra["admitted"].sum(0) - tr.extra["served"].sum(0), x_end,
                               atol=1e-9)
    assert np.all(tr.extra["served"] <= tr.rates + 1e-15)
    for t in range(0, 200, 17):
        assert is_feasible(GaussianMacRegion(P, path.gains[t]), tr.rates[t])


@pytest.mark.parametrize("f", [0.37, 2.5, 9.1])
def test_upload_single_user_constant(f):
    h, p = 0.8, 3.0
    u = UtilityModel.alpha_fair([1.0], 2.0)
    path = sample_path(FadingProcess.constant([h]), 200, 0)
    res = greedy_upload(path, u, [p], 1.0, [f])
    assert res.completion[0] == math.ceil(f / awgn_capacity(h * p, 1.0))
    assert res.finished.all()


def test_upload_symmetric_equal_completion():
    chain = geometric_chain(1.0, 0.7)
    path = sample_path(FadingProcess((chain, chain)), 2000, 3)
    path2 = type(path)(path.gains[:, ::-1].copy(), path.states, path.seed)
    u = UtilityModel.alpha_fair([1, 1], 2.0)
    res = greedy_upload(constant_path(2000, (1.0, 1.0)), u, [2, 2], 1.0, [5.0, 5.0])
    assert res.completion[0] == res.completion[1]
    a = greedy_upload(path, u, [2, 2], 1.0, [3.0, 3.0])
    b = greedy_upload(path2, u, [2, 2], 1.0, [3.0, 3.0])
    np.testing.assert_array_equal(a.completion, b.completion[::-1])


def test_upload_unfinished_is_inf():
    res = greedy_upload(constant_path(3), U, P, 1.0, [100.0, 100.0])
    assert not res.finished.any() and np.all(np.isinf(res.completion))


def test_queue_upload_completes_and_is_slower_for_tiny_files():
    proc = FadingProcess.iid(geometric_chain(1.0, 1.22), 2)
    path = sample_path(proc, 5000, 1)
    q = queue_upload(path, U, P, 1.0, [1.0, 1.0], K=1.0, D=2.0)
    g = greedy_upload(path, U, P, 1.0, [1.0, 1.0])
    assert q.finished.all() and g.finished.all()
    # queue departures lag admission by a slot
    assert q.completion.min() >= 2
    assert g.utility(U) > q.utility(U)
