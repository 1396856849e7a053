import numpy as np
import pytest
from hypothesis import given, strategies as st

from macalloc.utility import (UtilityDomainError, UtilityModel, alpha_fair_subgradient,
                              alpha_fair_value)

ALPHA2_EXAMPLE = -4.54081632653061224489795918367


def test_alpha_fair_examples():
    assert alpha_fair_value([1, 1], 1.0, [1, 1]) == 0.0
    np.testing.assert_array_equal(alpha_fair_subgradient([1, 1], 1.0, [1, 1]), [1, 1])
    assert alpha_fair_value([1, 2], 0.0, [0.3, 0.4]) == pytest.approx(1.1, abs=1e-15)
    np.testing.assert_array_equal(alpha_fair_subgradient([1, 2], 0.0, [0.3, 0.4]), [1, 2])
    assert alpha_fair_value([1.5, 1], 2.0, [0.6, 0.49]) == pytest.approx(ALPHA2_EXAMPLE,
                                                                       abs=1e-14)


@pytest.mark.parametrize("alpha", [1.0, 2.0, 3.5])
def test_alpha_fair_domain(alpha):
    with pytest.raises(UtilityDomainError):
        alpha_fair_value([1, 1], alpha, [0.0, 1.0])
    with pytest.raises(UtilityDomainError):
        alpha_fair_subgradient([1, 1], alpha, [0.0, 1.0])


def test_alpha_fair_small_alpha_allows_zero():
    assert alpha_fair_value([1.0], 0.5, [0.0]) == 0.0
    with pytest.raises(UtilityDomainError):
        alpha_fair_value([1.0], 0.5, [-0.1])


def test_model_matches_plain_function_above_rmin():
    u = UtilityModel.alpha_fair([1.5, 1.0], 2.0, r_min=1e-3)
    r = np.array([0.6, 0.49])
    assert u.value(r) == pytest.approx(ALPHA2_EXAMPLE, abs=1e-14)
    np.testing.assert_allclose(u.gradient(r), [1.5 / 0.36, 1 / 0.2401])


def test_model_linear_extension_below_rmin():
    u = UtilityModel.alpha_fair([1.0], 1.0, r_min=0.1)
    assert u.value([0.0]) == pytest.approx(np.log(0.1) - 1.0)
    np.testing.assert_allclose(u.gradient([0.0]), [10.0])
    np.testing.assert_allclose(u.neg_hessian_diag([0.05]), [0.0])


def test_gradient_bounds():
    u = UtilityModel.alpha_fair([1.5, 1.0], 2.0, r_min=0.1)
    assert u.max_gradient_component() == pytest.approx(150.0)
    assert u.B == pytest.approx(np.hypot(150.0, 100.0))
    assert UtilityModel.linear([3, 4]).B == pytest.approx(5.0)


def test_model_validation_and_roundtrip():
    with pytest.raises(UtilityDomainError):
        UtilityModel.alpha_fair([1, -1], 1.0)
    with pytest.raises(UtilityDomainError):
        UtilityModel("mystery")
    with pytest.raises(UtilityDomainError):
        UtilityModel("generic")
    u = UtilityModel.alpha_fair([1, 2], 3.0, 0.01, A=0.5)
    assert UtilityModel.from_dict(u.to_dict()) == u


def test_generic_utility():
    u = UtilityModel("generic", (1.0, 1.0), value_fn=lambda r: -np.sum((r - 1) ** 2),
                     grad_fn=lambda r: -2 * (r - 1))
    assert u.value([1, 1]) == 0.0
    np.testing.assert_array_equal(u.gradient([0, 1]), [2, 0])


@given(st.floats(0.0, 4.0), st.lists(st.floats(0.1, 3.0), min_size=2, max_size=2),
       st.lists(st.floats(0.0, 3.0), min_size=2, max_size=2),
       st.lists(st.floats(0.0, 3.0), min_size=2, max_size=2), st.floats(0, 1))
def test_model_concave(alpha, w, a, b, t):
    u = UtilityModel.alpha_fair(w, alpha, r_min=0.05)
    a, b = np.array(a), np.array(b)
    mid = t * a + (1 - t) * b
    assert u.value(mid) >= t * u.value(a) + (1 - t) * u.value(b) - 1e-9 * (1 + abs(u.value(mid)))
    # supergradient inequality
    assert u.value(b) <= u.value(a) + u.gradient(a) @ (b - a) + 1e-9 * (1 + abs(u.value(a)))
