import math

import numpy as np
import pytest

from scacopf.core.smoothing import (
    LN2,
    SmoothingParams,
    hausdorff_gap_estimate,
    reactive_relaxation_residuals,
    smooth_response_derivatives,
    smooth_response_full,
    smooth_response_upper,
    softplus,
    softplus_derivatives,
)


def test_parameters_must_be_positive():
    with pytest.raises(ValueError):
        SmoothingParams(epsilon=0.0)
    with pytest.raises(ValueError):
        SmoothingParams(mu=-1.0)


def test_softplus_at_zero():
    assert softplus(0.0, 1e-3) == pytest.approx(1e-3 * LN2)
    assert LN2 == pytest.approx(math.log(2.0))


@pytest.mark.parametrize("eps", [1e-6, 1e-3, 0.1])
def test_softplus_bracketed_by_max(eps):
    x = np.linspace(-2.0, 2.0, 401)
    gap = softplus(x, eps) - np.maximum(x, 0.0)
    assert gap.min() >= -1e-15
    assert gap.max() <= eps * LN2 + 1e-15


def test_softplus_does_not_overflow():
    value = softplus(np.array([1.0, 50.0]), 1e-6)
    assert np.all(np.isfinite(value))
    np.testing.assert_allclose(value, [1.0, 50.0])


def test_softplus_derivatives_match_finite_differences():
    eps, h = 0.1, 1e-6
    x = np.linspace(-0.5, 0.5, 11)
    first, second = softplus_derivatives(x, eps)
    np.testing.assert_allclose(first, (softplus(x + h, eps) - softplus(x - h, eps)) / (2 * h),
                               rtol=1e-6, atol=1e-9)
    f1_plus, _ = softplus_derivatives(x + h, eps)
    f1_minus, _ = softplus_derivatives(x - h, eps)
    np.testing.assert_allclose(second, (f1_plus - f1_minus) / (2 * h), rtol=1e-6, atol=1e-9)


def test_smoothed_response_close_to_projection():
    eps = 1e-3
    deltas = np.linspace(-3.0, 3.0, 601)
    smooth = smooth_response_full(0.5, 1.0, deltas, 0.0, 1.0, eps)
    exact = np.clip(0.5 + deltas, 0.0, 1.0)
    assert np.abs(smooth - exact).max() <= 2 * eps * LN2 + 1e-12


def test_upper_variant_ignores_lower_bound():
    value = smooth_response_upper(0.5, 1.0, -3.0, 1.0, 1e-3)
    assert value == pytest.approx(-2.5, abs=1e-9)


def test_response_derivatives_match_finite_differences():
    eps, h = 0.05, 1e-6
    u = np.linspace(-0.5, 1.5, 21)
    value, first, second = smooth_response_derivatives(u, 0.0, 1.0, eps)
    np.testing.assert_allclose(value, smooth_response_full(u, 1.0, 0.0, 0.0, 1.0, eps))
    _, first_plus, _ = smooth_response_derivatives(u + h, 0.0, 1.0, eps)
    _, first_minus, _ = smooth_response_derivatives(u - h, 0.0, 1.0, eps)
    v_plus, _, _ = smooth_response_derivatives(u + h, 0.0, 1.0, eps)
    v_minus, _, _ = smooth_response_derivatives(u - h, 0.0, 1.0, eps)
    np.testing.assert_allclose(first, (v_plus - v_minus) / (2 * h), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(second, (first_plus - first_minus) / (2 * h), rtol=1e-5, atol=1e-6)


def test_relaxation_accepts_pv_point():
    eps = 1e-4
    eq, upper, lower = reactive_relaxation_residuals(
        q=0.2, v=1.0, v_plus=0.0, v_minus=0.0, q_lo=-1.0, q_hi=1.0, v0=1.0, eps=eps
    )
    assert eq == 0.0
    assert upper <= 0.0 and lower <= 0.0


def test_relaxation_rejects_voltage_rise_away_from_bound():
    _, upper, _ = reactive_relaxation_residuals(
        q=0.2, v=1.05, v_plus=0.05, v_minus=0.0, q_lo=-1.0, q_hi=1.0, v0=1.0, eps=1e-4
    )
    assert upper > 0.0


def test_hausdorff_gap_small_for_unit_bounds():
    gap = hausdorff_gap_estimate(-1.0, 1.0, 0.9, 1.1, 1.0, 1e-6, resolution=100)
    assert gap <= 1e-4


def test_hausdorff_grid_resolution_checked():
    with pytest.raises(ValueError):
        hausdorff_gap_estimate(-1.0, 1.0, 0.9, 1.1, 1.0, 1e-6, resolution=5)


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-4, 1e-6])
def test_softplus_sandwich_on_wide_range(eps):
    x = np.random.default_rng(7).uniform(-50.0, 50.0, 100_000)
    gap = softplus(x, eps) - np.maximum(x, 0.0)
    assert np.all(np.isfinite(gap))
    assert gap.min() >= -1e-12
    assert gap.max() <= eps * LN2 + 1e-12


@pytest.mark.parametrize("eps", [1e-2, 1e-6])
def test_complementarity_set_inside_smoothed_set(eps):
    rng = np.random.default_rng(11)
    n, q_lo, q_hi, v0 = 10_000, -1.0, 1.0, 1.0
    zero = np.zeros(n)
    offset = rng.uniform(0.0, 0.1, n)
    disjuncts = {
        "interior": (rng.uniform(q_lo, q_hi, n), zero, zero),
        "at q_lo": (np.full(n, q_lo), offset, zero),
        "at q_hi": (np.full(n, q_hi), zero, offset),
    }
    for name, (q, vp, vm) in disjuncts.items():
        eq, upper, lower = reactive_relaxation_residuals(q, v0 + vp - vm, vp, vm, q_lo, q_hi, v0, eps)
        assert np.allclose(eq, 0.0, atol=1e-14), name
        assert np.all(upper <= 0.0), name
        assert np.all(lower <= 0.0), name


def test_hausdorff_gap_shrinks_with_eps():
    resolution = 100
    bounds = (-1.0, 1.0, 0.9, 1.1, 1.0)
    spacing = max(2.0 / (resolution - 1), 0.2 / (resolution - 1))
    g1, g2, g3 = (hausdorff_gap_estimate(*bounds, eps, resolution) for eps in (1e-1, 1e-2, 1e-3))
    assert g2 <= g1 + spacing
    assert g3 <= g2 + spacing
    assert g3 <= g1
