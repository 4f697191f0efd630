"""Tests for the optimal-extrapolation layer.

Closed-form anchors:
  * autoregressive order-1 prediction (innovation variance, geometric taps),
  * white signals (no usable past, error equals the functional's variance),
  * the paired-AR(1) benchmark with gap {-3, -2} whose error is the
    polynomial 10 + 8 b1 + 4 b1^2 + 2 b2 + b2^2 and whose filter has a
    single nonconstant tap at lag -1.
Structural checks: the two independent error formulas agree to machine
precision, the error is nonnegative, orthogonality of the residual to the
observed past holds, and the truncated error is monotone in the order.
"""

import numpy as np
import pytest

from gapcast import (
    FunctionalSpec,
    MissingPattern,
    SpectralModel,
    ar1_model,
    ar1_scalar,
    delta_of_characteristic,
    default_truncation,
    estimate,
    filter_taps,
    make_ar1_pair,
    mean_square_error,
    spectral_characteristic,
    white_model,
)
from gapcast.oracle import functional_variance
from gapcast.errors import InvalidParameterError


def _scalar_ar1(b, scale=1.0, grid_size=512):
    return SpectralModel(dim=1,
                         F=lambda lam: ar1_scalar(lam, b, scale)[:, None, None],
                         grid_size=grid_size, pole_modulus=abs(b))


def _random_instance(seed, grid_size=512):
    """Random noisy model + pattern + functional for structural checks."""
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 3))
    model = ar1_model(poles=rng.uniform(-0.7, 0.7, size=dim),
                      scales=rng.uniform(0.5, 2.0, size=dim),
                      mix=np.eye(dim) + 0.3 * rng.normal(size=(dim, dim)),
                      noise_poles=rng.uniform(-0.5, 0.5, size=dim),
                      noise_scales=rng.uniform(0.2, 1.0, size=dim),
                      grid_size=grid_size)
    intervals = [(int(rng.integers(1, 4)), int(rng.integers(0, 3)))]
    if rng.random() < 0.5:
        depth = intervals[0][0] + intervals[0][1]
        intervals.append((depth + 2, int(rng.integers(0, 2))))
    pattern = MissingPattern(intervals=tuple(intervals))
    N = int(rng.integers(0, 3))
    functional = FunctionalSpec(coeffs=rng.normal(size=(N + 1, dim)))
    return model, pattern, functional


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def test_white_signal_error_is_functional_variance():
    model = white_model(1, scale=1.7, grid_size=256)
    fun = FunctionalSpec(coeffs=np.array([[1.0], [2.0]]))
    res = estimate(model, MissingPattern(intervals=()), fun, K=8)
    assert res.delta == pytest.approx(1.7 * 5.0, rel=1e-12)
    assert np.abs(res.h_grid).max() < 1e-10
    assert res.variant == "noiseless"


@pytest.mark.parametrize("b,scale", [(0.6, 1.3), (-0.5, 0.7)])
def test_ar1_one_step_prediction(b, scale):
    # One-step error is the innovation variance; the filter is the
    # autoregression itself: single tap b at lag -1.
    model = _scalar_ar1(b, scale)
    res = estimate(model, MissingPattern(intervals=()),
                   FunctionalSpec(coeffs=np.array([[1.0]])), K=32)
    assert res.delta == pytest.approx(scale, rel=1e-10)
    assert res.taps[-1][0] == pytest.approx(b, rel=1e-9, abs=1e-12)
    others = max(np.abs(res.taps[j]).max() for j in res.taps if j != -1)
    assert others < 1e-10


def test_ar1_prediction_across_single_gap():
    # Missing {-1}: the best predictor is b^2 xi(-2) with error
    # scale * (1 + b^2), absorbing one unpredictable innovation.
    b, scale = 0.6, 1.3
    model = _scalar_ar1(b, scale)
    res = estimate(model, MissingPattern(intervals=((1, 0),)),
                   FunctionalSpec(coeffs=np.array([[1.0]])), K=32)
    assert res.delta == pytest.approx(scale * (1 + b * b), rel=1e-10)
    assert res.taps[-2][0] == pytest.approx(b * b, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("b1,b2", [(0.5, 0.3), (-0.4, 0.6), (0.0, 0.0),
                                   (0.9, 0.9)])
def test_benchmark_error_polynomial(b1, b2):
    # K=None exercises the pole-driven default truncation, which must be
    # deep enough even at pole 0.9.
    model = make_ar1_pair(b1, b2, grid_size=1024)
    pattern = MissingPattern(intervals=((2, 1),))
    fun = FunctionalSpec(coeffs=np.array([[1.0, 1.0], [1.0, 1.0]]))
    want = 10 + 8 * b1 + 4 * b1 ** 2 + 2 * b2 + b2 ** 2
    res = estimate(model, pattern, fun, K=None)
    assert res.delta == pytest.approx(want, rel=1e-8)


def test_benchmark_solution_structure():
    b1, b2 = 0.5, 0.3
    model = make_ar1_pair(b1, b2, grid_size=1024)
    pattern = MissingPattern(intervals=((2, 1),))
    fun = FunctionalSpec(coeffs=np.array([[1.0, 1.0], [1.0, 1.0]]))
    res = estimate(model, pattern, fun, K=48)
    # c(0) = (2 + 2 b1, 3 + 2 b1 + b2); the gap coefficients vanish.
    assert np.allclose(res.c[0], [2 + 2 * b1, 3 + 2 * b1 + b2], atol=1e-9)
    assert np.abs(res.c[-3]).max() < 1e-9
    assert np.abs(res.c[-2]).max() < 1e-9
    # single nonconstant tap at lag -1
    tap = res.taps[-1]
    want = [2 * (b1 + b1 ** 2) - (b2 + b2 ** 2), b2 + b2 ** 2]
    assert np.allclose(tap, want, atol=1e-8)
    others = max(np.abs(res.taps[j]).max() for j in res.taps if j != -1)
    assert others < 1e-8
    assert res.diagnostics.tap_tail_mass < 1e-10


# ---------------------------------------------------------------------------
# structural invariants on random instances
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_two_error_routes_agree(seed):
    model, pattern, functional = _random_instance(seed)
    res = estimate(model, pattern, functional, K=24)
    d = res.diagnostics
    assert res.delta >= 0
    assert d.two_form_rel_diff < 1e-10
    assert d.orthogonality_max < 1e-8
    assert d.gap_coeff_max < 1e-8


def test_error_scales_quadratically():
    model, pattern, functional = _random_instance(42)
    d1 = mean_square_error(model, pattern, functional, K=16)
    doubled = FunctionalSpec(coeffs=2.0 * functional.coeffs)
    d2 = mean_square_error(model, pattern, doubled, K=16)
    assert d2 == pytest.approx(4.0 * d1, rel=1e-10)


def test_truncated_error_monotone_in_order():
    model = _scalar_ar1(0.7, grid_size=1024)
    pattern = MissingPattern(intervals=((2, 1),))
    fun = FunctionalSpec(coeffs=np.array([[1.0], [0.5]]))
    deltas = [estimate(model, pattern, fun, K=K).delta for K in (8, 16, 32, 64)]
    for lo, hi in zip(deltas, deltas[1:]):
        assert hi >= lo - 1e-12
    # and the doubling diagnostic reports near-convergence at large K
    res = estimate(model, pattern, fun, K=64, check_convergence=True)
    assert res.diagnostics.doubling_rel_change < 1e-9


def test_zero_characteristic_recovers_functional_variance():
    model, _, functional = _random_instance(3)
    h0 = np.zeros((model.grid_size, model.dim))
    direct = delta_of_characteristic(model, functional, h0)
    assert direct == pytest.approx(functional_variance(model, functional),
                                   rel=1e-10)


def test_optimal_characteristic_beats_perturbations():
    model, pattern, functional = _random_instance(9)
    res = estimate(model, pattern, functional, K=24)
    base = delta_of_characteristic(model, functional, res.h_grid)
    assert base == pytest.approx(res.delta, rel=1e-8)
    rng = np.random.default_rng(0)
    lam = model.lam
    for _ in range(4):
        # admissible perturbation: supported on observed negative lags
        bump = sum(rng.normal() * np.exp(1j * j * lam)
                   for j in pattern.observed_window(12))
        pert = res.h_grid + 0.05 * bump[:, None] * rng.normal(size=model.dim)
        assert delta_of_characteristic(model, functional, pert) >= base - 1e-10


# ---------------------------------------------------------------------------
# dispatch, defaults, and taps
# ---------------------------------------------------------------------------


def test_variant_dispatch():
    pat = MissingPattern(intervals=())
    fun = FunctionalSpec(coeffs=np.array([[1.0]]))
    noiseless = _scalar_ar1(0.5)
    uncorr = ar1_model(poles=(0.5,), noise_poles=(0.2,), grid_size=256)
    assert estimate(noiseless, pat, fun, K=8).variant == "noiseless"
    assert estimate(uncorr, pat, fun, K=8).variant == "uncorrelated"
    assert estimate(noiseless, pat, fun.truncate(0), K=8).variant == "finite-horizon"


def test_default_truncation_rules():
    fun = FunctionalSpec(coeffs=np.ones((3, 1)))
    pole_half = _scalar_ar1(0.5)
    assert default_truncation(pole_half, fun) == 2 + 8 * 2
    free = SpectralModel(dim=1, F=lambda lam: np.ones((len(lam), 1, 1)),
                         grid_size=256, pole_modulus=None)
    assert default_truncation(free, fun) == 2 + 64


def test_filter_taps_window_and_gaps():
    model = _scalar_ar1(0.6)
    pattern = MissingPattern(intervals=((2, 0),))
    res = estimate(model, pattern, FunctionalSpec(coeffs=np.array([[1.0]])),
                   K=16)
    taps = filter_taps(res, window=10)
    assert set(taps) == {j for j in range(-10, 0) if j != -2}
    full = filter_taps(res)
    assert -2 not in full


def test_functional_validation():
    with pytest.raises(InvalidParameterError):
        FunctionalSpec(coeffs=np.zeros((0, 2)))
    with pytest.raises(InvalidParameterError):
        FunctionalSpec(coeffs=np.array([[np.nan]]))
    with pytest.raises(InvalidParameterError):
        FunctionalSpec(coeffs=np.array([[1.0]])).truncate(-1)


def test_dimension_mismatch_rejected():
    model = white_model(2, grid_size=256)
    with pytest.raises(InvalidParameterError):
        estimate(model, MissingPattern(intervals=()),
                 FunctionalSpec(coeffs=np.array([[1.0]])), K=8)


def test_wrapper_functions_consistent():
    model, pattern, functional = _random_instance(5)
    res = spectral_characteristic(model, pattern, functional, K=16)
    assert mean_square_error(model, pattern, functional, K=16) == res.delta
