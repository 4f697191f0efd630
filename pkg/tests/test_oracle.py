"""Tests for the verification oracles.

The finite-window Gaussian projection is an independent route to the same
mean-square error: it never touches the spectral solver, only covariance
matrices.  The circulant sampler is checked for exactness of its second
moments, reproducibility, and its refusal to proceed when the embedding is
not positive semidefinite.
"""

from math import comb

import numpy as np
import pytest

from gapcast import (
    FunctionalSpec,
    MissingPattern,
    SimulationConfig,
    SpectralModel,
    ar1_model,
    ar1_scalar,
    covariance,
    density_from_samples,
    estimate,
    functional_variance,
    grid_points,
    make_ar1_pair,
    ma_pair_model,
    monte_carlo_mse,
    projection_oracle,
    sample_paths,
    white_model,
)
from gapcast.oracle import CirculantEmbedding, _stream
from gapcast.errors import (
    DegenerateObservationsError,
    InvalidParameterError,
    SimulationMethodError,
)


def _scalar_ar1(b, scale=1.0, grid_size=512):
    return SpectralModel(dim=1,
                         F=lambda lam: ar1_scalar(lam, b, scale)[:, None, None],
                         grid_size=grid_size, pole_modulus=abs(b))


BENCH = dict(model=lambda: make_ar1_pair(0.5, 0.3, grid_size=1024),
             pattern=MissingPattern(intervals=((2, 1),)),
             functional=FunctionalSpec(coeffs=np.array([[1.0, 1.0],
                                                        [1.0, 1.0]])),
             delta=15.69)


# ---------------------------------------------------------------------------
# functional variance
# ---------------------------------------------------------------------------


def test_functional_variance_white():
    fun = FunctionalSpec(coeffs=np.array([[1.0, 2.0], [0.5, -1.0]]))
    got = functional_variance(white_model(2, scale=1.3, grid_size=256), fun)
    assert got == pytest.approx(1.3 * (1 + 4 + 0.25 + 1), rel=1e-12)


def test_functional_variance_ar1_double_sum():
    b, scale = 0.6, 1.4
    model = _scalar_ar1(b, scale)
    a = np.array([[1.0], [0.5], [-0.3]])
    fun = FunctionalSpec(coeffs=a)
    want = 0.0
    for i in range(3):
        for j in range(3):
            want += a[i, 0] * a[j, 0] * scale * b ** abs(i - j) / (1 - b * b)
    assert functional_variance(model, fun) == pytest.approx(want, rel=1e-10)


# ---------------------------------------------------------------------------
# projection oracle
# ---------------------------------------------------------------------------


def test_projection_matches_benchmark_error():
    res = projection_oracle(BENCH["model"](), BENCH["pattern"],
                            BENCH["functional"], window=60)
    assert res.delta_oracle == pytest.approx(BENCH["delta"], rel=1e-10)
    # the projection recovers the same single active tap at lag -1
    b1, b2 = 0.5, 0.3
    want = [2 * (b1 + b1 ** 2) - (b2 + b2 ** 2), b2 + b2 ** 2]
    assert np.allclose(res.taps_oracle[-1], want, atol=1e-8)
    deep = max(np.abs(res.taps_oracle[j]).max()
               for j in res.taps_oracle if j < -1)
    assert deep < 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_projection_agrees_with_spectral_solver(seed):
    rng = np.random.default_rng(seed)
    model = ar1_model(poles=rng.uniform(-0.6, 0.6, size=2),
                      scales=rng.uniform(0.5, 1.5, size=2),
                      mix=np.eye(2) + 0.2 * rng.normal(size=(2, 2)),
                      noise_poles=rng.uniform(-0.4, 0.4, size=2),
                      noise_scales=rng.uniform(0.2, 0.8, size=2),
                      grid_size=1024)
    pattern = MissingPattern(intervals=((1, 1),))
    fun = FunctionalSpec(coeffs=rng.normal(size=(2, 2)))
    d_spec = estimate(model, pattern, fun, K=48).delta
    d_proj = projection_oracle(model, pattern, fun, window=120).delta_oracle
    assert d_proj == pytest.approx(d_spec, rel=1e-6)


def test_projection_error_shrinks_with_window():
    model = ar1_model(poles=(0.7,), noise_poles=(0.3,), grid_size=512)
    pattern = MissingPattern(intervals=((2, 0),))
    fun = FunctionalSpec(coeffs=np.array([[1.0], [0.5]]))
    vals = [projection_oracle(model, pattern, fun, window=w).delta_oracle
            for w in (5, 10, 20, 40, 80)]
    for lo, hi in zip(vals[1:], vals):
        assert lo <= hi + 1e-10
    # and the limit is the spectral answer, approached from above
    d_spec = estimate(model, pattern, fun, K=64).delta
    assert vals[-1] >= d_spec - 1e-10
    assert vals[-1] == pytest.approx(d_spec, rel=1e-8)


def test_projection_with_everything_missing():
    # Window fully covered by the missing stretch: nothing to project on.
    model = _scalar_ar1(0.5)
    res = projection_oracle(model, MissingPattern(intervals=((1, 3),)),
                            FunctionalSpec(coeffs=np.array([[1.0]])), window=4)
    assert res.delta_oracle == pytest.approx(
        functional_variance(model, FunctionalSpec(coeffs=np.array([[1.0]]))))
    assert res.taps_oracle == {}


def test_projection_rejects_degenerate_observations():
    lam = grid_points(256)
    zero = density_from_samples(lam, np.zeros((256, 1, 1), dtype=complex))
    model = SpectralModel(dim=1, F=zero, grid_size=256, pole_modulus=None)
    with pytest.raises(DegenerateObservationsError):
        projection_oracle(model, MissingPattern(intervals=()),
                          FunctionalSpec(coeffs=np.array([[1.0]])), window=5)


# ---------------------------------------------------------------------------
# circulant sampling
# ---------------------------------------------------------------------------


def test_sampler_covariance_is_exact():
    # With many replications the sample covariance must match R(h) to within
    # Monte-Carlo error; the acceptance band is ~5 standard errors.
    b, scale = 0.6, 1.0
    model = _scalar_ar1(b, scale, grid_size=512)
    cfg = SimulationConfig(replications=20000, seed=7, window=8)
    xi, eta = sample_paths(model, cfg)
    assert eta.shape == xi.shape
    assert np.abs(eta).max() == 0.0  # noiseless model: silent noise channel
    for h in (0, 1, 3):
        emp = np.mean(xi[:, 0, 0] * xi[:, h, 0])
        want = scale * b ** h / (1 - b * b)
        assert emp == pytest.approx(want, abs=5 * 2.0 / np.sqrt(20000))


def test_sampler_cross_covariance():
    Cx = [np.array([[1.0]]), np.array([[0.6]])]
    Ce = [np.array([[0.8]])]
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    model = ma_pair_model(Cx, Ce, innovation_cov=S, grid_size=256)
    cfg = SimulationConfig(replications=30000, seed=3, window=4)
    xi, eta = sample_paths(model, cfg)
    want = covariance(model, 0, which="Fxe")[0, 0].real
    emp = np.mean(xi[:, 2, 0] * eta[:, 2, 0])
    assert emp == pytest.approx(want, abs=5 * 1.5 / np.sqrt(30000))


def test_sampler_reproducible_and_batch_invariant():
    model = ar1_model(poles=(0.5,), noise_poles=(0.2,), grid_size=256)
    cfg_a = SimulationConfig(replications=9, seed=11, window=6, batch=4)
    cfg_b = SimulationConfig(replications=9, seed=11, window=6, batch=256)
    xa, ea = sample_paths(model, cfg_a)
    xb, eb = sample_paths(model, cfg_b)
    assert np.array_equal(xa, xb) and np.array_equal(ea, eb)
    # replication streams are independent of the total count (prefix rule)
    xc, _ = sample_paths(model, cfg_a, replications=4)
    assert np.array_equal(xc, xa[:4])
    # different seed, different draws
    xd, _ = sample_paths(model, SimulationConfig(replications=9, seed=12,
                                                 window=6))
    assert not np.array_equal(xd, xa)


def test_stream_keying_is_per_replication():
    a = _stream(5, 0).standard_normal(4)
    b = _stream(5, 1).standard_normal(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, _stream(5, 0).standard_normal(4))


def test_embedding_rejects_indefinite_truncation():
    # A moving average of order 5 truncated to 4 lags by a deliberately
    # tiny margin has a negative circulant eigenvalue; the sampler must
    # refuse rather than silently clip it.
    coeffs = [[[comb(5, k) * 0.9 ** k]] for k in range(6)]
    model = ma_pair_model(coeffs, grid_size=256)
    with pytest.raises(SimulationMethodError):
        CirculantEmbedding(model, 1, margin=1)
    # with an adequate margin the same model embeds fine
    emb = CirculantEmbedding(model, 1, margin=8)
    assert emb.order >= 16


def test_embedding_order_covers_path_and_margin():
    model = _scalar_ar1(0.5, grid_size=256)
    emb = CirculantEmbedding(model, 10, margin=30)
    assert emb.order >= 2 * (10 + 30)
    assert emb.order & (emb.order - 1) == 0  # power of two


# ---------------------------------------------------------------------------
# Monte-Carlo mean-square error
# ---------------------------------------------------------------------------


def test_monte_carlo_zero_functional():
    model = _scalar_ar1(0.5, grid_size=256)
    fun = FunctionalSpec(coeffs=np.array([[0.0]]))
    out = monte_carlo_mse(model, MissingPattern(intervals=()), fun, {},
                          SimulationConfig(replications=50, seed=0, window=8))
    assert out.mse == 0.0


def test_monte_carlo_without_taps_measures_variance():
    model = _scalar_ar1(0.6, grid_size=256)
    fun = FunctionalSpec(coeffs=np.array([[1.0], [1.0]]))
    cfg = SimulationConfig(replications=4000, seed=2, window=8)
    out = monte_carlo_mse(model, MissingPattern(intervals=()), fun, {}, cfg)
    want = functional_variance(model, fun)
    assert abs(out.mse - want) < 5 * out.stderr


def test_monte_carlo_validates_estimated_error():
    model = BENCH["model"]()
    res = estimate(model, BENCH["pattern"], BENCH["functional"], K=48)
    cfg = SimulationConfig(replications=3000, seed=5, window=40)
    out = monte_carlo_mse(model, BENCH["pattern"], BENCH["functional"],
                          res.taps, cfg)
    z = (out.mse - BENCH["delta"]) / out.stderr
    assert abs(z) < 4
    # rerun is bit-identical
    again = monte_carlo_mse(model, BENCH["pattern"], BENCH["functional"],
                            res.taps, cfg)
    assert np.array_equal(out.errors, again.errors)
    assert out.mse == again.mse and out.stderr == again.stderr


def test_monte_carlo_prefers_optimal_taps():
    # Detuning the filter raises the realized error beyond noise level.
    model = _scalar_ar1(0.7, grid_size=256)
    pattern = MissingPattern(intervals=())
    fun = FunctionalSpec(coeffs=np.array([[1.0]]))
    res = estimate(model, pattern, fun, K=32)
    cfg = SimulationConfig(replications=6000, seed=9, window=20)
    good = monte_carlo_mse(model, pattern, fun, res.taps, cfg)
    detuned = {j: t + (0.3 if j == -1 else 0.0) for j, t in res.taps.items()}
    bad = monte_carlo_mse(model, pattern, fun, detuned, cfg)
    assert bad.mse > good.mse + 3 * bad.stderr


def test_monte_carlo_rejects_unobservable_taps():
    model = _scalar_ar1(0.5, grid_size=256)
    pattern = MissingPattern(intervals=((2, 0),))
    fun = FunctionalSpec(coeffs=np.array([[1.0]]))
    cfg = SimulationConfig(replications=10, seed=0, window=8)
    with pytest.raises(InvalidParameterError):
        monte_carlo_mse(model, pattern, fun, {0: np.array([1.0])}, cfg)
    with pytest.raises(InvalidParameterError):
        monte_carlo_mse(model, pattern, fun, {-2: np.array([1.0])}, cfg)


def test_simulation_config_validation():
    with pytest.raises(InvalidParameterError):
        SimulationConfig(replications=0)
    with pytest.raises(InvalidParameterError):
        SimulationConfig(window=0)
    with pytest.raises(InvalidParameterError):
        SimulationConfig(batch=0)
