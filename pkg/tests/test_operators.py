"""Tests for patterns, index maps, operator assembly, and the worked
two-component benchmark whose operator blocks and factorized inverse are
known in closed form.
"""

import numpy as np
import pytest

from gapcast import (
    FourierTable,
    MissingPattern,
    ar1_model,
    build_index_map,
    build_operator_system,
    make_ar1_pair,
    solve_coefficients,
    white_model,
)
from gapcast.operators import (
    OperatorSystem,
    assemble,
    example1_psi,
    example1_theta,
    factorized_inverse_check,
    layout_vector,
)
from gapcast.errors import (
    InvalidParameterError,
    InvalidPatternError,
    NonInvertibleOperatorError,
)


# ---------------------------------------------------------------------------
# missing patterns and index maps
# ---------------------------------------------------------------------------


def test_interval_coverage():
    pat = MissingPattern(intervals=((2, 1),))
    assert pat.points == (-3, -2)
    assert pat.size == 2
    assert pat.max_depth == 3
    assert -3 in pat and -2 in pat and -1 not in pat and -4 not in pat


def test_interval_union_and_window():
    pat = MissingPattern(intervals=((1, 0), (4, 1)))
    assert pat.points == (-5, -4, -1)
    assert pat.observed_window(6) == (-6, -3, -2)


def test_empty_pattern():
    pat = MissingPattern(intervals=())
    assert pat.points == ()
    assert pat.max_depth == 0
    assert pat.observed_window(3) == (-3, -2, -1)


def test_pattern_validation():
    with pytest.raises(InvalidPatternError):
        MissingPattern(intervals=((0, 2),))          # M must be >= 1
    with pytest.raises(InvalidPatternError):
        MissingPattern(intervals=((1, -1),))         # N must be >= 0
    with pytest.raises(InvalidPatternError):
        MissingPattern(intervals=((2, 1), (3, 0)))   # {-3,-2} overlaps {-3}
    with pytest.raises(InvalidPatternError):
        MissingPattern(intervals=((1, 0, 0),))       # not a pair


def test_equal_patterns_compare_equal():
    a = MissingPattern(intervals=((1, 0), (4, 1)))
    b = MissingPattern(intervals=((4, 1), (1, 0)))
    assert a == b


def test_index_map_layout():
    pat = MissingPattern(intervals=((2, 0),))
    im = build_index_map(pat, K=2, dim=2)
    assert im.entries == (-2, 0, 1, 2)
    assert im.scalar_size == 8
    assert im.position_of(-2) == 0
    assert im.position_of(1) == 4
    assert im.block_of(5) == (1, 1)
    lag = im.lag_matrix()
    assert lag[0, 1] == -2 and lag[3, 1] == 2


def test_index_map_validation():
    pat = MissingPattern(intervals=())
    with pytest.raises(InvalidParameterError):
        build_index_map(pat, K=-1)
    with pytest.raises(InvalidParameterError):
        build_index_map(pat, K=2, dim=0)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def test_assemble_places_lag_blocks():
    # Table with distinguishable coefficients c(k) = (k + 10) * I.
    max_lag = 4
    data = np.stack([(k + 10.0) * np.eye(1)
                     for k in range(-max_lag, max_lag + 1)])
    table = FourierTable(max_lag=max_lag, data=data.astype(complex))
    im = build_index_map(MissingPattern(intervals=((2, 0),)), K=2, dim=1)
    mat = assemble(table, im)
    entries = im.entries
    for p, jp in enumerate(entries):
        for q, jq in enumerate(entries):
            assert mat[p, q] == pytest.approx(jp - jq + 10.0)


def test_layout_vector_places_future_coefficients():
    # Entries are (-3, 0, 1, 2); the functional rows land on 0..N and the
    # gap block stays zero.
    im = build_index_map(MissingPattern(intervals=((3, 0),)), K=2, dim=2)
    v = layout_vector(im, [np.array([1.0, 2.0]), np.array([3.0, 4.0])])
    assert np.allclose(v, [0, 0, 1, 2, 3, 4, 0, 0])
    with pytest.raises(InvalidParameterError):
        layout_vector(im, [np.zeros(2)] * 4)  # horizon 3 exceeds K=2


# ---------------------------------------------------------------------------
# worked benchmark: paired AR(1) components, gap {-3, -2}
# ---------------------------------------------------------------------------


def _benchmark_system(b1, b2, K=8, grid_size=512):
    model = make_ar1_pair(b1, b2, grid_size=grid_size)
    pattern = MissingPattern(intervals=((2, 1),))
    return build_operator_system(model, pattern, K=K)


@pytest.mark.parametrize("b1,b2", [(0.5, 0.3), (-0.4, 0.6)])
def test_benchmark_known_blocks(b1, b2):
    # The inverse signal density has the lag-0 and lag-1 coefficients
    #   B0 = [[2 + b1^2 + b2^2, -1 - b2^2], [-1 - b2^2, 1 + b2^2]]
    #   B1 = [[-b1 - b2, b2], [b2, -b2]]
    # and vanishes beyond lag 1.
    sys = _benchmark_system(b1, b2)
    im = sys.index_map
    B0 = np.array([[2 + b1 ** 2 + b2 ** 2, -1 - b2 ** 2],
                   [-1 - b2 ** 2, 1 + b2 ** 2]])
    B1 = np.array([[-b1 - b2, b2], [b2, -b2]])
    p0 = im.position_of(0)
    p1 = im.position_of(1)
    got0 = sys.Bmat[p0:p0 + 2, p0:p0 + 2]
    got1 = sys.Bmat[p1:p1 + 2, p0:p0 + 2]   # rows at lag 1, cols at lag 0
    assert np.allclose(got0, B0, atol=1e-10)
    assert np.allclose(got1, B1, atol=1e-10)
    # beyond lag 1 the blocks vanish: entries (-3) vs (0) sit at lag 3
    pg = im.position_of(-3)
    assert np.abs(sys.Bmat[pg:pg + 2, p0:p0 + 2]).max() < 1e-10


def test_benchmark_factorized_inverse_frozen_entries():
    b1, b2 = 0.5, 0.3
    want = {
        (0, 0): np.array([[1.0, 1.0], [1.0, 2.0]]),
        (0, 1): np.array([[b1, b1], [b1, b1 + b2]]),
        (1, 1): np.array([[1 + b1 ** 2, 1 + b1 ** 2],
                          [1 + b1 ** 2, 2 + b1 ** 2 + b2 ** 2]]),
    }
    for (i, j), w in want.items():
        assert np.allclose(factorized_inverse_check(b1, b2, i, j), w, atol=1e-12)


def test_benchmark_triangular_factors_invert_each_other():
    # The lower-triangular factor coefficients convolve to the identity:
    # sum_l psi(l) theta(j - l) = I for j = 0 and 0 for j >= 1.
    b1, b2 = 0.47, -0.29
    for j in range(6):
        acc = sum(example1_psi(l, b1, b2) @ example1_theta(j - l, b1, b2)
                  for l in range(j + 1))
        want = np.eye(2) if j == 0 else np.zeros((2, 2))
        assert np.allclose(acc, want, atol=1e-12)


@pytest.mark.parametrize("b1,b2", [(0.3, 0.6), (-0.6, -0.2), (0.7, 0.0)])
def test_factorized_inverse_matches_dense_inverse(b1, b2):
    # Invert a deep future-only truncation numerically and compare its
    # upper-left blocks with the running product of triangular factors.
    K = 40
    model = make_ar1_pair(b1, b2, grid_size=512)
    sys = build_operator_system(model, MissingPattern(intervals=()), K=K)
    dense = np.linalg.inv(sys.Bmat)
    for i in range(4):
        for j in range(4):
            got = dense[2 * i:2 * i + 2, 2 * j:2 * j + 2]
            want = factorized_inverse_check(b1, b2, i, j)
            assert np.abs(got - want).max() < 1e-8


# ---------------------------------------------------------------------------
# operator system structure
# ---------------------------------------------------------------------------


def _random_noisy_model(seed, grid_size=512):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 3))
    poles = rng.uniform(-0.7, 0.7, size=dim)
    scales = rng.uniform(0.5, 2.0, size=dim)
    mix = np.eye(dim) + 0.3 * rng.normal(size=(dim, dim))
    npoles = rng.uniform(-0.5, 0.5, size=dim)
    nscales = rng.uniform(0.2, 1.0, size=dim)
    return ar1_model(poles=poles, scales=scales, mix=mix,
                     noise_poles=npoles, noise_scales=nscales,
                     grid_size=grid_size)


@pytest.mark.parametrize("seed", range(5))
def test_system_matrices_hermitian_and_definite(seed):
    model = _random_noisy_model(seed)
    pat = MissingPattern(intervals=((2, 1),))
    sys = build_operator_system(model, pat, K=12)
    B, Q = sys.Bmat, sys.Qmat
    assert np.abs(B - B.conj().T).max() < 1e-12 * max(1.0, np.abs(B).max())
    assert np.abs(Q - Q.conj().T).max() < 1e-12 * max(1.0, np.abs(Q).max())
    assert np.linalg.eigvalsh(B).min() > 0
    assert np.linalg.eigvalsh(Q).min() > -1e-10 * max(1.0, np.abs(Q).max())


def test_noiseless_system_degenerates():
    model = make_ar1_pair(0.5, 0.3, grid_size=512)
    sys = build_operator_system(model, MissingPattern(intervals=((1, 0),)), K=6)
    assert np.allclose(sys.Rmat, np.eye(sys.Rmat.shape[0]), atol=1e-12)
    assert np.abs(sys.Qmat).max() < 1e-12


def test_solve_reports_small_residual():
    model = _random_noisy_model(7)
    sys = build_operator_system(model, MissingPattern(intervals=((2, 0),)), K=10)
    rng = np.random.default_rng(1)
    a = rng.normal(size=sys.Bmat.shape[0])
    sol = solve_coefficients(sys, a.astype(complex))
    assert sol.residual < 1e-10
    assert np.allclose(sys.Bmat @ sol.c, sys.Rmat @ a, atol=1e-8)


def test_solve_rejects_ill_conditioned_system():
    base = build_operator_system(white_model(1, grid_size=256),
                                 MissingPattern(intervals=()), K=3)
    n = base.Bmat.shape[0]
    bad = np.eye(n, dtype=complex)
    bad[-1, -1] = 1e-18
    sick = OperatorSystem(Bmat=bad, Rmat=base.Rmat, Qmat=base.Qmat,
                          index_map=base.index_map, cond_B=1e18)
    with pytest.raises(NonInvertibleOperatorError):
        solve_coefficients(sick, np.ones(n, dtype=complex))
