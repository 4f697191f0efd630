"""Operator equations determining the optimal extrapolation coefficients.

The unknown coefficient sequence c(j) lives on the index set
U_K = S union {0, ..., K}, where S is the set of missed negative indices and
K the truncation order of the future part.  The linear system couples Fourier
coefficient tables of functions of the observation density through block
matrices indexed by U_K.

Block convention: the matrix block at (row p, col q) is table.coeff(j_p - j_q).
The system builder feeds tables of the *transposed* integrands, which makes
the solved system exactly the coefficient-space form of the orthogonality
conditions (column layout; see extrapolate.py).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    InsufficientLagError,
    InvalidParameterError,
    InvalidPatternError,
    NonInvertibleOperatorError,
    SingularDensityError,
)
from .spectral import FourierTable, SpectralModel, check_minimality, coeffs_from_samples


@dataclass(frozen=True)
class MissingPattern:
    """Union of missed-observation intervals in the negative integers.

    Each interval is a pair (M, N) with M >= 1, N >= 0 and covers
    {-M - N, ..., -M}.  Intervals must be pairwise disjoint; they are stored
    sorted by leftmost point so equal patterns compare equal.
    """

    intervals: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        cleaned = []
        for pair in self.intervals:
            if len(pair) != 2:
                raise InvalidPatternError(f"interval {pair!r} is not an (M, N) pair")
            m, n = int(pair[0]), int(pair[1])
            if m < 1 or n < 0:
                raise InvalidPatternError(
                    f"interval (M={m}, N={n}) must have M >= 1 and N >= 0"
                )
            cleaned.append((m, n))
        cleaned.sort(key=lambda mn: -(mn[0] + mn[1]))
        seen: set[int] = set()
        for m, n in cleaned:
            pts = set(range(-m - n, -m + 1))
            if pts & seen:
                raise InvalidPatternError(
                    f"interval (M={m}, N={n}) overlaps another interval"
                )
            seen |= pts
        object.__setattr__(self, "intervals", tuple(cleaned))

    @property
    def points(self) -> tuple[int, ...]:
        """All missed indices, ascending."""
        pts: list[int] = []
        for m, n in self.intervals:
            pts.extend(range(-m - n, -m + 1))
        return tuple(sorted(pts))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def max_depth(self) -> int:
        """max(M_l + N_l), i.e. how far back the deepest interval reaches."""
        return max((m + n for m, n in self.intervals), default=0)

    def __contains__(self, j: int) -> bool:
        return any(-m - n <= j <= -m for m, n in self.intervals)

    def observed_window(self, window: int) -> tuple[int, ...]:
        """Observed indices in {-window, ..., -1}, ascending."""
        return tuple(j for j in range(-window, 0) if j not in self)


@dataclass(frozen=True)
class IndexMap:
    """Ordered scalar layout of U_K = S union {0..K} for dimension ``dim``.

    entries are the sequence indices (gap points ascending, then 0..K); the
    scalar position of coordinate k of entry p is p * dim + k.
    """

    entries: tuple[int, ...]
    K: int
    dim: int

    @property
    def scalar_size(self) -> int:
        return len(self.entries) * self.dim

    def block_of(self, pos: int) -> tuple[int, int]:
        """Map a scalar position to (sequence index j, coordinate k)."""
        if not 0 <= pos < self.scalar_size:
            raise InvalidParameterError(f"position {pos} out of range")
        return self.entries[pos // self.dim], pos % self.dim

    def position_of(self, j: int) -> int:
        """First scalar position of sequence index j."""
        return self.entries.index(j) * self.dim

    def lag_matrix(self) -> np.ndarray:
        e = np.asarray(self.entries)
        return e[:, None] - e[None, :]


def build_index_map(pattern: MissingPattern, K: int, dim: int = 1) -> IndexMap:
    """Index map over the gap points followed by the future segment 0..K."""
    if K < 0:
        raise InvalidParameterError(f"truncation K must be >= 0, got {K}")
    if dim < 1:
        raise InvalidParameterError(f"dim must be positive, got {dim}")
    entries = tuple(pattern.points) + tuple(range(K + 1))
    return IndexMap(entries=entries, K=K, dim=dim)


def assemble(table: FourierTable, index_map: IndexMap) -> np.ndarray:
    """Block matrix with block (p, q) = table.coeff(j_p - j_q)."""
    if table.dim != index_map.dim:
        raise InvalidParameterError(
            f"table dim {table.dim} does not match index map dim {index_map.dim}"
        )
    lags = index_map.lag_matrix()
    if np.abs(lags).max() > table.max_lag:
        worst = int(np.abs(lags).max())
        raise InsufficientLagError(
            f"assembly needs lag {worst} but table covers only +-{table.max_lag}"
        )
    blocks = table.data[lags + table.max_lag]  # (P, P, T, T)
    P, T = len(index_map.entries), index_map.dim
    return blocks.transpose(0, 2, 1, 3).reshape(P * T, P * T)


@dataclass
class OperatorSystem:
    """Assembled operator matrices over U_K.

    Bmat is Hermitian positive definite whenever the minimality check passes;
    Rmat carries the signal-vs-observation coupling and Qmat the quadratic
    remainder of the mean-square error.
    """

    Bmat: np.ndarray
    Rmat: np.ndarray
    Qmat: np.ndarray
    index_map: IndexMap
    cond_B: float


def _transposed(samples: np.ndarray) -> np.ndarray:
    return np.swapaxes(samples, -1, -2)


def build_operator_system(model: SpectralModel, pattern: MissingPattern, K: int,
                          max_lag: int | None = None,
                          cond_ceiling: float = 1e12) -> OperatorSystem:
    """Build the operator system for ``model`` truncated at future order K.

    The Fourier tables are computed from the model's grid samples; their lag
    range defaults to 4 * (K + max interval depth), clamped to what the grid
    supports (at least the assembly requirement K + max depth).
    """
    report = check_minimality(model, cond_ceiling=cond_ceiling)
    if not report.passed:
        raise SingularDensityError(
            f"minimality check failed: {report.note or 'non-finite integral'}"
        )
    need = K + pattern.max_depth
    if max_lag is None:
        max_lag = min(4 * max(need, 1), model.grid_size // 4)
    if max_lag < need:
        raise InsufficientLagError(
            f"max_lag {max_lag} cannot cover assembly lag {need}; "
            f"enlarge the grid or reduce K"
        )

    imap = build_index_map(pattern, K, model.dim)
    n, d = model.grid_size, model.dim
    Z = model.samples("Fz")
    try:
        Zinv = np.linalg.inv(Z)
    except np.linalg.LinAlgError as exc:
        raise SingularDensityError(f"observation density not invertible: {exc}") from exc

    Bmat = assemble(coeffs_from_samples(_transposed(Zinv), max_lag), imap)

    if model.is_noiseless:
        size = imap.scalar_size
        Rmat = np.eye(size, dtype=complex)
        Qmat = np.zeros((size, size), dtype=complex)
    else:
        X = model.samples("F") + model.samples("Fxe")
        XZinv = X @ Zinv
        Rmat = assemble(coeffs_from_samples(_transposed(XZinv), max_lag), imap)
        Xh = np.conj(_transposed(X))
        W = model.samples("F") - XZinv @ Xh
        Qmat = assemble(coeffs_from_samples(_transposed(W), max_lag), imap)

    cond_B = float(np.linalg.cond(Bmat))
    return OperatorSystem(Bmat=Bmat, Rmat=Rmat, Qmat=Qmat, index_map=imap,
                          cond_B=cond_B)


@dataclass(frozen=True)
class CoefficientSolution:
    """Solution of the operator system with its reported solve residual."""

    c: np.ndarray
    residual: float


def solve_coefficients(system: OperatorSystem, a_vec: np.ndarray,
                       cond_ceiling: float = 1e12) -> CoefficientSolution:
    """Solve Bmat c = Rmat a by Cholesky factorization with one refinement step."""
    a_vec = np.asarray(a_vec, dtype=complex)
    if a_vec.shape != (system.index_map.scalar_size,):
        raise InvalidParameterError(
            f"layout vector has shape {a_vec.shape}, "
            f"expected ({system.index_map.scalar_size},)"
        )
    if not np.isfinite(system.cond_B) or system.cond_B > cond_ceiling:
        raise NonInvertibleOperatorError(
            f"operator condition number {system.cond_B:.3e} exceeds "
            f"ceiling {cond_ceiling:.1e}"
        )
    rhs = system.Rmat @ a_vec
    try:
        cho = scipy.linalg.cho_factor(system.Bmat)
    except np.linalg.LinAlgError as exc:
        raise NonInvertibleOperatorError(
            f"operator matrix is not positive definite: {exc}"
        ) from exc
    c = scipy.linalg.cho_solve(cho, rhs)
    # one step of iterative refinement
    resid = rhs - system.Bmat @ c
    c = c + scipy.linalg.cho_solve(cho, resid)
    resid = rhs - system.Bmat @ c
    denom = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
    return CoefficientSolution(c=c, residual=float(np.linalg.norm(resid)) / denom)


def layout_vector(index_map: IndexMap, coeffs: Sequence[np.ndarray]) -> np.ndarray:
    """Embed functional coefficients a(0..N) into the U_K scalar layout."""
    d = index_map.dim
    coeffs = [np.asarray(a, dtype=complex).reshape(d) for a in coeffs]
    if len(coeffs) - 1 > index_map.K:
        raise InvalidParameterError(
            f"functional horizon {len(coeffs) - 1} exceeds truncation K={index_map.K}"
        )
    vec = np.zeros(index_map.scalar_size, dtype=complex)
    for j, a in enumerate(coeffs):
        p = index_map.position_of(j)
        vec[p:p + d] = a
    return vec


# ---------------------------------------------------------------------------
# Closed-form factorization for the two-dimensional AR(1)-pair model
# ---------------------------------------------------------------------------


def example1_psi(j: int, b1: float, b2: float) -> np.ndarray:
    """Banded factor of the future-segment operator of the AR(1)-pair model."""
    if j == 0:
        return np.array([[1.0, 1.0], [0.0, -1.0]])
    if j == 1:
        return np.array([[-b1, -b2], [0.0, b2]])
    return np.zeros((2, 2))


def example1_theta(j: int, b1: float, b2: float) -> np.ndarray:
    """Inverse factor: theta(j) = [[b1^j, b1^j], [0, -b2^j]]."""
    if j < 0:
        return np.zeros((2, 2))
    return np.array([[b1 ** j, b1 ** j], [0.0, -(b2 ** j)]])


def factorized_inverse_check(b1: float, b2: float, i: int, j: int) -> np.ndarray:
    """Entry (i, j) of the inverse future-segment operator, via the factorization.

    The future block of the AR(1)-pair system factorizes through the banded
    sequence psi; its inverse has entries
    sum_{l=0}^{min(i,j)} theta(i-l)^T theta(j-l).
    """
    for b, name in ((b1, "b1"), (b2, "b2")):
        if abs(b) >= 1.0:
            raise InvalidParameterError(f"{name} must satisfy |b| < 1, got {b!r}")
    if i < 0 or j < 0:
        raise InvalidParameterError("entry indices must be nonnegative")
    out = np.zeros((2, 2))
    for l in range(min(i, j) + 1):
        out += example1_theta(i - l, b1, b2).T @ example1_theta(j - l, b1, b2)
    return out
