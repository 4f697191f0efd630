"""Spectral models of multivariate stationary sequences.

A model bundles the spectral density F of the signal sequence, the density G
of an additive stationary noise sequence, and the cross densities between the
two, all as matrix-valued functions on [-pi, pi).  Frequency integrals use an
equispaced grid with the rectangle rule, which is spectrally accurate for the
smooth periodic integrands handled here and exact for trigonometric
polynomials shorter than the grid.

Conventions
-----------
grid nodes        lambda_m = -pi + 2*pi*m/n,  m = 0..n-1
Fourier coeffs    c(k) = (1/2pi) int f(lambda) e^{-i k lambda} d lambda
covariances       R(n) = (1/2pi) int e^{i n lambda} F(lambda) d lambda
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    InsufficientLagError,
    InvalidParameterError,
    SingularDensityError,
)

# A density function maps an array of frequencies (n,) to samples (n, T, T).
DensityFn = Callable[[np.ndarray], np.ndarray]

_HERMITIAN_TOL = 1e-10
_PSD_TOL = 1e-10


def grid_points(n: int) -> np.ndarray:
    """Equispaced frequency nodes -pi + 2*pi*m/n, m = 0..n-1."""
    return -np.pi + 2.0 * np.pi * np.arange(n) / n


def _as_matrix_samples(values: np.ndarray, n: int, dim: int, name: str) -> np.ndarray:
    values = np.asarray(values)
    if values.shape != (n, dim, dim):
        raise InvalidParameterError(
            f"density '{name}' returned shape {values.shape}, expected {(n, dim, dim)}"
        )
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0][0]
        lam = grid_points(n)[bad]
        raise SingularDensityError(
            f"density '{name}' is non-finite at grid node lambda={lam:.6f}"
        )
    return values.astype(complex)


@dataclass(eq=False)
class SpectralModel:
    """Signal/noise spectral model on a fixed frequency grid.

    Parameters
    ----------
    dim : dimension T of the sequences.
    F : spectral density of the signal.
    G : spectral density of the noise, or None for noiseless observation.
    F_xe : cross density (signal vs noise); None means uncorrelated.
    F_ex : adjoint cross density; derived from F_xe when omitted.
    grid_size : number of frequency nodes (power of two, >= 64).
    pole_modulus : largest pole modulus of the underlying rational model,
        when known; used by default truncation rules.
    """

    dim: int
    F: DensityFn
    G: DensityFn | None = None
    F_xe: DensityFn | None = None
    F_ex: DensityFn | None = None
    grid_size: int = 4096
    pole_modulus: float | None = None
    _samples: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.grid_size
        if n < 64 or (n & (n - 1)) != 0:
            raise InvalidParameterError(
                f"grid_size must be a power of two >= 64, got {n}"
            )
        if self.dim < 1:
            raise InvalidParameterError(f"dim must be positive, got {self.dim}")
        if self.F_ex is None and self.F_xe is not None:
            fxe = self.F_xe
            self.F_ex = lambda lam: np.conj(np.swapaxes(fxe(lam), -1, -2))
        self._validate()

    # -- evaluation ------------------------------------------------------

    @property
    def lam(self) -> np.ndarray:
        return grid_points(self.grid_size)

    def samples(self, which: str = "F") -> np.ndarray:
        """Density samples on the model grid, shape (n, T, T).

        ``which`` is one of F, G, Fxe, Fex, Fz (observation density
        F + F_xe + F_ex + G).
        """
        if which in self._samples:
            return self._samples[which]
        n, d = self.grid_size, self.dim
        if which == "Fz":
            out = (
                self.samples("F")
                + self.samples("G")
                + self.samples("Fxe")
                + self.samples("Fex")
            )
        else:
            fn = {"F": self.F, "G": self.G, "Fxe": self.F_xe, "Fex": self.F_ex}[which]
            if fn is None:
                out = np.zeros((n, d, d), dtype=complex)
            else:
                out = _as_matrix_samples(fn(self.lam), n, d, which)
        self._samples[which] = out
        return out

    @property
    def is_noiseless(self) -> bool:
        return self.G is None or not np.any(np.abs(self.samples("G")) > 0)

    @property
    def is_uncorrelated(self) -> bool:
        return self.F_xe is None or not np.any(np.abs(self.samples("Fxe")) > 0)

    def with_grid(self, grid_size: int) -> "SpectralModel":
        """Same model evaluated on a different grid."""
        if grid_size == self.grid_size:
            return self
        return SpectralModel(
            dim=self.dim,
            F=self.F,
            G=self.G,
            F_xe=self.F_xe,
            F_ex=self.F_ex,
            grid_size=grid_size,
            pole_modulus=self.pole_modulus,
        )

    # -- validation ------------------------------------------------------

    def _validate(self):
        for which in ("F", "G"):
            s = self.samples(which)
            scale = max(np.abs(s).max(), 1.0)
            herm = np.abs(s - np.conj(np.swapaxes(s, -1, -2))).max()
            if herm > _HERMITIAN_TOL * scale:
                raise InvalidParameterError(
                    f"density {which} is not Hermitian (defect {herm:.2e})"
                )
            mineig = np.linalg.eigvalsh(s).min()
            if mineig < -_PSD_TOL * scale:
                raise InvalidParameterError(
                    f"density {which} has a negative eigenvalue ({mineig:.2e})"
                )
        fxe = self.samples("Fxe")
        fex = self.samples("Fex")
        adj = np.abs(fex - np.conj(np.swapaxes(fxe, -1, -2))).max()
        if adj > _HERMITIAN_TOL * max(np.abs(fxe).max(), 1.0):
            raise InvalidParameterError(
                f"cross densities are not adjoint to each other (defect {adj:.2e})"
            )
        if self.is_noiseless and not self.is_uncorrelated:
            raise InvalidParameterError(
                "a noiseless model cannot carry a nonzero cross density"
            )


# ---------------------------------------------------------------------------
# Built-in density constructors
# ---------------------------------------------------------------------------


def _check_pole(b: float, name: str):
    if not np.isfinite(b) or abs(b) >= 1.0:
        raise InvalidParameterError(f"{name} must satisfy |b| < 1, got {b!r}")


def ar1_scalar(lam: np.ndarray, b: float, scale: float = 1.0) -> np.ndarray:
    """scale / |1 - b e^{i lambda}|^2 evaluated on ``lam``."""
    z = np.exp(1j * lam)
    return scale / np.abs(1.0 - b * z) ** 2


def make_ar1_pair(b1: float, b2: float, grid_size: int = 4096) -> SpectralModel:
    """Two-dimensional noiseless model built from two independent AR(1) factors.

    Component 1 is the first factor; component 2 is the sum of both.  The
    density is
        F = [[f, f], [f, f + g]],
    with f = |1 - b1 e^{i lambda}|^{-2} and g = |1 - b2 e^{i lambda}|^{-2}.
    """
    _check_pole(b1, "b1")
    _check_pole(b2, "b2")

    def F(lam):
        f = ar1_scalar(lam, b1)
        g = ar1_scalar(lam, b2)
        out = np.empty((lam.size, 2, 2), dtype=complex)
        out[:, 0, 0] = f
        out[:, 0, 1] = f
        out[:, 1, 0] = f
        out[:, 1, 1] = f + g
        return out

    return SpectralModel(
        dim=2, F=F, grid_size=grid_size, pole_modulus=max(abs(b1), abs(b2))
    )


def white_density(dim: int, scale=1.0) -> DensityFn:
    """Constant density scale * I (or a fixed PSD matrix)."""
    mat = np.asarray(scale, dtype=complex)
    if mat.ndim == 0:
        mat = mat * np.eye(dim)
    elif mat.ndim == 1:
        mat = np.diag(mat)
    if mat.shape != (dim, dim):
        raise InvalidParameterError(f"white scale has shape {mat.shape}, need {dim}x{dim}")

    def fn(lam):
        return np.broadcast_to(mat, (lam.size, dim, dim)).copy()

    return fn


def white_model(dim: int, scale=1.0, grid_size: int = 4096) -> SpectralModel:
    return SpectralModel(dim=dim, F=white_density(dim, scale), grid_size=grid_size,
                         pole_modulus=0.0)


def diagonal_ar1_density(poles: Sequence[float], scales: Sequence[float] | None = None,
                         mix: np.ndarray | None = None) -> DensityFn:
    """Density of L u where u has independent AR(1) components.

    ``poles`` are the AR coefficients, ``scales`` the innovation variances and
    ``mix`` an optional real mixing matrix L applied as L f(lambda) L^T.
    """
    poles = [float(b) for b in poles]
    for b in poles:
        _check_pole(b, "pole")
    d = len(poles)
    scales = [1.0] * d if scales is None else [float(s) for s in scales]
    if len(scales) != d:
        raise InvalidParameterError("scales and poles must have equal length")
    if any(s < 0 for s in scales):
        raise InvalidParameterError("scales must be nonnegative")
    L = None if mix is None else np.asarray(mix, dtype=float)
    if L is not None and L.shape != (d, d):
        raise InvalidParameterError(f"mix matrix has shape {L.shape}, need {d}x{d}")

    def fn(lam):
        out = np.zeros((lam.size, d, d), dtype=complex)
        for k, (b, s) in enumerate(zip(poles, scales)):
            out[:, k, k] = ar1_scalar(lam, b, s)
        if L is not None:
            out = np.einsum("ij,njk,lk->nil", L, out, L)
        return out

    return fn


def ar1_model(poles, scales=None, mix=None, noise_poles=None, noise_scales=None,
              noise_mix=None, grid_size: int = 4096) -> SpectralModel:
    """Diagonal-AR(1)-based model, optionally with an uncorrelated AR(1) noise."""
    F = diagonal_ar1_density(poles, scales, mix)
    G = None
    rho = max(abs(b) for b in poles)
    if noise_poles is not None:
        G = diagonal_ar1_density(noise_poles, noise_scales, noise_mix)
        rho = max(rho, max(abs(b) for b in noise_poles))
    return SpectralModel(dim=len(list(poles)), F=F, G=G, grid_size=grid_size,
                         pole_modulus=rho)


def moving_average_transfer(coeffs: Sequence[np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Transfer function C(lambda) = sum_j coeffs[j] e^{-i j lambda}."""
    mats = [np.asarray(c, dtype=complex) for c in coeffs]

    def fn(lam):
        z = np.exp(-1j * lam)
        out = np.zeros((lam.size,) + mats[0].shape, dtype=complex)
        for j, c in enumerate(mats):
            out += (z ** j)[:, None, None] * c
        return out

    return fn


def ma_pair_model(signal_coeffs, noise_coeffs=None, innovation_cov=None,
                  grid_size: int = 4096) -> SpectralModel:
    """Model of a jointly driven moving-average pair.

    xi(t) = sum_j Cx_j w(t-j) and eta(t) = sum_j Ce_j v(t-j), with (w, v)
    jointly white Gaussian with covariance ``innovation_cov`` (2T x 2T, PSD).
    This yields F = Cx S_w Cx*, G = Ce S_v Ce*, F_xe = Cx S_wv Ce*, so the
    joint spectral density is positive semidefinite by construction.
    """
    cx = [np.asarray(c, dtype=complex) for c in signal_coeffs]
    d = cx[0].shape[0]
    Hx = moving_average_transfer(cx)
    if noise_coeffs is None:
        if innovation_cov is not None:
            raise InvalidParameterError("innovation_cov given without noise_coeffs")

        def F(lam):
            hx = Hx(lam)
            return hx @ np.conj(np.swapaxes(hx, -1, -2))

        return SpectralModel(dim=d, F=F, grid_size=grid_size, pole_modulus=0.0)

    ce = [np.asarray(c, dtype=complex) for c in noise_coeffs]
    He = moving_average_transfer(ce)
    if innovation_cov is None:
        innovation_cov = np.eye(2 * d)
    S = np.asarray(innovation_cov, dtype=complex)
    if S.shape != (2 * d, 2 * d):
        raise InvalidParameterError(
            f"innovation_cov has shape {S.shape}, need {(2 * d, 2 * d)}"
        )
    if np.linalg.eigvalsh(S).min() < -_PSD_TOL * max(np.abs(S).max(), 1.0):
        raise InvalidParameterError("innovation_cov must be positive semidefinite")
    Sw, Sv = S[:d, :d], S[d:, d:]
    Swv = S[:d, d:]

    def F(lam):
        hx = Hx(lam)
        return hx @ Sw @ np.conj(np.swapaxes(hx, -1, -2))

    def G(lam):
        he = He(lam)
        return he @ Sv @ np.conj(np.swapaxes(he, -1, -2))

    def Fxe(lam):
        hx, he = Hx(lam), He(lam)
        return hx @ Swv @ np.conj(np.swapaxes(he, -1, -2))

    return SpectralModel(dim=d, F=F, G=G, F_xe=Fxe, grid_size=grid_size,
                         pole_modulus=0.0)


def laurent_entry(num_offset: int, num_coeffs, den_offset: int = 0, den_coeffs=(1.0,)):
    """Scalar rational entry N(z)/D(z) with Laurent polynomials in z = e^{i lambda}."""
    nc = np.asarray(num_coeffs, dtype=complex)
    dc = np.asarray(den_coeffs, dtype=complex)

    def fn(lam):
        z = np.exp(1j * lam)
        num = sum(c * z ** (num_offset + j) for j, c in enumerate(nc))
        den = sum(c * z ** (den_offset + j) for j, c in enumerate(dc))
        return num / den

    return fn


def laurent_density(dim: int, entries: dict) -> DensityFn:
    """Hermitian density from per-entry Laurent rational functions.

    ``entries`` maps (row, col) with row <= col to scalar callables (as built
    by :func:`laurent_entry`); the lower triangle is filled by conjugation.
    """
    for (r, c) in entries:
        if not (0 <= r <= c < dim):
            raise InvalidParameterError(f"entry index {(r, c)} out of range for dim {dim}")

    def fn(lam):
        out = np.zeros((lam.size, dim, dim), dtype=complex)
        for (r, c), e in entries.items():
            v = e(lam)
            out[:, r, c] += v
            if r != c:
                out[:, c, r] += np.conj(v)
        return out

    return fn


def density_from_samples(lam_ref: np.ndarray, samples: np.ndarray) -> DensityFn:
    """Density defined by samples on a fixed grid (no interpolation).

    The callable checks that it is evaluated on exactly the reference grid;
    models built from sample files therefore pin their own grid size.
    """
    lam_ref = np.asarray(lam_ref, dtype=float)
    samples = np.asarray(samples, dtype=complex)

    def fn(lam):
        if lam.shape != lam_ref.shape or not np.allclose(lam, lam_ref, atol=1e-12):
            raise InvalidParameterError(
                "sampled density evaluated on a grid different from its file grid"
            )
        return samples.copy()

    return fn


# ---------------------------------------------------------------------------
# Fourier coefficients
# ---------------------------------------------------------------------------


@dataclass
class FourierTable:
    """Matrix Fourier coefficients c(k), |k| <= max_lag.

    data[k + max_lag] holds c(k) = (1/2pi) int f e^{-i k lambda} d lambda.
    """

    max_lag: int
    data: np.ndarray  # (2*max_lag + 1, T, T)

    @property
    def dim(self) -> int:
        return self.data.shape[-1]

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.max_lag, self.max_lag + 1)

    def coeff(self, k: int) -> np.ndarray:
        if abs(k) > self.max_lag:
            raise InsufficientLagError(
                f"lag {k} outside table range +-{self.max_lag}"
            )
        return self.data[k + self.max_lag]

    def hermitian_defect(self) -> float:
        """max_k || c(-k) - c(k)^* ||, zero for Hermitian-valued integrands."""
        rev = self.data[::-1]
        adj = np.conj(np.swapaxes(self.data, -1, -2))
        return float(np.abs(rev - adj).max())


def coeffs_from_samples(samples: np.ndarray, max_lag: int) -> FourierTable:
    """Fourier coefficients of grid samples (standard grid layout assumed)."""
    n = samples.shape[0]
    if n < 4 * max_lag:
        raise InvalidParameterError(
            f"grid size {n} too small for max_lag {max_lag} (need >= {4 * max_lag})"
        )
    fft = np.fft.fft(samples, axis=0) / n
    ks = np.arange(-max_lag, max_lag + 1)
    signs = np.where(ks % 2 == 0, 1.0, -1.0)
    data = signs[:, None, None] * fft[ks % n]
    return FourierTable(max_lag=max_lag, data=data)


def fourier_coeffs(fn: DensityFn | np.ndarray, max_lag: int,
                   grid_size: int = 4096) -> FourierTable:
    """Fourier coefficient table of a matrix function on [-pi, pi).

    ``fn`` may be a callable or precomputed samples.  Requires
    grid_size >= 4 * max_lag.
    """
    if max_lag < 0:
        raise InvalidParameterError(f"max_lag must be >= 0, got {max_lag}")
    if callable(fn):
        samples = fn(grid_points(grid_size))
        samples = np.asarray(samples, dtype=complex)
        if samples.ndim == 1:
            samples = samples[:, None, None]
        if not np.all(np.isfinite(samples)):
            bad = int(np.argwhere(~np.isfinite(samples))[0][0])
            lam = grid_points(grid_size)[bad]
            raise SingularDensityError(
                f"integrand non-finite at grid node lambda={lam:.6f}"
            )
    else:
        samples = np.asarray(fn, dtype=complex)
        if not np.all(np.isfinite(samples)):
            bad = int(np.argwhere(~np.isfinite(samples))[0][0])
            lam = grid_points(samples.shape[0])[bad]
            raise SingularDensityError(
                f"integrand non-finite at grid node lambda={lam:.6f}"
            )
    return coeffs_from_samples(samples, max_lag)


# ---------------------------------------------------------------------------
# Covariances and minimality
# ---------------------------------------------------------------------------


def covariance(model: SpectralModel, n: int, which: str = "F") -> np.ndarray:
    """Covariance R(n) = (1/2pi) int e^{i n lambda} density d lambda."""
    table = coeffs_from_samples(model.samples(which), abs(n))
    return table.coeff(-n)


def covariance_table(model: SpectralModel, max_lag: int, which: str = "F") -> FourierTable:
    """All covariances R(n), |n| <= max_lag, as a table indexed by -n.

    ``table.coeff(-n)`` is R(n); use :func:`covariance` for single lags.
    """
    return coeffs_from_samples(model.samples(which), max_lag)


@dataclass(frozen=True)
class MinimalityReport:
    """Outcome of the minimality check for an observation density."""

    value: float          # (1/2pi) int trace(F_zeta^{-1})
    passed: bool
    max_cond: float
    worst_lambda: float
    note: str = ""


def check_minimality(model: SpectralModel, cond_ceiling: float = 1e12) -> MinimalityReport:
    """Check that the observation density is invertible enough to estimate.

    The truth condition is integrability of trace(F_zeta^{-1}); numerically we
    require the quadrature value to be finite and the condition number of
    F_zeta to stay below ``cond_ceiling`` at every grid node.
    """
    fz = model.samples("Fz")
    eig = np.linalg.eigvalsh(fz)
    lam = model.lam
    scale = max(float(eig.max()), 0.0)
    floor = np.finfo(float).tiny * max(scale, 1.0)
    mineig = eig.min(axis=1)
    maxeig = eig.max(axis=1)
    singular = mineig <= floor
    with np.errstate(divide="ignore", invalid="ignore"):
        conds = np.where(singular, np.inf, maxeig / np.maximum(mineig, floor))
    worst = int(np.argmax(conds))
    max_cond = float(conds[worst])
    if np.any(singular):
        bad = int(np.argmax(singular))
        return MinimalityReport(
            value=float("inf"), passed=False, max_cond=float("inf"),
            worst_lambda=float(lam[bad]),
            note=f"observation density singular at lambda={lam[bad]:.6f}",
        )
    value = float(np.mean(np.sum(1.0 / eig, axis=1)))
    passed = bool(np.isfinite(value) and max_cond <= cond_ceiling)
    note = "" if passed else (
        f"condition number {max_cond:.3e} exceeds ceiling {cond_ceiling:.1e} "
        f"at lambda={lam[worst]:.6f}"
    )
    return MinimalityReport(value=value, passed=passed, max_cond=max_cond,
                            worst_lambda=float(lam[worst]), note=note)
