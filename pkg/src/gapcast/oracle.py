"""Time-domain verification tools: projection oracle and Monte-Carlo simulation.

The projection oracle solves the finite-window normal equations built from
quadrature covariances of the observed process; it is an independent route to
the optimal estimate that never touches the operator system, so it serves as
ground truth for the spectral pipeline.  The simulator draws exact Gaussian
paths of the joint signal/noise sequence by circulant embedding of the
covariance sequence and estimates the mean-square error empirically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateObservationsError,
    InvalidParameterError,
    SimulationMethodError,
)
from .extrapolate import FunctionalSpec
from .operators import MissingPattern
from .spectral import SpectralModel, coeffs_from_samples


@dataclass(frozen=True)
class SimulationConfig:
    """Controls for path sampling and Monte-Carlo error estimation.

    Each replication derives its own counter-based stream from
    (seed, replication index), so parallel and serial runs agree exactly.
    """

    replications: int = 10000
    seed: int = 0
    window: int = 50
    path_length: int | None = None
    embedding_margin: int | None = None
    psd_tol: float = 1e-8
    batch: int = 256

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidParameterError("replications must be >= 1")
        if self.seed < 0:
            raise InvalidParameterError("seed must be a nonnegative integer")
        if self.window < 1:
            raise InvalidParameterError("window must be >= 1")
        if self.batch < 1:
            raise InvalidParameterError("batch must be >= 1")


@dataclass
class OracleResult:
    """Finite-window projection estimate: its error and taps."""

    delta_oracle: float
    taps_oracle: dict[int, np.ndarray]
    window: int


def functional_variance(model: SpectralModel, functional: FunctionalSpec) -> float:
    """E |sum a(j)^T xi(j)|^2 from quadrature covariances."""
    N = functional.horizon
    table = coeffs_from_samples(model.samples("F"), max(N, 1))
    a = functional.coeffs
    total = 0.0 + 0.0j
    for j in range(N + 1):
        for k in range(N + 1):
            total += a[j] @ table.coeff(-(j - k)) @ np.conj(a[k])
    return float(total.real)


def projection_oracle(model: SpectralModel, pattern: MissingPattern,
                      functional: FunctionalSpec, window: int) -> OracleResult:
    """Best linear estimate from the finite observed window {-window..-1} \\ S.

    Solves the normal equations with exact (quadrature) covariances of the
    observed sequence.  The reported error is an upper bound for the
    infinite-past optimum and decreases as the window grows.
    """
    if window < 1:
        raise InvalidParameterError("window must be >= 1")
    if functional.dim != model.dim:
        raise InvalidParameterError("functional dimension does not match model")
    N = functional.horizon
    L = window + N
    d = model.dim

    cov_z = coeffs_from_samples(model.samples("Fz"), L)
    cross = model.samples("F") + model.samples("Fex")   # density of (zeta, xi)
    cov_zx = coeffs_from_samples(cross, L)

    def Rz(n):
        return cov_z.coeff(-n)

    def Rzx(n):
        return cov_zx.coeff(-n)

    observed = pattern.observed_window(window)
    e_s2 = functional_variance(model, functional)
    if not observed:
        return OracleResult(delta_oracle=e_s2, taps_oracle={}, window=window)

    W = len(observed)
    gamma = np.empty((W * d, W * d), dtype=complex)
    for i, u in enumerate(observed):
        for j, v in enumerate(observed):
            gamma[i * d:(i + 1) * d, j * d:(j + 1) * d] = Rz(u - v)
    m = np.zeros(W * d, dtype=complex)
    a = functional.coeffs
    for i, u in enumerate(observed):
        acc = np.zeros(d, dtype=complex)
        for k in range(N + 1):
            acc += Rzx(u - k) @ np.conj(a[k])
        m[i * d:(i + 1) * d] = acc

    try:
        cho = scipy.linalg.cho_factor(gamma)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise DegenerateObservationsError(
            f"observation covariance is singular over window {window}: {exc}"
        ) from exc
    gm = scipy.linalg.cho_solve(cho, m)
    delta = e_s2 - float(np.vdot(m, gm).real)
    taps_vec = np.conj(gm)
    taps = {u: taps_vec[i * d:(i + 1) * d].copy() for i, u in enumerate(observed)}
    return OracleResult(delta_oracle=max(delta, 0.0), taps_oracle=taps, window=window)


# ---------------------------------------------------------------------------
# Path sampling by circulant embedding
# ---------------------------------------------------------------------------


class CirculantEmbedding:
    """Exact Gaussian sampler for the joint (xi, eta) sequence.

    Embeds the covariance sequence of the stacked 2T-dimensional process in a
    block circulant, factorizes its spectrum, and synthesizes real paths by
    inverse FFT.  Small negative circulant eigenvalues (within ``psd_tol``
    relative to the largest) are clipped to zero; larger ones raise, with the
    advice to enlarge the embedding order.
    """

    def __init__(self, model: SpectralModel, path_length: int,
                 margin: int | None = None, psd_tol: float = 1e-8):
        if path_length < 1:
            raise InvalidParameterError("path_length must be >= 1")
        if margin is None:
            rho = model.pole_modulus
            if rho is not None and 0.0 < rho < 1.0:
                margin = int(min(max(math.ceil(math.log(1e-12) / math.log(rho)), 64), 1024))
            else:
                margin = 256
        m = 1 << max(int(math.ceil(math.log2(2 * (path_length + margin)))), 3)
        d = model.dim
        D = 2 * d

        work = model
        if work.grid_size < 2 * m:
            work = model.with_grid(1 << int(math.ceil(math.log2(2 * m))))
        joint = np.zeros((work.grid_size, D, D), dtype=complex)
        joint[:, :d, :d] = work.samples("F")
        joint[:, :d, d:] = work.samples("Fxe")
        joint[:, d:, :d] = work.samples("Fex")
        joint[:, d:, d:] = work.samples("G")

        table = coeffs_from_samples(joint, m // 2)
        scale = max(float(np.abs(table.data).max()), np.finfo(float).tiny)
        if float(np.abs(table.data.imag).max()) > 1e-9 * scale:
            raise SimulationMethodError(
                "time-domain simulation requires a real-valued process "
                "(covariances came out complex)"
            )

        def R(n):
            return table.coeff(-n).real

        C = np.empty((m, D, D))
        for j_ in range(m):
            C[j_] = R(j_) if j_ <= m // 2 else R(j_ - m).T
        spec = np.fft.fft(C, axis=0)
        spec = 0.5 * (spec + np.conj(np.swapaxes(spec, -1, -2)))
        w, V = np.linalg.eigh(spec)
        wmax = max(float(w.max()), np.finfo(float).tiny)
        wmin = float(w.min())
        if wmin < -psd_tol * wmax:
            raise SimulationMethodError(
                f"circulant embedding is not positive semidefinite "
                f"(min eigenvalue {wmin:.3e} vs scale {wmax:.3e}); "
                f"increase the embedding margin"
            )
        w = np.clip(w, 0.0, None)
        self.factors = V * np.sqrt(w)[:, None, :]   # A_k with A_k A_k^H = spec_k
        self.order = m
        self.dim = d
        self.path_length = path_length

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One real path of the stacked process, shape (path_length, 2T)."""
        return self.sample_block([rng])[0]

    def sample_block(self, rngs) -> np.ndarray:
        """Paths for several independent streams, shape (B, path_length, 2T)."""
        m, D = self.order, 2 * self.dim
        half = m // 2
        B = len(rngs)
        z = np.empty((B, half + 1, D), dtype=complex)
        for b, rng in enumerate(rngs):
            u = rng.standard_normal((half + 1, D))
            v = rng.standard_normal((half + 1, D))
            zb = (u + 1j * v) / math.sqrt(2.0)
            zb[0] = u[0]
            zb[half] = u[half]
            z[b] = zb
        W = np.einsum("kde,bke->bkd", self.factors[: half + 1], z)
        X = math.sqrt(m) * np.fft.irfft(W, n=m, axis=1)
        return X[:, : self.path_length, :]


def _stream(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, rep], dtype=np.uint64)))


def sample_paths(model: SpectralModel, config: SimulationConfig,
                 replications: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stationary zero-mean Gaussian paths of (xi, eta).

    Returns arrays of shape (R, path_length, T).  Replication r uses the
    stream keyed by (seed, r); results do not depend on batching.
    """
    R = config.replications if replications is None else replications
    length = config.path_length or config.window
    emb = CirculantEmbedding(model, length, margin=config.embedding_margin,
                             psd_tol=config.psd_tol)
    d = model.dim
    xi = np.empty((R, length, d))
    eta = np.empty((R, length, d))
    for start in range(0, R, config.batch):
        stop = min(start + config.batch, R)
        block = emb.sample_block([_stream(config.seed, r) for r in range(start, stop)])
        xi[start:stop] = block[:, :, :d]
        eta[start:stop] = block[:, :, d:]
    return xi, eta


@dataclass
class MonteCarloResult:
    """Empirical mean-square error of a fixed time-domain filter."""

    mse: float
    stderr: float
    replications: int
    seed: int
    errors: np.ndarray


def monte_carlo_mse(model: SpectralModel, pattern: MissingPattern,
                    functional: FunctionalSpec, taps: dict[int, np.ndarray],
                    config: SimulationConfig) -> MonteCarloResult:
    """Estimate E |A_N xi - sum_j taps(j)^T (xi + eta)(j)|^2 by simulation.

    Fresh paths per replication; the estimator applies ``taps`` over the
    observed window {-window..-1} \\ S (taps outside it are rejected).
    """
    N = functional.horizon
    gaps = set(pattern.points)
    bad = [j for j in taps if j >= 0 or j in gaps]
    if bad:
        raise InvalidParameterError(
            f"taps at indices {sorted(bad)} are not observable "
            f"(nonnegative time or inside a missing stretch)"
        )
    depth = max([config.window] + [-j for j in taps])
    length = depth + N + 1
    if config.path_length is not None and config.path_length < length:
        raise InvalidParameterError(
            f"path_length {config.path_length} shorter than needed length {length}"
        )

    tap_idx = np.array(sorted(taps), dtype=int)
    if taps:
        raw = np.array([np.asarray(taps[j], dtype=complex) for j in tap_idx])
        if np.abs(raw.imag).max() > 1e-9:
            raise InvalidParameterError("simulation requires real-valued taps")
        tap_mat = raw.real
    else:
        tap_mat = np.zeros((0, model.dim))
    a = np.real_if_close(functional.coeffs)
    if np.iscomplexobj(a) and np.abs(a.imag).max() > 1e-9:
        raise InvalidParameterError("simulation requires real functional coefficients")
    a = np.asarray(a, dtype=float)

    emb = CirculantEmbedding(model, length, margin=config.embedding_margin,
                             psd_tol=config.psd_tol)
    d = model.dim
    pos_fun = depth + np.arange(N + 1)
    pos_tap = depth + tap_idx

    errors = np.empty(config.replications)
    for start in range(0, config.replications, config.batch):
        stop = min(start + config.batch, config.replications)
        block = emb.sample_block(
            [_stream(config.seed, r) for r in range(start, stop)]
        )
        xi = block[:, :, :d]
        zeta = xi + block[:, :, d:]
        s = np.einsum("jt,bjt->b", a, xi[:, pos_fun, :])
        if len(tap_idx):
            shat = np.einsum("jt,bjt->b", tap_mat, zeta[:, pos_tap, :])
        else:
            shat = np.zeros(stop - start)
        errors[start:stop] = (s - shat) ** 2
    mse = float(errors.mean())
    stderr = float(errors.std(ddof=1) / math.sqrt(config.replications)) \
        if config.replications > 1 else float("nan")
    return MonteCarloResult(mse=mse, stderr=stderr,
                            replications=config.replications,
                            seed=config.seed, errors=errors)
