"""Robust extrapolation under spectral uncertainty.

Instead of a single known pair of signal/noise densities, an admissible set is
given and the goal is the density pair that maximizes the optimal-estimate
error ("least favorable"), together with checks that the estimate built from
that pair is minimax: the saddle inequality over sampled class members, and
the pointwise multiplier equations that characterize interior maximizers.

Supported admissible sets (``kind``) constrain either the signal density F or
the noise density G:

* ``D0_1..4``   fixed power: trace / per-component / weighted / full matrix;
* ``DVU_1..4``  pointwise band between two given densities plus fixed power,
  in the same four flavors;
* ``Deps_1..4`` contamination: density = (1-eps)*anchor + eps*(free density),
  with fixed power, same four flavors;
* ``D1delta_1..4`` an L1 ball around an anchor density, same four flavors.

A class instance pairs a signal-side kind with an optional noise-side kind.
Candidate densities come from a finite-dimensional family that is inside the
class by construction; the search is a derivative-free multi-start ascent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    InfeasibleClassError,
    InvalidParameterError,
    UnsupportedClassError,
)
from .extrapolate import (
    EstimateResult,
    FunctionalSpec,
    delta_of_characteristic,
    estimate,
)
from .operators import MissingPattern
from .spectral import SpectralModel, grid_points

F_KINDS = tuple(f"D0_{k}" for k in range(1, 5)) \
    + tuple(f"Deps_{k}" for k in range(1, 5)) \
    + tuple(f"DVU_{k}" for k in range(1, 5)) \
    + tuple(f"D1delta_{k}" for k in range(1, 5))
G_KINDS = tuple(f"DVU_{k}" for k in range(1, 5)) \
    + tuple(f"D1delta_{k}" for k in range(1, 5))


# ---------------------------------------------------------------------------
# Families and classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityFamily:
    """Box-parameterized candidate densities, in-class by construction.

    ``build(theta)`` returns the model for a parameter vector inside
    [lower, upper]; the family designer is responsible for the image lying in
    the admissible class (this is re-checked numerically at every evaluated
    point).
    """

    dim: int
    lower: np.ndarray
    upper: np.ndarray
    build: Callable[[np.ndarray], SpectralModel]
    label: str = "family"

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if len(lo) != self.dim or len(hi) != self.dim:
            raise InvalidParameterError("family bounds must have length dim")
        if np.any(hi < lo):
            raise InvalidParameterError("family upper bound below lower bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def clip(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.dim == 0:
            return np.zeros(0)
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True)
class ClassData:
    """Constraint constants for an admissible class.

    Which fields are read depends on the kind: ``power``/``noise_power`` are a
    scalar, a per-component vector, or a matrix; ``weight_f``/``weight_g`` are
    the Hermitian weights of the weighted flavors; ``lower``/``upper`` are the
    band edges (scalar, matrix, or per-node array); ``anchor_f``/``anchor_g``
    anchor the contamination and L1-ball classes; ``radius`` is the L1 radius
    (scalar, vector, or matrix by flavor).
    """

    power: float | np.ndarray | None = None
    noise_power: float | np.ndarray | None = None
    weight_f: np.ndarray | None = None
    weight_g: np.ndarray | None = None
    lower: object = None
    upper: object = None
    anchor_f: object = None
    anchor_g: object = None
    eps: float | None = None
    radius: float | np.ndarray | None = None


def _as_samples(value, n: int, dim: int) -> np.ndarray | None:
    """Normalize a density argument to an (n, dim, dim) array."""
    if value is None:
        return None
    if callable(value):
        return np.asarray(value(grid_points(n)), dtype=complex)
    arr = np.asarray(value)
    if arr.ndim == 0:
        return np.broadcast_to(complex(arr) * np.eye(dim), (n, dim, dim)).copy()
    if arr.shape == (dim, dim):
        return np.broadcast_to(arr.astype(complex), (n, dim, dim)).copy()
    if arr.shape == (n, dim, dim):
        return arr.astype(complex)
    raise InvalidParameterError(f"cannot interpret density data of shape {arr.shape}")


@dataclass(frozen=True)
class DensityClass:
    """An admissible set: signal-side kind, optional noise-side kind, family."""

    kind: str
    data: ClassData
    family: DensityFamily
    g_kind: str | None = None

    def __post_init__(self):
        if self.kind not in F_KINDS:
            raise InvalidParameterError(f"unknown class kind {self.kind!r}")
        if self.g_kind is not None and self.g_kind not in G_KINDS:
            raise InvalidParameterError(f"unknown noise-side kind {self.g_kind!r}")


def _power_value(samples: np.ndarray, flavor: int, weight: np.ndarray | None):
    """The constrained moment of a density: number, vector, or matrix."""
    if flavor == 1:
        return float(np.einsum("nii->n", samples).real.mean())
    if flavor == 2:
        return np.einsum("nkk->k", samples.real) / samples.shape[0]
    if flavor == 3:
        return float(np.einsum("ij,nji->n", weight, samples).real.mean())
    return samples.mean(axis=0)


def _band_value(samples: np.ndarray, flavor: int, weight: np.ndarray | None):
    """The quantity bounded pointwise by the band flavors (per node)."""
    if flavor == 1:
        return np.einsum("nii->n", samples).real
    if flavor == 2:
        return np.einsum("nkk->nk", samples.real)
    if flavor == 3:
        return np.einsum("ij,nji->n", weight, samples).real
    return samples


def class_constraint_report(cls: DensityClass, model: SpectralModel) -> dict[str, float]:
    """Constraint violations of a candidate model, keyed by constraint name.

    All entries are nonnegative; an in-class model reports values at numerical
    noise level.
    """
    n, d = model.grid_size, model.dim
    out: dict[str, float] = {}

    def side(kind, samples, power, weight, lower, upper, anchor, radius):
        flavor = int(kind[-1])
        base = kind[: -2]
        if base in ("D0", "Deps", "DVU"):
            target = power
            got = _power_value(samples, flavor, weight)
            out[f"{kind}:power"] = float(np.max(np.abs(np.asarray(got) - np.asarray(target))))
        if base == "DVU":
            lo = _band_value(_as_samples(lower if lower is not None else 0.0, n, d),
                             flavor, weight)
            hi = _band_value(_as_samples(upper, n, d), flavor, weight)
            val = _band_value(samples, flavor, weight)
            if flavor == 4:
                def min_eig(x):
                    return np.linalg.eigvalsh(x).min(axis=-1)
                out[f"{kind}:lower"] = float(max(-min_eig(val - lo).min(), 0.0))
                out[f"{kind}:upper"] = float(max(-min_eig(hi - val).min(), 0.0))
            else:
                out[f"{kind}:lower"] = float(max(np.max(lo - val), 0.0))
                out[f"{kind}:upper"] = float(max(np.max(val - hi), 0.0))
        if base == "Deps":
            anc = _as_samples(anchor, n, d)
            eps = cls.data.eps
            if anc is None or eps is None:
                raise InvalidParameterError(f"{kind} requires anchor density and eps")
            rem = _band_value(samples, flavor, weight) \
                - (1.0 - eps) * _band_value(anc, flavor, weight)
            if flavor == 4:
                out[f"{kind}:mixture"] = float(
                    max(-np.linalg.eigvalsh(rem).min(), 0.0))
            else:
                out[f"{kind}:mixture"] = float(max(-np.min(rem), 0.0))
        if base == "D1delta":
            anc = _as_samples(anchor, n, d)
            if anc is None or radius is None:
                raise InvalidParameterError(f"{kind} requires anchor density and radius")
            diff = samples - anc
            if flavor == 4:
                dist = np.abs(diff).mean(axis=0)
                out[f"{kind}:distance"] = float(np.max(dist - np.asarray(radius)))
            elif flavor == 2:
                dist = np.abs(np.einsum("nkk->nk", diff)).mean(axis=0)
                out[f"{kind}:distance"] = float(np.max(dist - np.asarray(radius)))
            else:
                q = _band_value(diff, flavor, weight) if flavor != 1 \
                    else np.einsum("nii->n", diff).real
                out[f"{kind}:distance"] = float(np.abs(q).mean() - radius)
            out[f"{kind}:distance"] = max(out[f"{kind}:distance"], 0.0)

    data = cls.data
    side(cls.kind, model.samples("F"), data.power, data.weight_f,
         data.lower, data.upper, data.anchor_f, data.radius)
    if cls.g_kind is not None:
        if model.is_noiseless:
            raise InvalidParameterError(
                "class constrains the noise density but the model has none")
        side(cls.g_kind, model.samples("G"), data.noise_power, data.weight_g,
             data.lower, data.upper, data.anchor_g, data.radius)
    return out


# ---------------------------------------------------------------------------
# Search for the least favorable member
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptConfig:
    """Budgeted multi-start coordinate-ascent settings."""

    starts: int = 16
    budget: int = 2000
    initial_step: float = 0.25
    min_step: float = 1e-6
    seed: int = 0
    truncation: int | None = None
    constraint_tol: float = 1e-8

    def __post_init__(self):
        if self.starts < 1 or self.budget < 1:
            raise InvalidParameterError("starts and budget must be positive")


@dataclass(frozen=True)
class Evaluation:
    theta: tuple
    delta: float


@dataclass
class SaddleSample:
    theta: tuple
    delta_fixed_filter: float
    passed: bool


@dataclass
class SaddleReport:
    reference: float
    tol: float
    samples: list[SaddleSample]
    max_violation: float

    @property
    def all_pass(self) -> bool:
        return all(s.passed for s in self.samples)


@dataclass
class ResidualEntry:
    """One characterization equation: fitted multipliers and leftover misfit."""

    name: str
    structure: str
    params: dict
    residual: float
    scale: float

    @property
    def relative(self) -> float:
        """Residual relative to the field size.

        Fields below 1e-12 belong to identically-zero multipliers (for
        example a silent filter on the noise side); their equations hold
        trivially, so the ratio is floored rather than amplifying rounding
        dust.
        """
        return self.residual / max(self.scale, 1e-12)


@dataclass
class ResidualReport:
    entries: list[ResidualEntry]

    @property
    def max_relative(self) -> float:
        return max((e.relative for e in self.entries), default=0.0)


@dataclass
class LeastFavorableResult:
    """Maximizer of the optimal-estimate error over the family."""

    theta_star: np.ndarray
    model_star: SpectralModel
    delta_star: float
    estimate_star: EstimateResult
    evaluations: list[Evaluation]
    boundary: bool
    cls: DensityClass
    pattern: MissingPattern
    functional: FunctionalSpec
    saddle_report: SaddleReport | None = None
    residual_report: ResidualReport | None = None


def _check_in_class(cls: DensityClass, model: SpectralModel, tol: float):
    report = class_constraint_report(cls, model)
    worst = max(report.values(), default=0.0)
    if worst > tol:
        name = max(report, key=report.get)
        raise InfeasibleClassError(
            f"family point violates {name} by {worst:.3e} (tol {tol:.1e})"
        )


def maximize_delta(cls: DensityClass, pattern: MissingPattern,
                   functional: FunctionalSpec,
                   opt: OptConfig = OptConfig()) -> LeastFavorableResult:
    """Search the family for the density pair with the largest optimal error.

    Multi-start coordinate ascent with step halving; every evaluation first
    verifies class membership, then runs the full estimation pipeline.  The
    returned maximizer is the best point seen anywhere in the search, and the
    complete evaluation trace is kept for audit.
    """
    fam = cls.family
    if fam.dim > 8:
        raise InvalidParameterError("family dimension must be at most 8")
    width = np.where(fam.upper > fam.lower, fam.upper - fam.lower, 1.0)

    cache: dict[tuple, float] = {}
    trace: list[Evaluation] = []
    best: dict = {"theta": None, "delta": -np.inf, "estimate": None, "model": None}

    def evaluate(theta: np.ndarray) -> float:
        key = tuple(np.round(theta, 12))
        if key in cache:
            return cache[key]
        if len(trace) >= opt.budget:
            return -np.inf
        model = fam.build(theta)
        _check_in_class(cls, model, opt.constraint_tol)
        est = estimate(model, pattern, functional, K=opt.truncation)
        val = est.delta
        cache[key] = val
        trace.append(Evaluation(theta=key, delta=val))
        if val > best["delta"]:
            best.update(theta=np.asarray(theta, dtype=float), delta=val,
                        estimate=est, model=model)
        return val

    if fam.dim == 0:
        evaluate(np.zeros(0))
    else:
        rng = np.random.default_rng(opt.seed)
        starts = [fam.center]
        while len(starts) < opt.starts:
            starts.append(fam.sample(rng))
        for theta0 in starts:
            if len(trace) >= opt.budget:
                break
            theta = fam.clip(theta0)
            evaluate(theta)
            step = opt.initial_step
            while step >= opt.min_step and len(trace) < opt.budget:
                moved = False
                for i in range(fam.dim):
                    for sign in (+1.0, -1.0):
                        cand = theta.copy()
                        cand[i] += sign * step * width[i]
                        cand = fam.clip(cand)
                        if np.allclose(cand, theta):
                            continue
                        if evaluate(cand) > cache[tuple(np.round(theta, 12))]:
                            theta = cand
                            moved = True
                            break
                if not moved:
                    step *= 0.5

    if best["theta"] is None:
        raise InfeasibleClassError("no feasible family point was evaluated")
    theta_star = best["theta"]
    edge = (np.abs(theta_star - fam.lower) <= 1e-9 * width) \
        | (np.abs(theta_star - fam.upper) <= 1e-9 * width)
    return LeastFavorableResult(
        theta_star=theta_star,
        model_star=best["model"],
        delta_star=best["delta"],
        estimate_star=best["estimate"],
        evaluations=trace,
        boundary=bool(np.any(edge)) if fam.dim else False,
        cls=cls, pattern=pattern, functional=functional,
    )


def evaluate_candidate(cls: DensityClass, theta, pattern: MissingPattern,
                       functional: FunctionalSpec,
                       opt: OptConfig = OptConfig()) -> LeastFavorableResult:
    """Package a fixed family point as if it were the search result.

    Useful for negative controls: saddle/residual checks applied to a point
    that is not the maximizer should fail or show large residuals.
    """
    fam = cls.family
    theta = fam.clip(np.asarray(theta, dtype=float).reshape(-1))
    model = fam.build(theta)
    _check_in_class(cls, model, opt.constraint_tol)
    est = estimate(model, pattern, functional, K=opt.truncation)
    width = np.where(fam.upper > fam.lower, fam.upper - fam.lower, 1.0)
    edge = (np.abs(theta - fam.lower) <= 1e-9 * width) \
        | (np.abs(theta - fam.upper) <= 1e-9 * width)
    return LeastFavorableResult(
        theta_star=theta, model_star=model, delta_star=est.delta,
        estimate_star=est, evaluations=[Evaluation(tuple(theta), est.delta)],
        boundary=bool(np.any(edge)) if fam.dim else False,
        cls=cls, pattern=pattern, functional=functional,
    )


def verify_saddle_point(result: LeastFavorableResult, cls: DensityClass,
                        n_samples: int = 100, seed: int = 1,
                        tol: float = 1e-6) -> SaddleReport:
    """Check that the fixed minimax filter does not do worse inside the class.

    Holds the spectral characteristic of the maximizer fixed and evaluates its
    error against random class members; each must stay below the error at the
    maximizer (up to ``tol``).  Failures are recorded, not raised.
    """
    fam = cls.family
    h0 = result.estimate_star.h_grid
    ref = delta_of_characteristic(result.model_star, result.functional, h0)
    rng = np.random.default_rng(seed)
    samples: list[SaddleSample] = []
    worst = 0.0
    for _ in range(n_samples):
        theta = fam.sample(rng)
        model = fam.build(theta)
        _check_in_class(cls, model, 1e-8)
        if model.grid_size != result.model_star.grid_size:
            raise InvalidParameterError("family members must share one grid size")
        val = delta_of_characteristic(model, result.functional, h0)
        ok = val <= ref + tol
        worst = max(worst, val - ref)
        samples.append(SaddleSample(theta=tuple(np.atleast_1d(theta)),
                                    delta_fixed_filter=val, passed=ok))
    report = SaddleReport(reference=ref, tol=tol, samples=samples,
                          max_violation=worst)
    result.saddle_report = report
    return report


# ---------------------------------------------------------------------------
# Characterization-equation residuals
# ---------------------------------------------------------------------------


def _coupling_field(result: LeastFavorableResult, side: str) -> np.ndarray:
    """Pointwise rank-one field that the multiplier structure must match.

    The error of a fixed filter is linear in the densities, with matrix-valued
    gradient conj(r) r^T at each node, where r is A - h0 on the signal side
    and h0 itself on the noise side.  At an interior least-favorable pair this
    gradient equals the class-specific multiplier structure.
    """
    model = result.model_star
    if not model.is_uncorrelated and not model.is_noiseless:
        raise UnsupportedClassError(
            "characterization residuals require uncorrelated signal and noise")
    est = result.estimate_star
    A = result.functional.a_on_grid(est.lam)
    r = (A - est.h_grid) if side == "signal" else est.h_grid
    return np.einsum("nt,nu->ntu", np.conj(r), r)


def _structure_base(flavor: int, weight: np.ndarray | None, d: int) -> np.ndarray:
    if flavor == 3:
        if weight is None:
            raise InvalidParameterError("weighted flavor requires a weight matrix")
        return np.asarray(weight, dtype=complex).T
    return np.eye(d, dtype=complex)


def _scalar_profile(theta_field: np.ndarray, base: np.ndarray):
    """Project a matrix field onto multiples of a fixed base matrix.

    Returns the per-node coefficient and the per-node norm of the part of the
    field that no multiple of the base can explain.
    """
    denom = float(np.sum(np.abs(base) ** 2).real)
    c = np.einsum("ntu,ut->n", theta_field, np.conj(base).T).real / denom
    aniso = np.linalg.norm(theta_field - c[:, None, None] * base, axis=(1, 2))
    return c, aniso


def _fit_const(c: np.ndarray):
    m = max(float(c.mean()), 0.0)
    return m, np.abs(c - m)

def _fit_banded(c: np.ndarray, lower_active: np.ndarray, upper_active: np.ndarray):
    interior = ~(lower_active | upper_active)
    if interior.any():
        m = max(float(c[interior].mean()), 0.0)
    else:
        m = max(float(np.median(c)), 0.0)
    viol = np.zeros_like(c)
    viol[interior] = np.abs(c[interior] - m)
    only_lo = lower_active & ~upper_active
    only_hi = upper_active & ~lower_active
    viol[only_lo] = np.maximum(c[only_lo] - m, 0.0)
    viol[only_hi] = np.maximum(m - c[only_hi], 0.0)
    return m, viol

def _fit_contaminated(c: np.ndarray, active: np.ndarray):
    m = max(float(c[active].mean()) if active.any() else float(c.max()), 0.0)
    viol = np.where(active, np.abs(c - m), np.maximum(c - m, 0.0))
    return m, viol

def _fit_signed(c: np.ndarray, sign: np.ndarray):
    active = sign != 0
    m = max(float((c[active] * sign[active]).mean()) if active.any()
            else float(np.abs(c).max()), 0.0)
    viol = np.where(active, np.abs(c - m * sign), np.maximum(np.abs(c) - m, 0.0))
    return m, viol


def _rank_one_fit(mean_field: np.ndarray):
    sym = 0.5 * (mean_field + np.conj(mean_field.T))
    w, v = np.linalg.eigh(sym)
    lead = max(float(w[-1]), 0.0)
    vec = v[:, -1] * math.sqrt(lead)
    return np.outer(vec, np.conj(vec)), vec


def _eig_part(mats: np.ndarray, which: str) -> np.ndarray:
    """Per-node norm of the positive or negative eigenvalue part."""
    w = np.linalg.eigvalsh(0.5 * (mats + np.conj(np.swapaxes(mats, -1, -2))))
    part = np.maximum(w, 0.0) if which == "pos" else np.maximum(-w, 0.0)
    return np.linalg.norm(part, axis=-1)


def _l2(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(values) ** 2)))


def _residual_for_kind(kind: str, field: np.ndarray, data: ClassData,
                       own: np.ndarray, other_weight_key: str,
                       name: str) -> list[ResidualEntry]:
    """Fit the multiplier structure of one equation and report the misfit.

    ``field`` is the whitened rank-one field, ``own`` the samples of the
    density this class constrains (used for the support conditions of the
    pointwise multipliers).
    """
    n, d, _ = field.shape
    flavor = int(kind[-1])
    base_kind = kind[: -2]
    weight = data.weight_f if other_weight_key == "f" else data.weight_g
    scale = _l2(np.linalg.norm(field, axis=(1, 2)))
    entries: list[ResidualEntry] = []

    band_lo = band_hi = anchor = None
    if base_kind == "DVU":
        band_lo = _as_samples(data.lower if data.lower is not None else 0.0, n, d)
        band_hi = _as_samples(data.upper, n, d)
    if base_kind == "Deps":
        anchor = _as_samples(data.anchor_f, n, d)
    if base_kind == "D1delta":
        anchor = _as_samples(data.anchor_g if other_weight_key == "g"
                             else data.anchor_f, n, d)
        if anchor is None:
            anchor = _as_samples(data.anchor_f if other_weight_key == "g"
                                 else data.anchor_g, n, d)
    btol = 1e-6

    if flavor in (1, 3):
        base = _structure_base(flavor, weight, d)
        c, aniso = _scalar_profile(field, base)
        val = _band_value(own, flavor, weight)
        if base_kind == "D0":
            m, viol = _fit_const(c)
            params = {"alpha2": m}
        elif base_kind == "DVU":
            lo = _band_value(band_lo, flavor, weight)
            hi = _band_value(band_hi, flavor, weight)
            span = max(float(np.max(np.abs(hi))), 1.0)
            m, viol = _fit_banded(c, val - lo <= btol * span, hi - val <= btol * span)
            params = {"beta2": m}
        elif base_kind == "Deps":
            ref = (1.0 - data.eps) * _band_value(anchor, flavor, weight)
            span = max(float(np.max(np.abs(val))), 1.0)
            m, viol = _fit_contaminated(c, val - ref > btol * span)
            params = {"alpha2": m}
        else:
            diff = val - _band_value(anchor, flavor, weight)
            span = max(float(np.max(np.abs(diff))), 1e-12)
            sgn = np.where(diff > btol * span, 1.0,
                           np.where(diff < -btol * span, -1.0, 0.0))
            m, viol = _fit_signed(c, sgn)
            params = {"beta2": m}
        entries.append(ResidualEntry(
            name=name, structure=f"{base_kind} flavor {flavor}", params=params,
            residual=_l2(np.hypot(viol * np.linalg.norm(base), aniso)),
            scale=scale))
    elif flavor == 2:
        diag = np.einsum("nkk->nk", field).real
        off = field - np.einsum("nk,kl->nkl", np.einsum("nkk->nk", field),
                                np.eye(d, dtype=complex))
        aniso = np.linalg.norm(off, axis=(1, 2))
        own_d = _band_value(own, 2, None)
        params: dict = {}
        viols = [aniso]
        for k in range(d):
            c = diag[:, k]
            if base_kind == "D0":
                m, viol = _fit_const(c)
            elif base_kind == "DVU":
                lo = _band_value(band_lo, 2, None)[:, k]
                hi = _band_value(band_hi, 2, None)[:, k]
                span = max(float(np.max(np.abs(hi))), 1.0)
                m, viol = _fit_banded(c, own_d[:, k] - lo <= btol * span,
                                      hi - own_d[:, k] <= btol * span)
            elif base_kind == "Deps":
                ref = (1.0 - data.eps) * _band_value(anchor, 2, None)[:, k]
                span = max(float(np.max(np.abs(own_d))), 1.0)
                m, viol = _fit_contaminated(c, own_d[:, k] - ref > btol * span)
            else:
                diff = own_d[:, k] - _band_value(anchor, 2, None)[:, k]
                span = max(float(np.max(np.abs(diff))), 1e-12)
                sgn = np.where(diff > btol * span, 1.0,
                               np.where(diff < -btol * span, -1.0, 0.0))
                m, viol = _fit_signed(c, sgn)
            params[f"mult_{k + 1}"] = m
            viols.append(viol)
        entries.append(ResidualEntry(
            name=name, structure=f"{base_kind} flavor 2 (per component)",
            params=params, residual=_l2(np.sqrt(sum(v ** 2 for v in viols))),
            scale=scale))
    else:  # flavor 4: full-matrix structures
        if base_kind == "D1delta":
            diff = own - anchor
            span = max(float(np.max(np.abs(diff))), 1e-12)
            params = {}
            viols = []
            for i in range(d):
                for j in range(d):
                    c_ij = field[:, i, j]
                    dd = diff[:, i, j]
                    active = np.abs(dd) > btol * span
                    phase = np.where(active, dd / np.where(active, np.abs(dd), 1.0), 0.0)
                    if active.any():
                        m = max(float(np.mean((c_ij * np.conj(phase))[active].real)), 0.0)
                    else:
                        m = float(np.abs(c_ij).max())
                    viol = np.where(active, np.abs(c_ij - m * phase),
                                    np.maximum(np.abs(c_ij) - m, 0.0))
                    params[f"beta_{i + 1}{j + 1}"] = m
                    viols.append(viol)
            entries.append(ResidualEntry(
                name=name, structure="D1delta flavor 4 (per entry)", params=params,
                residual=_l2(np.sqrt(sum(v ** 2 for v in viols))), scale=scale))
        else:
            if base_kind == "D0":
                fitted, vec = _rank_one_fit(field.mean(axis=0))
                resid = _l2(np.linalg.norm(field - fitted, axis=(1, 2)))
                entries.append(ResidualEntry(
                    name=name, structure="D0 flavor 4 (constant rank one)",
                    params={"alpha_vec": vec.tolist()}, residual=resid, scale=scale))
            else:
                if base_kind == "DVU":
                    lo_m = np.linalg.eigvalsh(own - band_lo).min(axis=-1)
                    hi_m = np.linalg.eigvalsh(band_hi - own).min(axis=-1)
                    span = max(float(np.abs(np.linalg.eigvalsh(band_hi)).max()), 1.0)
                    lower_active = lo_m <= btol * span
                    upper_active = hi_m <= btol * span
                    interior = ~(lower_active | upper_active)
                else:  # Deps flavor 4
                    rem = np.linalg.eigvalsh(own - (1.0 - data.eps) * anchor)
                    span = max(float(np.abs(np.linalg.eigvalsh(own)).max()), 1.0)
                    interior = rem.min(axis=-1) > btol * span
                    lower_active = ~interior
                    upper_active = np.zeros_like(interior)
                pool = field[interior] if interior.any() else field
                fitted, vec = _rank_one_fit(pool.mean(axis=0))
                dev = field - fitted
                viol = np.empty(n)
                viol[interior] = np.linalg.norm(dev[interior], axis=(1, 2))
                only_lo = lower_active & ~upper_active
                only_hi = upper_active & ~lower_active
                both = lower_active & upper_active
                viol[only_lo] = _eig_part(dev[only_lo], "pos")
                viol[only_hi] = _eig_part(dev[only_hi], "neg")
                viol[both] = 0.0
                label = "DVU" if base_kind == "DVU" else "Deps"
                key = "beta_vec" if base_kind == "DVU" else "alpha_vec"
                entries.append(ResidualEntry(
                    name=name, structure=f"{label} flavor 4 (rank one + matrix slack)",
                    params={key: vec.tolist()}, residual=_l2(viol), scale=scale))

    if base_kind == "D1delta":
        radius = data.radius
        diff = own - anchor
        if flavor == 1:
            dist = float(np.abs(np.einsum("nii->n", diff).real).mean())
            entries.append(ResidualEntry(
                name=f"{name} distance", structure="L1 ball saturation",
                params={"distance": dist}, residual=abs(dist - float(radius)),
                scale=max(float(radius), 1e-12)))
        elif flavor == 2:
            dist = np.abs(np.einsum("nkk->nk", diff)).mean(axis=0)
            rad = np.broadcast_to(np.asarray(radius, dtype=float), (d,))
            entries.append(ResidualEntry(
                name=f"{name} distance", structure="L1 ball saturation",
                params={"distance": dist.tolist()},
                residual=float(np.max(np.abs(dist - rad))),
                scale=max(float(rad.max()), 1e-12)))
        elif flavor == 3:
            q = np.einsum("ij,nji->n", data.weight_g if other_weight_key == "g"
                          else data.weight_f, diff).real
            dist = float(np.abs(q).mean())
            entries.append(ResidualEntry(
                name=f"{name} distance", structure="L1 ball saturation",
                params={"distance": dist}, residual=abs(dist - float(radius)),
                scale=max(float(radius), 1e-12)))
        else:
            dist = np.abs(diff).mean(axis=0)
            rad = np.broadcast_to(np.asarray(radius, dtype=float), (d, d))
            entries.append(ResidualEntry(
                name=f"{name} distance", structure="L1 ball saturation",
                params={"distance": dist.tolist()},
                residual=float(np.max(np.abs(dist - rad))),
                scale=max(float(rad.max()), 1e-12)))
    return entries


def characterization_residuals(result: LeastFavorableResult,
                               cls: DensityClass) -> ResidualReport:
    """Fit the Lagrange-multiplier structure of each optimality equation.

    At an interior least-favorable pair the whitened coupling field collapses
    to the class-specific multiplier shape (constant, diagonal, weighted,
    rank-one, possibly with signed pointwise slack); what least squares cannot
    explain is returned as the residual of that equation, relative to the
    field's own size.
    """
    model = result.model_star
    if model.dim > 2:
        raise UnsupportedClassError(
            "characterization residuals are implemented for dimension <= 2")
    paired = cls.g_kind is not None
    if paired:
        k_f, k_g = int(cls.kind[-1]), int(cls.g_kind[-1])
        base_f = cls.kind[: -2]
        ok = (base_f == "D0" and cls.g_kind.startswith("DVU") and k_f == k_g) or \
             (base_f == "Deps" and cls.g_kind.startswith("D1delta") and k_f == k_g)
        if not ok:
            raise UnsupportedClassError(
                f"unsupported class pair ({cls.kind}, {cls.g_kind})")
    elif not model.is_noiseless:
        raise UnsupportedClassError(
            "a noisy model needs both a signal-side and a noise-side class")

    entries: list[ResidualEntry] = []
    field_signal = _coupling_field(result, "signal")
    entries.extend(_residual_for_kind(
        cls.kind, field_signal, cls.data, model.samples("F"), "f",
        name="signal-side equation"))
    if paired:
        field_noise = _coupling_field(result, "noise")
        entries.extend(_residual_for_kind(
            cls.g_kind, field_noise, cls.data, model.samples("G"), "g",
            name="noise-side equation"))
    report = ResidualReport(entries=entries)
    result.residual_report = report
    return report


# ---------------------------------------------------------------------------
# Stock families
# ---------------------------------------------------------------------------


def _unit_ar1(lam: np.ndarray, b: float) -> np.ndarray:
    return (1.0 - b * b) / np.abs(1.0 - b * np.exp(1j * lam)) ** 2


def scalar_mixture_family(power: float, w_max: float = 0.9, b_max: float = 0.8,
                          grid_size: int = 4096,
                          noise_power: float | None = None,
                          label: str = "white/AR(1) mixture") -> DensityFamily:
    """Scalar density of fixed total power: (1-w) flat + w unit-power AR(1).

    Parameters are the mixture weight and the AR pole; every member has power
    exactly ``power``, so the family sits inside the fixed-power class.  With
    ``noise_power`` set, a second pair of parameters shapes an independent
    noise density of that power the same way.
    """
    if power <= 0:
        raise InvalidParameterError("power must be positive")

    def build_f(theta):
        w, b = theta[0], theta[1]
        lam = grid_points(grid_size)
        f = power * ((1.0 - w) + w * _unit_ar1(lam, b))
        return f[:, None, None].astype(complex)

    if noise_power is None:
        def build(theta):
            return SpectralModel(dim=1, F=density_like(build_f(theta)),
                                 grid_size=grid_size,
                                 pole_modulus=abs(theta[1]) if theta[0] > 0 else None)
        return DensityFamily(dim=2, lower=[0.0, -b_max], upper=[w_max, b_max],
                             build=build, label=label)

    def build_pair(theta):
        lam = grid_points(grid_size)
        f = power * ((1.0 - theta[0]) + theta[0] * _unit_ar1(lam, theta[1]))
        g = noise_power * ((1.0 - theta[2]) + theta[2] * _unit_ar1(lam, theta[3]))
        rho = max(abs(theta[1]) if theta[0] > 0 else 0.0,
                  abs(theta[3]) if theta[2] > 0 else 0.0)
        return SpectralModel(dim=1, F=density_like(f[:, None, None].astype(complex)),
                             G=density_like(g[:, None, None].astype(complex)),
                             grid_size=grid_size,
                             pole_modulus=rho if rho > 0 else None)

    return DensityFamily(dim=4, lower=[0.0, -b_max, 0.0, -b_max],
                         upper=[w_max, b_max, w_max, b_max],
                         build=build_pair, label=label + " + noise")


def density_like(samples: np.ndarray):
    """Wrap precomputed node values as a density callable pinned to its grid."""
    samples = np.asarray(samples, dtype=complex)

    def fn(lam):
        if len(lam) != samples.shape[0]:
            raise InvalidParameterError(
                f"density sampled on {samples.shape[0]} nodes, asked for {len(lam)}")
        return samples

    return fn


def ar1_fixed_power_family(power: float, b_max: float = 0.8,
                           grid_size: int = 4096) -> DensityFamily:
    """Scalar AR(1) densities of fixed total power, parameterized by the pole."""

    def build(theta):
        b = float(theta[0])
        lam = grid_points(grid_size)
        f = power * _unit_ar1(lam, b)
        return SpectralModel(dim=1, F=density_like(f[:, None, None].astype(complex)),
                             grid_size=grid_size,
                             pole_modulus=abs(b) if b != 0 else None)

    return DensityFamily(dim=1, lower=[-b_max], upper=[b_max], build=build,
                         label="AR(1), fixed power")


def singleton_family(model: SpectralModel) -> DensityFamily:
    """A family with exactly one member."""
    return DensityFamily(dim=0, lower=[], upper=[],
                         build=lambda theta: model, label="singleton")


def convex_combination_family(models: Sequence[SpectralModel],
                              label: str = "convex hull") -> DensityFamily:
    """Convex combinations of fixed models via stick-breaking weights.

    Any convex admissible class containing the anchors contains the whole
    family.  Parameters live in [0, 1]^(k-1).
    """
    models = list(models)
    if len(models) < 2:
        raise InvalidParameterError("need at least two anchor models")
    n = models[0].grid_size
    d = models[0].dim
    noisy = not models[0].is_noiseless
    for m in models[1:]:
        if m.grid_size != n or m.dim != d or (not m.is_noiseless) != noisy:
            raise InvalidParameterError("anchor models must be structurally alike")
    rho = max((m.pole_modulus or 0.0) for m in models) or None

    def weights(theta):
        w = []
        rest = 1.0
        for t in theta:
            w.append(rest * t)
            rest *= (1.0 - t)
        w.append(rest)
        return np.asarray(w)

    def build(theta):
        w = weights(theta)
        F = sum(wi * m.samples("F") for wi, m in zip(w, models))
        G = sum(wi * m.samples("G") for wi, m in zip(w, models)) if noisy else None
        return SpectralModel(dim=d, F=density_like(F),
                             G=density_like(G) if noisy else None,
                             grid_size=n, pole_modulus=rho)

    k = len(models)
    return DensityFamily(dim=k - 1, lower=np.zeros(k - 1), upper=np.ones(k - 1),
                         build=build, label=label)


def contamination_family(anchor_power: float, anchor_pole: float, eps: float,
                         power: float, b_max: float = 0.8,
                         grid_size: int = 4096) -> DensityFamily:
    """Scalar contamination: (1-eps) * fixed AR(1) anchor + eps * free part.

    The free part is a white/AR(1) mixture whose power is pinned so the total
    power equals ``power``; members therefore satisfy both the mixture and the
    moment constraints of the contamination class.
    """
    if not 0.0 < eps < 1.0:
        raise InvalidParameterError("eps must lie in (0, 1)")
    w_pow = (power - (1.0 - eps) * anchor_power) / eps
    if w_pow < 0:
        raise InfeasibleClassError(
            "target power below the anchor's share; no admissible member")

    def build(theta):
        u, b = theta[0], theta[1]
        lam = grid_points(grid_size)
        anchor = anchor_power * _unit_ar1(lam, anchor_pole)
        free = w_pow * ((1.0 - u) + u * _unit_ar1(lam, b))
        f = (1.0 - eps) * anchor + eps * free
        rho = max(abs(anchor_pole), abs(b) if u > 0 else 0.0)
        return SpectralModel(dim=1, F=density_like(f[:, None, None].astype(complex)),
                             grid_size=grid_size,
                             pole_modulus=rho if rho > 0 else None)

    return DensityFamily(dim=2, lower=[0.0, -b_max], upper=[0.9, b_max],
                         build=build, label="contaminated AR(1)")
