"""Run configuration: structured text files driving the command-line tools.

A run file is YAML with top-level sections ``model``, ``pattern``,
``functional`` and, as needed, ``numerics``, ``simulation``, ``oracle_check``,
``minimax``, ``output``.  Parsing is strict: unknown sections or malformed
entries fail with a message anchored at the offending key, and a parsed
configuration serializes back to an equivalent document (this round trip
backs the reproducibility hash embedded in every output file).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .extrapolate import FunctionalSpec
from .minimax import (
    ClassData,
    DensityClass,
    OptConfig,
    ar1_fixed_power_family,
    contamination_family,
    scalar_mixture_family,
    singleton_family,
)
from .operators import MissingPattern
from .oracle import SimulationConfig
from .spectral import (
    SpectralModel,
    ar1_model,
    density_from_samples,
    grid_points,
    laurent_density,
    laurent_entry,
    ma_pair_model,
    make_ar1_pair,
    white_model,
)

_SECTIONS = ("model", "pattern", "functional", "numerics", "simulation",
             "oracle_check", "minimax", "output")


@dataclass
class RunConfig:
    """Validated run file: raw sections plus convenience accessors."""

    model: dict
    pattern: dict
    functional: dict
    numerics: dict = dc_field(default_factory=dict)
    simulation: dict = dc_field(default_factory=dict)
    oracle_check: dict = dc_field(default_factory=dict)
    minimax: dict = dc_field(default_factory=dict)
    output: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            section = getattr(self, name)
            if section:
                out[name] = section
        return out

    @property
    def grid_size(self) -> int:
        return int(self.numerics.get("grid_size", 4096))

    @property
    def truncation(self) -> int | None:
        K = self.numerics.get("truncation")
        return None if K is None else int(K)

    @property
    def out_dir(self) -> str:
        return str(self.output.get("directory", "."))


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required key {key!r}", location=where)
    return section[key]


def _expect_map(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping", location=where)
    return value


def loads_config(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    if doc is None:
        raise ConfigError("empty configuration")
    doc = _expect_map(doc, "top level")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}", location="top level")
    for name in ("model", "pattern", "functional"):
        if name not in doc:
            raise ConfigError(f"missing required section {name!r}", location="top level")
    kwargs = {name: _expect_map(doc.get(name, {}) or {}, name) for name in _SECTIONS}
    cfg = RunConfig(**kwargs)
    # Fail fast on structural problems; builders re-raise with locations.
    build_pattern(cfg)
    build_functional(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", location=str(path)) from exc
    return loads_config(text)


def dumps_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=None)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dumps_config(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Section builders
# ---------------------------------------------------------------------------


def build_model(cfg: RunConfig) -> SpectralModel:
    sec = cfg.model
    kind = _require(sec, "kind", "model")
    n = cfg.grid_size
    try:
        if kind == "example1":
            return make_ar1_pair(float(_require(sec, "b1", "model")),
                                 float(_require(sec, "b2", "model")), grid_size=n)
        if kind == "white":
            return white_model(int(sec.get("dim", 1)),
                               scale=sec.get("scale", 1.0), grid_size=n)
        if kind == "ar1":
            noise = _expect_map(sec.get("noise", {}) or {}, "model.noise")
            return ar1_model(
                poles=_require(sec, "poles", "model"),
                scales=sec.get("scales"), mix=sec.get("mix"),
                noise_poles=noise.get("poles"), noise_scales=noise.get("scales"),
                noise_mix=noise.get("mix"), grid_size=n)
        if kind == "ma_pair":
            return ma_pair_model(
                signal_coeffs=[np.asarray(c, dtype=float)
                               for c in _require(sec, "signal_coeffs", "model")],
                noise_coeffs=None if sec.get("noise_coeffs") is None else
                [np.asarray(c, dtype=float) for c in sec["noise_coeffs"]],
                innovation_cov=None if sec.get("innovation_cov") is None else
                np.asarray(sec["innovation_cov"], dtype=float), grid_size=n)
        if kind == "laurent":
            dim = int(_require(sec, "dim", "model"))
            entries = {}
            for i, ent in enumerate(_require(sec, "entries", "model")):
                ent = _expect_map(ent, f"model.entries[{i}]")
                r, c = int(_require(ent, "row", f"model.entries[{i}]")), \
                    int(_require(ent, "col", f"model.entries[{i}]"))
                entries[(r, c)] = laurent_entry(
                    int(ent.get("num_offset", 0)), ent.get("num_coeffs", (1.0,)),
                    int(ent.get("den_offset", 0)), ent.get("den_coeffs", (1.0,)))
            F = laurent_density(dim, entries)
            return SpectralModel(dim=dim, F=F, grid_size=n,
                                 pole_modulus=sec.get("pole_modulus"))
        if kind == "grid_file":
            path = Path(_require(sec, "path", "model"))
            try:
                data = np.load(path)
            except OSError as exc:
                raise ConfigError(f"cannot read grid file: {exc}",
                                  location="model.path") from exc
            lam = np.asarray(data["lam"])
            if len(lam) != n or not np.allclose(lam, grid_points(n)):
                raise ConfigError(
                    f"grid file nodes do not match grid_size {n}",
                    location="model.path")
            F = density_from_samples(lam, np.asarray(data["F"]))
            d = np.asarray(data["F"]).shape[-1]
            G = density_from_samples(lam, np.asarray(data["G"])) \
                if "G" in data else None
            Fxe = density_from_samples(lam, np.asarray(data["Fxe"])) \
                if "Fxe" in data else None
            return SpectralModel(dim=d, F=F, G=G, F_xe=Fxe, grid_size=n,
                                 pole_modulus=sec.get("pole_modulus"))
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc), location="model") from exc
    raise ConfigError(f"unknown model kind {kind!r}", location="model.kind")


def build_pattern(cfg: RunConfig) -> MissingPattern:
    sec = cfg.pattern
    intervals = sec.get("intervals", [])
    if intervals is None:
        intervals = []
    try:
        parsed = tuple((int(m), int(k)) for m, k in intervals)
    except (TypeError, ValueError) as exc:
        raise ConfigError("intervals must be pairs [offset, extra_length]",
                          location="pattern.intervals") from exc
    try:
        return MissingPattern(intervals=parsed)
    except Exception as exc:
        raise ConfigError(str(exc), location="pattern.intervals") from exc


def build_functional(cfg: RunConfig) -> FunctionalSpec:
    sec = cfg.functional
    coeffs = _require(sec, "coeffs", "functional")
    try:
        arr = np.atleast_2d(np.asarray(coeffs, dtype=complex))
        return FunctionalSpec(coeffs=arr, truncated=bool(sec.get("truncated", False)))
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc), location="functional.coeffs") from exc


def build_simulation(cfg: RunConfig) -> SimulationConfig:
    sec = cfg.simulation
    try:
        return SimulationConfig(
            replications=int(sec.get("replications", 10000)),
            seed=int(sec.get("seed", 0)),
            window=int(sec.get("window", 50)),
            path_length=None if sec.get("path_length") is None
            else int(sec["path_length"]),
            embedding_margin=None if sec.get("embedding_margin") is None
            else int(sec["embedding_margin"]),
            psd_tol=float(sec.get("psd_tol", 1e-8)),
            batch=int(sec.get("batch", 256)),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc), location="simulation") from exc


_FAMILY_BUILDERS = {
    "mixture": scalar_mixture_family,
    "ar1_fixed_power": ar1_fixed_power_family,
    "contamination": contamination_family,
}


def build_class(cfg: RunConfig) -> tuple[DensityClass, OptConfig, dict]:
    """The minimax section: admissible class, optimizer settings, extras."""
    sec = cfg.minimax
    if not sec:
        raise ConfigError("missing required section 'minimax'", location="top level")
    kind = _require(sec, "kind", "minimax")
    data_map = _expect_map(sec.get("data", {}) or {}, "minimax.data")
    known = {"power", "noise_power", "weight_f", "weight_g", "lower", "upper",
             "anchor_f", "anchor_g", "eps", "radius"}
    bad = sorted(set(data_map) - known)
    if bad:
        raise ConfigError(f"unknown constraint field(s) {bad}", location="minimax.data")
    mat_keys = {"weight_f", "weight_g"}
    fields = {}
    for key, value in data_map.items():
        fields[key] = np.asarray(value, dtype=float) \
            if key in mat_keys and value is not None else value
    data = ClassData(**fields)

    fam_sec = _expect_map(_require(sec, "family", "minimax"), "minimax.family")
    fam_kind = _require(fam_sec, "kind", "minimax.family")
    if fam_kind == "singleton":
        fam = singleton_family(build_model(cfg))
    elif fam_kind in _FAMILY_BUILDERS:
        params = dict(_expect_map(fam_sec.get("params", {}) or {},
                                  "minimax.family.params"))
        grid_size = int(params.pop("grid_size", cfg.grid_size))
        try:
            fam = _FAMILY_BUILDERS[fam_kind](**params, grid_size=grid_size)
        except ConfigError:
            raise
        except TypeError as exc:
            raise ConfigError(str(exc), location="minimax.family.params") from exc
    else:
        raise ConfigError(f"unknown family kind {fam_kind!r}",
                          location="minimax.family.kind")

    try:
        cls = DensityClass(kind=kind, g_kind=sec.get("g_kind"), data=data, family=fam)
    except Exception as exc:
        raise ConfigError(str(exc), location="minimax") from exc

    opt_sec = _expect_map(sec.get("opt", {}) or {}, "minimax.opt")
    try:
        opt = OptConfig(
            starts=int(opt_sec.get("starts", 16)),
            budget=int(opt_sec.get("budget", 2000)),
            initial_step=float(opt_sec.get("initial_step", 0.25)),
            min_step=float(opt_sec.get("min_step", 1e-6)),
            seed=int(opt_sec.get("seed", 0)),
            truncation=cfg.truncation if opt_sec.get("truncation") is None
            else int(opt_sec["truncation"]),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc), location="minimax.opt") from exc

    extras = {
        "saddle_samples": int(sec.get("saddle_samples", 100)),
        "saddle_seed": int(sec.get("saddle_seed", 1)),
        "saddle_tol": float(sec.get("saddle_tol", 1e-6)),
        "theta": sec.get("theta"),
        "skip_residuals": bool(sec.get("skip_residuals", False)),
    }
    return cls, opt, extras
