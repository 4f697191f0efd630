"""Optimal linear extrapolation for vector stationary sequences observed
with noise and with missing stretches, plus robust (least-favorable) variants.
"""

from .errors import (
    ConfigError,
    DegenerateObservationsError,
    GapcastError,
    InfeasibleClassError,
    InsufficientLagError,
    InternalConsistencyError,
    InvalidParameterError,
    InvalidPatternError,
    NonInvertibleOperatorError,
    SimulationMethodError,
    SingularDensityError,
    UnsupportedClassError,
)
from .extrapolate import (
    EstimateResult,
    FunctionalSpec,
    delta_of_characteristic,
    default_truncation,
    estimate,
    filter_taps,
    mean_square_error,
    spectral_characteristic,
)
from .operators import (
    MissingPattern,
    build_index_map,
    build_operator_system,
    solve_coefficients,
)
from .oracle import (
    CirculantEmbedding,
    MonteCarloResult,
    OracleResult,
    SimulationConfig,
    functional_variance,
    monte_carlo_mse,
    projection_oracle,
    sample_paths,
)
from .config import (
    RunConfig,
    build_class,
    build_functional,
    build_model,
    build_pattern,
    build_simulation,
    config_hash,
    dumps_config,
    load_config,
    loads_config,
)
from .minimax import (
    ClassData,
    DensityClass,
    DensityFamily,
    LeastFavorableResult,
    OptConfig,
    ResidualReport,
    SaddleReport,
    ar1_fixed_power_family,
    characterization_residuals,
    class_constraint_report,
    contamination_family,
    convex_combination_family,
    evaluate_candidate,
    maximize_delta,
    scalar_mixture_family,
    singleton_family,
    verify_saddle_point,
)
from .spectral import (
    FourierTable,
    SpectralModel,
    ar1_model,
    ar1_scalar,
    check_minimality,
    coeffs_from_samples,
    covariance,
    covariance_table,
    density_from_samples,
    fourier_coeffs,
    grid_points,
    laurent_density,
    laurent_entry,
    ma_pair_model,
    make_ar1_pair,
    white_density,
    white_model,
)

__version__ = "0.1.0"
