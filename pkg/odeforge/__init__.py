from .basis import (
    BasisKind,
    BasisSpec,
    RbfGrid,
    build_rbf_centers,
    design_matrix,
    eval_feature_jacobian,
    eval_features,
    rbf_sigma2,
)
from .config import RunConfig, load_config
from .diagnostics import (
    BasinMap,
    Density,
    FixedPoint,
    basin_scan,
    delay_residuals,
    density_area_diff,
    density_histogram,
    find_fixed_points,
    lambda_sweep,
    lyapunov_spectrum,
    short_term_valid_time,
)
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    OdeforgeError,
    SchemaError,
    SingularSystemError,
    TrajectoryEscapeError,
)
from .model import (
    ModelMeta,
    OdeModel,
    ReferenceSystem,
    eval_jacobian,
    eval_rhs,
    integrate,
    load_model,
    lorenz_observable,
    save_model,
)
from .regress import (
    CoefficientSet,
    RidgeProblem,
    fit_model,
    regression_error,
    ridge_fit,
)
from .timeseries import (
    RegressionDataset,
    ScalarSeries,
    ScalingParams,
    StateTrajectory,
    autocorrelation,
    delay_embed,
    estimate_derivative,
    load_series,
    sample_points,
)

__all__ = [
    "BasinMap",
    "BasisKind",
    "BasisSpec",
    "CoefficientSet",
    "ConfigError",
    "DataError",
    "Density",
    "FixedPoint",
    "ModelMeta",
    "NumericalError",
    "OdeModel",
    "OdeforgeError",
    "RbfGrid",
    "ReferenceSystem",
    "RegressionDataset",
    "RidgeProblem",
    "RunConfig",
    "ScalarSeries",
    "ScalingParams",
    "SchemaError",
    "SingularSystemError",
    "StateTrajectory",
    "TrajectoryEscapeError",
    "autocorrelation",
    "basin_scan",
    "build_rbf_centers",
    "delay_embed",
    "delay_residuals",
    "density_area_diff",
    "density_histogram",
    "design_matrix",
    "estimate_derivative",
    "eval_feature_jacobian",
    "eval_features",
    "eval_jacobian",
    "eval_rhs",
    "find_fixed_points",
    "fit_model",
    "integrate",
    "lambda_sweep",
    "load_config",
    "load_model",
    "load_series",
    "lorenz_observable",
    "lyapunov_spectrum",
    "rbf_sigma2",
    "regression_error",
    "ridge_fit",
    "sample_points",
    "save_model",
    "short_term_valid_time",
]
