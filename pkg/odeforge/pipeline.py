"""
The model construction pipeline: series, embedding, derivatives, samples,
basis and fit, each step run inside a named stage so that errors report
where they came from.
"""

import hashlib
import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .basis import BasisKind, BasisSpec, build_rbf_centers
from .config import DataSource, InitialStatePolicy, RunConfig
from .errors import ConfigError, DataError, NumericalError, OdeforgeError
from .model import ModelMeta, OdeModel, lorenz_observable
from .regress import RegressionErrorResult, fit_model, regression_error
from .report import write_json
from .timeseries import (
    DerivativeEstimate,
    RegressionDataset,
    ScalarSeries,
    ScalingParams,
    StateTrajectory,
    delay_embed,
    estimate_derivative,
    load_series,
    sample_points,
    save_series,
)

logger = logging.getLogger(__name__)

SERIES_FILENAME = "series.csv"
SERIES_SIDECAR = "series.json"


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag errors raised inside the block with the stage name."""
    logger.debug("Stage %s", name)
    try:
        yield
    except OdeforgeError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc), stage=name) from exc


def sha256_file(path: str | Path) -> str:
    m = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            m.update(chunk)
    return m.digest().hex()


def generate_series(config: RunConfig) -> ScalarSeries:
    data = config.data
    sigma, rho, beta = data.lorenz_params
    return lorenz_observable(
        data.T, data.dt, data.x0, data.transient, (sigma, rho, beta)
    )


def write_generated_series(
    config: RunConfig, output_dir: Path
) -> tuple[ScalarSeries, Path]:
    """Write the Lorenz observable and a JSON sidecar describing how it was made."""
    with stage("generate"):
        series = generate_series(config)
        try:
            path = save_series(series, output_dir / SERIES_FILENAME)
        except OSError as exc:
            raise DataError(f"Cannot write series to {output_dir}: {exc}") from exc
        write_json(
            {
                "dt": series.dt,
                "T": config.data.T,
                "transient": config.data.transient,
                "x0": list(config.data.x0),
                "lorenz_params": list(config.data.lorenz_params),
                "seed": config.sampling.seed,
                "samples": len(series),
                "sha256": sha256_file(path),
            },
            output_dir / SERIES_SIDECAR,
        )
    logger.info("Wrote %d samples to %s", len(series), path)
    return series, path


def obtain_series(config: RunConfig, output_dir: Path) -> tuple[ScalarSeries, Path]:
    """Read the configured CSV, or generate the Lorenz series into `output_dir`."""
    match config.data.source:
        case DataSource.CSV:
            if config.data.path is None:
                raise ConfigError("data.source = csv needs data.path", stage="load")
            with stage("load"):
                series = load_series(
                    config.data.path,
                    column=config.data.column,
                    dt=config.data.dt,
                    delimiter=config.data.delimiter,
                    header=config.data.header,
                )
            return series, Path(config.data.path)
        case DataSource.GENERATE_LORENZ:
            return write_generated_series(config, output_dir)
        case _:
            raise ConfigError(f"Unsupported data source: {config.data.source}")


@dataclass(frozen=True, eq=False)
class PreparedData:
    """Every intermediate between the raw series and the regression samples."""

    series: ScalarSeries
    trajectory: StateTrajectory
    derivatives: DerivativeEstimate
    dataset: RegressionDataset


def prepare_dataset(config: RunConfig, series: ScalarSeries) -> PreparedData:
    with stage("embed"):
        tau_steps = config.tau_steps
        scaling = ScalingParams.from_series(series, config.embedding.D)
        traj = delay_embed(series, config.embedding.D, tau_steps)
    with stage("derivative"):
        derivs = estimate_derivative(traj, config.derivative.stride)
    with stage("sample"):
        dataset = sample_points(
            traj,
            derivs,
            config.sampling.fraction,
            config.sampling.policy,
            config.sampling.seed,
            scaling=scaling,
        )
    logger.info(
        "Embedded %d states (D=%d, tau_steps=%d); %d regression samples",
        len(traj),
        traj.D,
        tau_steps,
        dataset.n,
    )
    return PreparedData(series, traj, derivs, dataset)


def build_basis(
    config: RunConfig, dataset: RegressionDataset, kind: BasisKind | None = None
) -> BasisSpec:
    kind = kind if kind is not None else config.basis.kind
    with stage("basis"):
        match kind:
            case BasisKind.LINEAR_RBF:
                grid = build_rbf_centers(
                    dataset,
                    config.basis.delta_grid,
                    config.basis.m,
                    config.basis.p,
                    config.basis.max_centers,
                )
                return BasisSpec.linear_rbf(grid)
            case BasisKind.POLYNOMIAL:
                return BasisSpec.polynomial(dataset.D, config.basis.poly_degree)
            case _:
                raise ConfigError(f"Unsupported basis kind: {kind}")


def model_meta(
    config: RunConfig, prepared: PreparedData, lam: float, series_sha256: str | None
) -> ModelMeta:
    return ModelMeta(
        tau=config.embedding.tau,
        tau_steps=config.tau_steps,
        dt=prepared.series.dt,
        T_train=prepared.series.duration,
        lam=lam,
        seed=config.sampling.seed,
        stride=config.derivative.stride,
        fraction=config.sampling.fraction,
        policy=config.sampling.policy.value,
        x0=tuple(float(v) for v in prepared.trajectory.states[0]),
        series_sha256=series_sha256,
    )


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    A fitted model with what it was fitted on.

    Attributes:
        model (OdeModel): The fitted model, provenance included.
        prepared (PreparedData): Series, embedding and samples behind the fit.
        error (RegressionErrorResult): Relative regression error on the samples.
        seconds (float): Wall time of basis construction and regression.
    """

    model: OdeModel
    prepared: PreparedData
    error: RegressionErrorResult
    seconds: float

    def summary(self) -> dict[str, Any]:
        spec = self.model.spec
        return {
            "basis": spec.kind.value,
            "n": self.prepared.dataset.n,
            "features": spec.feature_count,
            "centers": spec.rbf.J if spec.rbf is not None else 0,
            "lam": self.model.coeffs.lam,
            "mean_error": self.error.mean,
            "excluded": self.error.excluded,
            "seconds": self.seconds,
        }


def fit_from_prepared(
    config: RunConfig,
    prepared: PreparedData,
    lam: float | None = None,
    kind: BasisKind | None = None,
    series_sha256: str | None = None,
) -> FitResult:
    lam = lam if lam is not None else config.regression.lam
    started = time.perf_counter()
    spec = build_basis(config, prepared.dataset, kind)
    with stage("fit"):
        meta = model_meta(config, prepared, lam, series_sha256)
        model = fit_model(prepared.dataset, spec, lam, meta=meta)
        error = regression_error(model, prepared.dataset)
    seconds = time.perf_counter() - started
    logger.info(
        "Fitted %s model: F=%d, mean relative error %.3g (%.1f s)",
        spec.kind,
        spec.feature_count,
        error.mean,
        seconds,
    )
    return FitResult(model, prepared, error, seconds)


def initial_state(config: RunConfig, model: OdeModel) -> np.ndarray:
    match config.simulation.x0_policy:
        case InitialStatePolicy.EXPLICIT:
            x0 = np.array(config.simulation.x0, dtype=float)
        case InitialStatePolicy.EMBEDDED:
            if model.meta.x0 is None:
                raise ConfigError(
                    "The model records no embedded initial state; set "
                    "simulation.x0_policy = explicit and simulation.x0"
                )
            x0 = np.array(model.meta.x0, dtype=float)
        case _:
            raise ConfigError(
                f"Unsupported initial state policy: {config.simulation.x0_policy}"
            )
    if len(x0) != model.D:
        raise ConfigError(
            f"Initial state has {len(x0)} components but the model has D={model.D}"
        )
    return x0
