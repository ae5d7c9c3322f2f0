"""
Scalar observables, delay-coordinate trajectories and regression samples.

This module covers the data side of model construction: reading a uniformly
sampled scalar observable w(t), turning it into D-dimensional delay
coordinates X(t) = (w(t), w(t - tau), ..., w(t - (D - 1) tau)), estimating
dX/dt with a sixth-order central stencil, and drawing the (state,
derivative) pairs the ridge regression is fitted on.

Conventions:
- tau is always an integer number of samples (`tau_steps`); there is no
  interpolation between samples.
- A trajectory produced by `delay_embed` remembers `start_index`, the index
  in the source series of its first state, so that
  `states[n][d] == series.values[start_index + n - d * tau_steps]`.
- All delay components share one observable, so they also share one
  standardization (mean, std). Derivatives are standardized by the std only.

Example Usage:
```python
series = load_series("lorenz.csv", column="x", dt=0.005)
traj = delay_embed(series, D=3, tau_steps=26)
derivs = estimate_derivative(traj, stride=1)
dataset = sample_points(
    traj, derivs, fraction=0.02, scaling=ScalingParams.from_series(series, 3)
)
```
"""

import logging
import math
from collections import namedtuple
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Any, Final

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

# Offsets -3..3 of {X(+3) - 9X(+2) + 45X(+1) - 45X(-1) + 9X(-2) - X(-3)} / 60
STENCIL_WEIGHTS: Final = (-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0)
STENCIL_DENOMINATOR: Final = 60.0
STENCIL_HALF_WIDTH: Final = 3

DerivativeEstimate = namedtuple("DerivativeEstimate", ["indices", "values", "stride"])


class SamplingPolicy(StrEnum):
    UNIFORM_STRIDE = "uniform-stride"
    SEEDED_RANDOM = "seeded-random"


@dataclass(frozen=True, eq=False)
class ScalarSeries:
    values: np.ndarray
    dt: float
    t0: float = 0.0
    label: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be a positive finite number, got {self.dt}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise DataError(f"Series value at index {bad} is not finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def duration(self) -> float:
        return len(self.values) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))


@dataclass(frozen=True, eq=False)
class ScalingParams:
    """
    Per-component z-scoring of states.

    States map as Z = (X - mean) / std; derivatives map as dZ/dt =
    (dX/dt) / std because the shift drops out of d/dt.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if mean.shape != std.shape or mean.ndim != 1:
            raise ConfigError(
                f"mean and std must be vectors of equal length, got shapes "
                f"{mean.shape} and {std.shape}"
            )
        if not np.all(np.isfinite(std)) or np.any(std <= 0):
            raise DataError(f"Standardization std must be strictly positive: {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def shared(cls, mean: float, std: float, dimension: int) -> "ScalingParams":
        return cls(np.full(dimension, float(mean)), np.full(dimension, float(std)))

    @classmethod
    def from_series(cls, series: ScalarSeries, dimension: int) -> "ScalingParams":
        return cls.shared(
            float(np.mean(series.values)), float(np.std(series.values)), dimension
        )

    @classmethod
    def pooled(cls, states: np.ndarray) -> "ScalingParams":
        states = np.asarray(states, dtype=float)
        mean, std = float(np.mean(states)), float(np.std(states))
        return cls.shared(mean, std, states.shape[1])

    @property
    def dimension(self) -> int:
        return len(self.mean)

    def standardize(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states, dtype=float) - self.mean) / self.std

    def unstandardize(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized, dtype=float) * self.std + self.mean

    def scale_derivative(self, derivatives: np.ndarray) -> np.ndarray:
        return np.asarray(derivatives, dtype=float) / self.std

    def unscale_derivative(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized, dtype=float) * self.std

    def matches(self, other: "ScalingParams") -> bool:
        return bool(
            self.mean.shape == other.mean.shape
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def to_dict(self) -> dict[str, list[float]]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScalingParams":
        return cls(
            np.array(data["mean"], dtype=float), np.array(data["std"], dtype=float)
        )


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    states: np.ndarray
    dt: float
    tau_steps: int = 1
    scaling: ScalingParams | None = None
    start_index: int = 0
    t0: float = 0.0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2:
            raise DataError(f"states must be an (N, D) array, got shape {states.shape}")
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def D(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    inputs: np.ndarray
    targets: np.ndarray
    scaling: ScalingParams
    source_indices: np.ndarray
    stride: int = 1

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if inputs.ndim != 2 or inputs.shape != targets.shape:
            raise DataError(
                f"inputs and targets must be matching (n, D) arrays, got "
                f"{inputs.shape} and {targets.shape}"
            )
        if len(self.source_indices) != len(inputs):
            raise DataError("source_indices must have one entry per sample")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "source_indices", np.asarray(self.source_indices))

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def D(self) -> int:
        return self.inputs.shape[1]


def _resolve_column(frame: pd.DataFrame, column: str | int) -> str | int:
    # Integer columns are 1-based, the way `cut -f` counts them.
    if isinstance(column, str) and column.strip().isdigit():
        column = int(column)
    if isinstance(column, int):
        if not 1 <= column <= frame.shape[1]:
            raise DataError(
                f"Column {column} is out of range; the file has {frame.shape[1]} "
                "column(s), numbered from 1"
            )
        return frame.columns[column - 1]
    if column not in frame.columns:
        raise DataError(
            f"Column '{column}' not found. Available columns: {list(frame.columns)}"
        )
    return column


def _looks_like_header(first_line: str, delimiter: str) -> bool:
    for cell in first_line.strip().split(delimiter):
        try:
            float(cell)
        except ValueError:
            return True
    return False


def load_series(
    path: str | Path,
    column: str | int,
    dt: float,
    delimiter: str = ",",
    header: bool | None = None,
    t0: float = 0.0,
) -> ScalarSeries:
    """
    Read one column of a delimited text file as a uniformly sampled series.

    Args:
        path: The file to read. It is never modified.
        column: A column name, or a 1-based column number.
        dt: The sampling interval; it is not inferred from the file.
        delimiter: The cell separator.
        header: Whether the first row holds column names. `None` sniffs it:
            a first row with any non-numeric cell is taken as a header.
        t0: The time of the first sample.

    Raises:
        DataError: If the file is missing, the column is absent or empty, or
            a cell is not a finite number. The message names the file row.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Series file not found: {path}")

    with path.open("r", encoding="utf-8") as f:
        first_line = f.readline()
    if header is None:
        header = _looks_like_header(first_line, delimiter)

    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=0 if header else None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"Series file is empty: {path}") from exc

    name = _resolve_column(frame, column)
    raw = frame[name]
    if len(raw) == 0:
        raise DataError(f"Column '{name}' in {path} is empty")

    parsed = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(parsed))
    if len(bad) > 0:
        row = int(bad[0])
        file_row = row + (2 if header else 1)
        raise DataError(
            f"Non-numeric or non-finite value {raw.iloc[row]!r} in column '{name}' "
            f"at row {file_row} of {path}"
        )

    logger.debug("Loaded %d samples from %s column %s", len(parsed), path, name)
    return ScalarSeries(parsed, dt=dt, t0=t0, label=str(name))


def save_series(series: ScalarSeries, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"t": series.times, series.label or "w": series.values})
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def autocorrelation(series: ScalarSeries, lag_steps: int) -> float:
    """Pearson correlation of w(t) and w(t - lag) over all valid t."""
    if lag_steps < 0:
        raise ConfigError(f"lag_steps must be non-negative, got {lag_steps}")
    n = len(series)
    if n <= lag_steps + 1:
        raise DataError(
            f"Series of length {n} is too short for a lag of {lag_steps} steps"
        )
    now = series.values[lag_steps:]
    before = series.values[: n - lag_steps]
    if np.std(now) == 0 or np.std(before) == 0:
        raise DataError("Autocorrelation is undefined for a constant series")
    return float(np.corrcoef(now, before)[0, 1])


def tau_steps_for(tau: float, dt: float) -> int:
    steps = round(tau / dt)
    if steps < 1 or abs(steps * dt - tau) > 1e-9 * max(abs(tau), 1.0):
        raise ConfigError(
            f"tau={tau} is not a positive integer multiple of dt={dt}; "
            "delay times are not interpolated"
        )
    return int(steps)


def delay_embed(series: ScalarSeries, D: int, tau_steps: int) -> StateTrajectory:
    if D < 1 or tau_steps < 1:
        raise ConfigError(
            f"D and tau_steps must be positive, got D={D}, tau={tau_steps}"
        )
    start = (D - 1) * tau_steps
    if len(series) <= start:
        raise DataError(
            f"Series of length {len(series)} is too short for D={D} and "
            f"tau_steps={tau_steps}; need more than {start} samples"
        )
    rows = np.arange(start, len(series))[:, None] - tau_steps * np.arange(D)[None, :]
    return StateTrajectory(
        states=series.values[rows],
        dt=series.dt,
        tau_steps=tau_steps,
        start_index=start,
        t0=series.t0 + start * series.dt,
    )


def estimate_derivative(traj: StateTrajectory, stride: int = 1) -> DerivativeEstimate:
    """
    Sixth-order central estimate of dX/dt at every interior state.

    The stencil spacing is `stride` samples; the first and last
    3 * stride states have no estimate.
    """
    if stride < 1:
        raise ConfigError(f"stride must be a positive integer, got {stride}")
    n = len(traj)
    reach = STENCIL_HALF_WIDTH * stride
    if n < 2 * reach + 1:
        raise DataError(
            f"Trajectory of length {n} is too short for stride {stride}; "
            f"need at least {2 * reach + 1} states"
        )

    total = np.zeros((n - 2 * reach, traj.D))
    for offset, weight in zip(range(-3, 4), STENCIL_WEIGHTS, strict=True):
        if weight == 0.0:
            continue
        lo = reach + offset * stride
        total += weight * traj.states[lo : lo + n - 2 * reach]
    values = total / (STENCIL_DENOMINATOR * stride * traj.dt)
    return DerivativeEstimate(np.arange(reach, n - reach), values, stride)


def sample_points(
    traj: StateTrajectory,
    derivs: DerivativeEstimate,
    fraction: float,
    policy: SamplingPolicy = SamplingPolicy.SEEDED_RANDOM,
    seed: int = 0,
    scaling: ScalingParams | None = None,
) -> RegressionDataset:
    """
    Select floor(fraction * count) interior points as regression samples.

    When no `scaling` is given, one shared (mean, std) is pooled over all
    components of the selected states.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    count = len(derivs.indices)
    n = math.floor(fraction * count)
    if n < 1:
        raise DataError(
            f"Empty selection: fraction {fraction} of {count} valid points "
            "selects no samples"
        )

    picks: np.ndarray
    match policy:
        case SamplingPolicy.SEEDED_RANDOM:
            rng = np.random.default_rng(seed)
            picks = np.sort(rng.choice(count, size=n, replace=False))
        case SamplingPolicy.UNIFORM_STRIDE:
            picks = (np.arange(n) * count) // n
        case _:
            raise ConfigError(
                f"Unsupported sampling policy: {policy}. "
                f"Available policies: {[p.value for p in SamplingPolicy]}"
            )

    indices = derivs.indices[picks]
    states = traj.states[indices]
    if scaling is None:
        scaling = ScalingParams.pooled(states)
    elif scaling.dimension != traj.D:
        raise ConfigError(
            f"Scaling has {scaling.dimension} components "
            f"but the trajectory has {traj.D}"
        )

    logger.debug("Selected %d of %d interior points (%s)", n, count, policy)
    return RegressionDataset(
        inputs=scaling.standardize(states),
        targets=scaling.scale_derivative(derivs.values[picks]),
        scaling=scaling,
        source_indices=indices,
        stride=derivs.stride,
    )
