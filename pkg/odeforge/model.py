"""
The learned ODE dX/dt = F(X), reference systems, and RK4 integration.

An `OdeModel` evaluates F in raw (unstandardized) coordinates:

    F_raw(X) = std * F_std((X - mean) / std)

where F_std is the ridge fit in standardized space. Its Jacobian follows by
the chain rule, J_raw[k, d] = std_k * J_std[k, d] / std_d.

Anything with a dimension `D`, a batch-capable `rhs` and a `jacobian` can be
integrated; both `OdeModel` and `ReferenceSystem` qualify.

Example Usage:
```python
series = lorenz_observable(T=100.0, dt=0.005, X0=(1.0, 1.0, 1.0), transient=10.0)
model = load_model("lorenz-main/model.json")
result = integrate(model, model.meta.x0, T=50.0, dt=0.005)
save_trajectory(result.trajectory, "trajectory.csv")
```
"""

import json
import logging
import math
from collections import namedtuple
from dataclasses import asdict, dataclass, field, fields
from enum import StrEnum
from pathlib import Path
from typing import Any, Final, Protocol

import numpy as np
import pandas as pd
from tqdm import tqdm

from .basis import BasisSpec, design_matrix, feature_jacobians
from .errors import ConfigError, DataError, SchemaError, TrajectoryEscapeError
from .regress import CoefficientSet
from .timeseries import ScalarSeries, ScalingParams, StateTrajectory

logger = logging.getLogger(__name__)

SCHEMA_VERSION: Final = 1
DEFAULT_ESCAPE_RADIUS: Final = 1e6
LORENZ_DEFAULTS: Final = (10.0, 28.0, 8.0 / 3.0)

IntegrationResult = namedtuple(
    "IntegrationResult", ["trajectory", "escaped", "escape_time"]
)


class VectorField(Protocol):
    @property
    def D(self) -> int: ...

    def rhs(self, states: np.ndarray) -> np.ndarray: ...

    def jacobian(self, states: np.ndarray) -> np.ndarray: ...


def _as_states(states: np.ndarray, dimension: int) -> tuple[np.ndarray, bool]:
    states = np.asarray(states, dtype=float)
    single = states.ndim == 1
    batch = states[None, :] if single else states
    if batch.ndim != 2 or batch.shape[1] != dimension:
        raise DataError(
            f"Expected states with {dimension} components, got shape {states.shape}"
        )
    if not np.all(np.isfinite(batch)):
        raise DataError("States must be finite")
    return batch, single


@dataclass(frozen=True)
class ModelMeta:
    tau: float | None = None
    tau_steps: int | None = None
    dt: float | None = None
    T_train: float | None = None
    lam: float | None = None
    seed: int | None = None
    stride: int | None = None
    fraction: float | None = None
    policy: str | None = None
    x0: tuple[float, ...] | None = None
    series_sha256: str | None = None

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        if self.x0 is not None:
            data["x0"] = list(self.x0)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelMeta":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(
                f"Unknown model meta field(s) {sorted(unknown)}. "
                f"Available fields: {sorted(known)}"
            )
        values = dict(data)
        if values.get("x0") is not None:
            values["x0"] = tuple(float(v) for v in values["x0"])
        return cls(**values)


@dataclass(frozen=True, eq=False)
class OdeModel:
    spec: BasisSpec
    coeffs: CoefficientSet
    scaling: ScalingParams
    meta: ModelMeta = field(default_factory=ModelMeta)

    def __post_init__(self) -> None:
        expected = (self.spec.D, self.spec.feature_count)
        if self.coeffs.beta.shape != expected:
            raise SchemaError(
                f"Coefficients have shape {self.coeffs.beta.shape}, "
                f"the basis needs {expected}"
            )
        if self.scaling.dimension != self.spec.D:
            raise SchemaError(
                f"Scaling has {self.scaling.dimension} components but D={self.spec.D}"
            )

    @property
    def D(self) -> int:
        return self.spec.D

    def rhs_standardized(self, standardized: np.ndarray) -> np.ndarray:
        return design_matrix(standardized, self.spec) @ self.coeffs.beta.T

    def rhs(self, states: np.ndarray) -> np.ndarray:
        batch, single = _as_states(states, self.D)
        out = self.scaling.unscale_derivative(
            self.rhs_standardized(self.scaling.standardize(batch))
        )
        return out[0] if single else out

    def jacobian(self, states: np.ndarray) -> np.ndarray:
        batch, single = _as_states(states, self.D)
        grads = feature_jacobians(self.scaling.standardize(batch), self.spec)
        standardized = np.einsum("kf,nfd->nkd", self.coeffs.beta, grads)
        std = self.scaling.std
        out = std[None, :, None] * standardized / std[None, None, :]
        return out[0] if single else out

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": SCHEMA_VERSION,
            "D": self.D,
            "tau": self.meta.tau,
            "dt": self.meta.dt,
            "basis": self.spec.to_dict(),
            "scaling": self.scaling.to_dict(),
            **self.coeffs.to_dict(),
            "meta": self.meta.to_dict(),
        }

    def to_string(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False)

    @classmethod
    def from_string(cls, text: str) -> "OdeModel":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"Model file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict) or "version" not in data:
            raise SchemaError("Model file has no schema version field")
        if data["version"] != SCHEMA_VERSION:
            raise SchemaError(
                f"Unsupported model schema version {data['version']!r}; "
                f"this build reads version {SCHEMA_VERSION}"
            )
        try:
            model = cls(
                spec=BasisSpec.from_dict(data["basis"]),
                coeffs=CoefficientSet.from_dict(data),
                scaling=ScalingParams.from_dict(data["scaling"]),
                meta=ModelMeta.from_dict(data.get("meta", {})),
            )
        except KeyError as exc:
            raise SchemaError(
                f"Model file is missing field {exc}. Available fields: {list(data)}"
            ) from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"Model file is malformed: {exc}") from exc
        if int(data["D"]) != model.D:
            raise SchemaError(
                f"Model file declares D={data['D']} but the basis has D={model.D}"
            )
        return model


def eval_rhs(model: OdeModel, X_raw: np.ndarray) -> np.ndarray:
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim != 1:
        raise DataError(f"Expected a single state vector, got shape {X_raw.shape}")
    return model.rhs(X_raw)


def eval_jacobian(model: OdeModel, X_raw: np.ndarray) -> np.ndarray:
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim != 1:
        raise DataError(f"Expected a single state vector, got shape {X_raw.shape}")
    return model.jacobian(X_raw)


def save_model(model: OdeModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.to_string(), encoding="utf-8")
    logger.info(
        "Wrote model (D=%d, F=%d) to %s", model.D, model.spec.feature_count, path
    )
    return path


def load_model(path: str | Path) -> OdeModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Model file not found: {path}")
    return OdeModel.from_string(path.read_text(encoding="utf-8"))


class ReferenceName(StrEnum):
    LORENZ = "lorenz"
    LINEAR_TEST = "linear-test"
    CUSTOM_COEFFICIENTS = "custom-coefficients"


@dataclass(frozen=True, eq=False)
class ReferenceSystem:
    """
    Known vector fields used to generate data and as ground truth.

    - `lorenz`: parameters (sigma, rho, beta), default (10, 28, 8/3).
    - `linear-test`: dX/dt = diag(parameters) X.
    - `custom-coefficients`: dX/dt = M X with M given row-major (D^2 values).
    """

    name: ReferenceName
    parameters: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        params = tuple(float(p) for p in self.parameters)
        match self.name:
            case ReferenceName.LORENZ:
                params = params or LORENZ_DEFAULTS
                if len(params) != 3:
                    raise ConfigError(f"Lorenz takes 3 parameters, got {len(params)}")
            case ReferenceName.LINEAR_TEST:
                if not params:
                    raise ConfigError("linear-test needs at least one rate")
            case ReferenceName.CUSTOM_COEFFICIENTS:
                size = math.isqrt(len(params))
                if size < 1 or size * size != len(params):
                    raise ConfigError(
                        f"custom-coefficients needs D^2 values, got {len(params)}"
                    )
            case _:
                raise ConfigError(
                    f"Unsupported reference system: {self.name}. "
                    f"Available systems: {[n.value for n in ReferenceName]}"
                )
        object.__setattr__(self, "parameters", params)

    @classmethod
    def lorenz(
        cls, params: tuple[float, float, float] = LORENZ_DEFAULTS
    ) -> "ReferenceSystem":
        return cls(ReferenceName.LORENZ, params)

    @classmethod
    def linear(cls, rates: tuple[float, ...] | list[float]) -> "ReferenceSystem":
        return cls(ReferenceName.LINEAR_TEST, tuple(rates))

    @classmethod
    def custom(cls, matrix: np.ndarray) -> "ReferenceSystem":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigError(
                f"Coefficient matrix must be square, got shape {matrix.shape}"
            )
        return cls(ReferenceName.CUSTOM_COEFFICIENTS, tuple(matrix.ravel()))

    @property
    def D(self) -> int:
        match self.name:
            case ReferenceName.LORENZ:
                return 3
            case ReferenceName.LINEAR_TEST:
                return len(self.parameters)
            case _:
                return math.isqrt(len(self.parameters))

    @property
    def matrix(self) -> np.ndarray:
        match self.name:
            case ReferenceName.LINEAR_TEST:
                return np.diag(self.parameters)
            case ReferenceName.CUSTOM_COEFFICIENTS:
                return np.array(self.parameters).reshape(self.D, self.D)
            case _:
                raise ConfigError("The Lorenz system is not linear")

    def rhs(self, states: np.ndarray) -> np.ndarray:
        batch, single = _as_states(states, self.D)
        match self.name:
            case ReferenceName.LORENZ:
                sigma, rho, beta = self.parameters
                x, y, z = batch.T
                out = np.stack(
                    [sigma * (y - x), rho * x - y - x * z, x * y - beta * z], axis=1
                )
            case _:
                out = batch @ self.matrix.T
        return out[0] if single else out

    def jacobian(self, states: np.ndarray) -> np.ndarray:
        batch, single = _as_states(states, self.D)
        match self.name:
            case ReferenceName.LORENZ:
                sigma, rho, beta = self.parameters
                x, y, z = batch.T
                out = np.zeros((len(batch), 3, 3))
                out[:, 0, 0] = -sigma
                out[:, 0, 1] = sigma
                out[:, 1, 0] = rho - z
                out[:, 1, 1] = -1.0
                out[:, 1, 2] = -x
                out[:, 2, 0] = y
                out[:, 2, 1] = x
                out[:, 2, 2] = -beta
            case _:
                out = np.broadcast_to(self.matrix, (len(batch), self.D, self.D)).copy()
        return out[0] if single else out


def rk4_step(system: VectorField, states: np.ndarray, dt: float) -> np.ndarray:
    k1 = system.rhs(states)
    k2 = system.rhs(states + 0.5 * dt * k1)
    k3 = system.rhs(states + 0.5 * dt * k2)
    k4 = system.rhs(states + dt * k3)
    return states + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _guarded_step(system: VectorField, states: np.ndarray, dt: float) -> np.ndarray:
    # States whose stages stop being finite come back as NaN rows.
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return rk4_step(system, states, dt)
    except DataError:
        if states.ndim == 1:
            return np.full_like(states, np.nan)
        return np.stack([_guarded_step(system, row, dt) for row in states])


def step_count(T: float, dt: float) -> int:
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not T >= 0:
        raise ConfigError(f"T must be non-negative, got {T}")
    return math.ceil(T / dt - 1e-9) if T > 0 else 0


def integrate(
    system: VectorField,
    X0: np.ndarray,
    T: float,
    dt: float,
    escape_radius: float = DEFAULT_ESCAPE_RADIUS,
    raise_on_escape: bool = False,
) -> IntegrationResult:
    """
    Fixed-step RK4 from X0 for ceil(T / dt) steps.

    The trajectory holds ceil(T / dt) + 1 states (one state for T = 0). If
    ||X|| exceeds `escape_radius` or stops being finite, integration stops
    and the trajectory ends at the first escaped state.

    Raises:
        TrajectoryEscapeError: On escape, when `raise_on_escape` is set.
    """
    n_steps = step_count(T, dt)
    x = np.asarray(X0, dtype=float).reshape(-1)
    if x.shape[0] != system.D:
        raise ConfigError(
            f"X0 has {x.shape[0]} components, the vector field has D={system.D}"
        )

    states = np.empty((n_steps + 1, system.D))
    states[0] = x
    for i in range(n_steps):
        x = _guarded_step(system, x, dt)
        states[i + 1] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > escape_radius:
            escape_time = (i + 1) * dt
            logger.debug("Trajectory escaped at t=%g", escape_time)
            if raise_on_escape:
                raise TrajectoryEscapeError(escape_time, escape_radius)
            traj = StateTrajectory(states[: i + 2], dt)
            return IntegrationResult(traj, True, escape_time)
    return IntegrationResult(StateTrajectory(states, dt), False, None)


def escape_times(
    system: VectorField,
    X0s: np.ndarray,
    T: float,
    dt: float,
    escape_radius: float = DEFAULT_ESCAPE_RADIUS,
    progress: bool = False,
) -> np.ndarray:
    """
    Integrate many initial states together and return when each one escapes.

    Escaped states stop being integrated. Entries are NaN for states that
    stay within `escape_radius` up to time T.
    """
    n_steps = step_count(T, dt)
    x = np.array(X0s, dtype=float)
    if x.ndim != 2 or x.shape[1] != system.D:
        raise ConfigError(
            f"Expected (n, {system.D}) initial states, got shape {x.shape}"
        )

    times = np.full(len(x), np.nan)
    times[np.linalg.norm(x, axis=1) > escape_radius] = 0.0
    for i in tqdm(range(n_steps), desc="escape scan", disable=not progress):
        active = np.flatnonzero(np.isnan(times))
        if len(active) == 0:
            break
        x[active] = _guarded_step(system, x[active], dt)
        with np.errstate(over="ignore", invalid="ignore"):
            norms = np.linalg.norm(x[active], axis=1)
        gone = ~np.isfinite(norms) | (norms > escape_radius)
        times[active[gone]] = (i + 1) * dt
    return times


def lorenz_observable(
    T: float,
    dt: float,
    X0: tuple[float, ...] | np.ndarray = (1.0, 1.0, 1.0),
    transient: float = 100.0,
    params: tuple[float, float, float] = LORENZ_DEFAULTS,
) -> ScalarSeries:
    """Integrate Lorenz, drop the transient, and keep x as the observable."""
    system = ReferenceSystem.lorenz(params)
    skip = step_count(transient, dt)
    keep = step_count(T, dt)
    result = integrate(system, X0, (skip + keep) * dt, dt, raise_on_escape=True)
    values = result.trajectory.states[skip:, 0]
    logger.info(
        "Generated %d Lorenz samples (dt=%g, transient=%g)", len(values), dt, transient
    )
    return ScalarSeries(values, dt=dt, t0=skip * dt, label="x")


def lorenz_equilibria(
    params: tuple[float, float, float] = LORENZ_DEFAULTS,
) -> list[np.ndarray]:
    """The origin and, for rho > 1, the pair (+-sqrt(beta(rho-1)), ..., rho - 1)."""
    _, rho, beta = params
    points = [np.zeros(3)]
    if rho > 1:
        r = math.sqrt(beta * (rho - 1))
        points += [np.array([r, r, rho - 1]), np.array([-r, -r, rho - 1])]
    return points


def delay_project(point: np.ndarray, dimension: int) -> np.ndarray:
    """A stationary state in delay coordinates repeats its observed x."""
    return np.full(dimension, float(np.asarray(point, dtype=float)[0]))


def save_trajectory(traj: StateTrajectory, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(traj.states, columns=[f"X{d + 1}" for d in range(traj.D)])
    frame.insert(0, "t", traj.times)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
