"""
Run configuration: INI files and named recipes, mapped onto frozen dataclasses.

Each INI section corresponds to one dataclass below and each key to one of
its fields. Unknown sections and keys are rejected. Values are converted by
the field's type annotation; numbers may be written as `10^x`
(e.g. `10^-3.9`) and lists are comma separated.

Overrides use the same `section.key=value` spelling on the command line and
win over file values.

Example Usage:
```python
config = load_config(recipe="lorenz-main", overrides=["data.T=200"])
config.embedding.D  # 3
config.tau_steps  # 26
```
"""

import configparser
import dataclasses
import logging
import math
import os
import re
import types
import typing
from dataclasses import dataclass, field
from enum import Enum, StrEnum
from importlib import resources
from pathlib import Path
from typing import Any, Final, Union

from .basis import BasisKind, rbf_sigma2
from .errors import ConfigError
from .model import LORENZ_DEFAULTS
from .report import FitSummaryFormatter
from .timeseries import SamplingPolicy, tau_steps_for

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV: Final = "ODEFORGE_OUTPUT_DIR"
RECIPE_PACKAGE: Final = "odeforge"
RECIPE_DIR: Final = "recipes"

_POWER_OF_TEN = re.compile(r"^\s*10\^\s*([-+]?[0-9]*\.?[0-9]+)\s*$")


class DataSource(StrEnum):
    GENERATE_LORENZ = "generate-lorenz"
    CSV = "csv"


class InitialStatePolicy(StrEnum):
    EMBEDDED = "embedded"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class DataConfig:
    source: DataSource = DataSource.GENERATE_LORENZ
    path: str | None = None
    column: str = "x"
    delimiter: str = ","
    header: bool | None = None
    dt: float = 0.005
    T: float = 5000.0
    transient: float = 100.0
    x0: tuple[float, ...] = (1.0, 1.0, 1.0)
    lorenz_params: tuple[float, ...] = LORENZ_DEFAULTS

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigError(f"data.dt must be positive, got {self.dt}")
        if not self.T >= 0 or not self.transient >= 0:
            raise ConfigError("data.T and data.transient must be non-negative")
        if self.source is DataSource.GENERATE_LORENZ:
            if len(self.x0) != 3 or len(self.lorenz_params) != 3:
                raise ConfigError(
                    "data.x0 and data.lorenz_params need 3 values for Lorenz"
                )


@dataclass(frozen=True)
class EmbeddingConfig:
    D: int = 3
    tau: float = 0.13

    def __post_init__(self) -> None:
        if self.D < 1:
            raise ConfigError(f"embedding.D must be a positive integer, got {self.D}")
        if not self.tau > 0:
            raise ConfigError(f"embedding.tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class DerivativeConfig:
    stride: int = 1

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ConfigError(
                f"derivative.stride must be a positive integer, got {self.stride}"
            )


@dataclass(frozen=True)
class SamplingConfig:
    fraction: float = 0.02
    policy: SamplingPolicy = SamplingPolicy.SEEDED_RANDOM
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(
                f"sampling.fraction must lie in (0, 1], got {self.fraction}"
            )


@dataclass(frozen=True)
class BasisConfig:
    kind: BasisKind = BasisKind.LINEAR_RBF
    delta_grid: float = 0.25
    m: int = 3
    p: float = 0.1
    max_centers: int = 1_000_000
    poly_degree: int = 8

    def __post_init__(self) -> None:
        rbf_sigma2(self.delta_grid, self.m, self.p)
        if self.max_centers < 1:
            raise ConfigError(
                f"basis.max_centers must be positive, got {self.max_centers}"
            )
        if self.poly_degree < 1:
            raise ConfigError(f"basis.poly_degree must be >= 1, got {self.poly_degree}")


@dataclass(frozen=True)
class RegressionConfig:
    lam: float = 1e-7
    sweep: tuple[float, ...] = (1e-8, 1e-7, 1e-6, 1e-5, 10**-3.9)

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ConfigError(f"regression.lambda must be positive, got {self.lam}")
        if not self.sweep or any(not lam > 0 for lam in self.sweep):
            raise ConfigError(
                f"regression.sweep needs positive values, got {self.sweep}"
            )


@dataclass(frozen=True)
class SimulationConfig:
    T: float = 10000.0
    dt: float | None = None
    x0_policy: InitialStatePolicy = InitialStatePolicy.EMBEDDED
    x0: tuple[float, ...] = ()
    escape_radius: float = 1e6

    def __post_init__(self) -> None:
        if not self.T >= 0:
            raise ConfigError(f"simulation.T must be non-negative, got {self.T}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"simulation.dt must be positive, got {self.dt}")
        if self.x0_policy is InitialStatePolicy.EXPLICIT and not self.x0:
            raise ConfigError("simulation.x0_policy = explicit needs simulation.x0")


@dataclass(frozen=True)
class DiagnosticsConfig:
    bins: int = 100
    residual_tolerance: float = 0.01
    lyapunov: bool = True
    lyapunov_T: float = 5000.0
    lyapunov_dt: float = 0.01
    renorm_interval: float = 0.1
    transient: float = 100.0
    valid_time: bool = True
    valid_threshold: float = 0.4
    valid_starts: int = 10
    valid_horizon: float = 20.0
    coverage: bool = True
    fixed_points: bool = True
    newton_tol: float = 1e-8
    max_iter: int = 50
    ghost_eps: float = 0.5
    seed_bounds: tuple[float, ...] = (-20.0, 20.0)
    reference_T: float = 2000.0
    basin_plane: tuple[tuple[float, ...], ...] = ((1.0, 1.0, 1.0), (1.0, -1.0, 0.0))
    basin_region: tuple[float, ...] = (-20.0, 20.0, -20.0, 20.0)
    basin_resolution: int = 400
    basin_escape_time: float = 5.0
    basin_escape_radius: float = 100.0
    basin_dt: float = 0.01
    sweep_T: float = 2000.0

    def __post_init__(self) -> None:
        if self.bins < 1:
            raise ConfigError(f"diagnostics.bins must be positive, got {self.bins}")
        if len(self.seed_bounds) != 2 or not self.seed_bounds[0] < self.seed_bounds[1]:
            raise ConfigError(
                f"diagnostics.seed_bounds must be 'low, high', got {self.seed_bounds}"
            )
        if len(self.basin_region) != 4:
            raise ConfigError(
                f"diagnostics.basin_region needs 4 values (a_lo, a_hi, b_lo, b_hi), "
                f"got {self.basin_region}"
            )
        if len(self.basin_plane) != 2:
            raise ConfigError(
                "diagnostics.basin_plane needs two vectors separated by ';'"
            )
        if self.basin_resolution < 1:
            raise ConfigError(
                "diagnostics.basin_resolution must be positive, "
                f"got {self.basin_resolution}"
            )


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs"
    fit_summary_format: str = FitSummaryFormatter.DEFAULT_FORMAT_STRING
    progress: bool = False

    def __post_init__(self) -> None:
        FitSummaryFormatter.validate_format_string(self.fit_summary_format)


@dataclass(frozen=True)
class RunConfig:
    name: str = "custom"
    data: DataConfig = field(default_factory=DataConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    derivative: DerivativeConfig = field(default_factory=DerivativeConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def tau_steps(self) -> int:
        return tau_steps_for(self.embedding.tau, self.data.dt)

    @property
    def simulation_dt(self) -> float:
        return self.simulation.dt if self.simulation.dt is not None else self.data.dt

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


SECTIONS: Final[dict[str, type]] = {
    "data": DataConfig,
    "embedding": EmbeddingConfig,
    "derivative": DerivativeConfig,
    "sampling": SamplingConfig,
    "basis": BasisConfig,
    "regression": RegressionConfig,
    "simulation": SimulationConfig,
    "diagnostics": DiagnosticsConfig,
    "output": OutputConfig,
}

# INI spellings that differ from the field name.
KEY_ALIASES: Final[dict[tuple[str, str], str]] = {("regression", "lambda"): "lam"}


def parse_number(raw: str) -> float:
    """A float, or `10^x` for a power of ten."""
    match = _POWER_OF_TEN.match(raw)
    if match:
        return 10.0 ** float(match.group(1))
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"{raw!r} is not finite")
    return value


def _split_list(raw: str) -> list[str]:
    return [item for item in re.split(r"[,\s]+", raw.strip()) if item]


def _convert(raw: str, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (Union, types.UnionType) and type(None) in args:
        if raw.strip().lower() in ("", "none", "auto"):
            return None
        inner = next(a for a in args if a is not type(None))
        return _convert(raw, inner)
    if origin is tuple:
        inner = args[0]
        if typing.get_origin(inner) is tuple:
            parts = [part for part in raw.split(";") if part.strip()]
            return tuple(_convert(part, inner) for part in parts)
        return tuple(_convert(item, inner) for item in _split_list(raw))
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(raw.strip())
        except ValueError as exc:
            raise ValueError(
                f"unsupported value {raw.strip()!r}; available values: "
                f"{[member.value for member in hint]}"
            ) from exc
    if hint is bool:
        lowered = raw.strip().lower()
        if lowered in configparser.ConfigParser.BOOLEAN_STATES:
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        raise ValueError(f"{raw!r} is not a boolean")
    if hint is int:
        return int(raw.strip())
    if hint is float:
        return parse_number(raw.strip())
    return raw.strip()


def _build_section(section: str, values: dict[str, str]) -> Any:
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    spellings = {v: k for (s, k), v in KEY_ALIASES.items() if s == section}
    kwargs = {}
    for key, raw in values.items():
        name = KEY_ALIASES.get((section, key), key)
        if name not in names:
            available = sorted(spellings.get(n, n) for n in names)
            raise ConfigError(
                f"Unknown key '{key}' in section [{section}]. "
                f"Available keys: {available}"
            )
        try:
            kwargs[name] = _convert(raw, hints[name])
        except ValueError as exc:
            raise ConfigError(
                f"Invalid value for {section}.{key} = {raw!r}: {exc}"
            ) from exc
    return cls(**kwargs)


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    return parser


def available_recipes() -> list[str]:
    folder = resources.files(RECIPE_PACKAGE) / RECIPE_DIR
    names = (p.name for p in folder.iterdir() if p.name.endswith(".ini"))
    return sorted(name.removesuffix(".ini") for name in names)


def recipe_text(name: str) -> str:
    resource = resources.files(RECIPE_PACKAGE) / RECIPE_DIR / f"{name}.ini"
    if not resource.is_file():
        raise ConfigError(
            f"Unknown recipe '{name}'. Available recipes: {available_recipes()}"
        )
    return resource.read_text(encoding="utf-8")


def apply_override(parser: configparser.ConfigParser, override: str) -> None:
    key, sep, value = override.partition("=")
    section, dot, option = key.strip().partition(".")
    if not sep or not dot or not section or not option:
        raise ConfigError(f"Override '{override}' must look like section.key=value")
    if section not in SECTIONS:
        raise ConfigError(
            f"Unknown section '{section}'. Available sections: {list(SECTIONS)}"
        )
    if not parser.has_section(section):
        parser.add_section(section)
    parser.set(section, option, value.strip())


def load_config(
    path: str | Path | None = None,
    recipe: str | None = None,
    overrides: list[str] | tuple[str, ...] = (),
) -> RunConfig:
    """
    Build a RunConfig from a recipe, then a file, then overrides.

    Later sources win key by key. With neither a recipe nor a file the
    defaults describe the Lorenz experiment.

    Raises:
        ConfigError: On unknown recipes, sections or keys, unparsable values,
            or values outside their allowed range.
    """
    parser = _new_parser()
    name = "custom"
    try:
        if recipe is not None:
            parser.read_string(recipe_text(recipe), source=f"<recipe {recipe}>")
            name = recipe
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"Config file not found: {path}")
            parser.read(path, encoding="utf-8")
            name = path.stem if recipe is None else name
    except configparser.Error as exc:
        raise ConfigError(f"Could not parse configuration: {exc}") from exc
    for override in overrides:
        apply_override(parser, override)

    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(
            f"Unknown section(s) {unknown}. Available sections: {list(SECTIONS)}"
        )
    sections = {s: _build_section(s, dict(parser.items(s))) for s in parser.sections()}
    config = RunConfig(name=name, **sections)
    # Rejects a tau that is not a whole number of samples.
    _ = config.tau_steps
    logger.debug("Loaded configuration '%s'", name)
    return config


def resolve_output_dir(config: RunConfig, output_dir: str | Path | None = None) -> Path:
    """An explicit directory wins, then $ODEFORGE_OUTPUT_DIR, then output.directory."""
    if output_dir is not None:
        return Path(output_dir)
    env = os.environ.get(OUTPUT_DIR_ENV)
    return Path(env) if env else Path(config.output.directory)
