"""
Result files: the fit summary text, fixed-point tables, density and sweep
frames, the basin matrix and the diagnostics report, written as CSV or JSON.
"""

import json
import logging
import textwrap
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Final

import numpy as np
import pandas as pd

from .diagnostics import BasinMap, Density, FixedPoint, FixedPointClass, SweepRow
from .errors import ConfigError

logger = logging.getLogger(__name__)

# Points whose delay coordinates average within this of zero are labelled O.
ORIGIN_LABEL_TOLERANCE: Final = 0.5


class FitSummaryFormatter:
    DEFAULT_FORMAT_STRING: Final[str] = textwrap.dedent(
        """
        Basis: {basis}
        Samples: {n}
        Features: {features}
        Centers: {centers}
        Lambda: {lam}
        Mean regression error: {mean_error}
        Excluded samples: {excluded}
        Fit time: {seconds} s
        """
    ).strip()
    KEYS: Final = (
        "basis",
        "n",
        "features",
        "centers",
        "lam",
        "mean_error",
        "excluded",
        "seconds",
    )

    def __init__(self, format_string: str = DEFAULT_FORMAT_STRING) -> None:
        self.validate_format_string(format_string)
        self.format_string = format_string

    @classmethod
    def validate_format_string(cls, format_string: str) -> None:
        try:
            format_string.format(**dict.fromkeys(cls.KEYS, ""))
        except KeyError as exc:
            raise ConfigError(
                f"Invalid placeholder '{exc.args[0]}' in the fit summary format. "
                f"Ensure all placeholders match the available keys: {list(cls.KEYS)}."
            ) from exc
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"Malformed fit summary format string: {exc}") from exc

    def format(
        self,
        basis: str | None = None,
        n: int | None = None,
        features: int | None = None,
        centers: int | None = None,
        lam: float | None = None,
        mean_error: float | None = None,
        excluded: int | None = None,
        seconds: float | None = None,
    ) -> str:
        return self.format_string.format(
            basis=basis or "",
            n="" if n is None else n,
            features="" if features is None else features,
            # 0 centers is meaningful for polynomial bases
            centers="" if centers is None else centers,
            lam="" if lam is None else f"{lam:.4g}",
            mean_error="" if mean_error is None else f"{mean_error:.6g}",
            excluded="" if excluded is None else excluded,
            seconds="" if seconds is None else f"{seconds:.2f}",
        )


def assign_labels(points: list[FixedPoint]) -> list[str]:
    """
    Table labels: L, R or O for points on the attractor, GL or GR for ghosts.

    Left and right follow the sign of the mean coordinate. Repeated labels
    get a running number.
    """
    labels = []
    for point in points:
        mean = float(np.mean(point.location))
        if point.classification is FixedPointClass.GHOST:
            label = "GL" if mean < 0 else "GR"
        elif mean < -ORIGIN_LABEL_TOLERANCE:
            label = "L"
        elif mean > ORIGIN_LABEL_TOLERANCE:
            label = "R"
        else:
            label = "O"
        labels.append(label)
    seen: dict[str, int] = {}
    unique = []
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
        unique.append(label if labels.count(label) == 1 else f"{label}{seen[label]}")
    return unique


def _complex_cell(value: complex) -> str:
    if abs(value.imag) < 1e-12:
        return f"{value.real:.4f}"
    sign = "+" if value.imag >= 0 else "-"
    return f"{value.real:.4f}{sign}{abs(value.imag):.4f}i"


def fixed_point_table(points: list[FixedPoint], width: int = 18) -> str:
    """Coordinates, then eigenvalues, one column per fixed point."""
    if not points:
        return "(no fixed points)"
    labels = assign_labels(points)
    dimension = len(points[0].location)
    lines = ["".ljust(8) + "".join(label.rjust(width) for label in labels)]
    for d in range(dimension):
        cells = (f"{p.location[d]:.4f}" for p in points)
        lines.append(f"x*_{d + 1}".ljust(8) + "".join(c.rjust(width) for c in cells))
    for d in range(dimension):
        cells = (_complex_cell(complex(p.eigenvalues[d])) for p in points)
        lines.append(f"L*_{d + 1}".ljust(8) + "".join(c.rjust(width) for c in cells))
    counts = (str(p.unstable_count) for p in points)
    lines.append("unstable".ljust(8) + "".join(c.rjust(width) for c in counts))
    return "\n".join(lines)


def fixed_points_frame(points: list[FixedPoint]) -> pd.DataFrame:
    labels = assign_labels(points)
    records = []
    for label, point in zip(labels, points, strict=True):
        record: dict[str, Any] = {
            "label": label,
            "classification": point.classification.value,
        }
        for d, value in enumerate(point.location):
            record[f"x{d + 1}"] = value
        for d, value in enumerate(point.eigenvalues):
            record[f"eig{d + 1}_re"] = value.real
            record[f"eig{d + 1}_im"] = value.imag
        record["unstable_count"] = point.unstable_count
        record["residual"] = point.residual
        records.append(record)
    return pd.DataFrame.from_records(records)


def density_frame(densities: dict[str, Density]) -> pd.DataFrame:
    """One row per bin; all densities must share their edges."""
    first = next(iter(densities.values()))
    frame = pd.DataFrame(
        {"bin_left": first.bin_edges[:-1], "bin_right": first.bin_edges[1:]}
    )
    for name, density in densities.items():
        if not np.array_equal(density.bin_edges, first.bin_edges):
            raise ConfigError(
                f"Density '{name}' does not share bin edges with the others"
            )
        frame[name] = density.probabilities
    return frame


def sweep_frame(rows: list[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [
            {
                "lambda": row.lam,
                "log10_lambda": float(np.log10(row.lam)),
                **{f"residual_std_{i + 1}": s for i, s in enumerate(row.residual_stds)},
                "mean_residual_std": None if row.failed else row.mean_residual_std,
                "area_diff": row.area_diff,
                "failed": row.failed,
                "selected": row.selected,
                "error": row.error or "",
            }
            for row in rows
        ]
    )


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(data: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=_jsonable)
        f.write("\n")
    logger.debug("Wrote %s", path)
    return path


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.debug("Wrote %s", path)
    return path


def write_basin_csv(basin: BasinMap, path: str | Path) -> Path:
    """Escape-time matrix with plane coordinates; empty cells are retained."""
    frame = pd.DataFrame(
        basin.grid,
        index=pd.Index(basin.b_coords, name="b\\a"),
        columns=[f"{a:.6g}" for a in basin.a_coords],
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, float_format="%.6g")
    return path


@dataclass
class DiagnosticsReport:
    """
    Everything `odeforge diagnose` measured for one model.

    Attributes:
        delay_residual_stds (list[float]): Std of X_d(t) - X_{d+1}(t + tau) per
            adjacent pair; empty when the simulation was too short to compare.
        area_diff (float | None): L1 distance between the model and reference X1
            densities.
        lyapunov_exponents (list[float] | None): The spectrum, sorted descending.
        lyapunov_T (float | None): Averaging time actually used.
        valid_times (list[float]): Short-term valid time per forecast start.
        median_valid_time (float | None): Median of `valid_times`.
        coverage_overlap (float | None): Shared fraction of visited boxes.
        fixed_points (list[dict]): Labelled roots with eigenvalues.
        simulation_escaped (bool): Whether the diagnosed simulation escaped.
        escape_time (float | None): When it escaped.
        skipped (list[str]): Sections that could not be computed.
        degraded_delay_structure (bool): Residuals above tolerance, or an
            escaped simulation.
    """

    delay_residual_stds: list[float] = field(default_factory=list)
    area_diff: float | None = None
    lyapunov_exponents: list[float] | None = None
    lyapunov_T: float | None = None
    valid_times: list[float] = field(default_factory=list)
    median_valid_time: float | None = None
    coverage_overlap: float | None = None
    fixed_points: list[dict[str, Any]] = field(default_factory=list)
    simulation_escaped: bool = False
    escape_time: float | None = None
    skipped: list[str] = field(default_factory=list)
    degraded_delay_structure: bool = False

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)
