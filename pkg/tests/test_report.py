import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from odeforge.diagnostics import (
    BasinMap,
    Density,
    FixedPoint,
    FixedPointClass,
    SweepRow,
)
from odeforge.errors import ConfigError
from odeforge.report import (
    DiagnosticsReport,
    FitSummaryFormatter,
    assign_labels,
    density_frame,
    fixed_point_table,
    fixed_points_frame,
    sweep_frame,
    write_basin_csv,
    write_json,
)


def _point(location: list[float], label: FixedPointClass) -> FixedPoint:
    return FixedPoint(
        location=np.array(location),
        eigenvalues=np.array([0.09 + 10.2j, 0.09 - 10.2j, -13.8 + 0j]),
        unstable_count=2,
        residual=1e-12,
        classification=label,
    )


@pytest.fixture
def lorenz_like_points() -> list[FixedPoint]:
    return [
        _point([-8.48, -8.47, -8.48], FixedPointClass.EMBEDDED),
        _point([-1.3, -1.3, -1.4], FixedPointClass.GHOST),
        _point([0.0, 0.0, 0.0], FixedPointClass.EMBEDDED),
        _point([1.3, 1.3, 1.4], FixedPointClass.GHOST),
        _point([8.48, 8.47, 8.48], FixedPointClass.EMBEDDED),
    ]


def test_default_fit_summary() -> None:
    text = FitSummaryFormatter().format(
        basis="linear+rbf",
        n=19998,
        features=1810,
        centers=1806,
        lam=1e-7,
        mean_error=0.0009,
        excluded=0,
        seconds=12.3456,
    )
    assert text.splitlines() == [
        "Basis: linear+rbf",
        "Samples: 19998",
        "Features: 1810",
        "Centers: 1806",
        "Lambda: 1e-07",
        "Mean regression error: 0.0009",
        "Excluded samples: 0",
        "Fit time: 12.35 s",
    ]


def test_empty_fit_summary() -> None:
    text = FitSummaryFormatter().format()
    assert text.startswith("Basis: \nSamples: \n")


def test_custom_fit_summary() -> None:
    formatter = FitSummaryFormatter("{basis}: J={centers}, err={mean_error}")
    assert formatter.format(basis="polynomial", centers=0, mean_error=0.0148) == (
        "polynomial: J=0, err=0.0148"
    )


def test_invalid_placeholder_in_fit_summary() -> None:
    with pytest.raises(
        ConfigError, match="Invalid placeholder 'missing' in the fit summary format"
    ):
        FitSummaryFormatter("Invalid {missing}")


def test_malformed_fit_summary() -> None:
    with pytest.raises(ConfigError, match="Malformed"):
        FitSummaryFormatter("Unclosed {basis")


def test_labels(lorenz_like_points: list[FixedPoint]) -> None:
    assert assign_labels(lorenz_like_points) == ["L", "GL", "O", "GR", "R"]


def test_repeated_labels_are_numbered() -> None:
    points = [
        _point([5.0, 5.0, 5.0], FixedPointClass.EMBEDDED),
        _point([9.0, 9.0, 9.0], FixedPointClass.UNKNOWN),
    ]
    assert assign_labels(points) == ["R1", "R2"]


def test_fixed_point_table(lorenz_like_points: list[FixedPoint]) -> None:
    table = fixed_point_table(lorenz_like_points)
    lines = table.splitlines()
    assert lines[0].split() == ["L", "GL", "O", "GR", "R"]
    assert lines[1].startswith("x*_1")
    assert lines[4].startswith("L*_1")
    assert "0.0900+10.2000i" in lines[4]
    assert "-13.8000" in lines[6]
    assert lines[-1].split() == ["unstable", "2", "2", "2", "2", "2"]


def test_fixed_point_table_when_empty() -> None:
    assert fixed_point_table([]) == "(no fixed points)"


def test_fixed_points_frame(lorenz_like_points: list[FixedPoint]) -> None:
    frame = fixed_points_frame(lorenz_like_points)
    assert list(frame["label"]) == ["L", "GL", "O", "GR", "R"]
    assert {"x1", "x3", "eig1_re", "eig1_im", "unstable_count"} <= set(frame.columns)
    assert frame.loc[1, "classification"] == "ghost"


def test_density_frame() -> None:
    edges = np.array([0.0, 0.5, 1.0])
    frame = density_frame(
        {
            "model": Density(edges, np.array([1.2, 0.8])),
            "reference": Density(edges, np.array([1.0, 1.0])),
        }
    )
    assert list(frame.columns) == ["bin_left", "bin_right", "model", "reference"]
    assert len(frame) == 2


def test_density_frame_needs_shared_edges() -> None:
    with pytest.raises(ConfigError, match="does not share bin edges"):
        density_frame(
            {
                "a": Density(np.array([0.0, 1.0]), np.array([1.0])),
                "b": Density(np.array([0.0, 2.0]), np.array([0.5])),
            }
        )


def test_sweep_frame() -> None:
    rows = [
        SweepRow(1e-7, (0.0015, 0.0015), 0.004, selected=True),
        SweepRow(10**-3.9, failed=True, error="escaped"),
    ]
    frame = sweep_frame(rows)
    assert frame.loc[0, "log10_lambda"] == pytest.approx(-7.0)
    assert frame.loc[0, "mean_residual_std"] == pytest.approx(0.0015)
    assert bool(frame.loc[1, "failed"])
    assert frame.loc[1, "error"] == "escaped"


def test_write_json_handles_numpy(tmp_path: Path) -> None:
    path = write_json(
        {"array": np.arange(3), "scalar": np.float64(0.5), "path": tmp_path},
        tmp_path / "nested" / "out.json",
    )
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data == {"array": [0, 1, 2], "scalar": 0.5, "path": str(tmp_path)}


def test_write_basin_csv(tmp_path: Path) -> None:
    grid = np.full((2, 2), np.nan)
    grid[0, 1] = 3.25
    basin = BasinMap(np.eye(2), np.zeros(2), (0.0, 2.0, 0.0, 2.0), grid, 5.0, 100.0)
    path = write_basin_csv(basin, tmp_path / "basin.csv")
    frame = pd.read_csv(path, index_col=0)
    assert list(frame.columns) == ["0.5", "1.5"]
    assert frame.iloc[0, 1] == pytest.approx(3.25)
    assert np.isnan(frame.iloc[1, 0])


def test_diagnostics_report_dict() -> None:
    report = DiagnosticsReport(delay_residual_stds=[0.0015, 0.0015], area_diff=0.004)
    data = report.to_dict()
    assert data["delay_residual_stds"] == [0.0015, 0.0015]
    assert data["degraded_delay_structure"] is False
    assert data["lyapunov_exponents"] is None
