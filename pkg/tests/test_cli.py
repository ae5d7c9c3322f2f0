import json
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pytest
from pytest_mock import MockerFixture

from odeforge.basis import BasisSpec
from odeforge.cli import build_parser, main
from odeforge.config import OUTPUT_DIR_ENV
from odeforge.errors import TrajectoryEscapeError
from odeforge.model import ModelMeta, OdeModel, save_model
from odeforge.regress import CoefficientSet
from odeforge.timeseries import ScalarSeries, ScalingParams, save_series

SMALL_FIT = [
    "--set",
    "data.T=30",
    "--set",
    "data.transient=10",
    "--set",
    "sampling.fraction=0.2",
    "--set",
    "basis.delta_grid=1.0",
    "--set",
    "basis.poly_degree=3",
]


def _out(tmp_path: Path) -> list[str]:
    return ["--output-dir", str(tmp_path / "out")]


def test_parser_lists_commands() -> None:
    parser = build_parser()
    args = parser.parse_args(["basin", "--resolution", "8", "--model", "m.json"])
    assert args.command == "basin"
    assert args.resolution == "8"
    assert args.model == Path("m.json")
    with pytest.raises(SystemExit):
        parser.parse_args(["train"])


def test_generate_honours_output_env(
    monkeypatch: pytest.MonkeyPatch, tmp_path: Path
) -> None:
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    code = main(
        ["generate", "--recipe", "lorenz-train", "--set", "data.T=0.01", "-q"]
    )
    assert code == 0
    frame = pd.read_csv(tmp_path / "env" / "series.csv")
    assert len(frame) == 3
    assert (tmp_path / "env" / "series.json").exists()


def test_fit_writes_model_and_summary(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(["fit", "--recipe", "lorenz-main", *SMALL_FIT, *_out(tmp_path)])
    assert code == 0
    out = tmp_path / "out"
    for name in ("model.json", "fit_report.json", "fit_summary.txt", "series.csv"):
        assert (out / name).exists()
    assert "Basis: linear+rbf" in capsys.readouterr().out
    report = json.loads((out / "fit_report.json").read_text(encoding="utf-8"))
    assert report["basis"] == "linear+rbf"
    assert report["config"]["name"] == "lorenz-main"
    assert len(report["residual_norms"]) == 3


def test_simulate(decay_model_file: Path, tmp_path: Path) -> None:
    code = main(
        [
            "simulate",
            "--model",
            str(decay_model_file),
            "--T",
            "1",
            "--x0",
            "2,0,0",
            *_out(tmp_path),
        ]
    )
    assert code == 0
    frame = pd.read_csv(tmp_path / "out" / "trajectory.csv")
    assert list(frame.columns) == ["t", "X1", "X2", "X3"]
    assert len(frame) == 201
    assert frame["X1"].iloc[-1] == pytest.approx(2.0 * 0.36787944, rel=1e-6)
    meta_path = tmp_path / "out" / "simulation.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    assert meta["escaped"] is False


def test_diagnose(decay_model_file: Path, tmp_path: Path) -> None:
    code = main(
        [
            "diagnose",
            "--model",
            str(decay_model_file),
            "--set",
            "simulation.T=5",
            "--set",
            "data.transient=1",
            "--set",
            "diagnostics.lyapunov_T=5",
            "--set",
            "diagnostics.transient=0",
            "--set",
            "diagnostics.valid_horizon=1",
            "--set",
            "diagnostics.valid_starts=2",
            "--set",
            "diagnostics.reference_T=5",
            *_out(tmp_path),
        ]
    )
    assert code == 0
    out = tmp_path / "out"
    report = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
    assert len(report["delay_residual_stds"]) == 2
    assert report["skipped"] == []
    assert report["simulation_escaped"] is False
    assert [p["label"] for p in report["fixed_points"]] == ["O"]
    assert report["fixed_points"][0]["classification"] == "embedded"
    assert len(report["valid_times"]) == 2
    assert report["lyapunov_exponents"] == pytest.approx([-1.0, -1.0, -1.0], abs=0.05)
    for name in ("densities.csv", "delay_residual_pair1.csv", "delay_alignment.csv"):
        assert (out / name).exists()


def test_fixed_points(
    decay_model_file: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(
        [
            "fixed-points",
            "--model",
            str(decay_model_file),
            "--set",
            "diagnostics.reference_T=5",
            *_out(tmp_path),
        ]
    )
    assert code == 0
    assert capsys.readouterr().out.splitlines()[0].split() == ["O"]
    data = json.loads(
        (tmp_path / "out" / "fixed_points.json").read_text(encoding="utf-8")
    )
    assert len(data["fixed_points"]) == 1
    assert data["fixed_points"][0]["classification"] == "embedded"
    assert len(data["original_in_delay_coordinates"]) == 3


def test_basin(decay_model_file: Path, tmp_path: Path) -> None:
    code = main(
        [
            "basin",
            "--model",
            str(decay_model_file),
            "--resolution",
            "4",
            "--set",
            "diagnostics.fixed_points=false",
            *_out(tmp_path),
        ]
    )
    assert code == 0
    data = json.loads((tmp_path / "out" / "basin.json").read_text(encoding="utf-8"))
    assert data["resolution"] == 4
    assert data["escaped_fraction"] == 0.0
    assert data["ghosts"] == []


def test_sweep_lambda(tmp_path: Path) -> None:
    code = main(
        [
            "sweep-lambda",
            "--recipe",
            "lorenz-main",
            *SMALL_FIT,
            "--lambdas",
            "1e-7,10^-5",
            "--set",
            "diagnostics.sweep_T=5",
            *_out(tmp_path),
        ]
    )
    assert code == 0
    frame = pd.read_csv(tmp_path / "out" / "sweep.csv")
    assert len(frame) == 2
    assert frame["log10_lambda"].tolist() == pytest.approx([-7.0, -5.0])


def test_compare_basis(tmp_path: Path) -> None:
    code = main(
        [
            "compare-basis",
            "--recipe",
            "lorenz-main",
            *SMALL_FIT,
            "--set",
            "simulation.T=5",
            *_out(tmp_path),
        ]
    )
    assert code == 0
    frame = pd.read_csv(tmp_path / "out" / "compare_basis.csv")
    assert frame["basis"].tolist() == ["linear+rbf", "polynomial"]
    assert (tmp_path / "out" / "model-linear-rbf.json").exists()
    assert (tmp_path / "out" / "model-polynomial.json").exists()


def test_unknown_recipe_is_a_config_error(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    assert main(["fit", "--recipe", "lorenz-max", *_out(tmp_path)]) == 2
    assert "Available recipes" in capsys.readouterr().err


def test_missing_csv_is_a_data_error(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(
        [
            "fit",
            "--set",
            "data.source=csv",
            "--set",
            f"data.path={tmp_path / 'missing.csv'}",
            *_out(tmp_path),
        ]
    )
    assert code == 3
    assert "load:" in capsys.readouterr().err


def test_empty_selection_reports_stage(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(
        [
            "fit",
            "--set",
            "data.T=1",
            "--set",
            "data.transient=0",
            "--set",
            "sampling.fraction=0.00001",
            *_out(tmp_path),
        ]
    )
    assert code == 3
    assert "odeforge fit: sample:" in capsys.readouterr().err


def test_missing_model_is_a_data_error(tmp_path: Path) -> None:
    code = main(["simulate", "--model", str(tmp_path / "none.json"), *_out(tmp_path)])
    assert code == 3


def test_escape_is_a_numerical_failure(
    decay_model_file: Path,
    tmp_path: Path,
    mocker: MockerFixture,
    capsys: pytest.CaptureFixture[str],
) -> None:
    mocker.patch(
        "odeforge.cli.integrate", side_effect=TrajectoryEscapeError(1.5, 100.0)
    )
    code = main(["simulate", "--model", str(decay_model_file), *_out(tmp_path)])
    assert code == 4
    assert "simulate: Trajectory left the ball" in capsys.readouterr().err


def test_unexpected_failure(
    decay_model_file: Path, tmp_path: Path, mocker: MockerFixture
) -> None:
    mocker.patch("odeforge.cli.integrate", side_effect=RuntimeError("boom"))
    code = main(["simulate", "--model", str(decay_model_file), *_out(tmp_path)])
    assert code == 1



def _read_json(path: Path) -> dict[str, Any]:
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture
def exploding_model_file(tmp_path: Path) -> Path:
    """dX/dt = 500 X, which leaves the 1e6 ball within a few steps."""
    beta = np.hstack([np.zeros((3, 1)), 500.0 * np.eye(3)])
    model = OdeModel(
        spec=BasisSpec.polynomial(3, 1),
        coeffs=CoefficientSet(beta, 1e-8),
        scaling=ScalingParams.shared(0.0, 1.0, 3),
        meta=ModelMeta(tau=0.13, dt=0.005, lam=1e-8, x0=(1.0, 1.0, 1.0)),
    )
    return save_model(model, tmp_path / "exploding.json")


def test_diagnose_flags_escaping_model(
    exploding_model_file: Path, tmp_path: Path
) -> None:
    code = main(
        [
            "diagnose",
            "--model",
            str(exploding_model_file),
            "--set",
            "simulation.T=5",
            "--set",
            "data.transient=1",
            "--set",
            "diagnostics.lyapunov_T=5",
            "--set",
            "diagnostics.transient=0",
            "--set",
            "diagnostics.valid_horizon=1",
            "--set",
            "diagnostics.valid_starts=2",
            "--set",
            "diagnostics.reference_T=5",
            *_out(tmp_path),
        ]
    )
    assert code == 0
    out = tmp_path / "out"
    report = _read_json(out / "diagnostics.json")
    assert report["degraded_delay_structure"] is True
    assert report["simulation_escaped"] is True
    assert report["escape_time"] < 0.05
    assert report["delay_residual_stds"] == []
    assert set(report["skipped"]) == {"delay_residuals", "delay_alignment", "lyapunov"}
    assert report["lyapunov_exponents"] is None
    assert report["area_diff"] is not None
    assert report["fixed_points"][0]["classification"] == "unknown"
    assert (out / "densities.csv").exists()
    assert not (out / "delay_alignment.csv").exists()


def _small_recipe_run(recipe: str) -> list[str]:
    return [
        "--recipe",
        recipe,
        "--set",
        "data.T=30",
        "--set",
        "data.transient=5",
        "--set",
        "sampling.fraction=0.2",
    ]


def test_lorenz_poly8_recipe_fits(tmp_path: Path) -> None:
    code = main(["fit", *_small_recipe_run("lorenz-poly8"), *_out(tmp_path), "-q"])
    assert code == 0
    report = _read_json(tmp_path / "out" / "fit_report.json")
    assert report["basis"] == "polynomial"
    assert report["features"] == 165
    assert report["centers"] == 0
    assert report["lam"] == pytest.approx(10**-6.2)


def test_lorenz_d4_recipe_fits_and_simulates(tmp_path: Path) -> None:
    small = [
        *_small_recipe_run("lorenz-d4"),
        "--set",
        "basis.delta_grid=1.0",
        "--set",
        "basis.m=2",
        *_out(tmp_path),
    ]
    assert main(["fit", *small, "-q"]) == 0
    report = _read_json(tmp_path / "out" / "fit_report.json")
    assert report["config"]["embedding"]["D"] == 4
    assert len(report["residual_norms"]) == 4
    assert main(["simulate", *small, "--T", "1", "-q"]) == 0
    frame = pd.read_csv(tmp_path / "out" / "trajectory.csv")
    assert list(frame.columns) == ["t", "X1", "X2", "X3", "X4"]


def test_fluid_small_recipe_runs_on_csv(tmp_path: Path) -> None:
    t = 0.05 * np.arange(3000)
    energy = np.sin(0.3 * t) + 0.5 * np.sin(0.71 * t)
    csv = save_series(ScalarSeries(energy, dt=0.05, label="energy"), tmp_path / "e.csv")
    run = ["--recipe", "fluid-small", "--set", f"data.path={csv}", *_out(tmp_path)]
    assert main(["fit", *run, "-q"]) == 0
    report = _read_json(tmp_path / "out" / "fit_report.json")
    assert len(report["residual_norms"]) == 8

    code = main(
        [
            "diagnose",
            *run,
            "--set",
            "simulation.T=20",
            "--set",
            "diagnostics.valid_horizon=5",
            "-q",
        ]
    )
    assert code == 0
    diagnostics = _read_json(tmp_path / "out" / "diagnostics.json")
    assert len(diagnostics["delay_residual_stds"]) == 7
    assert all(np.isfinite(diagnostics["delay_residual_stds"]))
    assert diagnostics["lyapunov_exponents"] is None
    assert diagnostics["fixed_points"] == []


@pytest.fixture(scope="module")
def lorenz_main_run(tmp_path_factory: pytest.TempPathFactory) -> Path:
    out = tmp_path_factory.mktemp("lorenz-main")
    assert main(["fit", "--recipe", "lorenz-main", "--output-dir", str(out), "-q"]) == 0
    return out


@pytest.mark.slow
def test_full_lorenz_fit(lorenz_main_run: Path) -> None:
    report = _read_json(lorenz_main_run / "fit_report.json")
    assert report["mean_error"] < 0.01
    assert 1200 <= report["centers"] <= 2500


@pytest.mark.slow
def test_full_lorenz_diagnostics(lorenz_main_run: Path, tmp_path: Path) -> None:
    code = main(
        [
            "diagnose",
            "--recipe",
            "lorenz-main",
            "--model",
            str(lorenz_main_run / "model.json"),
            "--set",
            "simulation.T=5000",
            "--set",
            "diagnostics.fixed_points=false",
            *_out(tmp_path),
            "-q",
        ]
    )
    assert code == 0
    report = _read_json(tmp_path / "out" / "diagnostics.json")
    first, second, _ = report["lyapunov_exponents"]
    assert 0.80 <= first <= 1.00
    assert abs(second) <= 0.02
    assert max(report["delay_residual_stds"]) <= 0.01
    assert report["area_diff"] <= 0.02
    assert len(report["valid_times"]) >= 10
    assert report["median_valid_time"] >= 2.0
    assert report["degraded_delay_structure"] is False


@pytest.mark.slow
def test_full_lorenz_fixed_points_and_ghosts(
    lorenz_main_run: Path, tmp_path: Path
) -> None:
    model = ["--recipe", "lorenz-main", "--model", str(lorenz_main_run / "model.json")]
    assert main(["fixed-points", *model, *_out(tmp_path), "-q"]) == 0
    points = _read_json(tmp_path / "out" / "fixed_points.json")["fixed_points"]
    for target in (-8.485, 0.0, 8.485):
        gaps = [np.max(np.abs(np.array(p["location"]) - target)) for p in points]
        matches = [p for p, gap in zip(points, gaps, strict=True) if gap <= 0.15]
        assert len(matches) == 1
        if target != 0.0:
            real = np.array(matches[0]["eigenvalues_real"])
            imag = np.array(matches[0]["eigenvalues_imag"])
            pair = real[imag != 0.0]
            assert len(pair) == 2
            assert np.all((pair > 0.0) & (pair < 0.5))
            assert real[imag == 0.0].min() < -5.0
    ghosts = [p for p in points if p["classification"] == "ghost"]
    assert sum(p["unstable_count"] == 1 for p in ghosts) >= 2

    code = main(["basin", *model, "--resolution", "100", *_out(tmp_path), "-q"])
    assert code == 0
    basin = _read_json(tmp_path / "out" / "basin.json")
    assert 0.0 < basin["escaped_fraction"] < 1.0
    assert sum(g["near_boundary"] for g in basin["ghosts"]) >= 2


@pytest.mark.slow
def test_poly8_error_exceeds_rbf(lorenz_main_run: Path, tmp_path: Path) -> None:
    assert main(["fit", "--recipe", "lorenz-poly8", *_out(tmp_path), "-q"]) == 0
    poly = _read_json(tmp_path / "out" / "fit_report.json")
    rbf = _read_json(lorenz_main_run / "fit_report.json")
    assert poly["mean_error"] >= 5.0 * rbf["mean_error"]


@pytest.mark.slow
def test_full_sweep_selects_main_lambda(tmp_path: Path) -> None:
    code = main(
        [
            "sweep-lambda",
            "--recipe",
            "lorenz-main",
            "--set",
            "diagnostics.sweep_T=500",
            *_out(tmp_path),
            "-q",
        ]
    )
    assert code == 0
    sweep = _read_json(tmp_path / "out" / "sweep.json")
    assert sweep["selected"] == pytest.approx(1e-7)
    rows = {round(np.log10(row["lambda"]), 1): row for row in sweep["rows"]}
    best, worst = rows[-7.0], rows[-3.9]
    assert worst["failed"] or (
        worst["mean_residual_std"] >= 5.0 * best["mean_residual_std"]
    )
