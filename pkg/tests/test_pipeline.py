import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from odeforge.basis import BasisKind
from odeforge.config import RunConfig, load_config
from odeforge.errors import ConfigError, DataError, NumericalError
from odeforge.model import ModelMeta, OdeModel
from odeforge.pipeline import (
    SERIES_FILENAME,
    SERIES_SIDECAR,
    fit_from_prepared,
    initial_state,
    obtain_series,
    prepare_dataset,
    sha256_file,
    stage,
    write_generated_series,
)
from odeforge.timeseries import ScalarSeries, save_series

SMALL_RUN = [
    "data.T=30",
    "data.transient=5",
    "sampling.fraction=0.2",
    "basis.delta_grid=1.0",
    "basis.poly_degree=3",
]


@pytest.fixture(scope="module")
def small_config() -> RunConfig:
    return load_config(recipe="lorenz-main", overrides=SMALL_RUN)


def test_stage_tags_errors() -> None:
    with pytest.raises(DataError) as info:
        with stage("sample"):
            raise DataError("nothing selected")
    assert str(info.value) == "sample: nothing selected"


def test_stage_keeps_inner_tag() -> None:
    with pytest.raises(DataError) as info:
        with stage("outer"):
            with stage("inner"):
                raise DataError("boom")
    assert info.value.stage == "inner"


def test_stage_wraps_linear_algebra_errors() -> None:
    with pytest.raises(NumericalError, match="fit: Singular matrix"):
        with stage("fit"):
            raise np.linalg.LinAlgError("Singular matrix")


def test_sha256_file(tmp_path: Path) -> None:
    path = tmp_path / "blob.bin"
    path.write_bytes(b"odeforge" * 1000)
    assert sha256_file(path) == hashlib.sha256(b"odeforge" * 1000).hexdigest()


def test_generated_series_and_sidecar(
    small_config: RunConfig, tmp_path: Path
) -> None:
    series, path = write_generated_series(small_config, tmp_path)
    assert path == tmp_path / SERIES_FILENAME
    assert len(series) == 6001
    sidecar = json.loads((tmp_path / SERIES_SIDECAR).read_text(encoding="utf-8"))
    assert sidecar["samples"] == 6001
    assert sidecar["sha256"] == sha256_file(path)
    assert sidecar["x0"] == [1.0, 1.0, 1.0]


def test_generated_series_is_byte_identical(
    small_config: RunConfig, tmp_path: Path
) -> None:
    _, first = write_generated_series(small_config, tmp_path / "a")
    _, second = write_generated_series(small_config, tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()


def test_minimal_generated_series(tmp_path: Path) -> None:
    config = load_config(
        recipe="lorenz-train", overrides=["data.T=0.01", "data.transient=1"]
    )
    series, path = write_generated_series(config, tmp_path)
    assert len(series) == 3
    assert len(path.read_text(encoding="utf-8").splitlines()) == 4


def test_obtain_series_reads_csv(tmp_path: Path) -> None:
    series = ScalarSeries(np.sin(np.arange(50.0)), dt=0.05, label="E3")
    csv = save_series(series, tmp_path / "e.csv")
    config = load_config(
        overrides=[
            "data.source=csv",
            f"data.path={csv}",
            "data.column=2",
            "data.dt=0.05",
        ]
    )
    series, path = obtain_series(config, tmp_path / "out")
    assert path == csv
    assert len(series) == 50
    assert series.dt == 0.05


def test_obtain_series_needs_path(tmp_path: Path) -> None:
    config = load_config(overrides=["data.source=csv"])
    with pytest.raises(ConfigError, match="needs data.path"):
        obtain_series(config, tmp_path)


def test_obtain_series_missing_file_is_tagged(tmp_path: Path) -> None:
    missing = tmp_path / "none.csv"
    config = load_config(overrides=["data.source=csv", f"data.path={missing}"])
    with pytest.raises(DataError) as info:
        obtain_series(config, tmp_path)
    assert info.value.stage == "load"


def test_prepare_dataset(small_config: RunConfig, tmp_path: Path) -> None:
    series, _ = obtain_series(small_config, tmp_path)
    prepared = prepare_dataset(small_config, series)
    assert prepared.trajectory.D == 3
    assert len(prepared.trajectory) == len(series) - 52
    interior = len(prepared.trajectory) - 6
    assert prepared.dataset.n == int(0.2 * interior)
    assert prepared.dataset.scaling.mean[0] == pytest.approx(np.mean(series.values))


def test_empty_selection_is_tagged(tmp_path: Path) -> None:
    config = load_config(
        overrides=["data.T=1", "data.transient=0", "sampling.fraction=0.00001"]
    )
    series, _ = obtain_series(config, tmp_path)
    with pytest.raises(DataError) as info:
        prepare_dataset(config, series)
    assert info.value.stage == "sample"


@pytest.mark.parametrize("kind", list(BasisKind))
def test_fit_from_prepared(
    kind: BasisKind, small_config: RunConfig, tmp_path: Path
) -> None:
    series, path = obtain_series(small_config, tmp_path)
    prepared = prepare_dataset(small_config, series)
    digest = sha256_file(path)
    result = fit_from_prepared(small_config, prepared, kind=kind, series_sha256=digest)
    summary = result.summary()
    assert summary["basis"] == kind.value
    assert summary["n"] == prepared.dataset.n
    assert summary["features"] == result.model.spec.feature_count
    assert np.isfinite(summary["mean_error"])
    assert summary["mean_error"] < 1.0
    meta = result.model.meta
    assert meta.tau_steps == 26
    assert meta.lam == 1e-7
    assert meta.series_sha256 == digest
    np.testing.assert_array_equal(meta.x0, prepared.trajectory.states[0])
    if kind is BasisKind.POLYNOMIAL:
        assert summary["centers"] == 0
        assert summary["features"] == 20


def test_initial_state_policies(small_config: RunConfig, decay_model: OdeModel) -> None:
    embedded = initial_state(small_config, decay_model)
    np.testing.assert_array_equal(embedded, [1.0, 1.0, 1.0])
    explicit = load_config(
        overrides=["simulation.x0_policy=explicit", "simulation.x0=2,3,4"]
    )
    np.testing.assert_array_equal(initial_state(explicit, decay_model), [2.0, 3.0, 4.0])


def test_initial_state_errors(small_config: RunConfig, decay_model: OdeModel) -> None:
    bare = OdeModel(
        decay_model.spec, decay_model.coeffs, decay_model.scaling, ModelMeta()
    )
    with pytest.raises(ConfigError, match="no embedded initial state"):
        initial_state(small_config, bare)
    short = load_config(
        overrides=["simulation.x0_policy=explicit", "simulation.x0=2,3"]
    )
    with pytest.raises(ConfigError, match="2 components"):
        initial_state(short, decay_model)
