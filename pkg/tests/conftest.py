from pathlib import Path

import numpy as np
import pytest

from odeforge.basis import BasisSpec
from odeforge.model import ModelMeta, OdeModel, lorenz_observable, save_model
from odeforge.regress import CoefficientSet
from odeforge.timeseries import RegressionDataset, ScalarSeries, ScalingParams


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run full-length Lorenz runs",
    )


def pytest_collection_modifyitems(
    config: pytest.Config, items: list[pytest.Item]
) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def lorenz_series() -> ScalarSeries:
    return lorenz_observable(T=60.0, dt=0.005, transient=10.0)


@pytest.fixture
def identity_scaling() -> ScalingParams:
    return ScalingParams.shared(0.0, 1.0, 3)


@pytest.fixture
def decay_dataset(identity_scaling: ScalingParams) -> RegressionDataset:
    """Samples of dX/dt = -X in three dimensions."""
    rng = np.random.default_rng(7)
    states = rng.uniform(-1.0, 1.0, size=(400, 3))
    return RegressionDataset(
        inputs=states,
        targets=-states,
        scaling=identity_scaling,
        source_indices=np.arange(len(states)),
    )


@pytest.fixture
def decay_model(identity_scaling: ScalingParams) -> OdeModel:
    """dX/dt = -X written out as a degree-1 polynomial model."""
    spec = BasisSpec.polynomial(3, 1)
    beta = np.hstack([np.zeros((3, 1)), -np.eye(3)])
    return OdeModel(
        spec=spec,
        coeffs=CoefficientSet(beta, 1e-8),
        scaling=identity_scaling,
        meta=ModelMeta(tau=0.13, dt=0.005, lam=1e-8, x0=(1.0, 1.0, 1.0)),
    )


@pytest.fixture
def decay_model_file(decay_model: OdeModel, tmp_path: Path) -> Path:
    return save_model(decay_model, tmp_path / "model.json")
