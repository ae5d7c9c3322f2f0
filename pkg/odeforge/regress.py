"""
Ridge regression of standardized derivatives on basis features.

Each component k of F is fitted independently by minimizing

    L(b) = (1 / 2n) ||y_k - A b||^2 + (lam / 2) ||b||^2,

whose minimizer is b = (A^T A + n lam I)^{-1} A^T y_k. Every coefficient,
the intercept included, is penalized. The D component fits share the
feature matrix A and one factorization of the regularized Gram matrix.
"""

import logging
from collections import namedtuple
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import scipy.linalg

from .basis import BasisSpec, design_matrix
from .errors import ConfigError, DataError, SchemaError, SingularSystemError
from .timeseries import RegressionDataset

if TYPE_CHECKING:
    from .model import ModelMeta, OdeModel

logger = logging.getLogger(__name__)

RegressionErrorResult = namedtuple(
    "RegressionErrorResult", ["errors", "mean", "excluded"]
)

# Samples with a smaller target norm are left out of relative errors.
MIN_TARGET_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class RidgeProblem:
    """
    One least-squares target with an l2 penalty.

    Attributes:
        A (np.ndarray): Feature matrix, n samples by F features.
        y (np.ndarray): Targets, one per sample.
        lam (float): Penalty weight; the Gram matrix gains n * lam on its diagonal.
    """

    A: np.ndarray
    y: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if A.shape[0] < 1 or A.shape[1] < 1:
            raise ConfigError(
                f"Ridge problem needs n >= 1 and F >= 1, got A of shape {A.shape}"
            )
        if y.shape[0] != A.shape[0]:
            raise DataError(f"A has {A.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise DataError("Ridge problem entries must all be finite")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def F(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """
    Fitted coefficients, one row per vector-field component.

    Attributes:
        beta (np.ndarray): D by F coefficients in feature order.
        lam (float): The regularization they were fitted with.
        fit_stats (np.ndarray): Residual norm ||y_k - A b_k|| per component.
    """

    beta: np.ndarray
    lam: float
    fit_stats: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "fit_stats", np.asarray(self.fit_stats, dtype=float))

    @property
    def D(self) -> int:
        return self.beta.shape[0]

    @property
    def feature_count(self) -> int:
        return self.beta.shape[1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "coefficients": self.beta.tolist(),
            "residual_norms": self.fit_stats.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CoefficientSet":
        return cls(
            beta=np.array(data["coefficients"], dtype=float),
            lam=float(data["lambda"]),
            fit_stats=np.array(data.get("residual_norms", []), dtype=float),
        )


class RidgeSolver:
    """Factor A^T A + n lam I once, then solve for any number of targets."""

    def __init__(self, A: np.ndarray, lam: float) -> None:
        if not lam >= 0:
            raise ConfigError(f"lambda must be non-negative, got {lam}")
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.lam = float(lam)
        n, F = self.A.shape
        self.gram = self.A.T @ self.A + n * self.lam * np.eye(F)
        self._factor: tuple[np.ndarray, bool] | None = None

        if self.lam == 0:
            rank = int(np.linalg.matrix_rank(self.A))
            if rank < F:
                raise SingularSystemError(
                    f"A^T A is singular (rank {rank} < F={F}) and lambda=0 adds "
                    "no regularization; use lambda > 0"
                )
        try:
            self._factor = scipy.linalg.cho_factor(self.gram, lower=False)
        except np.linalg.LinAlgError:
            logger.warning(
                "Cholesky factorization of the regularized Gram matrix failed "
                "(lambda=%g); falling back to a dense solve",
                self.lam,
            )

    def solve(self, y: np.ndarray) -> np.ndarray:
        rhs = self.A.T @ np.asarray(y, dtype=float)
        if self._factor is not None:
            return scipy.linalg.cho_solve(self._factor, rhs)
        try:
            return scipy.linalg.solve(self.gram, rhs, assume_a="sym")
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f"Regularized normal equations are singular at lambda={self.lam:g}; "
                "increase lambda"
            ) from exc


def ridge_fit(problem: RidgeProblem) -> np.ndarray:
    return RidgeSolver(problem.A, problem.lam).solve(problem.y)


def normal_equation_residual(
    A: np.ndarray, y: np.ndarray, lam: float, beta: np.ndarray
) -> float:
    """||(A^T A + n lam I) beta - A^T y|| relative to ||A^T y||."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    rhs = A.T @ np.asarray(y, dtype=float)
    lhs = A.T @ (A @ beta) + A.shape[0] * lam * beta
    scale = float(np.linalg.norm(rhs))
    return float(np.linalg.norm(lhs - rhs)) / (scale if scale > 0 else 1.0)


def fit_model(
    dataset: RegressionDataset,
    spec: BasisSpec,
    lam: float,
    meta: "ModelMeta | None" = None,
) -> "OdeModel":
    """
    Fit one ridge model per derivative component and package an OdeModel.

    Args:
        dataset: Standardized (state, derivative) samples.
        spec: The basis; its dimension must match the dataset.
        lam: The ridge parameter, > 0.
        meta: Provenance stored with the model.

    Raises:
        ConfigError: On a dimension mismatch or lam <= 0.
        SingularSystemError: Tagged with the failing component index.
    """
    from .model import ModelMeta, OdeModel

    if spec.D != dataset.D:
        raise ConfigError(
            f"Basis is {spec.D}-dimensional but the dataset has D={dataset.D}"
        )
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")

    A = design_matrix(dataset.inputs, spec)
    logger.info(
        "Fitting %d components on n=%d samples with F=%d features (lambda=%g)",
        dataset.D,
        dataset.n,
        spec.feature_count,
        lam,
    )
    solver = RidgeSolver(A, lam)
    beta = np.empty((dataset.D, spec.feature_count))
    for k in range(dataset.D):
        try:
            beta[k] = solver.solve(dataset.targets[:, k])
        except SingularSystemError as exc:
            raise SingularSystemError(f"component {k + 1}: {exc}") from exc
    residuals = np.linalg.norm(dataset.targets - A @ beta.T, axis=0)
    logger.debug("Per-component residual norms: %s", residuals)

    return OdeModel(
        spec=spec,
        coeffs=CoefficientSet(beta, lam, residuals),
        scaling=dataset.scaling,
        meta=meta if meta is not None else ModelMeta(lam=lam),
    )


def regression_error(
    model: "OdeModel", dataset: RegressionDataset
) -> RegressionErrorResult:
    """Per-sample ||F(X_i) - y_i|| / ||y_i|| in standardized space, and their mean."""
    if model.D != dataset.D or not model.scaling.matches(dataset.scaling):
        raise SchemaError(
            "Model and dataset were standardized differently; regression errors "
            "are only comparable under identical scaling"
        )
    predicted = model.rhs_standardized(dataset.inputs)
    target_norms = np.linalg.norm(dataset.targets, axis=1)
    keep = target_norms >= MIN_TARGET_NORM
    if not np.any(keep):
        raise DataError(
            "Every sample has a vanishing derivative; relative error is undefined"
        )
    misfit = np.linalg.norm(predicted[keep] - dataset.targets[keep], axis=1)
    errors = misfit / target_norms[keep]
    excluded = int(np.count_nonzero(~keep))
    return RegressionErrorResult(errors, float(np.mean(errors)), excluded)
