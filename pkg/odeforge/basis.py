"""
Feature dictionaries for the right-hand side F(X).

Two kinds of basis are supported:

- `linear+rbf`: a constant, the D linear terms and J Gaussian radial basis
  functions phi_j(X) = exp(-||X - c_j||^2 / sigma^2) whose centers c_j sit on
  a cubic lattice of spacing delta_grid. Only lattice nodes with a data point
  within (m - 1) * delta_grid are kept, and
  sigma^2 = ((m - 1) * delta_grid)^2 / (-ln p).
- `polynomial`: every monomial of total degree <= poly_degree, in graded
  lexicographic order (degree 0, then degree 1 as X_1..X_D, then
  X_1^2, X_1 X_2, ..., X_D^2, and so on).

Everything here works in standardized coordinates; the lattice is anchored
at integer multiples of delta_grid, so the origin is always a lattice node.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from typing import Any, Final

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import CenterCapExceededError, ConfigError, DataError
from .timeseries import RegressionDataset

logger = logging.getLogger(__name__)

DEFAULT_M: Final = 3
DEFAULT_P: Final = 0.1
DEFAULT_MAX_CENTERS: Final = 1_000_000
POLYNOMIAL_ORDERING: Final = "graded-lex"

# Rows per block when evaluating features for many states at once.
_CHUNK_ROWS: Final = 2048
# Candidate lattice nodes examined per block while pruning.
_CHUNK_NODES: Final = 1 << 20


class BasisKind(StrEnum):
    LINEAR_RBF = "linear+rbf"
    POLYNOMIAL = "polynomial"


def rbf_sigma2(delta_grid: float, m: int = DEFAULT_M, p: float = DEFAULT_P) -> float:
    if not delta_grid > 0:
        raise ConfigError(f"delta_grid must be positive, got {delta_grid}")
    if m < 2:
        raise ConfigError(f"m must be an integer >= 2, got {m}")
    if not 0.0 < p < 1.0:
        raise ConfigError(f"p must lie strictly between 0 and 1, got {p}")
    return ((m - 1) * delta_grid) ** 2 / (-math.log(p))


@dataclass(frozen=True, eq=False)
class RbfGrid:
    centers: np.ndarray
    sigma2: float
    delta_grid: float
    m: int = DEFAULT_M
    p: float = DEFAULT_P

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim != 2 or len(centers) == 0:
            raise ConfigError(
                f"An RBF grid needs a non-empty (J, D) array of centers, got shape "
                f"{centers.shape}"
            )
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        object.__setattr__(self, "centers", centers)

    @property
    def J(self) -> int:
        return len(self.centers)

    @property
    def D(self) -> int:
        return self.centers.shape[1]

    @property
    def radius(self) -> float:
        return (self.m - 1) * self.delta_grid

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta_grid": self.delta_grid,
            "m": self.m,
            "p": self.p,
            "sigma2": self.sigma2,
            "centers": self.centers.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RbfGrid":
        return cls(
            centers=np.array(data["centers"], dtype=float),
            sigma2=float(data["sigma2"]),
            delta_grid=float(data["delta_grid"]),
            m=int(data["m"]),
            p=float(data["p"]),
        )


def polynomial_exponents(dimension: int, degree: int) -> np.ndarray:
    """Exponent vectors of all monomials up to `degree`, graded-lex ordered."""
    rows = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dimension), total):
            rows.append(np.bincount(np.array(combo, dtype=int), minlength=dimension))
    return np.array(rows, dtype=int).reshape(-1, dimension)


@dataclass(frozen=True, eq=False)
class BasisSpec:
    kind: BasisKind
    D: int
    rbf: RbfGrid | None = None
    poly_degree: int | None = None

    def __post_init__(self) -> None:
        if self.D < 1:
            raise ConfigError(f"D must be a positive integer, got {self.D}")
        match self.kind:
            case BasisKind.LINEAR_RBF:
                if self.rbf is None:
                    raise ConfigError("A linear+rbf basis needs an RBF grid")
                if self.rbf.D != self.D:
                    raise ConfigError(
                        f"RBF centers are {self.rbf.D}-dimensional but D={self.D}"
                    )
            case BasisKind.POLYNOMIAL:
                if self.poly_degree is None or self.poly_degree < 1:
                    raise ConfigError(
                        "A polynomial basis needs poly_degree >= 1, "
                        f"got {self.poly_degree}"
                    )
            case _:
                raise ConfigError(
                    f"Unsupported basis kind: {self.kind}. "
                    f"Available kinds: {[k.value for k in BasisKind]}"
                )

    @classmethod
    def linear_rbf(cls, rbf: RbfGrid) -> "BasisSpec":
        return cls(BasisKind.LINEAR_RBF, rbf.D, rbf=rbf)

    @classmethod
    def polynomial(cls, dimension: int, degree: int) -> "BasisSpec":
        return cls(BasisKind.POLYNOMIAL, dimension, poly_degree=degree)

    @cached_property
    def exponents(self) -> np.ndarray:
        if self.poly_degree is None:
            raise ConfigError("Only polynomial bases have monomial exponents")
        return polynomial_exponents(self.D, self.poly_degree)

    @property
    def feature_count(self) -> int:
        match self.kind:
            case BasisKind.LINEAR_RBF:
                assert self.rbf is not None
                return 1 + self.D + self.rbf.J
            case BasisKind.POLYNOMIAL:
                assert self.poly_degree is not None
                return math.comb(self.D + self.poly_degree, self.poly_degree)
            case _:
                raise ConfigError(f"Unsupported basis kind: {self.kind}")

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind.value, "D": self.D}
        match self.kind:
            case BasisKind.LINEAR_RBF:
                assert self.rbf is not None
                data.update(self.rbf.to_dict())
            case BasisKind.POLYNOMIAL:
                data["poly_degree"] = self.poly_degree
                data["ordering"] = POLYNOMIAL_ORDERING
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BasisSpec":
        try:
            kind = BasisKind(data["kind"])
        except ValueError as exc:
            raise ConfigError(
                f"Unsupported basis kind: {data['kind']}. "
                f"Available kinds: {[k.value for k in BasisKind]}"
            ) from exc
        match kind:
            case BasisKind.LINEAR_RBF:
                return cls.linear_rbf(RbfGrid.from_dict(data))
            case BasisKind.POLYNOMIAL:
                ordering = data.get("ordering", POLYNOMIAL_ORDERING)
                if ordering != POLYNOMIAL_ORDERING:
                    raise ConfigError(
                        f"Unsupported monomial ordering '{ordering}'; "
                        f"only '{POLYNOMIAL_ORDERING}' is implemented"
                    )
                return cls.polynomial(int(data["D"]), int(data["poly_degree"]))


def _lattice_offsets(dimension: int, reach: int) -> np.ndarray:
    # Offsets o from a data point's cell floor(x / delta) to lattice nodes that
    # can lie within `reach` lattice units of some point of that cell.
    # Per axis the cell-to-node gap is max(0, o - 1, -o).
    values = np.arange(-reach, reach + 2)
    gaps = np.maximum(0, np.maximum(values - 1, -values)) ** 2
    offsets = np.zeros((1, 0), dtype=np.int64)
    gap_sums = np.zeros(1, dtype=np.int64)
    for _ in range(dimension):
        offsets = np.hstack(
            [
                np.repeat(offsets, len(values), axis=0),
                np.tile(values, len(offsets))[:, None],
            ]
        )
        gap_sums = np.repeat(gap_sums, len(values)) + np.tile(gaps, len(gap_sums))
        keep = gap_sums <= reach**2
        offsets, gap_sums = offsets[keep], gap_sums[keep]
    return offsets


def build_rbf_centers(
    data: RegressionDataset | np.ndarray,
    delta_grid: float,
    m: int = DEFAULT_M,
    p: float = DEFAULT_P,
    max_centers: int = DEFAULT_MAX_CENTERS,
) -> RbfGrid:
    """
    Place RBF centers on the delta_grid lattice around standardized data.

    A lattice node is kept iff some data point lies within Euclidean distance
    (m - 1) * delta_grid of it. Centers come back sorted lexicographically.

    Raises:
        DataError: If there are no data points.
        CenterCapExceededError: If more than `max_centers` nodes qualify.
    """
    points = data.inputs if isinstance(data, RegressionDataset) else np.asarray(data)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise DataError("Cannot place RBF centers without data points")
    sigma2 = rbf_sigma2(delta_grid, m, p)
    radius = (m - 1) * delta_grid
    dimension = points.shape[1]

    cells = np.unique(np.floor(points / delta_grid).astype(np.int64), axis=0)
    offsets = _lattice_offsets(dimension, m - 1)
    tree = cKDTree(points)
    cells_per_block = max(1, _CHUNK_NODES // len(offsets))

    retained: np.ndarray = np.zeros((0, dimension), dtype=np.int64)
    for lo in range(0, len(cells), cells_per_block):
        block = cells[lo : lo + cells_per_block]
        shifted = block[:, None, :] + offsets[None, :, :]
        nodes = np.unique(shifted.reshape(-1, dimension), axis=0)
        distances, _ = tree.query(
            nodes * delta_grid, k=1, distance_upper_bound=radius * (1 + 1e-9)
        )
        found = nodes[np.isfinite(distances)]
        retained = np.unique(np.vstack([retained, found]), axis=0)
        if len(retained) > max_centers:
            suggested = delta_grid * (len(retained) / max_centers) ** (1 / dimension)
            raise CenterCapExceededError(len(retained), max_centers, suggested)

    logger.info(
        "Placed %d RBF centers (delta_grid=%g, m=%d, p=%g, sigma2=%.6g)",
        len(retained),
        delta_grid,
        m,
        p,
        sigma2,
    )
    return RbfGrid(retained * delta_grid, sigma2, delta_grid, m, p)


def _check_dimension(states: np.ndarray, spec: BasisSpec) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != spec.D:
        raise DataError(
            f"Expected states with {spec.D} components, got shape {states.shape}"
        )
    return states


def _rbf_values(states: np.ndarray, rbf: RbfGrid) -> np.ndarray:
    return np.exp(-cdist(states, rbf.centers, "sqeuclidean") / rbf.sigma2)


def design_matrix(states: np.ndarray, spec: BasisSpec) -> np.ndarray:
    """Feature rows for a batch of standardized states, shape (n, F)."""
    states = _check_dimension(states, spec)
    out = np.empty((len(states), spec.feature_count))
    for lo in range(0, len(states), _CHUNK_ROWS):
        block = states[lo : lo + _CHUNK_ROWS]
        rows = slice(lo, lo + len(block))
        match spec.kind:
            case BasisKind.LINEAR_RBF:
                assert spec.rbf is not None
                out[rows, 0] = 1.0
                out[rows, 1 : 1 + spec.D] = block
                out[rows, 1 + spec.D :] = _rbf_values(block, spec.rbf)
            case BasisKind.POLYNOMIAL:
                out[rows] = np.prod(
                    block[:, None, :] ** spec.exponents[None, :, :], axis=2
                )
    return out


def eval_features(state: np.ndarray, spec: BasisSpec) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.ndim != 1:
        raise DataError(f"Expected a single state vector, got shape {state.shape}")
    return design_matrix(state[None, :], spec)[0]


def feature_jacobians(states: np.ndarray, spec: BasisSpec) -> np.ndarray:
    """d(feature_f)/d(X_d) for a batch of states, shape (n, F, D)."""
    states = _check_dimension(states, spec)
    n, dimension = states.shape
    out = np.zeros((n, spec.feature_count, dimension))
    match spec.kind:
        case BasisKind.LINEAR_RBF:
            rbf = spec.rbf
            assert rbf is not None
            out[:, 1 : 1 + dimension, :] = np.eye(dimension)
            for lo in range(0, n, _CHUNK_ROWS):
                block = states[lo : lo + _CHUNK_ROWS]
                phi = _rbf_values(block, rbf)
                diff = block[:, None, :] - rbf.centers[None, :, :]
                out[lo : lo + len(block), 1 + dimension :, :] = (
                    -2.0 / rbf.sigma2 * diff * phi[:, :, None]
                )
        case BasisKind.POLYNOMIAL:
            exponents = spec.exponents
            for d in range(dimension):
                lowered = exponents.copy()
                lowered[:, d] = np.maximum(lowered[:, d] - 1, 0)
                monomials = np.prod(states[:, None, :] ** lowered[None, :, :], axis=2)
                out[:, :, d] = exponents[:, d] * monomials
    return out


def eval_feature_jacobian(state: np.ndarray, spec: BasisSpec) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.ndim != 1:
        raise DataError(f"Expected a single state vector, got shape {state.shape}")
    return feature_jacobians(state[None, :], spec)[0]
