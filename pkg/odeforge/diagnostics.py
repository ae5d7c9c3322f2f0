"""
Checks that a learned model reproduces the source system.

Included here:
- delay structure: a delay-coordinate model must keep X_d(t) = X_{d+1}(t + tau)
  along its own trajectories (`delay_residuals`, `delay_alignment`);
- invariant densities and their L1 area difference;
- the Lyapunov spectrum by tangent-map evolution with periodic QR
  re-orthonormalization;
- fixed points by batched Newton iteration, with eigenvalues and an
  embedded/ghost classification against a reference attractor;
- escape-time basin maps on a 2-D plane through state space;
- short-term valid time of model forecasts;
- the regularization sweep that picks lambda by delay-structure quality.
"""

import logging
from collections import namedtuple
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, Final

import numpy as np
from scipy.spatial import cKDTree
from tqdm import tqdm

from .basis import BasisSpec
from .errors import ConfigError, DataError, OdeforgeError, TrajectoryEscapeError
from .model import (
    DEFAULT_ESCAPE_RADIUS,
    VectorField,
    escape_times,
    integrate,
    step_count,
)
from .regress import fit_model
from .timeseries import RegressionDataset, ScalarSeries, StateTrajectory, delay_embed

logger = logging.getLogger(__name__)

DEFAULT_BINS: Final = 100
DEFAULT_VALID_THRESHOLD: Final = 0.4
DEFAULT_GHOST_EPS: Final = 0.5
DEFAULT_SEED_BOUNDS: Final = (-20.0, 20.0)
DEFAULT_BASIN_PLANE: Final = ((1.0, 1.0, 1.0), (1.0, -1.0, 0.0))
DEFAULT_BASIN_REGION: Final = (-20.0, 20.0, -20.0, 20.0)

DelayResidualReport = namedtuple(
    "DelayResidualReport", ["residuals", "densities", "stds"]
)
LyapunovResult = namedtuple(
    "LyapunovResult", ["exponents", "T_used", "renorm_interval"]
)
EnsembleValidTimes = namedtuple("EnsembleValidTimes", ["times", "median"])
LambdaSweepResult = namedtuple("LambdaSweepResult", ["rows", "selected"])


@dataclass(frozen=True, eq=False)
class Density:
    bin_edges: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        if edges.ndim != 1 or len(edges) != len(probs) + 1:
            raise DataError(
                f"A density needs one more edge than bins, got {len(edges)} edges "
                f"and {len(probs)} bins"
            )
        if np.any(probs < 0):
            raise DataError("Density probabilities must be non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probabilities", probs)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def integral(self) -> float:
        return float(np.sum(self.probabilities * self.widths))


def density_histogram(
    values: np.ndarray,
    bins: int = DEFAULT_BINS,
    value_range: tuple[float, float] | None = None,
) -> Density:
    values = np.asarray(values, dtype=float).reshape(-1)
    if len(values) == 0:
        raise DataError("Cannot build a density from no values")
    if not np.all(np.isfinite(values)):
        raise DataError("Density input must be finite")
    if bins < 1:
        raise ConfigError(f"bins must be positive, got {bins}")
    lo, hi = value_range if value_range is not None else (values.min(), values.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    probabilities, edges = np.histogram(values, bins=bins, range=(lo, hi), density=True)
    return Density(edges, probabilities)


def matched_densities(
    a: np.ndarray, b: np.ndarray, bins: int = DEFAULT_BINS
) -> tuple[Density, Density]:
    """Histograms of two series on shared edges spanning both."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(a) == 0 or len(b) == 0:
        raise DataError("Cannot compare densities of empty series")
    value_range = (min(a.min(), b.min()), max(a.max(), b.max()))
    return (
        density_histogram(a, bins, value_range),
        density_histogram(b, bins, value_range),
    )


def density_area_diff(a: Density, b: Density) -> float:
    if not np.array_equal(a.bin_edges, b.bin_edges):
        raise DataError("Densities must share identical bin edges to be compared")
    return float(np.sum(np.abs(a.probabilities - b.probabilities) * a.widths))


def delay_residuals(
    traj: StateTrajectory, tau_steps: int, bins: int = DEFAULT_BINS
) -> DelayResidualReport:
    """Residuals X_d(t) - X_{d+1}(t + tau) for each adjacent pair of components."""
    if tau_steps < 1:
        raise ConfigError(f"tau_steps must be positive, got {tau_steps}")
    if len(traj) <= tau_steps:
        raise DataError(
            f"Trajectory of length {len(traj)} is shorter than tau ({tau_steps} steps)"
        )
    states = traj.states
    residuals = [
        states[:-tau_steps, d] - states[tau_steps:, d + 1] for d in range(traj.D - 1)
    ]
    densities = [density_histogram(r, bins) for r in residuals]
    stds = [float(np.std(r)) for r in residuals]
    return DelayResidualReport(residuals, densities, stds)


def delay_alignment(
    traj: StateTrajectory, tau_steps: int, t_max: float | None = None
) -> np.ndarray:
    """Columns X_i(t + (i - 1) tau); they coincide when the delay structure holds."""
    shift = (traj.D - 1) * tau_steps
    if len(traj) <= shift:
        raise DataError(
            f"Trajectory of length {len(traj)} is too short to align "
            f"{traj.D} components"
        )
    rows = len(traj) - shift
    if t_max is not None:
        rows = min(rows, int(np.floor(t_max / traj.dt + 1e-9)) + 1)
    return np.stack(
        [traj.states[d * tau_steps : d * tau_steps + rows, d] for d in range(traj.D)],
        axis=1,
    )


def _tangent_step(
    system: VectorField, x: np.ndarray, Q: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    # RK4 on the coupled system dx/dt = F(x), dQ/dt = J(x) Q.
    k1x, k1q = system.rhs(x), system.jacobian(x) @ Q
    x2, q2 = x + 0.5 * dt * k1x, Q + 0.5 * dt * k1q
    k2x, k2q = system.rhs(x2), system.jacobian(x2) @ q2
    x3, q3 = x + 0.5 * dt * k2x, Q + 0.5 * dt * k2q
    k3x, k3q = system.rhs(x3), system.jacobian(x3) @ q3
    x4, q4 = x + dt * k3x, Q + dt * k3q
    k4x, k4q = system.rhs(x4), system.jacobian(x4) @ q4
    return (
        x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        Q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
    )


def lyapunov_spectrum(
    system: VectorField,
    X0: np.ndarray,
    T: float = 5000.0,
    renorm_interval: float = 0.1,
    dt: float = 0.01,
    transient: float = 100.0,
    escape_radius: float = DEFAULT_ESCAPE_RADIUS,
) -> LyapunovResult:
    """
    Lyapunov exponents from the growth of orthonormalized tangent vectors.

    After `transient`, D tangent vectors are evolved with the Jacobian and
    re-orthonormalized by QR every `renorm_interval`; the exponents are the
    time averages of log |diag R|, sorted descending.

    Raises:
        TrajectoryEscapeError: If the orbit leaves the ball of `escape_radius`.
    """
    if not renorm_interval >= dt:
        raise ConfigError(
            f"renorm_interval ({renorm_interval}) must be at least one step (dt={dt})"
        )
    steps_per_block = max(1, round(renorm_interval / dt))
    blocks = max(1, -(-step_count(T, dt) // steps_per_block))

    settled = integrate(system, X0, transient, dt, escape_radius, raise_on_escape=True)
    x = settled.trajectory.states[-1]
    Q = np.eye(system.D)
    log_growth = np.zeros(system.D)
    t = 0.0
    for _ in range(blocks):
        for _ in range(steps_per_block):
            x, Q = _tangent_step(system, x, Q, dt)
            t += dt
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > escape_radius:
                raise TrajectoryEscapeError(transient + t, escape_radius)
        Q, R = np.linalg.qr(Q)
        diag = np.diag(R)
        log_growth += np.log(np.abs(diag))
        Q = Q * np.sign(diag)

    T_used = blocks * steps_per_block * dt
    exponents = np.sort(log_growth / T_used)[::-1]
    logger.info("Lyapunov exponents over T=%g: %s", T_used, np.array2string(exponents))
    return LyapunovResult(exponents, T_used, steps_per_block * dt)


class FixedPointClass(StrEnum):
    EMBEDDED = "embedded"
    GHOST = "ghost"
    UNKNOWN = "unknown"


@dataclass(frozen=True, eq=False)
class FixedPoint:
    """
    A root of the vector field.

    Attributes:
        location (np.ndarray): The root in raw coordinates.
        eigenvalues (np.ndarray): Jacobian eigenvalues, real part descending.
        unstable_count (int): Eigenvalues with positive real part.
        residual (float): ||F|| at the root.
        classification (FixedPointClass): Embedded in the attractor, a ghost
            away from it, or unknown without a reference trajectory.
    """

    location: np.ndarray
    eigenvalues: np.ndarray
    unstable_count: int
    residual: float
    classification: FixedPointClass = FixedPointClass.UNKNOWN

    def to_dict(self) -> dict[str, Any]:
        return {
            "location": self.location.tolist(),
            "eigenvalues_real": self.eigenvalues.real.tolist(),
            "eigenvalues_imag": self.eigenvalues.imag.tolist(),
            "unstable_count": self.unstable_count,
            "residual": self.residual,
            "classification": self.classification.value,
        }


def seed_grid(
    dimension: int,
    bounds: tuple[float, float] = DEFAULT_SEED_BOUNDS,
    per_axis: int | None = None,
) -> np.ndarray:
    if per_axis is None:
        per_axis = 11 if dimension <= 3 else max(2, int(5000 ** (1 / dimension)))
    axis = np.linspace(bounds[0], bounds[1], per_axis)
    mesh = np.meshgrid(*([axis] * dimension), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _newton_steps(
    system: VectorField, X: np.ndarray, iterations: int, max_step: float
) -> np.ndarray:
    for _ in range(iterations):
        alive = np.all(np.isfinite(X), axis=1)
        if not np.any(alive):
            break
        values = system.rhs(X[alive])
        jacobians = system.jacobian(X[alive])
        step = -(np.linalg.pinv(jacobians) @ values[:, :, None])[:, :, 0]
        norms = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, max_step / np.maximum(norms, 1e-300))
        X[alive] = X[alive] + step
    return X


def find_fixed_points(
    system: VectorField,
    seeds: np.ndarray | None = None,
    newton_tol: float = 1e-8,
    max_iter: int = 50,
    reference: np.ndarray | None = None,
    eps: float = DEFAULT_GHOST_EPS,
    attractor_seeds: int = 200,
    bounds: tuple[float, float] = DEFAULT_SEED_BOUNDS,
    max_step: float = 10.0,
) -> list[FixedPoint]:
    """
    Solve F(X) = 0 by Newton iteration from many seeds.

    Args:
        system: The model or reference system.
        seeds: Starting states; defaults to a grid over `bounds` per axis.
        newton_tol: Converged roots satisfy ||F(x*)|| <= newton_tol.
        max_iter: Newton iterations per seed.
        reference: States of a long trajectory on the attractor. Roots within
            `eps` of it are `embedded`, others `ghost`. Without a reference
            every root is `unknown`. A sample of it is also used as seeds.
        eps: The embedded/ghost distance threshold in raw units.
        attractor_seeds: How many reference states to add as seeds.
        bounds: Seed grid range when `seeds` is not given.
        max_step: Newton steps are shortened to at most this length.

    Returns:
        Distinct roots, sorted by location.
    """
    X = seed_grid(system.D, bounds) if seeds is None else np.array(seeds, dtype=float)
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        picks = np.linspace(0, len(reference) - 1, min(attractor_seeds, len(reference)))
        X = np.vstack([X, reference[picks.astype(int)]])
    seed_count = len(X)

    active = np.ones(len(X), dtype=bool)
    converged = np.zeros(len(X), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        residuals = np.linalg.norm(system.rhs(X[idx]), axis=1)
        done = residuals <= newton_tol
        converged[idx[done]] = True
        active[idx[done]] = False
        idx = idx[~done]
        X[idx] = _newton_steps(system, X[idx], 1, max_step)
        moved = X[idx]
        lost = ~np.all(np.isfinite(moved), axis=1) | (
            np.linalg.norm(moved, axis=1) > DEFAULT_ESCAPE_RADIUS
        )
        active[idx[lost]] = False
    # Seeds whose last step landed on a root.
    idx = np.flatnonzero(active)
    if len(idx) > 0:
        residuals = np.linalg.norm(system.rhs(X[idx]), axis=1)
        converged[idx[residuals <= newton_tol]] = True

    roots = X[converged]
    if len(roots) > 0:
        polished = _newton_steps(system, roots.copy(), 2, max_step)
        ok = np.all(np.isfinite(polished), axis=1)
        before = np.linalg.norm(system.rhs(roots), axis=1)
        after = np.full(len(roots), np.inf)
        after[ok] = np.linalg.norm(system.rhs(polished[ok]), axis=1)
        roots = np.where((after <= before)[:, None], polished, roots)
    logger.info(
        "Newton converged from %d of %d seeds", len(roots), seed_count
    )

    distinct: list[np.ndarray] = []
    for root in roots:
        scale = max(10 * newton_tol, 1e-9 * (1.0 + float(np.linalg.norm(root))))
        if all(np.linalg.norm(root - kept) >= scale for kept in distinct):
            distinct.append(root)

    tree = cKDTree(reference) if reference is not None else None
    points = []
    for root in sorted(distinct, key=lambda r: tuple(r)):
        eigenvalues = np.linalg.eigvals(system.jacobian(root))
        eigenvalues = eigenvalues[np.lexsort((-eigenvalues.imag, -eigenvalues.real))]
        if tree is None:
            label = FixedPointClass.UNKNOWN
        else:
            distance, _ = tree.query(root)
            label = (
                FixedPointClass.EMBEDDED if distance <= eps else FixedPointClass.GHOST
            )
        points.append(
            FixedPoint(
                location=root,
                eigenvalues=eigenvalues,
                unstable_count=int(np.count_nonzero(eigenvalues.real > 0)),
                residual=float(np.linalg.norm(system.rhs(root))),
                classification=label,
            )
        )
    return points


@dataclass(frozen=True, eq=False)
class BasinMap:
    """
    Escape times over a grid of initial states on a plane.

    `grid[i, j]` is the escape time of the state at plane coordinates
    (a_j, b_i), cell centers of `region`; NaN marks retained cells.
    """

    plane: np.ndarray
    origin: np.ndarray
    region: tuple[float, float, float, float]
    grid: np.ndarray
    escape_time: float
    escape_radius: float

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    @property
    def escaped(self) -> np.ndarray:
        return ~np.isnan(self.grid)

    @property
    def a_coords(self) -> np.ndarray:
        lo, hi = self.region[0], self.region[1]
        cells = self.grid.shape[1]
        return lo + (np.arange(cells) + 0.5) * (hi - lo) / cells

    @property
    def b_coords(self) -> np.ndarray:
        lo, hi = self.region[2], self.region[3]
        cells = self.grid.shape[0]
        return lo + (np.arange(cells) + 0.5) * (hi - lo) / cells

    def to_plane(self, point: np.ndarray) -> np.ndarray:
        return self.plane @ (np.asarray(point, dtype=float) - self.origin)

    def cell_of(self, point: np.ndarray) -> tuple[int, int] | None:
        a, b = self.to_plane(point)
        a_lo, a_hi, b_lo, b_hi = self.region
        col = int(np.floor((a - a_lo) / (a_hi - a_lo) * self.grid.shape[1]))
        row = int(np.floor((b - b_lo) / (b_hi - b_lo) * self.grid.shape[0]))
        if 0 <= row < self.grid.shape[0] and 0 <= col < self.grid.shape[1]:
            return row, col
        return None

    def near_boundary(self, point: np.ndarray, cells: int = 1) -> bool:
        """Whether retained and escaped cells both occur within `cells` of the point."""
        cell = self.cell_of(point)
        if cell is None:
            return False
        row, col = cell
        window = self.escaped[
            max(0, row - cells) : row + cells + 1, max(0, col - cells) : col + cells + 1
        ]
        return bool(window.any() and not window.all())


def orthonormal_plane(plane: np.ndarray) -> np.ndarray:
    plane = np.asarray(plane, dtype=float)
    if plane.ndim != 2 or plane.shape[0] != 2:
        raise ConfigError(
            f"A plane needs exactly two spanning vectors, got shape {plane.shape}"
        )
    first, second = plane
    if np.linalg.norm(first) == 0:
        raise ConfigError("Plane spanning vectors must be non-zero")
    u = first / np.linalg.norm(first)
    v = second - (second @ u) * u
    if np.linalg.norm(v) <= 1e-12 * max(np.linalg.norm(second), 1.0):
        raise ConfigError("Plane spanning vectors are linearly dependent")
    return np.stack([u, v / np.linalg.norm(v)])


def basin_scan(
    system: VectorField,
    plane: np.ndarray | None = None,
    region: tuple[float, float, float, float] = DEFAULT_BASIN_REGION,
    resolution: int = 400,
    escape_time: float = 5.0,
    escape_radius: float = 100.0,
    dt: float = 0.01,
    origin: np.ndarray | None = None,
    progress: bool = False,
) -> BasinMap:
    """
    Mark which initial states on a plane escape within `escape_time`.

    A state escapes once ||X|| > escape_radius. The default plane is spanned
    by (1, 1, 1) and (1, -1, 0) and only applies to D = 3.
    """
    if plane is None:
        if system.D != 3:
            raise ConfigError(
                f"The default basin plane is 3-dimensional; give one for D={system.D}"
            )
        plane = np.array(DEFAULT_BASIN_PLANE)
    basis = orthonormal_plane(plane)
    if basis.shape[1] != system.D:
        raise ConfigError(
            f"Plane vectors have {basis.shape[1]} components but D={system.D}"
        )
    if resolution < 1:
        raise ConfigError(f"resolution must be positive, got {resolution}")
    if not (region[0] < region[1] and region[2] < region[3]):
        raise ConfigError(f"Region bounds must be increasing, got {region}")
    origin = np.zeros(system.D) if origin is None else np.asarray(origin, dtype=float)

    empty = np.full((resolution, resolution), np.nan)
    scaffold = BasinMap(basis, origin, region, empty, escape_time, escape_radius)
    A, B = np.meshgrid(scaffold.a_coords, scaffold.b_coords)
    starts = origin + A.reshape(-1, 1) * basis[0] + B.reshape(-1, 1) * basis[1]
    logger.info("Scanning %d initial states up to t=%g", len(starts), escape_time)
    times = escape_times(
        system, starts, escape_time, dt, escape_radius, progress=progress
    )
    grid = times.reshape(resolution, resolution)
    escaped = int(np.count_nonzero(~np.isnan(grid)))
    logger.info("%d of %d cells escaped", escaped, grid.size)
    return BasinMap(basis, origin, region, grid, escape_time, escape_radius)


def short_term_valid_time(
    model_traj: StateTrajectory,
    ref_traj: StateTrajectory,
    threshold: float = DEFAULT_VALID_THRESHOLD,
    sigma: float | None = None,
) -> float:
    """
    First time |X1_model - X1_ref| exceeds threshold * sigma.

    `sigma` defaults to the std of the reference X1. When the threshold is
    never crossed the full compared length is returned.
    """
    if abs(model_traj.dt - ref_traj.dt) > 1e-12 * max(model_traj.dt, ref_traj.dt):
        raise DataError(
            "Trajectories are sampled differently "
            f"(dt={model_traj.dt} vs {ref_traj.dt})"
        )
    n = min(len(model_traj), len(ref_traj))
    if n == 0:
        raise DataError("Cannot compare empty trajectories")
    if sigma is None:
        sigma = float(np.std(ref_traj.states[:, 0]))
    gap = np.abs(model_traj.states[:n, 0] - ref_traj.states[:n, 0])
    crossed = np.flatnonzero(gap > threshold * sigma)
    index = int(crossed[0]) if len(crossed) > 0 else n - 1
    return index * model_traj.dt


def short_term_ensemble(
    system: VectorField,
    series: ScalarSeries,
    tau_steps: int,
    D: int,
    starts: list[int] | np.ndarray,
    horizon: float,
    threshold: float = DEFAULT_VALID_THRESHOLD,
    sigma: float | None = None,
) -> EnsembleValidTimes:
    """Valid times of forecasts launched from several embedded states."""
    traj = delay_embed(series, D, tau_steps)
    sigma = float(np.std(series.values)) if sigma is None else sigma
    times = []
    for start in starts:
        if not 0 <= start < len(traj):
            raise ConfigError(f"Start index {start} is outside the embedded trajectory")
        forecast = integrate(system, traj.states[start], horizon, series.dt).trajectory
        truth = StateTrajectory(traj.states[start : start + len(forecast)], series.dt)
        times.append(short_term_valid_time(forecast, truth, threshold, sigma))
    times_arr = np.array(times)
    median = float(np.median(times_arr)) if len(times) else np.nan
    return EnsembleValidTimes(times_arr, median)


@dataclass(frozen=True)
class SweepRow:
    # One lambda of a sweep; failed rows carry the error instead of scores.
    lam: float
    residual_stds: tuple[float, ...] = ()
    area_diff: float | None = None
    failed: bool = False
    error: str | None = None
    selected: bool = False

    @property
    def mean_residual_std(self) -> float:
        if not self.residual_stds:
            return float("nan")
        return float(np.mean(self.residual_stds))

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "residual_stds": list(self.residual_stds),
            "mean_residual_std": None if self.failed else self.mean_residual_std,
            "area_diff": self.area_diff,
            "failed": self.failed,
            "error": self.error,
            "selected": self.selected,
        }


def lambda_sweep(
    dataset: RegressionDataset,
    spec: BasisSpec,
    lambdas: list[float],
    x0: np.ndarray,
    tau_steps: int,
    dt: float,
    T_val: float = 2000.0,
    reference_values: np.ndarray | None = None,
    bins: int = DEFAULT_BINS,
    escape_radius: float = DEFAULT_ESCAPE_RADIUS,
    progress: bool = False,
) -> LambdaSweepResult:
    """
    Fit, simulate and score one model per lambda.

    Each model is integrated for `T_val` from `x0` and scored by the stds of
    its delay residuals and, with `reference_values`, by the X1 density area
    difference. A failing lambda yields a row flagged `failed`; the sweep goes
    on. The selected lambda minimizes the mean residual std.
    """
    if len(lambdas) == 0:
        raise ConfigError("lambda_sweep needs at least one lambda")
    rows: list[SweepRow] = []
    for lam in tqdm(lambdas, desc="lambda sweep", disable=not progress):
        try:
            model = fit_model(dataset, spec, lam)
            traj = integrate(
                model, x0, T_val, dt, escape_radius, raise_on_escape=True
            ).trajectory
            stds = tuple(delay_residuals(traj, tau_steps, bins).stds)
            area = None
            if reference_values is not None:
                area = density_area_diff(
                    *matched_densities(traj.states[:, 0], reference_values, bins)
                )
            rows.append(SweepRow(lam, stds, area))
            logger.info("lambda=%g: residual stds %s", lam, stds)
        except OdeforgeError as exc:
            logger.warning("lambda=%g failed: %s", lam, exc)
            rows.append(SweepRow(lam, failed=True, error=str(exc)))

    scored = [
        row for row in rows if not row.failed and np.isfinite(row.mean_residual_std)
    ]
    if not scored:
        logger.warning("Every lambda in the sweep failed")
        return LambdaSweepResult(rows, None)
    best = min(scored, key=lambda row: row.mean_residual_std)
    rows = [
        SweepRow(r.lam, r.residual_stds, r.area_diff, r.failed, r.error, r is best)
        for r in rows
    ]
    return LambdaSweepResult(rows, best.lam)


@dataclass(frozen=True)
class BoxCoverage:
    boxes: frozenset[tuple[int, ...]] = field(default_factory=frozenset)
    boxes_per_axis: int = 80
    dimension: int = 3

    @property
    def fraction(self) -> float:
        return len(self.boxes) / float(self.boxes_per_axis**self.dimension)


def box_coverage(
    states: np.ndarray,
    low: float = -20.0,
    high: float = 20.0,
    boxes_per_axis: int = 80,
) -> BoxCoverage:
    """Boxes of a uniform grid over [low, high]^D visited by a trajectory."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if not high > low or boxes_per_axis < 1:
        raise ConfigError(
            f"Invalid box grid: [{low}, {high}] with {boxes_per_axis} boxes"
        )
    inside = np.all((states >= low) & (states < high), axis=1)
    idx = np.floor((states[inside] - low) / (high - low) * boxes_per_axis).astype(int)
    boxes: frozenset = frozenset()
    if len(idx):
        boxes = frozenset(map(tuple, np.unique(idx, axis=0).tolist()))
    return BoxCoverage(boxes, boxes_per_axis, states.shape[1])


def coverage_overlap(a: BoxCoverage, b: BoxCoverage) -> float:
    if (a.boxes_per_axis, a.dimension) != (b.boxes_per_axis, b.dimension):
        raise DataError("Box coverages must use the same grid to be compared")
    union = a.boxes | b.boxes
    if not union:
        return 1.0
    return len(a.boxes & b.boxes) / len(union)
