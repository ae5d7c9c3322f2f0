"""
Command-line front end.

    odeforge <command> [--recipe NAME | --config PATH] [--set section.key=value ...]

Commands:
- generate: write the Lorenz observable as CSV plus a JSON sidecar.
- fit: embed, differentiate, sample, build the basis and fit; writes
  model.json, fit_report.json and fit_summary.txt.
- simulate: integrate a model into trajectory.csv.
- diagnose: delay residuals, densities, Lyapunov spectrum, valid time and
  coverage against the reference series.
- fixed-points: Newton search with eigenvalues, printed as a table.
- basin: escape-time map on a plane through state space.
- sweep-lambda: fit and score one model per lambda.
- compare-basis: RBF against polynomial fit on the same samples.

Every command writes into the output directory: --output-dir, else
$ODEFORGE_OUTPUT_DIR, else output.directory from the configuration. Exit
codes are 0 on success, 2 for configuration errors, 3 for data errors and 4
for numerical failures.
"""

import argparse
import dataclasses
import logging
import sys
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pandas as pd

from . import diagnostics
from .basis import BasisKind
from .config import (
    DataSource,
    RunConfig,
    available_recipes,
    load_config,
    resolve_output_dir,
)
from .errors import (
    ConfigError,
    DataError,
    ExitCode,
    OdeforgeError,
    TrajectoryEscapeError,
)
from .model import (
    IntegrationResult,
    OdeModel,
    delay_project,
    integrate,
    load_model,
    lorenz_equilibria,
    save_model,
    save_trajectory,
)
from .pipeline import (
    build_basis,
    fit_from_prepared,
    initial_state,
    obtain_series,
    prepare_dataset,
    sha256_file,
    stage,
    write_generated_series,
)
from .report import (
    DiagnosticsReport,
    FitSummaryFormatter,
    assign_labels,
    density_frame,
    fixed_point_table,
    fixed_points_frame,
    sweep_frame,
    write_basin_csv,
    write_csv,
    write_json,
)
from .timeseries import ScalarSeries, StateTrajectory, delay_embed

logger = logging.getLogger(__name__)

MODEL_FILENAME = "model.json"


class CommandContext:
    def __init__(
        self, config: RunConfig, output_dir: Path, args: argparse.Namespace
    ) -> None:
        self.config = config
        self.output_dir = output_dir
        self.args = args

    @property
    def progress(self) -> bool:
        return bool(self.args.progress) or self.config.output.progress

    def model_path(self) -> Path:
        model = getattr(self.args, "model", None)
        return Path(model) if model is not None else self.output_dir / MODEL_FILENAME

    def load_model(self) -> OdeModel:
        with stage("load-model"):
            return load_model(self.model_path())


def cmd_generate(ctx: CommandContext) -> int:
    if ctx.config.data.source is not DataSource.GENERATE_LORENZ:
        raise ConfigError(
            "generate only produces Lorenz data; set data.source = generate-lorenz"
        )
    write_generated_series(ctx.config, ctx.output_dir)
    return ExitCode.OK


def cmd_fit(ctx: CommandContext) -> int:
    series, series_path = obtain_series(ctx.config, ctx.output_dir)
    prepared = prepare_dataset(ctx.config, series)
    result = fit_from_prepared(
        ctx.config, prepared, series_sha256=sha256_file(series_path)
    )

    with stage("write"):
        save_model(result.model, ctx.output_dir / MODEL_FILENAME)
        summary = result.summary()
        write_json(
            {
                **summary,
                "residual_norms": result.model.coeffs.fit_stats,
                "config": ctx.config.to_dict(),
            },
            ctx.output_dir / "fit_report.json",
        )
        formatter = FitSummaryFormatter(ctx.config.output.fit_summary_format)
        text = formatter.format(**summary)
        (ctx.output_dir / "fit_summary.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return ExitCode.OK


def _simulate(ctx: CommandContext, model: OdeModel, T: float) -> IntegrationResult:
    with stage("simulate"):
        return integrate(
            model,
            initial_state(ctx.config, model),
            T,
            ctx.config.simulation_dt,
            escape_radius=ctx.config.simulation.escape_radius,
        )


def cmd_simulate(ctx: CommandContext) -> int:
    model = ctx.load_model()
    result = _simulate(ctx, model, ctx.config.simulation.T)
    with stage("write"):
        save_trajectory(result.trajectory, ctx.output_dir / "trajectory.csv")
        write_json(
            {
                "T": ctx.config.simulation.T,
                "dt": ctx.config.simulation_dt,
                "states": len(result.trajectory),
                "escaped": result.escaped,
                "escape_time": result.escape_time,
            },
            ctx.output_dir / "simulation.json",
        )
    if result.escaped:
        logger.warning(
            "Trajectory escaped at t=%g; output is truncated", result.escape_time
        )
    return ExitCode.OK


def _reference_series(ctx: CommandContext) -> ScalarSeries:
    # The diagnose reference is as long as the simulation, not the training run.
    reference = getattr(ctx.args, "reference", None)
    if reference is not None:
        overrides = {"source": DataSource.CSV, "path": reference}
    else:
        overrides = {"T": ctx.config.simulation.T}
    data = dataclasses.replace(ctx.config.data, **overrides)
    config = dataclasses.replace(ctx.config, data=data)
    series, _ = obtain_series(config, ctx.output_dir / "reference")
    return series


def _attractor_states(ctx: CommandContext, model: OdeModel) -> np.ndarray | None:
    result = _simulate(ctx, model, ctx.config.diagnostics.reference_T)
    if result.escaped:
        logger.warning("Reference trajectory escaped; fixed points stay unclassified")
        return None
    return result.trajectory.states


def cmd_diagnose(ctx: CommandContext) -> int:
    cfg = ctx.config.diagnostics
    model = ctx.load_model()
    tau_steps = model.meta.tau_steps or ctx.config.tau_steps
    reference = _reference_series(ctx)
    simulated = _simulate(ctx, model, ctx.config.simulation.T)
    # Only the escaped end state can be non-finite.
    finite = np.all(np.isfinite(simulated.trajectory.states), axis=1)
    traj = StateTrajectory(
        simulated.trajectory.states[finite], simulated.trajectory.dt
    )
    report = DiagnosticsReport(
        simulation_escaped=simulated.escaped, escape_time=simulated.escape_time
    )

    with stage("diagnose"):
        if len(traj) > max(1, model.D - 1) * tau_steps:
            residuals = diagnostics.delay_residuals(traj, tau_steps, cfg.bins)
            report.delay_residual_stds = residuals.stds
            report.degraded_delay_structure = bool(
                simulated.escaped
                or any(s > cfg.residual_tolerance for s in residuals.stds)
            )
            for pair, density in enumerate(residuals.densities, start=1):
                write_csv(
                    density_frame({f"pair{pair}": density}),
                    ctx.output_dir / f"delay_residual_pair{pair}.csv",
                )
            alignment = diagnostics.delay_alignment(traj, tau_steps, t_max=100.0)
            write_csv(
                pd.DataFrame(
                    alignment, columns=[f"X{d + 1}(t+{d}tau)" for d in range(model.D)]
                ),
                ctx.output_dir / "delay_alignment.csv",
            )
        else:
            logger.warning(
                "Simulation escaped at t=%g, before one delay span; "
                "delay residuals are skipped",
                simulated.escape_time,
            )
            report.degraded_delay_structure = True
            report.skipped.extend(["delay_residuals", "delay_alignment"])

        model_density, reference_density = diagnostics.matched_densities(
            traj.states[:, 0], reference.values, cfg.bins
        )
        report.area_diff = diagnostics.density_area_diff(
            model_density, reference_density
        )
        write_csv(
            density_frame({"model": model_density, "reference": reference_density}),
            ctx.output_dir / "densities.csv",
        )

        reference_traj = delay_embed(reference, model.D, tau_steps)
        if cfg.coverage:
            report.coverage_overlap = diagnostics.coverage_overlap(
                diagnostics.box_coverage(traj.states),
                diagnostics.box_coverage(reference_traj.states),
            )
        if cfg.valid_time:
            horizon_steps = int(cfg.valid_horizon / reference.dt)
            last = max(1, len(reference_traj) - horizon_steps - 1)
            starts = np.linspace(0, last - 1, cfg.valid_starts).astype(int)
            ensemble = diagnostics.short_term_ensemble(
                model,
                reference,
                tau_steps,
                model.D,
                starts,
                cfg.valid_horizon,
                cfg.valid_threshold,
            )
            report.valid_times = ensemble.times.tolist()
            report.median_valid_time = ensemble.median

    if cfg.lyapunov:
        with stage("lyapunov"):
            try:
                lyapunov = diagnostics.lyapunov_spectrum(
                    model,
                    initial_state(ctx.config, model),
                    T=cfg.lyapunov_T,
                    renorm_interval=cfg.renorm_interval,
                    dt=cfg.lyapunov_dt,
                    transient=cfg.transient,
                )
            except TrajectoryEscapeError as exc:
                logger.warning("Lyapunov spectrum skipped: %s", exc)
                report.skipped.append("lyapunov")
            else:
                report.lyapunov_exponents = lyapunov.exponents.tolist()
                report.lyapunov_T = lyapunov.T_used

    if cfg.fixed_points:
        points = _find_fixed_points(ctx, model)
        report.fixed_points = [
            {"label": label, **point.to_dict()}
            for label, point in zip(assign_labels(points), points, strict=True)
        ]

    with stage("write"):
        write_json(report.to_dict(), ctx.output_dir / "diagnostics.json")
    if report.degraded_delay_structure:
        logger.warning(
            "Delay structure is degraded (residual stds %s, tolerance %g, escaped %s)",
            report.delay_residual_stds,
            cfg.residual_tolerance,
            report.simulation_escaped,
        )
    return ExitCode.OK


def _find_fixed_points(
    ctx: CommandContext, model: OdeModel
) -> list[diagnostics.FixedPoint]:
    cfg = ctx.config.diagnostics
    reference = _attractor_states(ctx, model)
    with stage("fixed-points"):
        return diagnostics.find_fixed_points(
            model,
            newton_tol=cfg.newton_tol,
            max_iter=cfg.max_iter,
            reference=reference,
            eps=cfg.ghost_eps,
            bounds=(cfg.seed_bounds[0], cfg.seed_bounds[1]),
        )


def cmd_fixed_points(ctx: CommandContext) -> int:
    model = ctx.load_model()
    points = _find_fixed_points(ctx, model)
    original = []
    if ctx.config.data.source is DataSource.GENERATE_LORENZ:
        params = ctx.config.data.lorenz_params
        original = [
            delay_project(p, model.D).tolist()
            for p in lorenz_equilibria((params[0], params[1], params[2]))
        ]
    with stage("write"):
        write_csv(fixed_points_frame(points), ctx.output_dir / "fixed_points.csv")
        write_json(
            {
                "fixed_points": [p.to_dict() for p in points],
                "original_in_delay_coordinates": original,
            },
            ctx.output_dir / "fixed_points.json",
        )
    print(fixed_point_table(points))
    return ExitCode.OK


def cmd_basin(ctx: CommandContext) -> int:
    cfg = ctx.config.diagnostics
    model = ctx.load_model()
    a_lo, a_hi, b_lo, b_hi = cfg.basin_region
    with stage("basin"):
        basin = diagnostics.basin_scan(
            model,
            plane=np.array(cfg.basin_plane),
            region=(a_lo, a_hi, b_lo, b_hi),
            resolution=cfg.basin_resolution,
            escape_time=cfg.basin_escape_time,
            escape_radius=cfg.basin_escape_radius,
            dt=cfg.basin_dt,
            progress=ctx.progress,
        )
    ghosts = []
    if cfg.fixed_points:
        for point in _find_fixed_points(ctx, model):
            if point.classification is diagnostics.FixedPointClass.GHOST:
                ghosts.append(
                    {
                        "location": point.location.tolist(),
                        "plane_coordinates": basin.to_plane(point.location).tolist(),
                        "near_boundary": basin.near_boundary(point.location),
                    }
                )
    with stage("write"):
        write_basin_csv(basin, ctx.output_dir / "basin.csv")
        write_json(
            {
                "plane": basin.plane,
                "region": list(basin.region),
                "resolution": basin.resolution,
                "escape_time": basin.escape_time,
                "escape_radius": basin.escape_radius,
                "escaped_fraction": float(np.mean(basin.escaped)),
                "ghosts": ghosts,
            },
            ctx.output_dir / "basin.json",
        )
    return ExitCode.OK


def cmd_sweep_lambda(ctx: CommandContext) -> int:
    series, _ = obtain_series(ctx.config, ctx.output_dir)
    prepared = prepare_dataset(ctx.config, series)
    spec = build_basis(ctx.config, prepared.dataset)
    with stage("sweep-lambda"):
        sweep = diagnostics.lambda_sweep(
            prepared.dataset,
            spec,
            list(ctx.config.regression.sweep),
            x0=prepared.trajectory.states[0],
            tau_steps=ctx.config.tau_steps,
            dt=ctx.config.simulation_dt,
            T_val=ctx.config.diagnostics.sweep_T,
            reference_values=series.values,
            bins=ctx.config.diagnostics.bins,
            progress=ctx.progress,
        )
    with stage("write"):
        frame = sweep_frame(sweep.rows)
        write_csv(frame, ctx.output_dir / "sweep.csv")
        write_json(
            {"selected": sweep.selected, "rows": [row.to_dict() for row in sweep.rows]},
            ctx.output_dir / "sweep.json",
        )
    print(frame.to_string(index=False))
    return ExitCode.OK


def cmd_compare_basis(ctx: CommandContext) -> int:
    series, series_path = obtain_series(ctx.config, ctx.output_dir)
    prepared = prepare_dataset(ctx.config, series)
    digest = sha256_file(series_path)
    rows = []
    for kind in (BasisKind.LINEAR_RBF, BasisKind.POLYNOMIAL):
        result = fit_from_prepared(
            ctx.config, prepared, kind=kind, series_sha256=digest
        )
        stem = kind.value.replace("+", "-")
        save_model(result.model, ctx.output_dir / f"model-{stem}.json")
        simulated = _simulate(ctx, result.model, ctx.config.simulation.T)
        with stage("compare-basis"):
            area = diagnostics.density_area_diff(
                *diagnostics.matched_densities(
                    simulated.trajectory.states[:, 0],
                    series.values,
                    ctx.config.diagnostics.bins,
                )
            )
        rows.append(
            {**result.summary(), "area_diff": area, "escaped": simulated.escaped}
        )
    with stage("write"):
        write_csv(pd.DataFrame.from_records(rows), ctx.output_dir / "compare_basis.csv")
        write_json({"rows": rows}, ctx.output_dir / "compare_basis.json")
    for row in rows:
        print(
            f"{row['basis']:>12}  mean error {row['mean_error']:.4g}  "
            f"area diff {row['area_diff']:.4g}"
        )
    return ExitCode.OK


COMMANDS: dict[str, Callable[[CommandContext], int]] = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "fixed-points": cmd_fixed_points,
    "basin": cmd_basin,
    "sweep-lambda": cmd_sweep_lambda,
    "compare-basis": cmd_compare_basis,
}


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument(
        "--recipe", help=f"named recipe: {', '.join(available_recipes())}"
    )
    source.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one configuration value (repeatable)",
    )
    common.add_argument("--output-dir", type=Path, help="where to write results")
    common.add_argument("--progress", action="store_true", help="show progress bars")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="odeforge", description="Reconstruct ODEs from a scalar time series."
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "fit", "sweep-lambda", "compare-basis"):
        commands.add_parser(name, parents=[common])

    for name in ("simulate", "diagnose", "fixed-points", "basin"):
        sub = commands.add_parser(name, parents=[common])
        sub.add_argument(
            "--model",
            type=Path,
            help=f"model file (default: <output-dir>/{MODEL_FILENAME})",
        )

    simulate = commands.choices["simulate"]
    simulate.add_argument("--x0", help="explicit initial state, comma separated")
    simulate.add_argument("--T", dest="sim_T", help="simulated time")
    simulate.add_argument("--dt", dest="sim_dt", help="integration step")

    diagnose = commands.choices["diagnose"]
    diagnose.add_argument(
        "--reference", help="reference series CSV (default: regenerate)"
    )

    basin = commands.choices["basin"]
    basin.add_argument("--plane", help="two spanning vectors, e.g. '1,1,1;1,-1,0'")
    basin.add_argument("--region", help="a_lo,a_hi,b_lo,b_hi")
    basin.add_argument("--resolution", help="cells per axis")

    sweep = commands.choices["sweep-lambda"]
    sweep.add_argument("--lambdas", help="comma separated, 10^x allowed")
    return parser


def _flag_overrides(args: argparse.Namespace) -> list[str]:
    pairs = {
        "x0": ("simulation.x0", "simulation.x0_policy=explicit"),
        "sim_T": ("simulation.T", None),
        "sim_dt": ("simulation.dt", None),
        "plane": ("diagnostics.basin_plane", None),
        "region": ("diagnostics.basin_region", None),
        "resolution": ("diagnostics.basin_resolution", None),
        "lambdas": ("regression.sweep", None),
    }
    overrides = []
    for attr, (key, extra) in pairs.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={value}")
            if extra is not None:
                overrides.append(extra)
    return overrides


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", force=True
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        config = load_config(
            args.config, args.recipe, [*args.overrides, *_flag_overrides(args)]
        )
        output_dir = resolve_output_dir(config, args.output_dir)
        try:
            output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(
                f"Cannot create output directory {output_dir}: {exc}"
            ) from exc
        return int(COMMANDS[args.command](CommandContext(config, output_dir, args)))
    except OdeforgeError as exc:
        print(f"odeforge {args.command}: {exc}", file=sys.stderr)
        return int(exc.exit_code)
    except Exception:
        logger.exception("Unexpected failure in %s", args.command)
        return int(ExitCode.UNEXPECTED)


if __name__ == "__main__":
    sys.exit(main())
