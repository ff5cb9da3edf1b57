import csv
import json
import logging
from functools import wraps
from pathlib import Path

import click
import numpy as np

from . import harness
from .config import DEFAULT_SCENARIO, load_scenario, load_settings, parse_predictor
from .errors import ConfigurationError, EstimatorError, GenerationError, InfoBoundError, OracleError, PredictorError
from .estimators import as_samples, entropy_knn
from .predictors import predictor_from_spec, read_trace_csv, run_online, write_trace_csv
from .processes import load_trajectory, trajectory_metadata, write_trajectory_csv, write_trajectory_json
from .schemas import BayesLinearModel, BoundReport, as_pnorm

EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_NO_REPORT = 4


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (ConfigurationError, EstimatorError, OracleError)):
        return EXIT_CONFIG
    if isinstance(exc, (GenerationError, PredictorError)):
        return EXIT_GENERATION
    return 1


def handle_errors(command):
    """Map library errors to exit codes: 2 configuration, 3 generation."""
    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except InfoBoundError as exc:
            click.echo(f"error: {exc}", err=True)
            click.get_current_context().exit(_exit_code(exc))
    return wrapper


def _p_values(values):
    try:
        return [as_pnorm(value) for value in values]
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--p")


def _output_dir(ctx) -> Path:
    path = ctx.obj["output_dir"]
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump(data) -> str:
    return json.dumps(data, indent=2)


def _seed(ctx) -> int:
    seed = ctx.obj["seed"]
    return ctx.obj["settings"].seed if seed is None else seed


@click.group()
@click.option('--output-dir', envvar='INFOBOUND_OUTPUT_DIR', type=click.Path(file_okay=False, path_type=Path),
              help='Directory for trajectory, trace and report files')
@click.option('--seed', type=click.IntRange(min=0), default=None, help='Seed override for every scenario')
@click.option('-v', '--verbose', count=True, help='-v for info, -vv for debug logging')
@click.option('--env-file', type=click.Path(dir_okay=False, path_type=Path), default=None,
              help='dotenv file with INFOBOUND_* settings')
@click.pass_context
def main(ctx, output_dir, seed, verbose, env_file):
    """Information-theoretic bounds on online prediction error"""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(env_file)
    except ConfigurationError as exc:
        click.echo(f"error: {exc}", err=True)
        ctx.exit(EXIT_CONFIG)
    ctx.obj = {
        'settings': settings,
        'output_dir': output_dir or settings.output_dir,
        'seed': seed,
    }


def _scenario(ctx, config_path):
    cfg = load_scenario(config_path or DEFAULT_SCENARIO, ctx.obj['settings'])
    if ctx.obj['seed'] is not None:
        cfg = cfg.model_copy(update={'seeds': [ctx.obj['seed']]})
    return cfg


@main.command()
@click.argument('config', required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_context
@handle_errors
def simulate(ctx, config):
    """Generate and write the trajectories of a scenario"""
    cfg = _scenario(ctx, config)
    out = _output_dir(ctx)
    written = []
    for seed in cfg.seeds:
        for mode in cfg.modes:
            try:
                t = harness.scenario_trajectory(cfg, seed, mode)
            except (ValueError, ArithmeticError) as exc:
                if isinstance(exc, InfoBoundError):
                    raise
                raise GenerationError(str(exc)) from exc
            stem = f"{cfg.name}_{mode}_seed{seed}"
            write_trajectory_csv(t, out / f"{stem}.csv")
            write_trajectory_json(t, out / f"{stem}.json")
            written.append({'csv': str(out / f"{stem}.csv"), 'json': str(out / f"{stem}.json"),
                            'steps': len(t), **trajectory_metadata(t)})
    click.echo(_dump(written))


@main.command()
@click.argument('trajectory', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--predictor', 'predictor_text', required=True,
              help='Predictor spec, e.g. "ar" or "lms step_size=0.5 lags=1"')
@click.option('--name', default=None, help='Label for the trace')
@click.pass_context
@handle_errors
def predict(ctx, trajectory, predictor_text, name):
    """Run a predictor over a trajectory and write its trace"""
    t = load_trajectory(trajectory)
    spec = parse_predictor(name or predictor_text.split()[0], predictor_text)
    trace = run_online(t, predictor_from_spec(spec, t))
    path = write_trace_csv(t, trace, _output_dir(ctx) / f"{trajectory.stem}_{spec.name}_trace.csv")
    click.echo(_dump({'trace': str(path), 'predictor': trace.predictor_tag, 'steps': len(trace)}))


def _load_pair(trajectory, trace):
    t = load_trajectory(trajectory)
    tr = read_trace_csv(trace)
    if len(tr) != len(t):
        raise ConfigurationError(f"trace has {len(tr)} steps, trajectory has {len(t)}")
    return t, tr


@main.command()
@click.argument('trajectory', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument('trace', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--p', 'p_values', multiple=True, default=('2',), help='L_p exponent; repeatable, "inf" allowed')
@click.option('--entropy-source', type=click.Choice(['oracle', 'estimated']), default='oracle')
@click.option('--lag', type=click.IntRange(min=1), default=None)
@click.option('--k', type=click.IntRange(min=1), default=None)
@click.pass_context
@handle_errors
def bound(ctx, trajectory, trace, p_values, entropy_source, lag, k):
    """Bound report for a trajectory and a predictor trace"""
    settings = ctx.obj['settings']
    t, tr = _load_pair(trajectory, trace)
    reports = [harness.bound_report(t, tr, p, entropy_source, lag=lag or settings.lag, k=k or settings.k,
                                    workers=settings.workers)
               for p in _p_values(p_values)]
    harness.write_reports_json(reports, _output_dir(ctx) / f"{trace.stem}_bound.json")
    click.echo(_dump([harness.report_to_dict(r) for r in reports]))


@main.command()
@click.argument('trajectory', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument('trace', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--lag', type=click.IntRange(min=1), default=None)
@click.option('--k', type=click.IntRange(min=1), default=None)
@click.option('--shuffles', type=click.IntRange(min=1), default=None)
@click.option('--p', 'p_value', default='2', help='Exponent of the reference max-entropy law')
@click.pass_context
@handle_errors
def diagnose(ctx, trajectory, trace, lag, k, shuffles, p_value):
    """Achievability diagnostics for a predictor trace"""
    settings = ctx.obj['settings']
    t, tr = _load_pair(trajectory, trace)
    diagnostics = harness.achievability_diagnostics(
        t, tr, lag or settings.lag, k or settings.k, p=_p_values([p_value])[0],
        shuffles=shuffles or settings.shuffles, seed=_seed(ctx),
        workers=settings.workers,
    )
    payload = json.loads(diagnostics.model_dump_json())
    payload['innovations_independent'] = diagnostics.innovations_independent
    payload['no_input_transfer'] = diagnostics.no_input_transfer
    path = _output_dir(ctx) / f"{trace.stem}_diagnostics.json"
    path.write_text(_dump(payload) + "\n")
    click.echo(_dump(payload))


def _finish_reports(ctx, reports, stem):
    out = _output_dir(ctx)
    harness.write_reports_json(reports, out / f"{stem}_reports.json")
    harness.write_reports_csv(reports, out / f"{stem}_reports.csv")
    harness.write_plot_data_csv(reports, out / f"{stem}_plot_data.csv")
    click.echo(harness.summary_table(reports))
    if not any(isinstance(r, BoundReport) for r in reports):
        click.echo("error: no report succeeded", err=True)
        ctx.exit(EXIT_NO_REPORT)


@main.command()
@click.argument('config', required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--p', 'p_values', multiple=True, help='Override the scenario exponents; "inf" allowed')
@click.option('--workers', type=click.IntRange(min=1), default=None)
@click.pass_context
@handle_errors
def bench(ctx, config, p_values, workers):
    """Run a scenario (the shipped default without CONFIG) and write reports"""
    cfg = _scenario(ctx, config)
    if p_values:
        cfg = cfg.model_copy(update={'p_values': _p_values(p_values)})
    reports = harness.run_scenario(cfg, workers=workers)
    _finish_reports(ctx, reports, cfg.name)


@main.command()
@click.option('--dim', type=click.IntRange(min=1), default=3)
@click.option('--k', 'train_size', type=click.IntRange(min=0), default=50, help='Training set size')
@click.option('--noise-std', type=float, default=0.1)
@click.option('--prior-var', type=float, default=1.0)
@click.option('--learner', default='bayes', help='bayes, zero or ridge:<lambda>')
@click.option('--trials', type=click.IntRange(min=1), default=2000)
@click.option('--p', 'p_value', default='2')
@click.option('--missing-rate', type=click.FloatRange(0, 1), default=0.0)
@click.pass_context
@handle_errors
def generalize(ctx, dim, train_size, noise_std, prior_var, learner, trials, p_value, missing_rate):
    """Generalization error of a batch learner against its bound"""
    if noise_std <= 0 or prior_var <= 0:
        raise ConfigurationError("--noise-std and --prior-var must be positive")
    settings = ctx.obj['settings']
    model = BayesLinearModel(weight_prior_cov=prior_var * np.eye(dim), noise_var=noise_std ** 2)
    seed = _seed(ctx)
    report = harness.generalization_experiment(model, train_size, learner, trials, _p_values([p_value])[0], seed,
                                               missing_rate=missing_rate, workers=settings.workers)
    _finish_reports(ctx, [report], f"generalization_{learner.replace(':', '-')}")


@main.command()
@click.argument('reports', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False, path_type=Path), default=None,
              help='Also write the flat CSV table here')
@handle_errors
def report(reports, csv_path):
    """Render a reports JSON file as a summary table"""
    loaded = harness.read_reports_json(reports)
    if csv_path is not None:
        harness.write_reports_csv(loaded, csv_path)
    click.echo(harness.summary_table(loaded))


@main.command()
@click.argument('data', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--column', 'columns', multiple=True, default=('y',), help='CSV column(s) forming the sample vector')
@click.option('--k', type=click.IntRange(min=1), default=None)
@click.pass_context
@handle_errors
def entropy(ctx, data, columns, k):
    """Kozachenko-Leonenko entropy (bits) of CSV columns"""
    with data.open(newline='') as handle:
        rows = list(csv.DictReader(handle))
    missing = [c for c in columns if not rows or c not in rows[0]]
    if missing:
        raise ConfigurationError(f"{data}: missing column(s) {', '.join(missing)}")
    try:
        samples = as_samples([[float(row[c]) for c in columns] for row in rows])
    except ValueError as exc:
        raise ConfigurationError(f"{data}: malformed value ({exc})") from exc
    estimate = entropy_knn(samples, k or ctx.obj['settings'].k)
    payload = json.loads(estimate.model_dump_json())
    payload['columns'] = list(columns)
    click.echo(_dump(payload))


if __name__ == '__main__':
    main()
