"""
Command line front end
- solve: one pump configuration -> profile CSV, heatmap PGM, cost JSON
- gen-data / train / eval: surrogate dataset, training and metrics
- design: CNN-assisted DE (and the random-DE baseline) for flat or symmetric targets
- show-config: resolved configuration and its hash

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""
import functools
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
from pydantic import ValidationError
from rich.console import Console

import dataset
import file_operations as files
from bvp_solver import solve, solve_many, z_grid
from config import RunConfig, config_hash, load_config
from de_optimizer import (
    DEFAULT_DELTA_P,
    DEParams,
    PumpObjective,
    multi_trial_stats,
    run_cnn_assisted,
    run_random_baseline,
)
from objectives import (
    SCENARIOS,
    AsymmetryObjective,
    TargetDeviationObjective,
    WeightedExcursionObjective,
    WeightVector,
    cost_breakdown,
    flat_target,
    sinusoidal_symmetric_target,
    target_deviation,
)
from raman_model import PumpConfig, build_wave_set
from surrogate import (
    e_max,
    e_max_histogram,
    load_model,
    r_squared,
    save_model,
    train,
    train_size_sweep,
)
from utils import ConvergenceError, InvalidArgumentError, RamanDesignError, setup_logging

logger = logging.getLogger(__name__)
console = Console(stderr=True)

DEFAULT_OUT = 'runs'


@dataclass
class AppContext:
    cfg: RunConfig
    out_dir: Path
    jobs: int
    config_hash: str

    def path(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def wave_set(self):
        return build_wave_set(self.cfg.fiber, self.cfg.waves)


def _parse_floats(value, name):
    try:
        return [float(v) for v in str(value).split(',') if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"{name} must be comma-separated numbers: {exc}")


def _parse_weights(ctx, param, value):
    if value is None:
        return None
    if value in SCENARIOS:
        return SCENARIOS[value]
    try:
        return WeightVector.parse(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise click.BadParameter(str(exc))


def _ok(message):
    console.print(f"[green]✓[/green] {message}")


# ========================================================================
# GROUP
# ========================================================================

@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help="JSON run configuration")
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help="Output directory (default: runs/)")
@click.option('--seed', type=int, default=None, help="Global seed (overrides RPD_SEED)")
@click.option('--jobs', type=int, default=1, show_default=True, help="joblib workers")
@click.option('-v', '--verbose', count=True, help="-v info, -vv debug")
@click.pass_context
def cli(ctx, config_path, out_dir, seed, jobs, verbose):
    """Raman pump design: solver, surrogate and differential evolution"""
    setup_logging(verbose)
    if jobs == 0:
        raise click.BadParameter("--jobs must be non-zero", param_hint='--jobs')
    cfg = load_config(config_path, seed=seed, out_dir=out_dir)
    ctx.obj = AppContext(
        cfg=cfg,
        out_dir=Path(cfg.out_dir or DEFAULT_OUT),
        jobs=jobs,
        config_hash=config_hash(cfg),
    )


@cli.command('show-config')
@click.pass_obj
def show_config(app: AppContext):
    """Print the resolved configuration and its hash"""
    click.echo(json.dumps(app.cfg.model_dump(mode='json'), indent=2, sort_keys=True))
    click.echo(f"config_hash: {app.config_hash}")


# ========================================================================
# SOLVE
# ========================================================================

@cli.command('solve')
@click.option('--pumps', required=True, help="Comma-separated pump powers p1..p8 [mW]")
@click.option('--target', type=click.Choice(['none', 'flat', 'symmetric']), default='none',
              show_default=True, help="Also report the deviation from this target")
@click.option('--weights', callback=_parse_weights, default='m1', show_default=True,
              help="m0,m1,m2 or a scenario name (m1, m2, m3)")
@click.option('--prefix', default='solve', show_default=True)
@click.pass_obj
def cmd_solve(app: AppContext, pumps, target, weights, prefix):
    """Solve one pump configuration and write the profile artifacts"""
    cfg = app.cfg
    wave_set = app.wave_set()
    powers = _parse_floats(pumps, '--pumps')
    if len(powers) != wave_set.n_pumps:
        raise click.BadParameter(f"expected {wave_set.n_pumps} pump powers, got {len(powers)}",
                                 param_hint='--pumps')
    try:
        pump_config = PumpConfig(powers)
    except InvalidArgumentError as exc:
        raise click.BadParameter(str(exc), param_hint='--pumps')

    result = solve(pump_config, cfg.fiber, wave_set, cfg.solver)
    if not result.converged:
        raise ConvergenceError(
            f"solver did not converge after {result.iterations_used} iterations "
            f"(residual {result.final_residual:.3e})"
        )
    profile = result.signal_profile

    extra = {
        'pumps_mw': pump_config.powers_mw,
        'iterations_used': result.iterations_used,
        'final_residual': result.final_residual,
        'clamp_count': result.clamp_count,
    }
    if target != 'none':
        target_profile = _target_profile(target, profile.freq_grid, profile.z_grid)
        extra['target'] = target
        extra['target_deviation_db'] = target_deviation(profile, target_profile)

    breakdown = cost_breakdown(profile, weights)
    files.save_profile_csv(app.path(f"{prefix}_profile.csv"), profile, app.config_hash)
    files.save_heatmap_pgm(app.path(f"{prefix}_heatmap.pgm"), profile, app.config_hash)
    files.save_cost_json(app.path(f"{prefix}_cost.json"), breakdown, app.config_hash, extra)
    _ok(f"solved in {result.iterations_used} iterations: J0={breakdown.j0:.3f} dB "
        f"J1={breakdown.j1:.3f} dB J2={breakdown.j2:.3f} dB -> {app.out_dir}")


# ========================================================================
# DATASET + SURROGATE
# ========================================================================

@cli.command('gen-data')
@click.option('--count', type=int, default=None, help="Number of samples (default from config)")
@click.option('--data-dir', type=click.Path(file_okay=False), default=None,
              help="Dataset directory (default: <out>/data)")
@click.pass_obj
def cmd_gen_data(app: AppContext, count, data_dir):
    """Generate the pump -> profile training corpus"""
    cfg = app.cfg
    data_dir = Path(data_dir) if data_dir else app.path('data')
    manifest = dataset.generate(
        data_dir, n=count, seed=cfg.dataset.seed, fiber=cfg.fiber, waves=cfg.waves,
        solver_cfg=cfg.solver, dataset_cfg=cfg.dataset, n_jobs=app.jobs,
    )
    if manifest.n_records:
        pumps, _ = dataset.load_arrays(data_dir, 'train', limit=None)
        if len(pumps):
            for row in dataset.uniformity_report(pumps):
                logger.info("%s: KS statistic %.4f (p=%.3f)", row['pump'],
                            row['ks_statistic'], row['p_value'])
    _ok(f"{manifest.n_records} samples {manifest.counts} -> {data_dir}")


def _data_dir(app: AppContext, data_dir):
    return Path(data_dir) if data_dir else app.out_dir / 'data'


def _model_dir(app: AppContext, model_dir):
    return Path(model_dir) if model_dir else app.out_dir / 'model'


@cli.command('train')
@click.option('--data-dir', type=click.Path(file_okay=False), default=None)
@click.option('--model-dir', type=click.Path(file_okay=False), default=None)
@click.option('--train-sizes', default=None,
              help="Comma-separated training set sizes for a learning-size sweep")
@click.pass_obj
def cmd_train(app: AppContext, data_dir, model_dir, train_sizes):
    """Train the inverse surrogate (or sweep training set sizes)"""
    cfg = app.cfg
    data_dir = _data_dir(app, data_dir)
    manifest = dataset.read_manifest(data_dir)
    spec = cfg.network.model_copy(update={'input_shape': (manifest.n_channels, manifest.n_z)})
    train_data = dataset.load_arrays(data_dir, 'train')
    val_data = dataset.load_arrays(data_dir, 'val')

    if train_sizes:
        sizes = [int(s) for s in _parse_floats(train_sizes, '--train-sizes')]
        sweep = train_size_sweep(train_data, val_data, sizes, spec, cfg.training)
        path = files.save_csv(app.path('train_size_sweep.csv'), sweep, app.config_hash,
                              float_format='%.8e')
        _ok(f"sweep over {len(sweep)} sizes -> {path}")
        return

    result = train(train_data, val_data, spec, cfg.training)
    model_dir = _model_dir(app, model_dir)
    save_model(result.surrogate, model_dir, app.config_hash)
    files.save_learning_curve_csv(app.path('learning_curve.csv'), result.curve, app.config_hash)
    _ok(f"best val MSE {result.best_val_mse:.3e} at epoch {result.best_epoch} -> {model_dir}")


@cli.command('eval')
@click.option('--data-dir', type=click.Path(file_okay=False), default=None)
@click.option('--model-dir', type=click.Path(file_okay=False), default=None)
@click.option('--split', 'split_name', type=click.Choice(list(dataset.SPLIT_NAMES)),
              default='test', show_default=True)
@click.option('--limit', type=int, default=None, help="Evaluate only the first N samples")
@click.pass_obj
def cmd_eval(app: AppContext, data_dir, model_dir, split_name, limit):
    """R^2 per pump and E_max statistics of the surrogate on one split"""
    cfg = app.cfg
    data_dir = _data_dir(app, data_dir)
    surrogate = load_model(_model_dir(app, model_dir))
    pumps, profiles = dataset.load_arrays(data_dir, split_name, limit=limit)
    if len(pumps) < 2:
        raise InvalidArgumentError(f"split {split_name!r} has {len(pumps)} samples; need 2")

    predicted = surrogate.predict_pumps_mw(profiles)
    r2 = r_squared(predicted, pumps)

    wave_set = app.wave_set()
    results = solve_many([PumpConfig(p) for p in predicted], cfg.fiber, wave_set, cfg.solver,
                         n_jobs=app.jobs)
    errors = np.array([e_max(true, res.signal_profile.values_dbm)
                       for true, res in zip(profiles, results) if res.converged])
    if len(errors) < len(results):
        logger.warning("%d predicted configurations did not converge; excluded from E_max",
                       len(results) - len(errors))

    metrics = {
        'split': split_name,
        'n_samples': int(len(pumps)),
        'r_squared': {f"p{k + 1}": v for k, v in enumerate(r2)},
        'e_max': e_max_histogram(errors, bin_width=0.1),
    }
    path = files.save_json(app.path(f"metrics_{split_name}.json"), metrics, app.config_hash)
    _ok(f"R^2 min {np.nanmin(r2):.3f}, E_max mean {metrics['e_max']['mean_db']} dB -> {path}")


# ========================================================================
# DESIGN
# ========================================================================

def _target_profile(name, freq_grid, z):
    if name == 'symmetric':
        return sinusoidal_symmetric_target(freq_grid, z)
    return flat_target(0.0, freq_grid, z)


def _scenario_name(target, objective_name, weights):
    if target == 'symmetric' and objective_name == 'asymmetry':
        return 'symmetric'
    if objective_name == 'target':
        return f"{target}_target"
    for name, scenario in SCENARIOS.items():
        if np.allclose(scenario.as_array(), weights.as_array(), atol=1e-9):
            return name
    return 'custom'


def _cnn_trial(seed, target, pump_objective, surrogate, delta_p, params, quiet=True):
    return run_cnn_assisted(target, pump_objective, surrogate, delta_p,
                            params.model_copy(update={'seed': seed}),
                            show_progress=not quiet)


def _random_trial(seed, pump_objective, params, quiet=True):
    return run_random_baseline(pump_objective, params.model_copy(update={'seed': seed}),
                               show_progress=not quiet)


@cli.command('design')
@click.option('--target', type=click.Choice(['flat', 'symmetric']), default='flat',
              show_default=True)
@click.option('--weights', callback=_parse_weights, default=None,
              help="m0,m1,m2 or a scenario name (m1, m2, m3); default m3")
@click.option('--objective', 'objective_name',
              type=click.Choice(['weighted', 'asymmetry', 'target']), default=None,
              help="Default: weighted for flat, asymmetry for symmetric")
@click.option('--scenario', default=None, help="Artifact name prefix")
@click.option('--model-dir', type=click.Path(file_okay=False), default=None)
@click.option('--baseline', is_flag=True, help="Also run random-initialization DE")
@click.option('--no-surrogate', is_flag=True, help="Run only the random-DE baseline")
@click.option('--trials', type=int, default=0, help="Independent trials for mean/std curves")
@click.option('--max-evaluations', type=int, default=None)
@click.pass_obj
def cmd_design(app: AppContext, target, weights, objective_name, scenario, model_dir,
               baseline, no_surrogate, trials, max_evaluations):
    """Fine-tune pump powers for a flat or symmetric 2D target"""
    cfg = app.cfg
    if no_surrogate and not baseline:
        raise click.UsageError("--no-surrogate requires --baseline")
    if trials == 1 or trials < 0:
        raise click.BadParameter("--trials must be 0 or at least 2", param_hint='--trials')
    if objective_name is None:
        objective_name = 'asymmetry' if target == 'symmetric' else 'weighted'
    weights = weights or SCENARIOS['m3']
    params = cfg.de
    if max_evaluations is not None:
        params = DEParams.model_validate({**params.model_dump(), 'max_evaluations': max_evaluations})

    wave_set = app.wave_set()
    freq_grid = wave_set.signal_frequencies
    z = z_grid(cfg.fiber.span_length, cfg.solver.z_step)
    target_profile = _target_profile(target, freq_grid, z)

    if objective_name == 'asymmetry':
        objective = AsymmetryObjective()
    elif objective_name == 'target':
        objective = TargetDeviationObjective(target_profile)
    else:
        objective = WeightedExcursionObjective(weights)
    pump_objective = PumpObjective(objective, cfg.fiber, wave_set, cfg.solver)
    scenario = scenario or _scenario_name(target, objective_name, weights)
    delta_p = DEFAULT_DELTA_P[:wave_set.n_pumps]

    models = {}
    extra = {'target': target, 'objective': objective_name,
             'weights': weights.as_array() if objective_name == 'weighted' else None,
             'de_params': params.model_dump(mode='json')}

    surrogate = None
    if no_surrogate:
        trace = run_random_baseline(pump_objective, params, n_jobs=app.jobs)
        best_label = 'random DE'
    else:
        surrogate = load_model(_model_dir(app, model_dir))
        trace = run_cnn_assisted(target_profile, pump_objective, surrogate, delta_p, params,
                                 n_jobs=app.jobs)
        cnn_eval = pump_objective(trace.initial_prediction.powers_mw)
        if cnn_eval.breakdown is not None:
            models['CNN'] = (trace.initial_prediction, cnn_eval.breakdown)
        best_label = 'CNN+DE'
        if baseline and not trials:
            random_trace = run_random_baseline(pump_objective, params, n_jobs=app.jobs)
            models['random DE'] = (random_trace.best_vector, random_trace.best_evaluation.breakdown)
            files.save_trace_csv(app.path(f"{scenario}_random_trace.csv"), random_trace,
                                 app.config_hash)

    best = PumpConfig(trace.best_vector)
    result = pump_objective.solve(best.powers_mw)
    profile = result.signal_profile
    breakdown = objective(profile)
    models[best_label] = (best, breakdown)
    extra.update({
        'n_evaluations': trace.n_evaluations,
        'rejected_trial_count': trace.rejected_trial_count,
        'generations': trace.generations,
        'generation_cap_hit': trace.generation_cap_hit,
        'bounds_mw': {'lower': trace.bounds.lower, 'upper': trace.bounds.upper},
    })

    if trials:
        cnn_stats = None
        if surrogate is not None:
            runner = functools.partial(_cnn_trial, target=target_profile,
                                       pump_objective=pump_objective, surrogate=surrogate,
                                       delta_p=delta_p, params=params)
            cnn_stats = multi_trial_stats(runner, trials, n_jobs=app.jobs)
            files.save_curves_csv(app.path(f"{scenario}_cnn_de_curves.csv"), cnn_stats.curves,
                                  app.config_hash)
            extra['cnn_de_final_cost'] = _final_stats(cnn_stats)
        if baseline:
            runner = functools.partial(_random_trial, pump_objective=pump_objective, params=params)
            random_stats = multi_trial_stats(runner, trials, n_jobs=app.jobs)
            files.save_curves_csv(app.path(f"{scenario}_random_de_curves.csv"),
                                  random_stats.curves, app.config_hash)
            extra['random_de_final_cost'] = _final_stats(random_stats)

    files.save_trace_csv(app.path(f"{scenario}_trace.csv"), trace, app.config_hash)
    files.save_profile_csv(app.path(f"{scenario}_profile.csv"), profile, app.config_hash)
    files.save_heatmap_pgm(app.path(f"{scenario}_heatmap.pgm"), profile, app.config_hash)
    files.save_channel_analysis_csv(app.path(f"{scenario}_channels.csv"), profile, breakdown,
                                    app.config_hash)
    files.save_summary_json(app.path(f"{scenario}_summary.json"), scenario, models,
                            app.config_hash, extra)
    _ok(f"{scenario}: best cost {breakdown.cost:.4f} after {trace.n_evaluations} evaluations "
        f"-> {app.out_dir}")


def _final_stats(stats):
    costs = stats.final_costs
    return {'mean': float(np.mean(costs)), 'std': float(np.std(costs, ddof=1)),
            'seeds': stats.seeds}


# ========================================================================
# ENTRY POINT
# ========================================================================

def main(argv=None):
    """Run the CLI and map failures onto exit codes"""
    try:
        cli.main(args=argv, prog_name='cli.py', standalone_mode=False)
    except click.exceptions.Abort:
        console.print("[red]✗[/red] aborted")
        return 1
    except click.UsageError as exc:
        console.print(f"[red]✗[/red] usage error: {exc.format_message()}")
        return 1
    except (ValidationError, InvalidArgumentError) as exc:
        logger.debug("validation failure", exc_info=True)
        console.print(f"[red]✗[/red] invalid input: {exc}")
        return 1
    except (RamanDesignError, OSError) as exc:
        logger.debug("runtime failure", exc_info=True)
        console.print(f"[red]✗[/red] {exc}")
        return 2
    except click.ClickException as exc:
        console.print(f"[red]✗[/red] {exc.format_message()}")
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
