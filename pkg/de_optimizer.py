"""
Differential evolution fine-tuning of the pump powers
- Box around the surrogate prediction: [(1 - dp) p*, (1 + dp) p*]
- rand/1/bin with asynchronous in-place selection, one solver run per accepted trial
- Random-initialization baseline over the full pump ranges
- Multi-trial mean/std best-cost curves
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from bvp_solver import SolverConfig, solve
from objectives import CostBreakdown
from raman_model import FiberSpec, PumpConfig, WaveSet, build_wave_set, pump_power_bounds
from utils import InvalidArgumentError, InvalidStateError

logger = logging.getLogger(__name__)

DEFAULT_DELTA_P = np.array([0.35, 0.5, 0.5, 0.5, 0.35, 0.5, 0.5, 0.5])


# ========================================================================
# TYPES
# ========================================================================

class DEParams(BaseModel):
    population_size: int = Field(30, ge=4)
    crossover_prob: float = Field(0.5, ge=0, le=1)
    mutation_factor: float = Field(0.8, ge=0, le=1)
    max_evaluations: int = Field(1000, ge=1)
    max_generations_cap: int = Field(500, ge=1)
    cost_threshold: Optional[float] = None
    seed: int = 0

    @model_validator(mode='after')
    def _budget_covers_population(self):
        if self.max_evaluations < self.population_size:
            raise ValueError(
                f"max_evaluations ({self.max_evaluations}) must cover the initial "
                f"population ({self.population_size})"
            )
        return self


@dataclass(frozen=True, eq=False)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise InvalidArgumentError(f"bounds shapes differ: {lower.shape} vs {upper.shape}")
        if np.any(lower <= 0):
            raise InvalidArgumentError(f"lower bounds must be positive, got {lower}")
        if np.any(lower >= upper):
            raise InvalidArgumentError("lower bounds must be strictly below upper bounds")
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    def __len__(self):
        return self.lower.size

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True, eq=False)
class Evaluation:
    cost: float
    breakdown: Optional[CostBreakdown] = None
    converged: bool = True


@dataclass(frozen=True, eq=False)
class TraceRecord:
    eval_index: int
    candidate: np.ndarray
    evaluation: Evaluation
    best_cost_so_far: float


@dataclass(eq=False)
class Population:
    vectors: np.ndarray
    evaluations: list

    @property
    def costs(self):
        return np.array([e.cost for e in self.evaluations])

    def __len__(self):
        return len(self.vectors)


@dataclass(eq=False)
class OptimizationTrace:
    records: list = field(default_factory=list)
    best_vector: Optional[np.ndarray] = None
    best_evaluation: Optional[Evaluation] = None
    rejected_trial_count: int = 0
    generations: int = 0
    generation_cap_hit: bool = False
    threshold_hit: bool = False
    bounds: Optional[Bounds] = None
    initial_prediction: Optional[PumpConfig] = None

    @property
    def n_evaluations(self):
        return len(self.records)

    @property
    def best_cost(self):
        return self.best_evaluation.cost if self.best_evaluation else float('inf')

    def record(self, candidate, evaluation: Evaluation):
        if evaluation.cost < self.best_cost or self.best_evaluation is None:
            self.best_vector = np.array(candidate, dtype=float)
            self.best_evaluation = evaluation
        self.records.append(TraceRecord(
            eval_index=len(self.records) + 1,
            candidate=np.array(candidate, dtype=float),
            evaluation=evaluation,
            best_cost_so_far=self.best_cost,
        ))

    def best_cost_curve(self):
        return np.array([r.best_cost_so_far for r in self.records])

    def to_frame(self):
        """eval_index, p1..pN, j0, j1, j2, weighted_or_asym, best_so_far"""
        rows = []
        for r in self.records:
            row = {'eval_index': r.eval_index}
            row.update({f"p{k + 1}": v for k, v in enumerate(r.candidate)})
            b = r.evaluation.breakdown
            row['j0'] = b.j0 if b else np.nan
            row['j1'] = b.j1 if b else np.nan
            row['j2'] = b.j2 if b else np.nan
            row['weighted_or_asym'] = r.evaluation.cost
            row['best_so_far'] = r.best_cost_so_far
            rows.append(row)
        return pd.DataFrame(rows)


def _as_evaluation(result):
    if isinstance(result, Evaluation):
        return result
    if isinstance(result, CostBreakdown):
        return Evaluation(cost=result.cost, breakdown=result)
    return Evaluation(cost=float(result))


class PumpObjective:
    """Pump powers [mW] -> Evaluation via the BVP solver and a profile objective"""

    def __init__(self, objective: Callable, fiber: FiberSpec = None, wave_set: WaveSet = None,
                 solver_cfg: SolverConfig = None):
        self.objective = objective
        self.fiber = fiber or FiberSpec()
        self.wave_set = wave_set or build_wave_set(self.fiber)
        self.solver_cfg = solver_cfg or SolverConfig()

    @property
    def name(self):
        return getattr(self.objective, 'name', 'objective')

    def solve(self, powers_mw):
        return solve(PumpConfig(powers_mw), self.fiber, self.wave_set, self.solver_cfg)

    def __call__(self, powers_mw):
        result = self.solve(powers_mw)
        if not result.converged or not result.signal_profile.is_finite:
            return Evaluation(cost=float('inf'), converged=False)
        breakdown = self.objective(result.signal_profile)
        return Evaluation(cost=breakdown.cost, breakdown=breakdown)


# ========================================================================
# OPERATORS
# ========================================================================

def bounds_from_prediction(p_star, delta_p=DEFAULT_DELTA_P):
    """[(1 - dp) p*, (1 + dp) p*] around the surrogate prediction"""
    p = p_star.powers_mw if isinstance(p_star, PumpConfig) else np.asarray(p_star, dtype=float)
    delta = np.broadcast_to(np.asarray(delta_p, dtype=float), p.shape)
    if np.any(p <= 0):
        raise InvalidArgumentError("predicted pump powers must be positive")
    if np.any(delta <= 0) or np.any(delta >= 1):
        raise InvalidArgumentError(f"delta_p must lie in (0, 1), got {delta}")
    return Bounds((1.0 - delta) * p, (1.0 + delta) * p)


def _evaluate_all(objective, vectors, n_jobs):
    if n_jobs == 1 or len(vectors) <= 1:
        return [_as_evaluation(objective(v)) for v in vectors]
    results = Parallel(n_jobs=n_jobs)(delayed(objective)(v) for v in vectors)
    return [_as_evaluation(r) for r in results]


def init_population(bounds: Bounds, size, rng, objective=None, n_jobs=1):
    """
    Uniform i.i.d. individuals inside the box

    Args:
        bounds: Bounds
        size: population size
        rng: numpy Generator
        objective: when given, every individual is evaluated (in index order)
        n_jobs: joblib workers for those evaluations

    Returns:
        Population
    """
    vectors = rng.uniform(bounds.lower, bounds.upper, size=(size, len(bounds)))
    # uniform() is half-open; keep float rounding at the upper face inside the box
    vectors = np.clip(vectors, bounds.lower, bounds.upper)
    if objective is None:
        evaluations = [Evaluation(cost=float('nan')) for _ in range(size)]
    else:
        evaluations = _evaluate_all(objective, vectors, n_jobs)
    return Population(vectors, evaluations)


def mutate(vectors, i, F, rng):
    """v = x_r1 + F (x_r2 - x_r3), r1, r2, r3 distinct and different from i"""
    vectors = np.asarray(vectors, dtype=float)
    n = len(vectors)
    if n < 4:
        raise InvalidStateError(f"mutation needs at least 4 individuals, got {n}")
    others = np.delete(np.arange(n), i)
    r1, r2, r3 = rng.choice(others, size=3, replace=False)
    return vectors[r1] + F * (vectors[r2] - vectors[r3])


def crossover(target, donor, CR, rng):
    target = np.asarray(target, dtype=float)
    donor = np.asarray(donor, dtype=float)
    j_rand = rng.integers(target.size)
    take = rng.random(target.size) <= CR
    take[j_rand] = True
    return np.where(take, donor, target)


def step_individual(i, population: Population, objective, bounds: Bounds, params: DEParams, rng):
    """
    One mutate / crossover / select step for individual i, updating in place

    Returns:
        (evaluations consumed: 0 or 1, trial vector, Evaluation or None if rejected)
    """
    donor = mutate(population.vectors, i, params.mutation_factor, rng)
    trial = crossover(population.vectors[i], donor, params.crossover_prob, rng)
    if not bounds.contains(trial):
        return 0, trial, None

    evaluation = _as_evaluation(objective(trial))
    # non-finite trial costs never displace an individual
    if np.isfinite(evaluation.cost) and evaluation.cost <= population.evaluations[i].cost:
        population.vectors[i] = trial
        population.evaluations[i] = evaluation
    return 1, trial, evaluation


# ========================================================================
# DRIVER
# ========================================================================

class DifferentialEvolution:
    """Evaluation-budgeted rand/1/bin loop; sequential by construction"""

    def __init__(self, objective, bounds: Bounds, params: DEParams = None, n_jobs=1,
                 show_progress=True):
        self.objective = objective
        self.bounds = bounds
        self.params = params or DEParams()
        self.n_jobs = n_jobs
        self.show_progress = show_progress
        self.rng = np.random.default_rng(self.params.seed)
        self.population = None
        self.trace = OptimizationTrace(bounds=bounds)

    def _threshold_reached(self):
        threshold = self.params.cost_threshold
        return threshold is not None and self.trace.best_cost <= threshold

    def run(self):
        params = self.params
        budget = params.max_evaluations
        progress = tqdm(total=budget, desc="DE evaluations", unit="eval",
                        disable=None if self.show_progress else True)

        self.population = init_population(self.bounds, params.population_size, self.rng,
                                          self.objective, self.n_jobs)
        for vector, evaluation in zip(self.population.vectors, self.population.evaluations):
            self.trace.record(vector, evaluation)
        progress.update(len(self.population))

        evaluations = len(self.population)
        while evaluations < budget and not self._threshold_reached():
            if self.trace.generations >= params.max_generations_cap:
                self.trace.generation_cap_hit = True
                logger.warning("generation cap %d reached after %d of %d evaluations",
                               params.max_generations_cap, evaluations, budget)
                break
            self.trace.generations += 1
            for i in range(len(self.population)):
                if evaluations >= budget:
                    break
                used, trial, evaluation = step_individual(
                    i, self.population, self.objective, self.bounds, params, self.rng)
                if not used:
                    self.trace.rejected_trial_count += 1
                    logger.debug("generation %d: trial %d outside bounds, rejected",
                                 self.trace.generations, i)
                    continue
                evaluations += 1
                self.trace.record(trial, evaluation)
                progress.update(1)
                if self._threshold_reached():
                    self.trace.threshold_hit = True
                    break
            progress.set_postfix(best=f"{self.trace.best_cost:.4g}")
        progress.close()

        if self._threshold_reached():
            self.trace.threshold_hit = True
        if not np.isfinite(self.trace.best_cost):
            raise InvalidStateError("no candidate produced a finite cost")
        logger.info("DE finished: %d evaluations, %d rejected trials, best cost %.6g",
                    self.trace.n_evaluations, self.trace.rejected_trial_count, self.trace.best_cost)
        return self.trace


def run(objective, bounds: Bounds, params: DEParams = None, n_jobs=1, show_progress=True):
    return DifferentialEvolution(objective, bounds, params, n_jobs, show_progress).run()


def run_cnn_assisted(target, objective, surrogate, delta_p=DEFAULT_DELTA_P,
                     params: DEParams = None, n_jobs=1, show_progress=True):
    """
    Surrogate prediction -> box around it -> DE on the real solver

    Args:
        target: PowerProfile2D the surrogate inverts
        objective: pump powers -> Evaluation (usually a PumpObjective)
        surrogate: object with predict_pumps(profile) -> PumpConfig
    """
    p_star = surrogate.predict_pumps(target)
    logger.info("surrogate prediction [mW]: %s", np.round(p_star.powers_mw, 1).tolist())
    trace = run(objective, bounds_from_prediction(p_star, delta_p), params, n_jobs, show_progress)
    trace.initial_prediction = p_star
    return trace


def run_random_baseline(objective, params: DEParams = None, n_jobs=1, show_progress=True):
    """Same loop initialized over the full pump ranges"""
    lower, upper = pump_power_bounds()
    return run(objective, Bounds(lower, upper), params, n_jobs, show_progress)


# ========================================================================
# MULTI-TRIAL STATISTICS
# ========================================================================

@dataclass(eq=False)
class TrialStats:
    curves: pd.DataFrame
    final_costs: np.ndarray
    seeds: list


def _final_curve(runner, seed):
    trace = runner(seed)
    return trace.best_cost_curve()


def multi_trial_stats(runner, n_trials, seeds=None, n_jobs=1):
    """
    Mean and sample std of best-cost-so-far per evaluation index

    Args:
        runner: seed -> OptimizationTrace
        n_trials: number of independent runs (at least 2)
        seeds: explicit seeds, range(n_trials) by default
        n_jobs: joblib workers, one trial per worker

    Returns:
        TrialStats; shorter curves are padded with their last value
    """
    if n_trials < 2:
        raise InvalidArgumentError("multi-trial statistics need at least 2 trials")
    seeds = list(range(n_trials)) if seeds is None else list(seeds)
    if len(seeds) != n_trials:
        raise InvalidArgumentError(f"expected {n_trials} seeds, got {len(seeds)}")

    if n_jobs == 1:
        curves = [_final_curve(runner, s) for s in seeds]
    else:
        curves = Parallel(n_jobs=n_jobs)(delayed(_final_curve)(runner, s) for s in seeds)

    length = max(len(c) for c in curves)
    stacked = np.vstack([np.pad(c, (0, length - len(c)), mode='edge') for c in curves])
    # offsets from the first trial are exactly zero wherever every trial agrees
    offsets = stacked - stacked[0]
    with np.errstate(invalid='ignore'):
        mean = stacked[0] + offsets.mean(axis=0)
        std = offsets.std(axis=0, ddof=1)
    frame = pd.DataFrame({
        'eval_index': np.arange(1, length + 1),
        'mean_best_cost': mean,
        'std_best_cost': std,
    })
    return TrialStats(curves=frame, final_costs=stacked[:, -1], seeds=seeds)
