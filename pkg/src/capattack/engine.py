"""Differential evolution over pixel space.

The engine is generic: it knows genomes (images), a fitness callable that
maps a genome to ``(fitness, caption)`` through the oracle, and the epsilon
budget every evaluated genome must satisfy. Strategy specifics live in the
mutation operators; the stages pick initializer, strategy, and direction.

Evaluations inside one generation are independent; with ``jobs > 1`` they
run on a thread pool. Selection is the per-generation synchronization
point, and all random draws happen on the single seeded generator before
evaluation, so traces are reproducible regardless of the jobs setting.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .image import as_heatmap, as_image, project_to_budget

STRATEGIES = ("rand1", "current_to_best")
DIRECTIONS = ("maximize", "minimize")

FitnessFn = Callable[[np.ndarray], tuple[float, str]]


@dataclass
class Individual:
    """One candidate image plus its cached oracle response.

    fitness and output_text are set together: an evaluated individual always
    caches the caption its fitness was computed from.
    """

    genome: np.ndarray
    fitness: Optional[float] = None
    output_text: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.fitness is None) != (self.output_text is None):
            raise ValueError("fitness and output_text must be set together")

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


@dataclass(frozen=True)
class DEConfig:
    """Differential evolution hyperparameters.

    eta bounds the initial per-element search range; None resolves to
    2 * epsilon at run time (the budget projector then enforces the mean
    constraint). max_generations = 0 evaluates the initial population only.
    """

    pop_size: int = 40
    f: float = 0.5
    cr: float = 0.9
    eta: Optional[float] = None
    max_generations: int = 100
    target_fitness: Optional[float] = None
    seed: int = 0
    strategy: str = "rand1"
    direction: str = "maximize"
    force_one_dimension: bool = False
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.pop_size < 4:
            raise ValueError(f"pop_size must be >= 4, got {self.pop_size}")
        if not 0.0 <= self.cr <= 1.0:
            raise ValueError(f"cr must be in [0, 1], got {self.cr}")
        if not self.f > 0:
            raise ValueError(f"f must be > 0, got {self.f}")
        if self.eta is not None and not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.max_generations < 0:
            raise ValueError(f"max_generations must be >= 0, got {self.max_generations}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")

    def resolve_eta(self, epsilon: float) -> float:
        return self.eta if self.eta is not None else 2.0 * epsilon


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    queries: int


@dataclass
class RunTrace:
    """Per-generation fitness curve plus the best individual found."""

    records: list[GenerationRecord] = field(default_factory=list)
    best: Optional[Individual] = None
    reached_target: bool = False

    @property
    def queries(self) -> int:
        return self.records[-1].queries if self.records else 0

    @property
    def completed_generations(self) -> int:
        return self.records[-1].generation if self.records else 0

    def as_dict(self) -> dict:
        return {
            "reached_target": self.reached_target,
            "queries": self.queries,
            "completed_generations": self.completed_generations,
            "best_fitness": None if self.best is None else self.best.fitness,
            "best_output_text": None if self.best is None else self.best.output_text,
            "generations": [
                {
                    "generation": r.generation,
                    "best_fitness": r.best_fitness,
                    "mean_fitness": r.mean_fitness,
                    "queries": r.queries,
                }
                for r in self.records
            ],
        }


class RunAborted(RuntimeError):
    """The oracle failed mid-run; carries the partial trace."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


def init_uniform(clean, config: DEConfig, rng: np.random.Generator, epsilon: float) -> list[Individual]:
    """Population of pop_size images: clean + uniform(-1, 1) * eta per element,
    projected onto the epsilon budget."""
    clean_arr = as_image(clean)
    eta = config.resolve_eta(epsilon)
    individuals = []
    for _ in range(config.pop_size):
        genome = clean_arr + rng.uniform(-1.0, 1.0, size=clean_arr.shape) * eta
        individuals.append(Individual(project_to_budget(genome, clean_arr, epsilon)))
    return individuals


def init_masked(
    clean,
    heatmap,
    config: DEConfig,
    rng: np.random.Generator,
    epsilon: float,
) -> list[Individual]:
    """Population with the per-element search range scaled by the attention
    heatmap: clean + uniform(-A, A) * eta. Elements with A = 0 stay exactly
    clean. The heatmap is replicated across the three channels and must
    already match the image resolution."""
    clean_arr = as_image(clean)
    hm = as_heatmap(heatmap)
    if hm.shape != clean_arr.shape[:2]:
        raise ValueError(
            f"heatmap size {hm.shape} does not match image size {clean_arr.shape[:2]}"
        )
    eta = config.resolve_eta(epsilon)
    bound = hm.astype(np.float64)[:, :, None] * eta
    individuals = []
    for _ in range(config.pop_size):
        genome = clean_arr + rng.uniform(-1.0, 1.0, size=clean_arr.shape) * bound
        individuals.append(Individual(project_to_budget(genome, clean_arr, epsilon)))
    return individuals


def _distinct_indices(rng: np.random.Generator, pop_size: int, exclude: int, k: int) -> np.ndarray:
    pool = np.delete(np.arange(pop_size), exclude)
    return rng.choice(pool, size=k, replace=False)


def mutate_rand1(population: Sequence[Individual], j: int, config: DEConfig, rng: np.random.Generator) -> np.ndarray:
    """rand/1 mutation: x_r1 + F * (x_r2 - x_r3), r1/r2/r3 distinct and != j."""
    if len(population) < 4:
        raise ValueError("rand/1 mutation needs a population of at least 4")
    r1, r2, r3 = _distinct_indices(rng, len(population), j, 3)
    return population[r1].genome + config.f * (population[r2].genome - population[r3].genome)


def mutate_current_to_best(
    population: Sequence[Individual],
    j: int,
    best: Individual,
    config: DEConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """current-to-best mutation:
    x_j + F * (x_r1 - x_r2) + F * (x_best - x_j), r1 != r2, both != j."""
    if len(population) < 3:
        raise ValueError("current-to-best mutation needs a population of at least 3")
    r1, r2 = _distinct_indices(rng, len(population), j, 2)
    x_j = population[j].genome
    return (
        x_j
        + config.f * (population[r1].genome - population[r2].genome)
        + config.f * (best.genome - x_j)
    )


def crossover_binomial(parent, mutant, config: DEConfig, rng: np.random.Generator) -> np.ndarray:
    """Binomial crossover: take the mutant element where rand(0, 1) <= CR.

    By default no dimension is forced from the mutant; the conventional
    forced-j_rand variant is available via config.force_one_dimension.
    """
    parent_arr = np.asarray(parent, dtype=np.float64)
    mutant_arr = np.asarray(mutant, dtype=np.float64)
    if parent_arr.shape != mutant_arr.shape:
        raise ValueError(f"dimension mismatch: {parent_arr.shape} vs {mutant_arr.shape}")
    take_mutant = rng.random(parent_arr.shape) <= config.cr
    if config.force_one_dimension:
        forced = rng.integers(parent_arr.size)
        take_mutant.reshape(-1)[forced] = True
    return np.where(take_mutant, mutant_arr, parent_arr)


def _better(challenger: float, incumbent: float, direction: str) -> bool:
    # ties go to the challenger: both selection rules admit the candidate
    # at equality
    if direction == "maximize":
        return challenger >= incumbent
    return challenger <= incumbent


def select(parent: Individual, trial: Individual, direction: str) -> Individual:
    """Greedy selection between parent and trial; the trial wins ties."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if not parent.evaluated or not trial.evaluated:
        raise ValueError("selection requires evaluated individuals")
    return trial if _better(trial.fitness, parent.fitness, direction) else parent


def _best_of(population: Sequence[Individual], direction: str) -> Individual:
    fitnesses = [ind.fitness for ind in population]
    idx = int(np.argmax(fitnesses)) if direction == "maximize" else int(np.argmin(fitnesses))
    return population[idx]


def _evaluate(individuals: Sequence[Individual], fitness: FitnessFn, jobs: int, trace: RunTrace) -> None:
    pending = [ind for ind in individuals if not ind.evaluated]
    try:
        if jobs > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(lambda ind: fitness(ind.genome), pending))
        else:
            results = [fitness(ind.genome) for ind in pending]
    except Exception as exc:
        raise RunAborted(f"oracle evaluation failed: {exc}", trace) from exc
    for ind, (fit, text) in zip(pending, results):
        if not math.isfinite(fit):
            raise RunAborted(f"oracle returned non-finite fitness {fit!r}", trace)
        ind.fitness = float(fit)
        ind.output_text = text


def _target_reached(best: Individual, config: DEConfig) -> bool:
    if config.target_fitness is None:
        return False
    if config.direction == "maximize":
        return best.fitness >= config.target_fitness
    return best.fitness <= config.target_fitness


def run(
    clean,
    initializer: Callable[[np.ndarray, DEConfig, np.random.Generator], list[Individual]],
    fitness: FitnessFn,
    config: DEConfig,
    epsilon: float,
    on_generation: Optional[Callable[[int, list[Individual]], None]] = None,
    success: Optional[Callable[[Individual], bool]] = None,
    constrain: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> RunTrace:
    """Run the generation loop: mutate, crossover, project, evaluate, select.

    Stops after max_generations, when the best fitness crosses
    config.target_fitness, or when `success(best)` holds. `on_generation`
    fires after each generation's selection (and once for the initial
    population as generation 0). `constrain`, when given, post-processes
    each trial genome after budget projection (it must only shrink
    perturbations). Parents are never re-evaluated; the oracle is assumed
    deterministic per image.

    Raises RunAborted with the partial trace if the oracle fails.
    """
    clean_arr = as_image(clean)
    rng = np.random.default_rng(config.seed)
    trace = RunTrace()

    population = initializer(clean_arr, config, rng)
    _evaluate(population, fitness, config.jobs, trace)
    queries = len(population)

    def _record(generation: int) -> None:
        best = _best_of(population, config.direction)
        trace.best = best
        trace.records.append(
            GenerationRecord(
                generation=generation,
                best_fitness=best.fitness,
                mean_fitness=float(np.mean([ind.fitness for ind in population])),
                queries=queries,
            )
        )

    _record(0)
    if on_generation is not None:
        on_generation(0, population)
    if _target_reached(trace.best, config) or (success is not None and success(trace.best)):
        trace.reached_target = True
        return trace

    for generation in range(1, config.max_generations + 1):
        best = trace.best
        trials: list[Individual] = []
        for j in range(config.pop_size):
            if config.strategy == "rand1":
                mutant = mutate_rand1(population, j, config, rng)
            else:
                mutant = mutate_current_to_best(population, j, best, config, rng)
            trial = crossover_binomial(population[j].genome, mutant, config, rng)
            trial = project_to_budget(trial, clean_arr, epsilon)
            if constrain is not None:
                trial = constrain(trial)
            trials.append(Individual(trial))

        _evaluate(trials, fitness, config.jobs, trace)
        queries += len(trials)
        population = [
            select(parent, trial, config.direction)
            for parent, trial in zip(population, trials)
        ]
        _record(generation)
        if on_generation is not None:
            on_generation(generation, population)
        if _target_reached(trace.best, config) or (success is not None and success(trace.best)):
            trace.reached_target = True
            break

    return trace
