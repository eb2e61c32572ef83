"""Elitist, mutation-only genetic algorithm and the task-presentation paradigms."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .ctrnn import decode_genotype, genome_dimension
from .embodiment import (
    PhysicsConfig,
    TaskFamily,
    categorization_trials,
    evaluate_task,
    pole_trials,
)

log = logging.getLogger(__name__)

THREADS_ENV = "NEUREUSE_THREADS"


class Paradigm(str, Enum):
    CATEGORIZATION = "categorization"
    POLE = "pole"
    BOTH = "both"
    POLE_FIRST = "pole_first"
    CAT_FIRST = "cat_first"


DEFAULT_SWITCH = {Paradigm.POLE_FIRST: 500, Paradigm.CAT_FIRST: 1000}


def active_tasks(paradigm: Paradigm, generation: int,
                 switch: Optional[int] = None) -> tuple[TaskFamily, ...]:
    """Tasks whose fitness is selected on at ``generation``."""
    paradigm = Paradigm(paradigm)
    if generation < 0:
        raise ValueError("generation must be non-negative")
    if paradigm is Paradigm.CATEGORIZATION:
        return (TaskFamily.CATEGORIZATION,)
    if paradigm is Paradigm.POLE:
        return (TaskFamily.POLE,)
    if switch is None:
        switch = DEFAULT_SWITCH.get(paradigm, 0)
    if paradigm is Paradigm.POLE_FIRST and generation < switch:
        return (TaskFamily.POLE,)
    if paradigm is Paradigm.CAT_FIRST and generation < switch:
        return (TaskFamily.CATEGORIZATION,)
    return (TaskFamily.CATEGORIZATION, TaskFamily.POLE)


def combine_fitness(task_fitness: dict, tasks: Sequence[TaskFamily]) -> float:
    """Product of the selected task fitnesses (a single task passes through)."""
    return float(math.prod(task_fitness[TaskFamily(t)] for t in tasks))


def fitness_for_generation(params, generation: int, paradigm: Paradigm,
                           physics: PhysicsConfig = PhysicsConfig(),
                           switch: Optional[int] = None) -> float:
    tasks = active_tasks(paradigm, generation, switch)
    scores = {t: evaluate_task(params, t, physics) for t in tasks}
    return combine_fitness(scores, tasks)


@dataclass
class EvoConfig:
    n_inter: int = 2
    pop_size: int = 100
    elite_fraction: float = 0.04
    mutation_variance: float = 0.3
    # "gene": i.i.d. noise of this variance per gene; "vector": one random
    # direction whose length is Gaussian with this variance
    mutation_mode: str = "gene"
    paradigm: Paradigm = Paradigm.BOTH
    switch_generation: Optional[int] = None
    generations: int = 2000
    seed: int = 0
    random_trials: bool = False
    # stop once the selected fitness reaches this value
    target_fitness: Optional[float] = None
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)

    def __post_init__(self):
        self.paradigm = Paradigm(self.paradigm)
        if isinstance(self.physics, dict):
            self.physics = PhysicsConfig.from_dict(self.physics)
        if self.pop_size < 1 or self.n_inter < 1 or self.generations < 1:
            raise ValueError("pop_size, n_inter and generations must be positive")
        if not 0 < self.elite_fraction <= 1:
            raise ValueError("elite_fraction must be in (0, 1]")
        if self.mutation_variance < 0:
            raise ValueError("mutation_variance must be non-negative")
        if self.mutation_mode not in ("gene", "vector"):
            raise ValueError(f"unknown mutation_mode {self.mutation_mode!r}")

    @property
    def n_elite(self) -> int:
        # guard against float noise such as 100 * 0.04 = 4.000000000000001
        return max(1, math.ceil(round(self.pop_size * self.elite_fraction, 9)))

    @property
    def switch(self) -> Optional[int]:
        if self.switch_generation is not None:
            return self.switch_generation
        return DEFAULT_SWITCH.get(self.paradigm)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["paradigm"] = self.paradigm.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvoConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    config: EvoConfig
    generations: list = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def best_fitness(self) -> float:
        return self.generations[-1]["best"]

    @property
    def best_genes(self) -> np.ndarray:
        return np.asarray(self.generations[-1]["best_genes"])

    def best_curve(self) -> np.ndarray:
        return np.array([g["best"] for g in self.generations])

    def write_jsonl(self, path) -> None:
        with Path(path).open("w") as fh:
            for line in self.generations:
                fh.write(json.dumps(line, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path, config: EvoConfig) -> "RunRecord":
        with Path(path).open() as fh:
            gens = [json.loads(line) for line in fh if line.strip()]
        return cls(config, gens)


def mutation_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    """Generator owned by one offspring slot, independent of evaluation order."""
    return np.random.default_rng([seed, generation, index])


def mutation_noise(rng: np.random.Generator, dim: int, variance: float,
                   mode: str = "gene") -> np.ndarray:
    sigma = math.sqrt(variance)
    if mode == "gene":
        return rng.normal(0.0, sigma, dim)
    direction = rng.normal(0.0, 1.0, dim)
    direction /= np.linalg.norm(direction)
    return direction * rng.normal(0.0, sigma)


def thread_count(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(workers))


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"best": float(v.max()), "mean": float(v.mean()), "worst": float(v.min())}


def _trial_specs(family: TaskFamily, cfg: EvoConfig, generation: int, index: int):
    if not cfg.random_trials:
        return None
    rng = np.random.default_rng([cfg.seed, generation, index, 1])
    if family is TaskFamily.CATEGORIZATION:
        return categorization_trials(rng=rng)
    return pole_trials()


ScoreFn = Callable[[np.ndarray, int, int], dict]


def ga_search(cfg: EvoConfig, dim: int, score_fn: ScoreFn,
              combine: Callable[[dict, int], float],
              workers: Optional[int] = None,
              phase: Optional[Callable[[int], object]] = None,
              on_generation: Optional[Callable[[dict], None]] = None) -> RunRecord:
    """Elitist, mutation-only search over ``[-1, 1]^dim``.

    Each generation every genotype is scored, the top ``n_elite`` survive
    unchanged and the remaining slots are filled with mutated copies of the
    elites (cycled in rank order), clamped to [-1, 1].

    Args:
        cfg: population size, elitism, mutation, generations and seed.
        dim: genotype length.
        score_fn: ``(genes, generation, index) -> {name: score}``.
        combine: ``(scores, generation) -> fitness`` used for ranking.
        workers: evaluation threads; results do not depend on it.
        phase: ``generation -> key``; elite scores are reused while the key
            is unchanged. ``None`` disables reuse (stochastic scoring).
        on_generation: called with each log line as it is produced.
    """
    rng = np.random.default_rng(cfg.seed)
    pop = rng.uniform(-1.0, 1.0, (cfg.pop_size, dim))
    n_elite = cfg.n_elite
    record = RunRecord(cfg)
    cache: dict = {}
    n_threads = thread_count(workers)
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None
    config_hash = cfg.config_hash()

    def score(gen, idx):
        hit = cache.get((phase(gen), pop[idx].tobytes())) if phase else None
        if hit is not None:
            return hit
        return score_fn(pop[idx], gen, idx)

    try:
        for gen in range(cfg.generations):
            if pool is None:
                per_task = [score(gen, i) for i in range(cfg.pop_size)]
            else:
                per_task = list(pool.map(lambda i: score(gen, i), range(cfg.pop_size)))
            fitness = np.array([combine(s, gen) for s in per_task])
            order = np.argsort(-fitness, kind="stable")
            best = int(order[0])
            names = sorted(per_task[best])

            line = {
                "generation": gen,
                "tasks": names,
                **_stats(fitness),
                "best_task_fitness": {k: float(per_task[best][k]) for k in names},
                "per_task": {k: _stats([s[k] for s in per_task]) for k in names},
                "best_genes": [float(g) for g in pop[best]],
                "seed": cfg.seed,
                "config_hash": config_hash,
            }
            record.generations.append(line)
            if on_generation is not None:
                on_generation(line)
            log.debug("gen %d best %.4f mean %.4f", gen, line["best"], line["mean"])

            if gen == cfg.generations - 1:
                break
            if cfg.target_fitness is not None and line["best"] >= cfg.target_fitness:
                break

            elites = pop[order[:n_elite]].copy()
            cache = {}
            if phase is not None:
                key = phase(gen)
                for e in order[:n_elite]:
                    cache[(key, pop[e].tobytes())] = per_task[e]
            new = np.empty_like(pop)
            new[:n_elite] = elites
            for i in range(n_elite, cfg.pop_size):
                parent = elites[(i - n_elite) % n_elite]
                noise = mutation_noise(mutation_rng(cfg.seed, gen, i), dim,
                                       cfg.mutation_variance, cfg.mutation_mode)
                new[i] = np.clip(parent + noise, -1.0, 1.0)
            pop = new
    finally:
        if pool is not None:
            pool.shutdown()
    return record


def evolve(cfg: EvoConfig, workers: Optional[int] = None,
           on_generation: Optional[Callable[[dict], None]] = None) -> RunRecord:
    """Evolve CTRNN agents on the tasks selected by ``cfg.paradigm``.

    Per-task scores are logged under the task names; the ranked fitness is
    their product over the tasks active in that generation.
    """

    def score_fn(genes, gen, idx):
        params = decode_genotype(genes, cfg.n_inter)
        tasks = active_tasks(cfg.paradigm, gen, cfg.switch)
        return {t.value: evaluate_task(params, t, cfg.physics, _trial_specs(t, cfg, gen, idx))
                for t in tasks}

    def combine(scores, gen):
        return combine_fitness(scores, active_tasks(cfg.paradigm, gen, cfg.switch))

    def phase(gen):
        return active_tasks(cfg.paradigm, gen, cfg.switch)

    return ga_search(cfg, genome_dimension(cfg.n_inter), score_fn, combine, workers,
                     phase=None if cfg.random_trials else phase,
                     on_generation=on_generation)


def cross_evaluate(genes, n_inter: int, trained: TaskFamily, other: TaskFamily,
                   physics: PhysicsConfig = PhysicsConfig()) -> tuple[float, float]:
    """Fitness of one unchanged genome on the task it was trained for and another."""
    params = decode_genotype(genes, n_inter)
    return evaluate_task(params, trained, physics), evaluate_task(params, other, physics)


def random_agent_fitness(n: int, n_inter: int, seed: int,
                         physics: PhysicsConfig = PhysicsConfig()) -> np.ndarray:
    """``(n, 2)`` array of (categorization, pole) fitness for random genotypes.

    Genotype ``i`` is drawn uniformly from its own generator seeded with
    ``(seed, i)``.
    """
    out = np.empty((n, 2))
    dim = genome_dimension(n_inter)
    for i in range(n):
        genes = np.random.default_rng([seed, i]).uniform(-1.0, 1.0, dim)
        params = decode_genotype(genes, n_inter)
        out[i] = (evaluate_task(params, TaskFamily.CATEGORIZATION, physics),
                  evaluate_task(params, TaskFamily.POLE, physics))
    return out


def derive_seed(master: int, index: int) -> int:
    """Per-run seed for batch mode."""
    digest = hashlib.sha256(f"{master}:{index}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
