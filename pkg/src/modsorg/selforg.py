"""Spreading planning tasks over a few adaptive aggregation modules.

This is on-line kernel clustering with tasks as data, module partitions as
kernels, the module-task error bound as distance and one refinement step as
kernel update.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .aggregation import Partition, SplitRule, index_halves
from .bounds import AS_WRITTEN, module_task_error
from .clustering import ClusteringProblem, OnlineResult, online_dynamic_cluster
from .mdp import DEFAULT_TOL, FiniteMdp
from .refinement import RefineConfig, learn_step, split_best


@dataclass(frozen=True)
class SelfOrgConfig:
    modules: int = 3
    budget: int = 400
    splits_per_call: int = 1
    max_sweeps: int = 40
    tol: float = 0.0
    warmup_splits: int = 2
    bound_variant: str = AS_WRITTEN
    solver_tol: float = DEFAULT_TOL
    seed: int = 0

    @property
    def refine(self) -> RefineConfig:
        return RefineConfig(self.budget, self.splits_per_call, self.bound_variant, self.solver_tol)


@dataclass
class ModuleState:
    id: int
    partition: Partition
    budget: int
    cache: dict = field(default_factory=dict)  # task -> (error, stale)


@dataclass(frozen=True)
class TraceRecord:
    sweep: int
    iteration: int
    task: int
    chosen: int
    errors: tuple
    global_error: float
    macro_counts: tuple


@dataclass
class SelfOrgResult:
    modules: list
    assignment: np.ndarray
    trace: list
    sweeps: int
    sweep_errors: list  # end-of-sweep global error, index 0 = initial


def initial_modules(
    base: Partition, m: int, warmup_splits: int, seed,
    warmup_rule: Callable[[np.random.Generator], SplitRule],
) -> list[Partition]:
    """``m`` copies of ``base``, each refined by seeded random splits.

    Module ``j`` draws from the stream ``(seed, j)``.
    """
    modules = []
    for j in range(m):
        rng = np.random.default_rng([seed, j])
        rule = warmup_rule(rng)
        p = base
        for _ in range(warmup_splits):
            refined = split_best(p, rng.random(p.n_macros), rule)
            if refined is None:
                break
            p = refined
        modules.append(p)
    return modules


def distance_for(cfg: SelfOrgConfig):
    def distance(task: FiniteMdp, partition: Partition) -> float:
        return module_task_error(task, partition, cfg.bound_variant, cfg.solver_tol)
    return distance


def task_problem(tasks: Sequence[FiniteMdp], cfg: SelfOrgConfig, splitter: SplitRule) -> ClusteringProblem:
    """Tasks as data, partitions as kernels."""
    refine = cfg.refine

    def update(partition: Partition, task: FiniteMdp) -> Partition:
        return learn_step(task, partition, refine, splitter).partition

    return ClusteringProblem(list(tasks), distance_for(cfg), kernel_update=update)


def self_organize(
    tasks: Sequence[FiniteMdp],
    cfg: SelfOrgConfig = SelfOrgConfig(),
    splitter: SplitRule = index_halves,
    modules: Optional[list[Partition]] = None,
    on_sweep: Optional[Callable[[int, list, np.ndarray, np.ndarray], None]] = None,
) -> SelfOrgResult:
    """Run the on-line loop over ``tasks``.

    ``modules`` are the initial partitions (default: blank partitions with
    ``cfg.warmup_splits`` random index splits). ``on_sweep(sweep, partitions,
    assignment, errors)`` sees the state after every sweep, and before the
    first one as sweep 0.
    """
    if not tasks:
        raise ValueError("no tasks")
    if cfg.modules < 1:
        raise ValueError("need at least one module")
    if modules is None:
        from .aggregation import RandomHalves

        modules = initial_modules(Partition.blank(tasks[0].n_states), cfg.modules, cfg.warmup_splits,
                                  cfg.seed, RandomHalves)
    if len(modules) != cfg.modules:
        raise ValueError(f"got {len(modules)} initial modules, config says {cfg.modules}")
    problem = task_problem(tasks, cfg, splitter)

    def sweep_hook(sweep, state, dist):
        if on_sweep is not None:
            on_sweep(sweep, state.kernels, state.assignment, dist)

    result = online_dynamic_cluster(problem, modules, cfg.seed, cfg.tol, cfg.max_sweeps, sweep_hook)
    return _collect(result, cfg)


def _collect(result: OnlineResult, cfg: SelfOrgConfig) -> SelfOrgResult:
    trace = [
        TraceRecord(step.sweep, step.iteration, step.point, step.chosen, step.distances, step.distortion,
                    tuple(p.n_macros for p in step.kernels))
        for step in result.trace
    ]
    modules = []
    for j, p in enumerate(result.state.kernels):
        cache = {i: (float(result.distances[i, j]), False) for i in range(result.distances.shape[0])}
        modules.append(ModuleState(j, p, cfg.budget, cache))
    return SelfOrgResult(modules, result.state.assignment, trace, result.sweeps, result.sweep_distortions)


def global_error(tasks, modules: Sequence[Partition], assignment, variant: str = AS_WRITTEN,
                 tol: float = DEFAULT_TOL) -> float:
    """Sum over tasks of the error of the module each task is assigned to."""
    return float(sum(module_task_error(t, modules[j], variant, tol) for t, j in zip(tasks, assignment)))


def best_module(task: FiniteMdp, modules: Sequence[Partition], variant: str = AS_WRITTEN,
                tol: float = DEFAULT_TOL, cached: Optional[Sequence[float]] = None) -> int:
    """The module with the smallest error on ``task``; lowest index on ties.

    ``cached`` may hold already computed errors (``None`` entries are
    recomputed).
    """
    errors = [c if cached is not None and c is not None else module_task_error(task, p, variant, tol)
              for p, c in zip(modules, cached if cached is not None else [None] * len(modules))]
    return int(np.argmin(errors))


def save_trace_csv(result: SelfOrgResult, m: int, path) -> None:
    """Rows ``sweep,iter,task,chosen_module,err_m0..,global_error``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "iter", "task", "chosen_module"] + [f"err_m{j}" for j in range(m)] + ["global_error"])
        for r in result.trace:
            w.writerow([r.sweep, r.iteration, r.task, r.chosen] + [repr(e) for e in r.errors] + [repr(r.global_error)])


def save_assignment_csv(assignment, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "module"])
        for i, j in enumerate(np.asarray(assignment).tolist()):
            w.writerow([i, j])
