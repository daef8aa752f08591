"""Experiment orchestration behind the command-line interface.

Each ``run_*`` function writes CSV files plus a ``<name>.meta.json`` sidecar
(config digest, seed, version) into an output directory and returns a small
summary. Output is a deterministic function of the configuration.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .aggregation import (MedianCut, Partition, RandomCut, aggregate_parameters, module_policy,
                          save_partition_csv, solved)
from .clustering import batch_dynamic_cluster, online_dynamic_cluster, save_trace_csv as save_cluster_trace
from .clustering import vector_problem
from .config import RunConfig
from .mdp import greedy_policy, value_iteration
from .navigation import (Evaluation, Grid, default_geometry, evaluate, load_geometry, make_six_tasks,
                         save_evaluation_csv)
from .selforg import SelfOrgConfig, initial_modules, save_assignment_csv, save_trace_csv, self_organize

log = logging.getLogger(__name__)


def write_meta(path: Path, cfg: RunConfig, **extra) -> None:
    meta = {"config_sha256": cfg.digest(), "seed": cfg.seed, "version": __version__,
            "rewards": "undiscounted", **extra}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


@dataclass
class NavSetup:
    grid: Grid
    tasks: list
    specs: list

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "NavSetup":
        geo = load_geometry(cfg.geometry_path) if cfg.geometry_path else default_geometry()
        tasks, specs, grid = make_six_tasks(geo, cfg.env)
        return cls(grid, tasks, specs)

    def base_partition(self) -> Partition:
        """Every free cell in one macro, the terminal alone in another."""
        assignment = np.zeros(self.grid.n_states, dtype=np.int64)
        assignment[self.grid.terminal] = 1
        return Partition.from_assignment(assignment)

    def start_cells(self, task: int) -> np.ndarray:
        return self.grid.zone_cells(self.specs[task].start_zone)

    def evaluate_partition(self, partition: Partition, task: int, cfg: RunConfig) -> Evaluation:
        mdp = self.tasks[task]
        model = solved(aggregate_parameters(mdp, partition), cfg.so.solver_tol)
        policy = module_policy(mdp, model)
        return evaluate(mdp, policy, self.start_cells(task), cfg.eval.runs, cfg.eval.cap,
                        eval_seed(cfg, task), self.grid.terminal)


def eval_seed(cfg: RunConfig, task: int) -> int:
    return cfg.seed * 1000 + task


def selforg_config(cfg: RunConfig) -> SelfOrgConfig:
    so = cfg.so
    return SelfOrgConfig(modules=so.modules, budget=so.budget, splits_per_call=so.splits_per_call,
                         max_sweeps=so.max_sweeps, tol=so.tol, warmup_splits=so.warmup_splits,
                         bound_variant=so.bound_variant, solver_tol=so.solver_tol, seed=cfg.seed)


def run_solve(cfg: RunConfig, task_index: int, out: Path, setup: Optional[NavSetup] = None) -> Evaluation:
    """Exact value iteration on task ``task_index`` (1-based)."""
    if not 1 <= task_index <= 6:
        raise ValueError(f"task index must be in 1..6, got {task_index}")
    setup = setup or NavSetup.from_config(cfg)
    i = task_index - 1
    mdp = setup.tasks[i]
    v, _ = value_iteration(mdp, cfg.so.solver_tol)
    policy = greedy_policy(mdp, v)
    ev = evaluate(mdp, policy, setup.start_cells(i), cfg.eval.runs, cfg.eval.cap, eval_seed(cfg, i),
                  setup.grid.terminal)
    out.mkdir(parents=True, exist_ok=True)
    vpath = out / f"v_task{task_index}.csv"
    with open(vpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "value"])
        for s, x in enumerate(v.tolist()):
            w.writerow([s, repr(x)])
    write_meta(vpath, cfg, task=task_index)
    epath = out / f"eval_task{task_index}.csv"
    save_evaluation_csv([(task_index, "exact", cfg.eval.runs, ev)], epath)
    write_meta(epath, cfg, task=task_index)
    return ev


@dataclass
class SelforgSummary:
    assignment: np.ndarray
    sweeps: int
    sweep_errors: list
    sweep_assignments: list = field(default_factory=list)
    performance: list = field(default_factory=list)  # per sweep: list of Evaluation per task
    partitions: list = field(default_factory=list)  # per sweep: list of partitions


def run_selforg(cfg: RunConfig, out: Path, setup: Optional[NavSetup] = None,
                evaluate_sweeps: bool = True) -> SelforgSummary:
    """Self-organize the six navigation tasks over ``cfg.so.modules`` modules."""
    setup = setup or NavSetup.from_config(cfg)
    coords = setup.grid.state_coords()
    so = selforg_config(cfg)
    modules = initial_modules(setup.base_partition(), so.modules, so.warmup_splits, so.seed,
                              lambda rng: RandomCut(coords, rng))
    summary = SelforgSummary(np.zeros(0), 0, [])

    def on_sweep(sweep, partitions, assignment, errors):
        summary.sweep_assignments.append(np.array(assignment))
        summary.partitions.append(list(partitions))
        if evaluate_sweeps:
            evs = [setup.evaluate_partition(partitions[j], i, cfg) for i, j in enumerate(assignment)]
            summary.performance.append(evs)
            log.info("sweep %d assignment %s success %s", sweep, assignment.tolist(),
                     [round(e.success_rate, 3) for e in evs])

    result = self_organize(setup.tasks, so, MedianCut(coords), modules, on_sweep)
    summary.assignment = result.assignment
    summary.sweeps = result.sweeps
    summary.sweep_errors = result.sweep_errors

    out.mkdir(parents=True, exist_ok=True)
    path = out / "trace.csv"
    save_trace_csv(result, so.modules, path)
    write_meta(path, cfg)
    path = out / "assignment.csv"
    save_assignment_csv(result.assignment, path)
    write_meta(path, cfg)
    path = out / "sweeps.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "global_error"] + [f"task{i}_module" for i in range(len(setup.tasks))]
                   + [f"m{j}_macros" for j in range(so.modules)])
        for s, (err, assign, parts) in enumerate(zip(result.sweep_errors, summary.sweep_assignments,
                                                     summary.partitions)):
            w.writerow([s, repr(err)] + assign.tolist() + [p.n_macros for p in parts])
    write_meta(path, cfg)
    if evaluate_sweeps:
        path = out / "performance.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "task", "module", "mean_reward", "success_rate"])
            for s, (evs, assign) in enumerate(zip(summary.performance, summary.sweep_assignments)):
                for i, ev in enumerate(evs):
                    w.writerow([s, i, int(assign[i]), repr(ev.mean_reward), repr(ev.success_rate)])
                w.writerow([s, "all", "", repr(float(np.mean([e.mean_reward for e in evs]))),
                            repr(float(np.mean([e.success_rate for e in evs])))])
        write_meta(path, cfg, runs=cfg.eval.runs, cap=cfg.eval.cap)
    for module in result.modules:
        path = out / f"module{module.id}_partition.csv"
        save_partition_csv(module.partition, path)
        write_meta(path, cfg, module=module.id)
        path = out / f"module{module.id}_rects.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["macro_index", "x0", "y0", "x1", "y1"])
            for j, x0, y0, x1, y1 in setup.grid.macro_rectangles(module.partition):
                w.writerow([j, repr(x0), repr(y0), repr(x1), repr(y1)])
        write_meta(path, cfg, module=module.id)
    return summary


def blob_data(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Seeded 2-D Gaussian blobs with centers spaced 5 units apart."""
    d = cfg.demo
    rng = np.random.default_rng(cfg.seed)
    labels = np.arange(d.points) % d.blobs
    centers = np.stack([5.0 * np.arange(d.blobs), np.zeros(d.blobs)], axis=1)
    return centers[labels] + d.spread * rng.standard_normal((d.points, 2)), labels


def run_cluster_demo(cfg: RunConfig, out: Path):
    """Batch and on-line dynamic cluster on blob data (vector quantization)."""
    d = cfg.demo
    points, _ = blob_data(cfg)
    problem = vector_problem(points, eta=d.eta)
    rng = np.random.default_rng([cfg.seed, 1])
    init = np.arange(d.points) % d.m
    rng.shuffle(init)
    batch = batch_dynamic_cluster(problem, d.m, init, d.max_iter)
    init_kernels = [points[i].copy() for i in rng.choice(d.points, size=d.m, replace=False)]
    online = online_dynamic_cluster(problem, init_kernels, cfg.seed, 1e-12, d.max_sweeps)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "cluster_distortion.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "iteration", "distortion"])
        for it, dist in enumerate(batch.distortions, 1):
            w.writerow(["batch", it, repr(dist)])
        for sweep, dist in enumerate(online.sweep_distortions):
            w.writerow(["online", sweep, repr(dist)])
    write_meta(path, cfg)
    path = out / "cluster_assignment.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "x", "y", "batch_kernel", "online_kernel"])
        for i, (x, y) in enumerate(points.tolist()):
            w.writerow([i, repr(x), repr(y), int(batch.state.assignment[i]), int(online.state.assignment[i])])
    write_meta(path, cfg)
    path = out / "cluster_trace.csv"
    save_cluster_trace(online, path)
    write_meta(path, cfg)
    return batch, online
