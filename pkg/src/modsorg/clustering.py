"""Kernel clustering: data and kernels linked by a distance.

Kernels need not live in the data space. The batch dynamic cluster
algorithm alternates kernel fitting and reassignment; the on-line variant
picks one point at a time and nudges its closest kernel towards it. With
vectors as kernels, squared Euclidean distance and the mean as fit, the batch
variant is exactly batch k-means.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np


class UnsupportedProblem(TypeError):
    """The problem lacks the kernel operation an algorithm needs."""


@dataclass
class ClusteringProblem:
    data: Sequence[Any]
    distance: Callable[[Any, Any], float]
    kernel_fit: Optional[Callable[[list], Any]] = None
    kernel_update: Optional[Callable[[Any, Any], Any]] = None


@dataclass
class ClusteringState:
    kernels: list
    assignment: np.ndarray
    distortion: float


def assign(point, kernels: Sequence, distance: Callable) -> int:
    """Index of the closest kernel; the lowest index wins ties."""
    if not kernels:
        raise ValueError("need at least one kernel")
    return int(np.argmin([distance(point, k) for k in kernels]))


def distortion(problem: ClusteringProblem, state: ClusteringState) -> float:
    """Sum of distances from every point to its assigned kernel."""
    return float(sum(problem.distance(x, state.kernels[j]) for x, j in zip(problem.data, state.assignment)))


def consistent_state(problem: ClusteringProblem, kernels: list) -> ClusteringState:
    """Assign every point to its closest kernel."""
    dist = np.array([[problem.distance(x, k) for k in kernels] for x in problem.data])
    labels = np.argmin(dist, axis=1)
    return ClusteringState(list(kernels), labels, float(dist[np.arange(len(labels)), labels].sum()))


@dataclass
class BatchResult:
    state: ClusteringState
    iterations: int
    kernel_history: list = field(default_factory=list)
    distortions: list = field(default_factory=list)
    converged: bool = False


def batch_dynamic_cluster(problem: ClusteringProblem, m: int, init_partition, max_iter: int = 100) -> BatchResult:
    """Alternate kernel fitting and reassignment until the partition is stable.

    ``init_partition`` gives a cluster label in ``range(m)`` per point. A
    cluster that becomes empty keeps its previous kernel.
    """
    if problem.kernel_fit is None:
        raise UnsupportedProblem("batch dynamic cluster needs kernel_fit")
    labels = np.asarray(init_partition, dtype=np.int64)
    kernels: list = [None] * m
    result = BatchResult(state=None, iterations=0)  # type: ignore[arg-type]
    for it in range(1, max_iter + 1):
        for j in range(m):
            members = [x for x, lab in zip(problem.data, labels) if lab == j]
            if members:
                kernels[j] = problem.kernel_fit(members)
            elif kernels[j] is None:
                raise ValueError(f"initial cluster {j} is empty")
        state = consistent_state(problem, kernels)
        result.kernel_history.append(list(kernels))
        result.distortions.append(state.distortion)
        result.state, result.iterations = state, it
        if np.array_equal(state.assignment, labels):
            result.converged = True
            break
        labels = state.assignment
    return result


@dataclass(frozen=True)
class OnlineStep:
    sweep: int
    iteration: int
    point: int
    chosen: int
    distances: tuple
    distortion: float
    kernels: tuple = field(repr=False, compare=False, default=())


@dataclass
class OnlineResult:
    state: ClusteringState
    trace: list
    sweeps: int
    sweep_distortions: list
    distances: np.ndarray  # final point x kernel distance table


def online_dynamic_cluster(
    problem: ClusteringProblem,
    init_kernels: list,
    seed=0,
    tol: float = 0.0,
    max_sweeps: int = 100,
    on_sweep: Optional[Callable[[int, ClusteringState, np.ndarray], None]] = None,
) -> OnlineResult:
    """Per-point kernel updates in seeded random order, one sweep at a time.

    Stops once a sweep lowers the distortion by less than ``tol`` or after
    ``max_sweeps`` sweeps. Distances are cached per (point, kernel) and only
    the updated kernel's column is recomputed, so ``distance`` must be a pure
    function. ``on_sweep(sweep, state, distances)`` is called with sweep 0
    before any update and after every sweep.
    """
    if problem.kernel_update is None:
        raise UnsupportedProblem("on-line dynamic cluster needs kernel_update")
    kernels = list(init_kernels)
    n, m = len(problem.data), len(kernels)
    rng = np.random.default_rng(seed)
    dist = np.array([[problem.distance(x, k) for k in kernels] for x in problem.data], dtype=float).reshape(n, m)

    def snapshot() -> ClusteringState:
        labels = np.argmin(dist, axis=1)
        return ClusteringState(list(kernels), labels, float(dist[np.arange(n), labels].sum()))

    state = snapshot()
    history = [state.distortion]
    if on_sweep is not None:
        on_sweep(0, state, dist.copy())
    trace = []
    it = 0
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        for i in rng.permutation(n):
            row = tuple(float(d) for d in dist[i])
            j = int(np.argmin(dist[i]))
            kernels[j] = problem.kernel_update(kernels[j], problem.data[i])
            dist[:, j] = [problem.distance(x, kernels[j]) for x in problem.data]
            state = snapshot()
            trace.append(OnlineStep(sweep, it, int(i), j, row, state.distortion, tuple(kernels)))
            it += 1
        history.append(state.distortion)
        if on_sweep is not None:
            on_sweep(sweep, state, dist.copy())
        if history[-2] - history[-1] < tol:
            break
    return OnlineResult(state, trace, sweep, history, dist)


def squared_euclidean(x, kernel) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(kernel, dtype=float)
    return float(d @ d)


def euclidean(x, kernel) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(kernel, dtype=float)))


def vector_problem(points, eta: float = 0.5, squared: bool = True) -> ClusteringProblem:
    """Vector quantization: kernels are points, fit is the mean, and the
    on-line update moves the kernel a fraction ``eta`` toward the point."""
    points = [np.asarray(p, dtype=float) for p in np.asarray(points, dtype=float)]

    def fit(members):
        return np.mean(members, axis=0)

    def update(kernel, x):
        return kernel + eta * (x - kernel)

    return ClusteringProblem(points, squared_euclidean if squared else euclidean, fit, update)


def save_trace_csv(result: OnlineResult, path) -> None:
    """Rows ``sweep,point_index,assigned_kernel,distortion``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "point_index", "assigned_kernel", "distortion"])
        for step in result.trace:
            w.writerow([step.sweep, step.point, step.chosen, repr(step.distortion)])
