"""Influence-guided refinement of a partition under a macro budget."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .aggregation import Partition, RefusedError, SplitRule, index_halves, merge_macros, split_macro
from .bounds import AS_WRITTEN, VARIANTS, ErrorReport, error_report
from .mdp import DEFAULT_TOL, FiniteMdp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineConfig:
    budget: int = 400
    splits_per_call: int = 1
    variant: str = AS_WRITTEN
    solver_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.budget < 1 or self.splits_per_call < 1 or self.variant not in VARIANTS:
            raise ValueError(f"invalid refinement config {self}")


class LearnResult(NamedTuple):
    partition: Partition
    report: ErrorReport
    saturated: bool


def _by_score(scores: np.ndarray) -> np.ndarray:
    # descending score, lowest index first among equal scores
    return np.lexsort((np.arange(scores.size), -scores))


def split_best(partition: Partition, scores: np.ndarray, splitter: SplitRule):
    """Split the highest-scoring splittable macro; ``None`` if none is."""
    for j in _by_score(scores):
        try:
            return split_macro(partition, int(j), splitter)
        except RefusedError:
            continue
    return None


def merge_worst(partition: Partition, scores: np.ndarray):
    """Merge the sibling pair of lowest combined score; ``None`` if no pair."""
    pairs = partition.sibling_pairs()
    if not pairs:
        return None
    combined = [scores[a] + scores[b] for a, b in pairs]
    a, b = pairs[int(np.argmin(combined))]
    return merge_macros(partition, a, b)


def learn_step(
    mdp: FiniteMdp, partition: Partition, cfg: RefineConfig = RefineConfig(),
    splitter: SplitRule = index_halves,
) -> LearnResult:
    """Refine ``partition`` for task ``mdp``.

    Splits the macro with the highest refinement score ``splits_per_call``
    times (rescoring in between), then merges lowest-score siblings until the
    macro count is within budget. ``saturated`` is set when no macro could be
    split.
    """
    def score(p: Partition) -> ErrorReport:
        return error_report(mdp, p, cfg.variant, cfg.solver_tol)

    report = score(partition)
    saturated = False
    for _ in range(cfg.splits_per_call):
        refined = split_best(partition, report.scores, splitter)
        if refined is None:
            saturated = True
            break
        partition = refined
        report = score(partition)
    while partition.n_macros > cfg.budget:
        coarser = merge_worst(partition, report.scores)
        if coarser is None:
            log.warning("cannot merge below %d macros (budget %d)", partition.n_macros, cfg.budget)
            break
        partition = coarser
        report = score(partition)
    return LearnResult(partition, report, saturated)
