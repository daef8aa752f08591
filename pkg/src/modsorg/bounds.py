"""Error bounds for a state aggregation.

Per macro-state this computes an upper bound on the interpolation error from
the spread of rewards and transitions inside the macro, propagates it to a
bound on the approximation error, and derives the influence of each macro's
interpolation error on the summed approximation error. The influence times
the interpolation error is the refinement score used by :mod:`.refinement`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .aggregation import AggregateModel, Partition, aggregate_parameters, indicator_matrix
from .mdp import DEFAULT_MAX_ITER, DEFAULT_TOL, ConvergenceError, FiniteMdp, value_iteration

AS_WRITTEN = "as-written"
CONSERVATIVE = "conservative"
VARIANTS = (AS_WRITTEN, CONSERVATIVE)


@dataclass(frozen=True, eq=False)
class ErrorReport:
    """Per-macro error quantities of one (task, partition) pair."""

    e_int_bar: np.ndarray
    e_app_bar: np.ndarray
    pi_err: np.ndarray
    influence: np.ndarray
    scores: np.ndarray
    scalar_error: float
    k_const: float
    variant: str

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["macro", "e_int_bar", "e_app_bar", "influence", "score"])
            for j in range(self.e_int_bar.size):
                w.writerow([j, repr(float(self.e_int_bar[j])), repr(float(self.e_app_bar[j])),
                            repr(float(self.influence[j])), repr(float(self.scores[j]))])


def bound_constant(mdp: FiniteMdp) -> float:
    """``K = discount * Rmax / (1 - discount)``.

    With ``sum_s' (T - T_hat) = 0`` the transition part of the interpolation
    error is at most ``discount * span(V*) / 2 * sum |T - T_hat|`` and
    ``span(V*) <= 2 Rmax / (1 - discount)``.
    """
    r_max = float(np.max(np.abs(mdp.rewards))) if mdp.rewards.size else 0.0
    return mdp.discount * r_max / (1.0 - mdp.discount)


def _group_spread(keys: np.ndarray, values: np.ndarray):
    """Unique keys with max, min and count of ``values`` per key."""
    order = np.argsort(keys, kind="stable")
    keys, values = keys[order], values[order]
    uniq, starts, counts = np.unique(keys, return_index=True, return_counts=True)
    return uniq, np.maximum.reduceat(values, starts), np.minimum.reduceat(values, starts), counts


def reward_spread(mdp: FiniteMdp, partition: Partition) -> np.ndarray:
    """``max_a max_{s,s' in macro} |R(s,a) - R(s',a)|`` per macro."""
    order = np.argsort(partition.assignment, kind="stable")
    starts = np.concatenate([[0], np.cumsum(partition.sizes)[:-1]])
    r = mdp.rewards[order]
    spread = np.maximum.reduceat(r, starts, axis=0) - np.minimum.reduceat(r, starts, axis=0)
    return spread.max(axis=1)


def transition_spread(mdp: FiniteMdp, partition: Partition) -> np.ndarray:
    """``sum_{m2} max_a max_{s,s' in m1} |T(s,a,m2) - T(s',a,m2)|`` per macro ``m1``."""
    n_a, n_m = mdp.n_actions, partition.n_macros
    sizes = partition.sizes
    mass = (mdp.transitions @ indicator_matrix(partition)).tocoo()
    keep = mass.data > 0
    rows, m2, vals = mass.row[keep], mass.col[keep].astype(np.int64), mass.data[keep]
    m1 = partition.assignment[rows // n_a]
    a = rows % n_a
    keys, hi, lo, count = _group_spread((m1 * n_a + a) * n_m + m2, vals)
    key_m1 = keys // (n_a * n_m)
    # members with no mass into m2 contribute a zero to the min
    lo = np.where(count == sizes[key_m1], lo, 0.0)
    pair = key_m1 * n_m + keys % n_m
    pair_keys, pair_max, _, _ = _group_spread(pair, hi - lo)
    return np.bincount(pair_keys // n_m, weights=pair_max, minlength=n_m)


def interpolation_error_bound(
    mdp: FiniteMdp, model: AggregateModel, variant: str = AS_WRITTEN
) -> np.ndarray:
    """Upper bound on the interpolation error of every macro-state.

    ``variant="as-written"`` divides both spreads by the macro size;
    ``"conservative"`` does not, which keeps the result a true upper bound.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown bound variant {variant!r}")
    partition = model.partition
    d_r = reward_spread(mdp, partition)
    d_t = transition_spread(mdp, partition)
    if variant == AS_WRITTEN:
        d_r = d_r / partition.sizes
        d_t = d_t / partition.sizes
    return d_r + bound_constant(mdp) * d_t


def error_mdp(model: AggregateModel, e_int_bar: np.ndarray) -> FiniteMdp:
    """Macro MDP whose Bellman operator is the approximation-error map."""
    rewards = np.repeat(np.asarray(e_int_bar, dtype=float)[:, None], model.macro_mdp.n_actions, axis=1)
    return FiniteMdp(model.t_hat, rewards, model.discount)


def error_map(model: AggregateModel, e_int_bar: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``e_int_bar + discount * max_a sum_m2 T_hat(m1, a, m2) f(m2)``."""
    return error_mdp(model, e_int_bar).q_values(f).max(axis=1)


def approximation_error_bound(
    model: AggregateModel, e_int_bar: np.ndarray, tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Fixed point of :func:`error_map`, one bound per macro."""
    if np.any(np.asarray(e_int_bar) < 0):
        raise ValueError("interpolation error bounds must be non-negative")
    v, _ = value_iteration(error_mdp(model, e_int_bar), tol, max_iter)
    return v


def error_policy(model: AggregateModel, e_app_bar: np.ndarray) -> np.ndarray:
    """Per macro, the action leading to the largest expected error bound."""
    m = model.macro_mdp
    expected = (m.transitions @ np.asarray(e_app_bar, dtype=float)).reshape(m.n_states, m.n_actions)
    return np.argmax(expected, axis=1)


def influence_map(model: AggregateModel, s0_mask, pi_err, f: np.ndarray) -> np.ndarray:
    """``1[m in S0] + discount * sum_m' T_hat(m', pi_err(m'), m) f(m')``."""
    P = model.macro_mdp.policy_matrix(pi_err)
    return np.asarray(s0_mask, dtype=float) + model.discount * (P.T @ f)


def influence(
    model: AggregateModel, s0_mask, pi_err, tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Fixed point of :func:`influence_map`.

    The map contracts in the l1 norm (columns of the transposed transition
    matrix sum to one), so iteration stops once the l1 change is at most
    ``tol (1 - discount) / discount``; the sup-norm error is then <= tol.
    """
    gamma = model.discount
    P_T = sp.csr_matrix(model.macro_mdp.policy_matrix(pi_err).T)
    c = np.asarray(s0_mask, dtype=float)
    threshold = np.inf if gamma == 0 else tol * (1.0 - gamma) / gamma
    f = np.zeros_like(c)
    delta = np.inf
    for _ in range(max_iter):
        f_new = c + gamma * (P_T @ f)
        delta = np.abs(f_new - f).sum()
        f = f_new
        if delta <= threshold:
            return f
    raise ConvergenceError("influence iteration did not converge", max_iter, delta)


def refinement_scores(e_int_bar, influence_values) -> np.ndarray:
    """Predicted reduction of the summed approximation error per macro."""
    return np.asarray(influence_values, dtype=float) * np.asarray(e_int_bar, dtype=float)


def weighted_error(partition: Partition, e_app_bar: np.ndarray) -> float:
    """State-weighted mean of the approximation error bound."""
    return float(partition.sizes @ e_app_bar / partition.n_states)


def error_report(
    mdp: FiniteMdp,
    partition: Partition,
    variant: str = AS_WRITTEN,
    tol: float = DEFAULT_TOL,
    s0_mask: Optional[np.ndarray] = None,
    model: Optional[AggregateModel] = None,
) -> ErrorReport:
    """All error quantities of ``partition`` for task ``mdp``.

    ``s0_mask`` defaults to every macro.
    """
    if model is None:
        model = aggregate_parameters(mdp, partition)
    e_int = interpolation_error_bound(mdp, model, variant)
    e_app = approximation_error_bound(model, e_int, tol)
    pi = error_policy(model, e_app)
    if s0_mask is None:
        s0_mask = np.ones(partition.n_macros, dtype=bool)
    infl = influence(model, s0_mask, pi, tol)
    return ErrorReport(
        e_int_bar=e_int,
        e_app_bar=e_app,
        pi_err=pi,
        influence=infl,
        scores=refinement_scores(e_int, infl),
        scalar_error=weighted_error(partition, e_app),
        k_const=bound_constant(mdp),
        variant=variant,
    )


def module_task_error(
    mdp: FiniteMdp, partition: Partition, variant: str = AS_WRITTEN, tol: float = DEFAULT_TOL
) -> float:
    """Distance between a module (its partition) and a task."""
    model = aggregate_parameters(mdp, partition)
    e_int = interpolation_error_bound(mdp, model, variant)
    return weighted_error(partition, approximation_error_bound(model, e_int, tol))
