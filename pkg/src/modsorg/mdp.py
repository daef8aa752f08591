"""Finite MDPs with sparse transition rows, Bellman backups and value iteration.

Transitions are stored as one CSR matrix of shape ``(n_states * n_actions,
n_states)``; row ``s * n_actions + a`` is the successor distribution of
``(s, a)``. Value functions and policies are plain numpy vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100_000


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before meeting its tolerance."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """A discounted finite MDP.

    Attributes
    ----------
    transitions : scipy.sparse.csr_matrix, shape (n_states * n_actions, n_states)
        Row ``s * n_actions + a`` holds ``T(s, a, .)``.
    rewards : np.ndarray, shape (n_states, n_actions)
    discount : float
    """

    transitions: sp.csr_matrix
    rewards: np.ndarray
    discount: float

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @classmethod
    def from_dense(cls, T, R, discount: float) -> "FiniteMdp":
        """Build from a dense ``T[s, a, s']`` array and ``R[s, a]``."""
        T = np.asarray(T, dtype=float)
        R = np.asarray(R, dtype=float)
        n_s, n_a, _ = T.shape
        P = sp.csr_matrix(T.reshape(n_s * n_a, n_s))
        return cls(P, R, float(discount))

    @classmethod
    def from_rows(cls, rows, R, discount: float) -> "FiniteMdp":
        """Build from ``rows[s][a] = [(s', p), ...]``.

        Duplicate successors are kept as given so that :func:`validate` can
        report them.
        """
        R = np.asarray(R, dtype=float)
        n_s, n_a = R.shape
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for s in range(n_s):
            for a in range(n_a):
                for succ, p in rows[s][a]:
                    indices.append(int(succ))
                    data.append(float(p))
                indptr.append(len(indices))
        P = sp.csr_matrix(
            (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
            shape=(n_s * n_a, n_s),
        )
        return cls(P, R, float(discount))

    def row(self, s: int, a: int) -> list[tuple[int, float]]:
        """The sparse successor list of ``(s, a)``."""
        r = s * self.n_actions + a
        lo, hi = self.transitions.indptr[r], self.transitions.indptr[r + 1]
        return list(zip(self.transitions.indices[lo:hi].tolist(), self.transitions.data[lo:hi].tolist()))

    def dense(self) -> np.ndarray:
        """Dense ``T[s, a, s']``; only sensible for small MDPs."""
        return self.transitions.toarray().reshape(self.n_states, self.n_actions, self.n_states)

    def q_values(self, v: np.ndarray) -> np.ndarray:
        """``Q[s, a] = R(s, a) + discount * sum_s' T(s, a, s') v(s')``."""
        ev = self.transitions @ np.asarray(v, dtype=float)
        return self.rewards + self.discount * ev.reshape(self.n_states, self.n_actions)

    def policy_matrix(self, policy: np.ndarray) -> sp.csr_matrix:
        """The ``n_states x n_states`` transition matrix under ``policy``."""
        rows = np.arange(self.n_states) * self.n_actions + np.asarray(policy)
        return self.transitions[rows]


def random_mdp(n_states: int, n_actions: int, discount: float, seed, density: float = 1.0) -> FiniteMdp:
    """A seeded random MDP; rewards uniform in [-1, 1].

    With ``density < 1`` every row keeps a random subset of successors
    (at least one).
    """
    rng = np.random.default_rng(seed)
    T = rng.random((n_states, n_actions, n_states))
    if density < 1.0:
        mask = rng.random(T.shape) < density
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :],
             rng.integers(n_states, size=(n_states, n_actions))] = True
        T = T * mask
    T /= T.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp.from_dense(T, R, discount)


def validate(mdp: FiniteMdp, atol: float = 1e-9) -> list[str]:
    """Every invariant violation of ``mdp``; an empty list means valid."""
    problems = []
    P = mdp.transitions
    n_s, n_a = mdp.n_states, mdp.n_actions
    if not 0.0 <= mdp.discount < 1.0:
        problems.append(f"discount not < 1 (or negative): {mdp.discount}")
    if P.shape != (n_s * n_a, n_s):
        problems.append(f"transition shape {P.shape} != {(n_s * n_a, n_s)}")
        return problems
    if not np.all(np.isfinite(mdp.rewards)):
        problems.append("non-finite reward")
    for r in range(n_s * n_a):
        s, a = divmod(r, n_a)
        lo, hi = P.indptr[r], P.indptr[r + 1]
        succ = P.indices[lo:hi]
        probs = P.data[lo:hi]
        if np.any(probs < 0) or np.any(probs > 1):
            problems.append(f"probability outside [0, 1] at ({s},{a})")
        if np.any(succ >= n_s) or np.any(succ < 0):
            problems.append(f"successor index out of range at ({s},{a})")
        if len(np.unique(succ)) != len(succ):
            problems.append(f"duplicate successor at ({s},{a})")
        total = probs.sum()
        if abs(total - 1.0) > atol:
            problems.append(f"row sum {total:g} != 1 at ({s},{a})")
    return problems


def bellman_backup(mdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    """One application of the optimal Bellman operator."""
    return mdp.q_values(v).max(axis=1)


def _stop_threshold(tol: float, discount: float) -> float:
    # ||v_k+1 - v_k|| <= tol (1-g)/g  implies  ||B v_k+1 - v_k+1|| <= tol
    return np.inf if discount == 0 else tol * (1.0 - discount) / discount


def value_iteration(
    mdp: FiniteMdp,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    v0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Iterate the Bellman backup to its fixed point.

    Returns ``(v, iterations)`` with ``||B v - v||_inf <= tol``.
    Raises :class:`ConvergenceError` after ``max_iter`` backups.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=float)
    threshold = _stop_threshold(tol, mdp.discount)
    delta = np.inf
    for it in range(1, max_iter + 1):
        v_new = bellman_backup(mdp, v)
        delta = np.max(np.abs(v_new - v)) if v.size else 0.0
        v = v_new
        if delta <= threshold:
            return v, it
    raise ConvergenceError("value iteration did not converge", max_iter, delta)


def greedy_policy(mdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    """Greedy actions w.r.t. ``v``; ``np.argmax`` breaks ties by lowest index."""
    return np.argmax(mdp.q_values(v), axis=1)


def policy_value(
    mdp: FiniteMdp,
    policy: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Value of a deterministic policy by iterating its restricted backup."""
    policy = np.asarray(policy)
    P = mdp.policy_matrix(policy)
    r = mdp.rewards[np.arange(mdp.n_states), policy]
    v = np.zeros(mdp.n_states)
    threshold = _stop_threshold(tol, mdp.discount)
    delta = np.inf
    for _ in range(max_iter):
        v_new = r + mdp.discount * (P @ v)
        delta = np.max(np.abs(v_new - v)) if v.size else 0.0
        v = v_new
        if delta <= threshold:
            return v
    raise ConvergenceError("policy evaluation did not converge", max_iter, delta)


def save_csv(mdp: FiniteMdp, directory) -> None:
    """Write ``transitions.csv`` (s,a,s',p) and ``rewards.csv`` (s,a,r)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    P = mdp.transitions
    n_a = mdp.n_actions
    with open(directory / "transitions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "a", "s'", "p"])
        for r in range(P.shape[0]):
            s, a = divmod(r, n_a)
            for j in range(P.indptr[r], P.indptr[r + 1]):
                w.writerow([s, a, int(P.indices[j]), repr(float(P.data[j]))])
    with open(directory / "rewards.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "a", "r"])
        for s in range(mdp.n_states):
            for a in range(n_a):
                w.writerow([s, a, repr(float(mdp.rewards[s, a]))])


def load_csv(directory, discount: float) -> FiniteMdp:
    """Inverse of :func:`save_csv`; the discount comes from the run config."""
    directory = Path(directory)
    with open(directory / "rewards.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    n_s = max(int(r[0]) for r in rows) + 1
    n_a = max(int(r[1]) for r in rows) + 1
    R = np.zeros((n_s, n_a))
    for s, a, r in rows:
        R[int(s), int(a)] = float(r)
    succ: list[list[list[tuple[int, float]]]] = [[[] for _ in range(n_a)] for _ in range(n_s)]
    with open(directory / "transitions.csv", newline="") as fh:
        for s, a, s2, p in list(csv.reader(fh))[1:]:
            succ[int(s)][int(a)].append((int(s2), float(p)))
    return FiniteMdp.from_rows(succ, R, discount)
