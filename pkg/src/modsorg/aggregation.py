"""State aggregation: partitions of the state set and the averaged macro MDP.

A :class:`Partition` is an immutable value. Splits and merges return new
partitions and keep a binary split history so that only siblings can be
merged back together.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .mdp import DEFAULT_TOL, FiniteMdp, greedy_policy, value_iteration


class RefusedError(ValueError):
    """A split or merge whose precondition does not hold."""


SplitRule = Callable[[np.ndarray], Optional[tuple[np.ndarray, np.ndarray]]]


class Partition:
    """A disjoint cover of ``range(n_states)`` by non-empty macro-states.

    ``leaves[j]`` is the history-tree node of macro ``j``; ``parent`` and
    ``children`` describe the tree. Nodes created by :meth:`from_assignment`
    are roots.
    """

    __slots__ = ("assignment", "members", "leaves", "parent", "children")

    def __init__(self, assignment, leaves: Sequence[int], parent: Sequence[int], children: dict):
        assignment = np.array(assignment, dtype=np.int64)
        assignment.setflags(write=False)
        n_macros = len(leaves)
        if assignment.size and (assignment.min() < 0 or assignment.max() >= n_macros):
            raise ValueError("assignment refers to a macro that does not exist")
        order = np.argsort(assignment, kind="stable")
        counts = np.bincount(assignment, minlength=n_macros)
        if np.any(counts == 0):
            raise ValueError("empty macro-state")
        self.assignment = assignment
        self.members = tuple(np.split(order, np.cumsum(counts)[:-1]))
        self.leaves = tuple(leaves)
        self.parent = tuple(parent)
        self.children = dict(children)

    @classmethod
    def from_assignment(cls, assignment) -> "Partition":
        assignment = np.asarray(assignment, dtype=np.int64)
        n = int(assignment.max()) + 1 if assignment.size else 0
        return cls(assignment, range(n), [-1] * n, {})

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]]) -> "Partition":
        n_states = sum(len(g) for g in groups)
        assignment = np.full(n_states, -1, dtype=np.int64)
        for j, g in enumerate(groups):
            assignment[list(g)] = j
        if np.any(assignment < 0):
            raise ValueError("groups do not cover range(n_states)")
        return cls.from_assignment(assignment)

    @classmethod
    def blank(cls, n_states: int) -> "Partition":
        return cls.from_assignment(np.zeros(n_states, dtype=np.int64))

    @classmethod
    def singletons(cls, n_states: int) -> "Partition":
        return cls.from_assignment(np.arange(n_states))

    @property
    def n_states(self) -> int:
        return self.assignment.size

    @property
    def n_macros(self) -> int:
        return len(self.leaves)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([m.size for m in self.members])

    def same_as(self, other: "Partition") -> bool:
        """Assignment equality."""
        return np.array_equal(self.assignment, other.assignment)

    def sibling_pairs(self) -> list[tuple[int, int]]:
        """Macro index pairs ``(a, b)``, ``a < b``, that are leaf siblings."""
        where = {node: j for j, node in enumerate(self.leaves)}
        pairs = []
        for left, right in self.children.values():
            if left in where and right in where:
                a, b = sorted((where[left], where[right]))
                pairs.append((a, b))
        return sorted(pairs)

    def __repr__(self) -> str:
        return f"Partition(n_states={self.n_states}, n_macros={self.n_macros})"


def index_halves(members: np.ndarray):
    """Split a member list in two halves by state index."""
    if members.size < 2:
        return None
    h = members.size // 2
    return members[:h], members[h:]


class MedianCut:
    """Axis-aligned cut along the longer bounding-box axis at the count median.

    ``coords[s]`` are the integer grid coordinates ``(ix, iy)`` of state
    ``s``; states without a location (NaN) are never split.
    """

    def __init__(self, coords):
        self.coords = np.asarray(coords, dtype=float)

    def __call__(self, members):
        if members.size < 2:
            return None
        xy = self.coords[members]
        if np.isnan(xy).any():
            return None
        extent = xy.max(axis=0) - xy.min(axis=0)
        axis = 0 if extent[0] >= extent[1] else 1
        values = xy[:, axis]
        median = np.sort(values)[values.size // 2]
        left = values < median
        if not left.any():
            left = values <= median
        if left.all():
            return None
        return members[left], members[~left]


class RandomCut:
    """Seeded random axis-aligned cut; used to break symmetry between modules."""

    def __init__(self, coords, rng: np.random.Generator):
        self.coords = np.asarray(coords, dtype=float)
        self.rng = rng

    def __call__(self, members):
        if members.size < 2:
            return None
        xy = self.coords[members]
        if np.isnan(xy).any():
            return None
        axes = [k for k in (0, 1) if xy[:, k].max() > xy[:, k].min()]
        axis = axes[self.rng.integers(len(axes))]
        cuts = np.unique(xy[:, axis])[1:]
        cut = cuts[self.rng.integers(cuts.size)]
        left = xy[:, axis] < cut
        return members[left], members[~left]


class RandomHalves:
    """Seeded random bipartition of a member list (no geometry)."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, members):
        if members.size < 2:
            return None
        perm = self.rng.permutation(members)
        k = int(self.rng.integers(1, members.size))
        return np.sort(perm[:k]), np.sort(perm[k:])


def split_macro(partition: Partition, macro: int, splitter: SplitRule = index_halves) -> Partition:
    """Divide ``macro`` in two. The first part keeps the index ``macro``,
    the second is appended as macro ``n_macros``.

    Raises :class:`RefusedError` for singletons or a degenerate splitter.
    """
    members = partition.members[macro]
    if members.size < 2:
        raise RefusedError(f"macro {macro} is a singleton")
    parts = splitter(members)
    if parts is None or parts[0].size == 0 or parts[1].size == 0:
        raise RefusedError(f"split rule cannot divide macro {macro}")
    first, second = parts
    assignment = partition.assignment.copy()
    new_macro = partition.n_macros
    assignment[second] = new_macro
    parent_node = partition.leaves[macro]
    left_node = len(partition.parent)
    right_node = left_node + 1
    leaves = list(partition.leaves)
    leaves[macro] = left_node
    leaves.append(right_node)
    parent = list(partition.parent) + [parent_node, parent_node]
    children = dict(partition.children)
    children[parent_node] = (left_node, right_node)
    return Partition(assignment, leaves, parent, children)


def merge_macros(partition: Partition, a: int, b: int) -> Partition:
    """Restore the parent of sibling macros ``a`` and ``b``.

    The parent takes index ``min(a, b)``; macros above ``max(a, b)`` shift
    down by one. Raises :class:`RefusedError` for non-siblings.
    """
    a, b = sorted((a, b))
    if a == b or b >= partition.n_macros:
        raise RefusedError(f"invalid macro pair ({a}, {b})")
    na, nb = partition.leaves[a], partition.leaves[b]
    pa = partition.parent[na]
    if pa < 0 or pa != partition.parent[nb]:
        raise RefusedError(f"macros {a} and {b} are not siblings")
    assignment = partition.assignment.copy()
    assignment[assignment == b] = a
    assignment[assignment > b] -= 1
    leaves = list(partition.leaves)
    leaves[a] = pa
    del leaves[b]
    # history nodes are kept so node ids stay stable; the parent is a leaf again
    children = dict(partition.children)
    del children[pa]
    return Partition(assignment, leaves, partition.parent, children)


@dataclass(frozen=True, eq=False)
class AggregateModel:
    """A partition together with the averaged macro-level MDP."""

    partition: Partition
    macro_mdp: FiniteMdp
    v_hat: Optional[np.ndarray] = None

    @property
    def r_hat(self) -> np.ndarray:
        return self.macro_mdp.rewards

    @property
    def t_hat(self) -> sp.csr_matrix:
        return self.macro_mdp.transitions

    @property
    def discount(self) -> float:
        return self.macro_mdp.discount


def indicator_matrix(partition: Partition) -> sp.csr_matrix:
    """The ``n_states x n_macros`` 0/1 membership matrix."""
    n = partition.n_states
    return sp.csr_matrix((np.ones(n), (np.arange(n), partition.assignment)), shape=(n, partition.n_macros))


def aggregate_parameters(mdp: FiniteMdp, partition: Partition) -> AggregateModel:
    """Average rewards and transitions over every macro-state."""
    if partition.n_states != mdp.n_states:
        raise ValueError(f"partition covers {partition.n_states} states, MDP has {mdp.n_states}")
    sizes = partition.sizes
    if np.any(sizes == 0):
        raise ValueError("empty macro-state")
    n_s, n_a, n_m = mdp.n_states, mdp.n_actions, partition.n_macros
    phi = indicator_matrix(partition)
    sa_rows = np.arange(n_s * n_a)
    macro_rows = partition.assignment[sa_rows // n_a] * n_a + sa_rows % n_a
    weights = 1.0 / sizes[partition.assignment[sa_rows // n_a]]
    avg = sp.csr_matrix((weights, (macro_rows, sa_rows)), shape=(n_m * n_a, n_s * n_a))
    t_hat = (avg @ mdp.transitions @ phi).tocsr()
    t_hat.sum_duplicates()
    t_hat.sort_indices()
    r_hat = (phi.T @ mdp.rewards) / sizes[:, None]
    return AggregateModel(partition, FiniteMdp(t_hat, np.asarray(r_hat), mdp.discount))


def approximate_solve(model: AggregateModel, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Fixed point of the approximate Bellman operator, one value per macro."""
    v, _ = value_iteration(model.macro_mdp, tol)
    return v


def solved(model: AggregateModel, tol: float = DEFAULT_TOL) -> AggregateModel:
    """``model`` with ``v_hat`` filled in."""
    return replace(model, v_hat=approximate_solve(model, tol))


def lift(v_macro: np.ndarray, partition: Partition) -> np.ndarray:
    """Piecewise-constant extension of a macro-level vector to all states."""
    return np.asarray(v_macro)[partition.assignment]


def macro_greedy_policy(mdp: FiniteMdp, model: AggregateModel) -> np.ndarray:
    """One-step greedy policy on the source MDP over the lifted ``v_hat``."""
    if model.v_hat is None:
        raise ValueError("model is not solved")
    return greedy_policy(mdp, lift(model.v_hat, model.partition))


def module_policy(mdp: FiniteMdp, model: AggregateModel, atol: float = 1e-12) -> np.ndarray:
    """One-step greedy over the lifted ``v_hat``, ties broken by the macro Q.

    Inside a macro every move that stays in the macro has the same one-step
    value; the macro-level Q-values then pick the direction, and the lowest
    action index settles what is still tied.
    """
    if model.v_hat is None:
        raise ValueError("model is not solved")
    q = mdp.q_values(lift(model.v_hat, model.partition))
    macro_q = model.macro_mdp.q_values(model.v_hat)[model.partition.assignment]
    tied = q >= q.max(axis=1, keepdims=True) - atol
    return np.argmax(np.where(tied, macro_q, -np.inf), axis=1)


def save_partition_csv(partition: Partition, path) -> None:
    """Rows ``state_index,macro_index``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_index", "macro_index"])
        for s, m in enumerate(partition.assignment.tolist()):
            w.writerow([s, m])


def load_partition_csv(path) -> Partition:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    assignment = np.zeros(len(rows), dtype=np.int64)
    for s, m in rows:
        assignment[int(s)] = int(m)
    return Partition.from_assignment(assignment)
