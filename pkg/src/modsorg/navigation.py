"""Two-room navigation world discretized into finite MDPs.

The world is the open square (0, 10)^2 split by a vertical wall with two
corridor openings, and six circular goal zones. A task asks the agent to go
from one zone to another. Each grid cell is a state; one extra absorbing
terminal state is entered when the goal circle is reached. Motion noise is
handled by a fixed quadrature over ``noise_dirs`` directions, so building a
task MDP involves no randomness.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mdp import FiniteMdp

Rect = tuple[float, float, float, float]  # x0, y0, x1, y1

N_MOVES = 8


@dataclass(frozen=True)
class NavGeometry:
    """Walls (closed rectangles) and goal zones ``{i: (cx, cy, r)}``."""

    walls: tuple[Rect, ...]
    zones: dict[int, tuple[float, float, float]]
    bounds: Rect = (0.0, 0.0, 10.0, 10.0)

    def in_wall(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        hit = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for x0, y0, x1, y1 in self.walls:
            hit |= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        return hit

    def in_bounds(self, x, y) -> np.ndarray:
        bx0, by0, bx1, by1 = self.bounds
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return (x > bx0) & (x < bx1) & (y > by0) & (y < by1)

    def in_zone(self, x, y, zone: int) -> np.ndarray:
        cx, cy, r = self.zones[zone]
        return np.hypot(np.asarray(x, dtype=float) - cx, np.asarray(y, dtype=float) - cy) <= r

    def segment_hits_wall(self, x0, y0, x1, y1) -> np.ndarray:
        """Whether segments ``(x0, y0) -> (x1, y1)`` touch any wall."""
        x0, y0, x1, y1 = (np.asarray(v, dtype=float) for v in (x0, y0, x1, y1))
        hit = np.zeros(np.broadcast(x0, y0, x1, y1).shape, dtype=bool)
        for rect in self.walls:
            hit |= _segment_meets_rect(x0, y0, x1 - x0, y1 - y0, rect)
        return hit

    def check(self) -> list[str]:
        """Invariant violations: zones inside bounds and clear of walls."""
        problems = []
        bx0, by0, bx1, by1 = self.bounds
        for x0, y0, x1, y1 in self.walls:
            if x0 < bx0 or y0 < by0 or x1 > bx1 or y1 > by1 or x0 > x1 or y0 > y1:
                problems.append(f"wall {(x0, y0, x1, y1)} not inside bounds")
        for i, (cx, cy, r) in self.zones.items():
            if cx - r <= bx0 or cx + r >= bx1 or cy - r <= by0 or cy + r >= by1:
                problems.append(f"zone {i} not inside bounds")
            for x0, y0, x1, y1 in self.walls:
                nx, ny = min(max(cx, x0), x1), min(max(cy, y0), y1)
                if np.hypot(nx - cx, ny - cy) <= r:
                    problems.append(f"zone {i} intersects wall {(x0, y0, x1, y1)}")
        return problems


def _segment_meets_rect(px, py, dx, dy, rect: Rect) -> np.ndarray:
    # Liang-Barsky clipping of p + t d, t in [0, 1], against a closed box
    x0, y0, x1, y1 = rect
    t_lo = np.zeros(np.broadcast(px, dx).shape)
    t_hi = np.ones_like(t_lo)
    ok = np.ones(t_lo.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for p, d, lo, hi in ((px, dx, x0, x1), (py, dy, y0, y1)):
            p, d = np.broadcast_to(p, t_lo.shape), np.broadcast_to(d, t_lo.shape)
            still = d == 0
            ok &= ~still | ((p >= lo) & (p <= hi))
            t1 = np.where(still, -np.inf, (lo - p) / d)
            t2 = np.where(still, np.inf, (hi - p) / d)
            t_lo = np.maximum(t_lo, np.minimum(t1, t2))
            t_hi = np.minimum(t_hi, np.maximum(t1, t2))
    return ok & (t_lo <= t_hi)


def default_geometry() -> NavGeometry:
    """Two rooms joined by two corridors through a wall at x in [4.9, 5.1]."""
    walls = (
        (4.9, 0.0, 5.1, 2.0),
        (4.9, 3.0, 5.1, 7.0),
        (4.9, 8.0, 5.1, 10.0),
    )
    zones = {
        1: (1.5, 8.5, 0.5),
        2: (1.5, 1.5, 0.5),
        3: (4.0, 2.5, 0.5),
        4: (8.5, 1.5, 0.5),
        5: (8.5, 8.5, 0.5),
        6: (4.0, 7.5, 0.5),
    }
    return NavGeometry(walls, zones)


def load_geometry(path) -> NavGeometry:
    """Read ``wall x0 y0 x1 y1`` and ``zone i cx cy r`` records."""
    walls, zones = [], {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *vals = line.split()
        if kind == "wall" and len(vals) == 4:
            walls.append(tuple(float(v) for v in vals))
        elif kind == "zone" and len(vals) == 4:
            zones[int(vals[0])] = tuple(float(v) for v in vals[1:])
        else:
            raise ValueError(f"{path}:{lineno}: cannot parse {line!r}")
    geo = NavGeometry(tuple(walls), zones)
    problems = geo.check()
    if problems:
        raise ValueError("; ".join(problems))
    return geo


def save_geometry(geo: NavGeometry, path) -> None:
    lines = ["# walls: x0 y0 x1 y1; zones: index cx cy r"]
    lines += [f"wall {x0!r} {y0!r} {x1!r} {y1!r}" for x0, y0, x1, y1 in geo.walls]
    lines += [f"zone {i} {cx!r} {cy!r} {r!r}" for i, (cx, cy, r) in sorted(geo.zones.items())]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class NavConfig:
    cell: float = 0.1
    move_amp: float = 0.1
    noise_amp: float = 0.03
    noise_dirs: int = 16
    discount: float = 0.95
    episode_cap: int = 1000

    def __post_init__(self):
        if self.cell <= 0 or self.noise_dirs < 1 or not 0 <= self.discount < 1:
            raise ValueError(f"invalid navigation config {self}")


@dataclass(frozen=True)
class TaskSpec:
    start_zone: int
    goal_zone: int

    def __post_init__(self):
        if self.start_zone == self.goal_zone or not {self.start_zone, self.goal_zone} <= set(range(1, 7)):
            raise ValueError(f"invalid task {self}")


SIX_TASKS = (TaskSpec(2, 1), TaskSpec(3, 2), TaskSpec(4, 3), TaskSpec(5, 4), TaskSpec(6, 5), TaskSpec(1, 6))


@dataclass(frozen=True, eq=False)
class Grid:
    """Free cells of a geometry; state ``k`` is the cell ``cells[k]``.

    State ``n_free`` is the absorbing terminal.
    """

    geometry: NavGeometry
    cell: float
    shape: tuple[int, int]
    cells: np.ndarray  # (n_free, 2) integer (ix, iy)
    index: np.ndarray = field(repr=False)  # (nx, ny) state index or -1

    @classmethod
    def build(cls, geo: NavGeometry, cell: float) -> "Grid":
        bx0, by0, bx1, by1 = geo.bounds
        nx, ny = int(round((bx1 - bx0) / cell)), int(round((by1 - by0) / cell))
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        cx, cy = bx0 + (ix + 0.5) * cell, by0 + (iy + 0.5) * cell
        free = ~geo.in_wall(cx, cy)
        if not free.any():
            raise ValueError("geometry has no free cell")
        index = np.full((nx, ny), -1, dtype=np.int64)
        index[free] = np.arange(free.sum())
        cells = np.stack([ix[free], iy[free]], axis=1)
        return cls(geo, cell, (nx, ny), cells, index)

    @property
    def n_free(self) -> int:
        return self.cells.shape[0]

    @property
    def terminal(self) -> int:
        return self.n_free

    @property
    def n_states(self) -> int:
        return self.n_free + 1

    def centers(self) -> np.ndarray:
        bx0, by0 = self.geometry.bounds[:2]
        return np.array([bx0, by0]) + (self.cells + 0.5) * self.cell

    def state_coords(self) -> np.ndarray:
        """Integer cell coordinates per state; NaN for the terminal."""
        return np.vstack([self.cells.astype(float), [np.nan, np.nan]])

    def locate(self, x, y) -> np.ndarray:
        """State index of the cell containing each point, -1 if none."""
        bx0, by0 = self.geometry.bounds[:2]
        ix = np.floor((np.asarray(x) - bx0) / self.cell).astype(np.int64)
        iy = np.floor((np.asarray(y) - by0) / self.cell).astype(np.int64)
        inside = (ix >= 0) & (ix < self.shape[0]) & (iy >= 0) & (iy < self.shape[1])
        out = np.full(ix.shape, -1, dtype=np.int64)
        out[inside] = self.index[ix[inside], iy[inside]]
        return out

    def zone_cells(self, zone: int) -> np.ndarray:
        c = self.centers()
        return np.flatnonzero(self.geometry.in_zone(c[:, 0], c[:, 1], zone))

    def macro_rectangles(self, partition) -> list[tuple[int, float, float, float, float]]:
        """Bounding rectangle of every macro in environment units.

        Macros holding only the terminal are omitted.
        """
        bx0, by0 = self.geometry.bounds[:2]
        rects = []
        for j, members in enumerate(partition.members):
            members = members[members < self.n_free]
            if members.size == 0:
                continue
            c = self.cells[members]
            lo, hi = c.min(axis=0), c.max(axis=0) + 1
            rects.append((j, bx0 + lo[0] * self.cell, by0 + lo[1] * self.cell,
                          bx0 + hi[0] * self.cell, by0 + hi[1] * self.cell))
        return rects


def move_directions() -> np.ndarray:
    """Unit vectors of the 8 moves: E, NE, N, NW, W, SW, S, SE."""
    ang = 2 * np.pi * np.arange(N_MOVES) / N_MOVES
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def noise_offsets(cfg: NavConfig) -> np.ndarray:
    ang = 2 * np.pi * np.arange(cfg.noise_dirs) / cfg.noise_dirs
    return cfg.noise_amp * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def sample_outcomes(grid: Grid, cfg: NavConfig, goal_zone: int, states: np.ndarray, action: int):
    """Successor state and reward of every quadrature sample.

    Returns two arrays of shape ``(len(states), noise_dirs)``.
    """
    geo = grid.geometry
    start = grid.centers()[states]
    step = cfg.move_amp * move_directions()[action] + noise_offsets(cfg)
    end = start[:, None, :] + step[None, :, :]
    sx = np.broadcast_to(start[:, None, 0], end.shape[:2])
    sy = np.broadcast_to(start[:, None, 1], end.shape[:2])
    ex, ey = end[..., 0], end[..., 1]
    landed = grid.locate(ex, ey)
    blocked = ~geo.in_bounds(ex, ey) | geo.segment_hits_wall(sx, sy, ex, ey) | (landed < 0)
    goal = ~blocked & geo.in_zone(ex, ey, goal_zone)
    succ = np.where(blocked, states[:, None], np.where(goal, grid.terminal, landed))
    reward = np.where(blocked, -1.0, np.where(goal, 1.0, 0.0))
    return succ, reward


def build_task_mdp(geo: NavGeometry, cfg: NavConfig, task: TaskSpec, grid: Grid | None = None) -> FiniteMdp:
    """The discretized MDP of one task."""
    if grid is None:
        grid = Grid.build(geo, cfg.cell)
    n_free, n_s, k = grid.n_free, grid.n_states, cfg.noise_dirs
    states = np.arange(n_free)
    rows, cols = [], []
    R = np.zeros((n_s, N_MOVES))
    for a in range(N_MOVES):
        succ, reward = sample_outcomes(grid, cfg, task.goal_zone, states, a)
        rows.append(np.repeat(states * N_MOVES + a, k))
        cols.append(succ.ravel())
        R[:n_free, a] = reward.mean(axis=1)
    term_rows = grid.terminal * N_MOVES + np.arange(N_MOVES)
    rows.append(term_rows)
    cols.append(np.full(N_MOVES, grid.terminal))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    data = np.where(rows >= grid.terminal * N_MOVES, 1.0, 1.0 / k)
    P = sp.csr_matrix((data, (rows, cols)), shape=(n_s * N_MOVES, n_s))
    P.sum_duplicates()
    P.sort_indices()
    return FiniteMdp(P, R, cfg.discount)


def make_six_tasks(geo: NavGeometry, cfg: NavConfig, grid: Grid | None = None):
    """The six zone-to-zone tasks; returns ``(mdps, specs, grid)``."""
    if grid is None:
        grid = Grid.build(geo, cfg.cell)
    return [build_task_mdp(geo, cfg, t, grid) for t in SIX_TASKS], list(SIX_TASKS), grid


class _Sampler:
    """Vectorized successor sampling from the sparse rows of an MDP."""

    def __init__(self, mdp: FiniteMdp):
        P = mdp.transitions
        self.indptr = P.indptr
        self.indices = P.indices
        self.cum = np.cumsum(P.data)
        starts = np.repeat(P.indptr[:-1], np.diff(P.indptr))
        base = np.where(starts > 0, self.cum[starts - 1], 0.0)
        self.cum = self.cum - base  # cumulative mass within each row
        self.max_len = int(np.diff(P.indptr).max())

    def draw(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        ptr = self.indptr[rows].copy()
        last = self.indptr[rows + 1] - 1
        for _ in range(self.max_len - 1):
            advance = (ptr < last) & (self.cum[ptr] <= u)
            if not advance.any():
                break
            ptr += advance
        return self.indices[ptr]


def _run_batch(mdp: FiniteMdp, policy, starts, uniforms, terminal: int):
    policy = np.asarray(policy)
    sampler = _Sampler(mdp)
    n, cap = uniforms.shape
    state = np.array(starts, dtype=np.int64)
    total = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    active = state != terminal
    for t in range(cap):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s = state[idx]
        a = policy[s]
        total[idx] += mdp.rewards[s, a]
        state[idx] = sampler.draw(s * mdp.n_actions + a, uniforms[idx, t])
        steps[idx] += 1
        active[idx] = state[idx] != terminal
    return total, steps, state == terminal


def simulate_episode(mdp: FiniteMdp, policy, start_cell: int, rng_seed, cap: int, terminal: int | None = None):
    """One episode; returns ``(cumulative reward, steps, reached)``.

    Rewards are undiscounted. ``terminal`` defaults to the last state.
    """
    terminal = mdp.n_states - 1 if terminal is None else terminal
    u = np.random.default_rng(rng_seed).random(cap)[None, :]
    total, steps, reached = _run_batch(mdp, policy, [start_cell], u, terminal)
    return float(total[0]), int(steps[0]), bool(reached[0])


@dataclass(frozen=True)
class Evaluation:
    mean_reward: float
    success_rate: float


def evaluate(mdp: FiniteMdp, policy, start_cells, runs: int, cap: int, seed: int,
             terminal: int | None = None) -> Evaluation:
    """Mean undiscounted return and success rate over ``runs`` episodes.

    Start cells are drawn uniformly from ``start_cells`` by a generator
    seeded with ``seed``; episode ``i`` uses the stream ``(seed, i)``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    terminal = mdp.n_states - 1 if terminal is None else terminal
    start_cells = np.asarray(start_cells)
    starts = start_cells[np.random.default_rng(seed).integers(start_cells.size, size=runs)]
    u = np.stack([np.random.default_rng([seed, i]).random(cap) for i in range(runs)])
    total, _, reached = _run_batch(mdp, policy, starts, u, terminal)
    return Evaluation(float(total.mean()), float(reached.mean()))


def episode_start(start_cells, seed: int, runs: int = 1) -> np.ndarray:
    """The start cells :func:`evaluate` uses for ``seed``."""
    start_cells = np.asarray(start_cells)
    return start_cells[np.random.default_rng(seed).integers(start_cells.size, size=runs)]


def save_evaluation_csv(rows, path) -> None:
    """Rows of ``(task, policy_tag, runs, mean_reward, success_rate)``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "policy_tag", "runs", "mean_reward", "success_rate"])
        for task, tag, runs, ev in rows:
            w.writerow([task, tag, runs, repr(ev.mean_reward), repr(ev.success_rate)])
