"""Cliff-walking grid worlds as tabular MDPs.

Cells are numbered ``row * cols + col``; actions are up, down, left, right
(0..3). Stepping into a cliff costs ``cliff_reward`` and teleports the agent
to the start cell within the same transition. The goal is absorbing with zero
reward so the discounted Bellman equations are well posed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMdp, pair_permutation

UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
_PERPENDICULAR = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}
# left <-> right under a left-right reflection
MIRROR_ACTIONS = np.array([UP, DOWN, RIGHT, LEFT])


@dataclass(frozen=True)
class GridSpec:
    rows: int = 4
    cols: int = 12
    cliff_cells: frozenset = field(default_factory=lambda: frozenset((3, c) for c in range(1, 11)))
    start: tuple = (3, 0)
    goal: tuple = (3, 11)
    step_reward: float = -1.0
    cliff_reward: float = -100.0
    slip_probability: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cliff_cells", frozenset(tuple(map(int, c)) for c in self.cliff_cells))
        object.__setattr__(self, "start", tuple(map(int, self.start)))
        object.__setattr__(self, "goal", tuple(map(int, self.goal)))
        self.validate()

    def validate(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be positive")
        for name, cell in [("start", self.start), ("goal", self.goal), *(("cliff", c) for c in self.cliff_cells)]:
            if len(cell) != 2 or not (0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols):
                raise ValueError(f"{name} cell {cell} is outside the {self.rows}x{self.cols} grid")
        if self.start == self.goal:
            raise ValueError("start and goal must differ")
        if self.start in self.cliff_cells or self.goal in self.cliff_cells:
            raise ValueError("start and goal cannot be cliff cells")
        if not 0.0 <= self.slip_probability < 1.0:
            raise ValueError("slip_probability must lie in [0, 1)")

    @property
    def num_states(self) -> int:
        return self.rows * self.cols

    def state(self, cell) -> int:
        return cell[0] * self.cols + cell[1]

    def cell(self, state: int) -> tuple:
        return divmod(state, self.cols)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "cliff_cells": sorted(list(c) for c in self.cliff_cells),
            "start": list(self.start),
            "goal": list(self.goal),
            "step_reward": self.step_reward,
            "cliff_reward": self.cliff_reward,
            "slip_probability": self.slip_probability,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        known = {"rows", "cols", "cliff_cells", "start", "goal", "step_reward", "cliff_reward", "slip_probability"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown grid fields: {sorted(unknown)}")
        kw = dict(d)
        if "cliff_cells" in kw:
            kw["cliff_cells"] = frozenset(tuple(c) for c in kw["cliff_cells"])
        return cls(**kw)


def build_cliff_mdp(spec: GridSpec, gamma: float) -> TabularMdp:
    spec.validate()
    S, A = spec.num_states, 4
    P = np.zeros((S * A, S))
    R = np.zeros((S, A))
    p = spec.slip_probability
    goal = spec.state(spec.goal)
    start = spec.state(spec.start)
    for s in range(S):
        row, col = spec.cell(s)
        for a in range(A):
            i = a * S + s
            if s == goal:
                P[i, goal] = 1.0
                continue
            outcomes = [(a, 1.0 - p)]
            if p > 0:
                outcomes += [(b, p / 2) for b in _PERPENDICULAR[a]]
            for move, prob in outcomes:
                dr, dc = _MOVES[move]
                nr, nc = row + dr, col + dc
                if not (0 <= nr < spec.rows and 0 <= nc < spec.cols):
                    nr, nc = row, col
                if (nr, nc) in spec.cliff_cells:
                    P[i, start] += prob
                    R[s, a] += prob * spec.cliff_reward
                else:
                    P[i, nr * spec.cols + nc] += prob
                    R[s, a] += prob * spec.step_reward
    return TabularMdp(S, A, P, R, gamma)


def mirror_spec(spec: GridSpec) -> GridSpec:
    """Reflect the layout across the vertical centre line."""
    flip = lambda c: (c[0], spec.cols - 1 - c[1])  # noqa: E731
    return GridSpec(
        rows=spec.rows,
        cols=spec.cols,
        cliff_cells=frozenset(flip(c) for c in spec.cliff_cells),
        start=flip(spec.start),
        goal=flip(spec.goal),
        step_reward=spec.step_reward,
        cliff_reward=spec.cliff_reward,
        slip_probability=spec.slip_probability,
    )


def mirror_state_permutation(spec: GridSpec) -> np.ndarray:
    rows, cols = np.divmod(np.arange(spec.num_states), spec.cols)
    return rows * spec.cols + (spec.cols - 1 - cols)


def mirror_pair_permutation(spec: GridSpec) -> np.ndarray:
    """Flat state-action permutation taking ``spec``'s MDP onto its mirror's."""
    return pair_permutation(mirror_state_permutation(spec), MIRROR_ACTIONS)


def non_cliff_states(spec: GridSpec) -> np.ndarray:
    return np.array([s for s in range(spec.num_states) if spec.cell(s) not in spec.cliff_cells])
