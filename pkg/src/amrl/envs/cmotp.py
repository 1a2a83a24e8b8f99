"""Coordinated multi-agent object transportation (CMOTP) gridworld.

Two agents must stand immediately left and right of an object (grasping is
automatic) and then choose the same move for the object to travel. Both are
rewarded 1.0 when the object enters the goal zone.

Coordinates are ``(x, y)`` with ``y`` growing downwards; row 0 of a layout
file is the top row.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from amrl.errors import ConfigurationError, ContractViolation

STAY, LEFT, RIGHT, UP, DOWN = range(5)
ACTIONS = ("stay", "left", "right", "up", "down")
N_ACTIONS = 5
DELTAS = {STAY: (0, 0), LEFT: (-1, 0), RIGHT: (1, 0), UP: (0, -1), DOWN: (0, 1)}
# greedy tie-break order
GREEDY_ORDER = (LEFT, RIGHT, UP, DOWN)

MAX_STEPS = 1900
OBS_SIZE = 16
CODE_WALL, CODE_GOAL, CODE_OBJECT, CODE_SELF, CODE_TEAMMATE = 1.0, 0.8, 0.6, 0.4, 0.2

Cell = tuple[int, int]


def _shift(cell: Cell, action: int) -> Cell:
    dx, dy = DELTAS[action]
    return cell[0] + dx, cell[1] + dy


@dataclass(frozen=True, eq=False)
class Layout:
    walls: np.ndarray  # bool [H, W]
    goals: frozenset
    object_start: Cell
    agent_starts: tuple[Cell, Cell]

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @classmethod
    def parse(cls, text: str) -> "Layout":
        """Parse ``#`` wall, ``G`` goal, ``O`` object, ``1``/``2`` agents, ``.`` empty."""
        rows = [r for r in (line.strip() for line in text.splitlines()) if r]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ConfigurationError("layout rows must be non-empty and equally long")
        h, w = len(rows), len(rows[0])
        if h > OBS_SIZE or w > OBS_SIZE:
            raise ConfigurationError(f"layout {w}x{h} does not fit the {OBS_SIZE}x{OBS_SIZE} observation")
        walls = np.zeros((h, w), dtype=bool)
        goals, marks = set(), {}
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                if ch == "#":
                    walls[y, x] = True
                elif ch == "G":
                    goals.add((x, y))
                elif ch in "O12":
                    if ch in marks:
                        raise ConfigurationError(f"layout has more than one {ch!r}")
                    marks[ch] = (x, y)
                elif ch != ".":
                    raise ConfigurationError(f"unknown layout character {ch!r}")
        if set(marks) != {"O", "1", "2"} or not goals:
            raise ConfigurationError("layout needs one O, one 1, one 2 and at least one G")
        layout = cls(walls, frozenset(goals), marks["O"], (marks["1"], marks["2"]))
        layout._validate()
        return layout

    @classmethod
    def default(cls) -> "Layout":
        text = resources.files("amrl.envs").joinpath("layouts/cmotp_default.txt").read_text()
        return cls.parse(text)

    @classmethod
    def load(cls, path: str | Path) -> "Layout":
        return cls.parse(Path(path).read_text())

    def free(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and not self.walls[y, x]

    def object_ok(self, cell: Cell) -> bool:
        """The object and both grasp slots beside it are wall-free."""
        x, y = cell
        return self.free((x - 1, y)) and self.free(cell) and self.free((x + 1, y))

    def slots(self, obj: Cell) -> tuple[Cell, Cell]:
        return (obj[0] - 1, obj[1]), (obj[0] + 1, obj[1])

    @cached_property
    def object_distance(self) -> np.ndarray:
        """BFS distance (joint moves) from each object position to the goal zone."""
        dist = np.full(self.walls.shape, np.inf)
        queue = deque()
        for g in self.goals:
            if self.object_ok(g):
                dist[g[1], g[0]] = 0
                queue.append(g)
        while queue:
            cur = queue.popleft()
            for a in GREEDY_ORDER:
                nxt = _shift(cur, a)
                if self.object_ok(nxt) and dist[nxt[1], nxt[0]] == np.inf:
                    dist[nxt[1], nxt[0]] = dist[cur[1], cur[0]] + 1
                    queue.append(nxt)
        return dist

    def agent_distance(self, target: Cell, obj: Cell) -> np.ndarray:
        """BFS distance to ``target`` for a lone agent, with the object as an obstacle."""
        key = (target, obj)
        cache = self.__dict__.setdefault("_agent_dist", {})
        if key in cache:
            return cache[key]
        dist = np.full(self.walls.shape, np.inf)
        if self.free(target) and target != obj:
            dist[target[1], target[0]] = 0
            queue = deque([target])
            while queue:
                cur = queue.popleft()
                for a in GREEDY_ORDER:
                    nxt = _shift(cur, a)
                    if self.free(nxt) and nxt != obj and dist[nxt[1], nxt[0]] == np.inf:
                        dist[nxt[1], nxt[0]] = dist[cur[1], cur[0]] + 1
                        queue.append(nxt)
        cache[key] = dist
        return dist

    def _validate(self) -> None:
        obj = self.object_start
        for a in self.agent_starts:
            if not self.free(a) or a == obj:
                raise ConfigurationError(f"agent start {a} is not a free cell")
        if not self.object_ok(obj):
            raise ConfigurationError("object start cannot be grasped from both sides")
        ox, oy = obj
        if not np.isfinite(self.object_distance[oy, ox]):
            raise ConfigurationError("goal is unreachable for the object")
        for a in self.agent_starts:
            if not any(np.isfinite(self.agent_distance(s, obj)[a[1], a[0]]) for s in self.slots(obj)):
                raise ConfigurationError(f"agent at {a} cannot reach the object")


@dataclass(frozen=True)
class CmotpState:
    agents: tuple[Cell, Cell]
    object: Cell
    grasped: bool = False
    step_count: int = 0
    done: bool = False


class Cmotp:
    """The simulator: ``reset`` and ``step`` are pure with respect to the state."""

    def __init__(self, layout: Layout | None = None, max_steps: int = MAX_STEPS):
        self.layout = layout or Layout.default()
        if not 1 <= max_steps <= MAX_STEPS:
            raise ConfigurationError(f"max_steps must be in [1, {MAX_STEPS}]")
        self.max_steps = max_steps

    def reset(self) -> tuple[CmotpState, tuple[np.ndarray, np.ndarray]]:
        lay = self.layout
        state = CmotpState(lay.agent_starts, lay.object_start)
        state = replace(state, grasped=self._is_grasp(state.agents, state.object))
        return state, self.observations(state)

    def _is_grasp(self, agents, obj) -> bool:
        return set(agents) == set(self.layout.slots(obj))

    def step(self, state: CmotpState, learner_action: int, teammate_action: int):
        """Advance one tick. Returns ``(state, observations, reward, done)``."""
        if state.done:
            raise ContractViolation("step called on a finished CMOTP episode")
        acts = (int(learner_action), int(teammate_action))
        for a in acts:
            if a not in DELTAS:
                raise ContractViolation(f"invalid CMOTP action {a}")
        agents, obj, grasped = state.agents, state.object, state.grasped
        if grasped:
            if acts[0] == acts[1] != STAY:
                moved = _shift(obj, acts[0])
                if self.layout.object_ok(moved):
                    obj = moved
                    agents = tuple(_shift(p, acts[0]) for p in agents)
        else:
            agents = self._move_independent(agents, obj, acts)
            grasped = self._is_grasp(agents, obj)
        reward = 1.0 if grasped and obj in self.layout.goals else 0.0
        steps = state.step_count + 1
        done = reward > 0 or steps >= self.max_steps
        new = CmotpState(agents, obj, grasped, steps, done)
        return new, self.observations(new), reward, done

    def _move_independent(self, agents, obj, acts):
        targets = []
        for pos, a in zip(agents, acts):
            nxt = _shift(pos, a)
            targets.append(nxt if self.layout.free(nxt) and nxt != obj else pos)
        if targets[0] == targets[1] or (targets[0] == agents[1] and targets[1] == agents[0]):
            return agents
        # an agent cannot enter the cell of one that ends up staying
        for _ in range(2):
            for i in (0, 1):
                j = 1 - i
                if targets[i] == agents[j] and targets[j] == agents[j]:
                    targets[i] = agents[i]
        return tuple(targets)

    def observations(self, state: CmotpState) -> tuple[np.ndarray, np.ndarray]:
        return self.encode_observation(state, 0), self.encode_observation(state, 1)

    def encode_observation(self, state: CmotpState, perspective: int) -> np.ndarray:
        """1x16x16 image: wall 1.0, goal 0.8, object 0.6, self 0.4, teammate 0.2."""
        lay = self.layout
        img = np.zeros((1, OBS_SIZE, OBS_SIZE))
        img[0, : lay.height, : lay.width][lay.walls] = CODE_WALL
        for x, y in lay.goals:
            img[0, y, x] = CODE_GOAL
        ox, oy = state.object
        img[0, oy, ox] = CODE_OBJECT
        other = state.agents[1 - perspective]
        img[0, other[1], other[0]] = CODE_TEAMMATE
        me = state.agents[perspective]
        img[0, me[1], me[0]] = CODE_SELF
        return img

    # ---- scripted behaviour -------------------------------------------------

    def target_slot(self, state: CmotpState, agent: int) -> Cell:
        """The grasp slot ``agent`` heads for while the object is not grasped."""
        slots = self.layout.slots(state.object)
        other = state.agents[1 - agent]
        if other in slots:
            return slots[1] if other == slots[0] else slots[0]
        pos = state.agents[agent]
        d = [self.layout.agent_distance(s, state.object)[pos[1], pos[0]] for s in slots]
        if d[0] == d[1]:
            return slots[agent]
        return slots[int(d[1] < d[0])]

    def greedy_action(self, state: CmotpState, agent: int) -> int:
        """Shortest-path move: towards the grasp slot, or (grasped) the object towards the goal.

        Ties go to the first of left, right, up, down; ``stay`` when no move helps.
        """
        if state.grasped:
            dist = self.layout.object_distance
            cur = state.object
            for a in GREEDY_ORDER:
                nxt = _shift(cur, a)
                if self.layout.object_ok(nxt) and dist[nxt[1], nxt[0]] < dist[cur[1], cur[0]]:
                    return a
            return STAY
        dist = self.layout.agent_distance(self.target_slot(state, agent), state.object)
        cur = state.agents[agent]
        for a in GREEDY_ORDER:
            nxt = _shift(cur, a)
            if self.layout.free(nxt) and nxt != state.object and dist[nxt[1], nxt[0]] < dist[cur[1], cur[0]]:
                return a
        return STAY


def _non_greedy(greedy: int) -> list[int]:
    return [a for a in range(N_ACTIONS) if a != greedy]


class HesitantTeammate:
    """Takes the greedy action with probability ``p_greedy``, else one of the other four uniformly."""

    kind = "hesitant"

    def __init__(self, env: Cmotp, agent: int = 1, p_greedy: float = 0.8):
        if not 0.0 <= p_greedy <= 1.0:
            raise ConfigurationError("p_greedy must lie in [0, 1]")
        self.env = env
        self.agent = agent
        self.p_greedy = p_greedy

    def intended(self, state: CmotpState) -> int:
        return self.env.greedy_action(state, self.agent)

    def act(self, state: CmotpState, rng: np.random.Generator) -> int:
        greedy = self.intended(state)
        if rng.random() < self.p_greedy:
            return greedy
        others = _non_greedy(greedy)
        return others[int(rng.integers(len(others)))]

    def action_distribution(self, state: CmotpState) -> np.ndarray:
        probs = np.full(N_ACTIONS, (1.0 - self.p_greedy) / (N_ACTIONS - 1))
        probs[self.intended(state)] = self.p_greedy
        return probs


def expand_waypoints(start: Cell, waypoints: Sequence[Cell]) -> list[Cell]:
    """Cells visited by straight-line segments through ``waypoints``."""
    path = [tuple(start)]
    for wx, wy in waypoints:
        x, y = path[-1]
        if x != wx and y != wy:
            raise ConfigurationError(f"waypoint {(wx, wy)} is not axis-aligned with {(x, y)}")
        while (x, y) != (wx, wy):
            x += int(np.sign(wx - x))
            y += int(np.sign(wy - y))
            path.append((x, y))
    return path


def default_waypoints(layout: Layout) -> list[Cell]:
    """Straight up from the object's start, then along that row to the nearest goal cell."""
    ox, oy = layout.object_start
    top = min(y for _, y in layout.goals)
    goal_x = min((abs(x - ox), x) for x, y in layout.goals if y == top)[1]
    points = [(ox, top)]
    if goal_x != ox:
        points.append((goal_x, top))
    return points


class StubbornTeammate(HesitantTeammate):
    """Hesitant until grasped; afterwards follows a fixed object path deterministically."""

    kind = "stubborn"

    def __init__(self, env: Cmotp, agent: int = 1, p_greedy: float = 0.8,
                 waypoints: Sequence[Cell] | None = None):
        super().__init__(env, agent, p_greedy)
        lay = env.layout
        pts = [tuple(p) for p in waypoints] if waypoints else default_waypoints(lay)
        self.path = expand_waypoints(lay.object_start, pts)
        for cell in self.path:
            if not lay.object_ok(cell):
                raise ConfigurationError(f"stubborn path cell {cell} is blocked")
        self._index = {cell: i for i, cell in enumerate(self.path)}
        self._path_distance = self._distance_to_path()

    def _distance_to_path(self) -> np.ndarray:
        lay = self.env.layout
        dist = np.full(lay.walls.shape, np.inf)
        queue = deque()
        for x, y in self.path:
            dist[y, x] = 0
            queue.append((x, y))
        while queue:
            cur = queue.popleft()
            for a in GREEDY_ORDER:
                nxt = _shift(cur, a)
                if lay.object_ok(nxt) and dist[nxt[1], nxt[0]] == np.inf:
                    dist[nxt[1], nxt[0]] = dist[cur[1], cur[0]] + 1
                    queue.append(nxt)
        return dist

    def intended(self, state: CmotpState) -> int:
        if not state.grasped:
            return self.env.greedy_action(state, self.agent)
        obj = state.object
        i = self._index.get(obj)
        if i is not None:
            if i + 1 < len(self.path):
                nxt = self.path[i + 1]
                return next(a for a in GREEDY_ORDER if _shift(obj, a) == nxt)
            return self.env.greedy_action(state, self.agent)
        dist = self._path_distance
        for a in GREEDY_ORDER:
            nxt = _shift(obj, a)
            if self.env.layout.object_ok(nxt) and dist[nxt[1], nxt[0]] < dist[obj[1], obj[0]]:
                return a
        return STAY

    def act(self, state: CmotpState, rng: np.random.Generator) -> int:
        if state.grasped:
            return self.intended(state)
        return super().act(state, rng)

    def action_distribution(self, state: CmotpState) -> np.ndarray:
        if not state.grasped:
            return super().action_distribution(state)
        probs = np.zeros(N_ACTIONS)
        probs[self.intended(state)] = 1.0
        return probs


def make_teammate(kind: str, env: Cmotp, p_greedy: float = 0.8, waypoints=None, agent: int = 1):
    if kind == "hesitant":
        return HesitantTeammate(env, agent, p_greedy)
    if kind == "stubborn":
        return StubbornTeammate(env, agent, p_greedy, waypoints)
    raise ConfigurationError(f"unknown teammate kind {kind!r}")
