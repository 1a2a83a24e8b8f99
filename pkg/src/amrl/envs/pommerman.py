"""Two-player mini-Pommerman on an 8x8 board.

Positions are ``(row, col)``. One tick resolves, in order: bomb fuses and
chained explosions, flames, agent moves (with kicking), bomb placement,
power-up pickup, deaths, and the terminal check.
"""
from __future__ import annotations

import copy
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from amrl.errors import ConfigurationError, ContractViolation

PASSAGE, RIGID, WOOD, POW_BLAST, POW_AMMO, POW_KICK = range(6)
POWERUPS = (POW_BLAST, POW_AMMO, POW_KICK)

STAY, UP, DOWN, LEFT, RIGHT, BOMB = range(6)
ACTIONS = ("stay", "up", "down", "left", "right", "place_bomb")
N_ACTIONS = 6
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

N_PLANES = 18
Pos = tuple[int, int]


@dataclass(frozen=True)
class PomConfig:
    size: int = 8
    rigid_frac: float = 0.10
    wood_frac: float = 0.20
    powerup_frac: float = 0.50
    bomb_life: int = 10
    flame_life: int = 2
    max_steps: int = 800
    init_ammo: int = 1
    init_blast: int = 2
    reward_wood: float = 0.01
    reward_powerup: float = 0.05
    reward_step: float = -0.0001
    max_generation_attempts: int = 1000

    def __post_init__(self):
        if self.rigid_frac + self.wood_frac >= 0.8:
            raise ConfigurationError("rigid + wood fractions leave too little passage")
        if self.size < 4:
            raise ConfigurationError("board must be at least 4x4")


@dataclass
class AgentState:
    pos: Pos
    alive: bool = True
    ammo: int = 1
    max_ammo: int = 1
    blast: int = 2
    can_kick: bool = False


@dataclass
class Bomb:
    pos: Pos
    owner: int
    life: int
    blast: int
    moving: Pos | None = None


@dataclass
class PomState:
    board: np.ndarray  # int8 [size, size]
    hidden: np.ndarray  # power-up hidden under each wood cell, PASSAGE if none
    agents: list[AgentState]
    bombs: list[Bomb] = field(default_factory=list)
    flames: dict[Pos, int] = field(default_factory=dict)
    step_count: int = 0
    done: bool = False

    def copy(self) -> "PomState":
        return copy.deepcopy(self)

    @property
    def size(self) -> int:
        return self.board.shape[0]

    def bomb_at(self, pos: Pos) -> Bomb | None:
        for b in self.bombs:
            if b.pos == pos:
                return b
        return None

    def fingerprint(self) -> tuple:
        """Hashable snapshot used by determinism checks."""
        return (
            self.board.tobytes(), self.hidden.tobytes(),
            tuple((a.pos, a.alive, a.ammo, a.max_ammo, a.blast, a.can_kick) for a in self.agents),
            tuple((b.pos, b.owner, b.life, b.blast, b.moving) for b in self.bombs),
            tuple(sorted(self.flames.items())), self.step_count, self.done,
        )


@dataclass
class StepInfo:
    terminal_rewards: tuple[float, float] = (0.0, 0.0)
    exploded: list[Pos] = field(default_factory=list)
    wood_destroyed: tuple[int, int] = (0, 0)
    powerups_collected: tuple[int, int] = (0, 0)
    winner: int | None = None


def in_bounds(pos: Pos, size: int) -> bool:
    return 0 <= pos[0] < size and 0 <= pos[1] < size


def _add(pos: Pos, d: Pos) -> Pos:
    return pos[0] + d[0], pos[1] + d[1]


def reachable(board: np.ndarray, start: Pos, passable: Iterable[int] = (PASSAGE, WOOD, *POWERUPS)) -> set[Pos]:
    """Flood fill from ``start`` through cells whose item is in ``passable``."""
    allowed = set(passable)
    size = board.shape[0]
    seen = {start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for d in MOVES.values():
            nxt = _add(cur, d)
            if in_bounds(nxt, size) and nxt not in seen and int(board[nxt]) in allowed:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def _spawn_cells(rng: np.random.Generator, size: int) -> tuple[Pos, Pos]:
    corners = rng.choice(4, size=2, replace=False)
    cells = []
    for c in corners:
        r0 = 0 if c in (0, 1) else size - 1
        c0 = 0 if c in (0, 2) else size - 1
        dr, dc = rng.integers(0, 2, size=2)
        cells.append((r0 + (dr if r0 == 0 else -dr), c0 + (dc if c0 == 0 else -dc)))
    return cells[0], cells[1]


def generate_board(seed: int, config: PomConfig = PomConfig()) -> PomState:
    """Random board with agents near two distinct corners and a guaranteed path between them."""
    rng = np.random.default_rng(seed)
    size = config.size
    n_cells = size * size
    n_rigid = int(round(config.rigid_frac * n_cells))
    n_wood = int(round(config.wood_frac * n_cells))
    for _ in range(config.max_generation_attempts):
        spawns = _spawn_cells(rng, size)
        free = [(r, c) for r in range(size) for c in range(size) if (r, c) not in spawns]
        order = rng.permutation(len(free))
        board = np.full((size, size), PASSAGE, dtype=np.int8)
        hidden = np.full((size, size), PASSAGE, dtype=np.int8)
        for k in order[:n_rigid]:
            board[free[k]] = RIGID
        for k in order[n_rigid:n_rigid + n_wood]:
            board[free[k]] = WOOD
            if rng.random() < config.powerup_frac:
                hidden[free[k]] = POWERUPS[int(rng.integers(3))]
        if spawns[1] in reachable(board, spawns[0]):
            agents = [
                AgentState(p, ammo=config.init_ammo, max_ammo=config.init_ammo, blast=config.init_blast)
                for p in spawns
            ]
            return PomState(board, hidden, agents)
    raise RuntimeError(f"no connected board after {config.max_generation_attempts} attempts")


def blast_cells(board: np.ndarray, center: Pos, radius: int) -> tuple[list[Pos], list[Pos]]:
    """Cells covered by a blast and the wood cells it hits.

    Rays run up to ``radius`` cells in each cardinal direction; rigid walls
    stop a ray before their cell, wood stops it on its cell.
    """
    size = board.shape[0]
    cells, woods = [center], []
    for d in MOVES.values():
        cur = center
        for _ in range(radius):
            cur = _add(cur, d)
            if not in_bounds(cur, size) or board[cur] == RIGID:
                break
            cells.append(cur)
            if board[cur] == WOOD:
                woods.append(cur)
                break
    return cells, woods


def _resolve_explosions(state: PomState, first: list[Bomb]):
    """Explode ``first`` and every bomb caught in a blast, transitively, this tick."""
    exploded: list[Bomb] = []
    pending = deque(first)
    flamed: list[Pos] = []
    woods: dict[Pos, int] = {}
    while pending:
        bomb = pending.popleft()
        if any(bomb is b for b in exploded):
            continue
        exploded.append(bomb)
        cells, hit = blast_cells(state.board, bomb.pos, bomb.blast)
        flamed.extend(cells)
        for w in hit:
            woods.setdefault(w, bomb.owner)
        for other in state.bombs:
            if other.pos in cells and not any(other is b for b in exploded):
                pending.append(other)
    return exploded, flamed, woods


def _passable_for_bomb(state: PomState, pos: Pos) -> bool:
    return (
        in_bounds(pos, state.size)
        and state.board[pos] not in (RIGID, WOOD)
        and state.bomb_at(pos) is None
        and all(not (a.alive and a.pos == pos) for a in state.agents)
    )


def step(state: PomState, action_0: int, action_1: int,
         config: PomConfig = PomConfig()):
    """Advance one tick on a copy. Returns ``(state, observations, rewards, done, info)``."""
    if state.done:
        raise ContractViolation("step called on a finished Pommerman episode")
    actions = (int(action_0), int(action_1))
    for a in actions:
        if not 0 <= a < N_ACTIONS:
            raise ContractViolation(f"invalid Pommerman action {a}")
    s = state.copy()
    info = StepInfo()
    rewards = [config.reward_step, config.reward_step]

    # (1) fuses and chained explosions
    for b in s.bombs:
        b.life -= 1
    exploded, flamed, woods = _resolve_explosions(s, [b for b in s.bombs if b.life <= 0])
    for b in exploded:
        s.agents[b.owner].ammo += 1
    s.bombs = [b for b in s.bombs if not any(b is e for e in exploded)]
    wood_count = [0, 0]
    for pos, owner in woods.items():
        s.board[pos] = s.hidden[pos]
        s.hidden[pos] = PASSAGE
        wood_count[owner] += 1
    info.exploded = [b.pos for b in exploded]
    info.wood_destroyed = tuple(wood_count)

    # (2) flames: age old ones, then lay fresh ones
    s.flames = {p: life - 1 for p, life in s.flames.items() if life > 1}
    for p in flamed:
        s.flames[p] = config.flame_life

    # (3) movement: sliding bombs, then agents
    for b in s.bombs:
        if b.moving is not None:
            nxt = _add(b.pos, b.moving)
            if _passable_for_bomb(s, nxt):
                b.pos = nxt
            else:
                b.moving = None
    _move_agents(s, actions)

    # (4) bomb placement
    for i, (agent, a) in enumerate(zip(s.agents, actions)):
        if agent.alive and a == BOMB and agent.ammo > 0 and s.bomb_at(agent.pos) is None:
            s.bombs.append(Bomb(agent.pos, i, config.bomb_life, agent.blast))
            agent.ammo -= 1

    # (5) power-ups
    picked = [0, 0]
    for i, agent in enumerate(s.agents):
        item = int(s.board[agent.pos])
        if agent.alive and item in POWERUPS:
            if item == POW_BLAST:
                agent.blast += 1
            elif item == POW_AMMO:
                agent.ammo += 1
                agent.max_ammo += 1
            else:
                agent.can_kick = True
            s.board[agent.pos] = PASSAGE
            picked[i] += 1
    info.powerups_collected = tuple(picked)

    # (6) deaths and termination
    for agent in s.agents:
        if agent.alive and agent.pos in s.flames:
            agent.alive = False
    s.step_count += 1
    alive = [a.alive for a in s.agents]
    terminal = [0.0, 0.0]
    if sum(alive) <= 1 or s.step_count >= config.max_steps:
        s.done = True
        if sum(alive) == 1:
            winner = alive.index(True)
            terminal[winner], terminal[1 - winner] = 1.0, -1.0
            info.winner = winner
    info.terminal_rewards = tuple(terminal)
    for i in range(2):
        rewards[i] += (terminal[i] + config.reward_wood * wood_count[i]
                       + config.reward_powerup * picked[i])
    return s, (encode_observation(s, 0), encode_observation(s, 1)), tuple(rewards), s.done, info


def _move_agents(s: PomState, actions: Sequence[int]) -> None:
    starts = [a.pos for a in s.agents]
    targets = list(starts)
    kicks: list[tuple[Bomb, Pos] | None] = [None, None]
    for i, (agent, a) in enumerate(zip(s.agents, actions)):
        if not agent.alive or a not in MOVES:
            continue
        nxt = _add(agent.pos, MOVES[a])
        if not in_bounds(nxt, s.size) or s.board[nxt] in (RIGID, WOOD):
            continue
        bomb = s.bomb_at(nxt)
        if bomb is not None:
            beyond = _add(nxt, MOVES[a])
            if agent.can_kick and _passable_for_bomb(s, beyond):
                kicks[i] = (bomb, beyond)
            else:
                continue
        targets[i] = nxt
    alive = [a.alive for a in s.agents]
    if all(alive):
        same = targets[0] == targets[1]
        swap = targets[0] == starts[1] and targets[1] == starts[0]
        if same or swap:
            targets = list(starts)
            kicks = [None, None]
        for _ in range(2):
            for i in (0, 1):
                j = 1 - i
                if targets[i] == starts[j] and targets[j] == starts[j]:
                    targets[i] = starts[i]
                    kicks[i] = None
    for i, agent in enumerate(s.agents):
        agent.pos = targets[i]
        if kicks[i] is not None:
            bomb, beyond = kicks[i]
            bomb.pos = beyond
            bomb.moving = MOVES[actions[i]]


def encode_observation(state: PomState, perspective: int) -> np.ndarray:
    """18x8x8 planes: board, bombs, flames, power-ups, positions and scalar stats."""
    size = state.size
    obs = np.zeros((N_PLANES, size, size))
    board = state.board
    obs[0] = (board != RIGID) & (board != WOOD)
    obs[1] = board == RIGID
    obs[2] = board == WOOD
    for b in state.bombs:
        obs[3][b.pos] = 1.0
        obs[4][b.pos] = b.life / 10.0
        obs[5][b.pos] = b.blast / 8.0
    for p, life in state.flames.items():
        obs[6][p] = 1.0
        obs[7][p] = life / 2.0
    obs[8] = board == POW_BLAST
    obs[9] = board == POW_AMMO
    obs[10] = board == POW_KICK
    me = state.agents[perspective]
    other = state.agents[1 - perspective]
    if me.alive:
        obs[11][me.pos] = 1.0
    if other.alive:
        obs[12][other.pos] = 1.0
    obs[13] = me.ammo / 8.0
    obs[14] = me.blast / 8.0
    obs[15] = float(me.can_kick)
    obs[16] = float(other.alive)
    obs[17] = state.step_count / 800.0
    return obs


class ReplayLog:
    """Line-delimited JSON: a header with the seed and config, then one record per tick."""

    def __init__(self, path: str | Path, seed: int, config: PomConfig):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w")
        self._write({"seed": int(seed), "config": asdict(config)})

    def _write(self, record) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def record(self, tick: int, actions, rewards, done: bool) -> None:
        self._write({"tick": tick, "actions": [int(a) for a in actions],
                     "rewards": [float(r) for r in rewards], "done": bool(done)})

    def close(self) -> None:
        self._fh.close()


def replay(path: str | Path) -> tuple[PomState, list[dict]]:
    """Re-simulate a replay log; raises if any recorded reward or terminal flag differs."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigurationError(f"empty replay log {path}")
    header = json.loads(lines[0])
    config = PomConfig(**header["config"])
    state = generate_board(header["seed"], config)
    records = [json.loads(line) for line in lines[1:]]
    for rec in records:
        state, _, rewards, done, _ = step(state, *rec["actions"], config=config)
        if list(rewards) != rec["rewards"] or done != rec["done"]:
            raise ContractViolation(f"replay diverged at tick {rec['tick']}")
    return state, records
