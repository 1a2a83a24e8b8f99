"""Rule-based Pommerman opponent.

Each tick it runs Dijkstra from its cell and picks the first applicable rule:
escape blast danger, bomb an adjacent enemy (stochastically), collect the
nearest power-up, bomb or approach the nearest wood, else a random safe move.
It never steps into a cell that will hold a flame on the next tick.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from amrl.envs.pommerman import (
    BOMB, MOVES, POWERUPS, RIGID, STAY, WOOD, PomConfig, PomState, _add, blast_cells, in_bounds,
)

INF = math.inf


def bomb_timers(state: PomState) -> dict[tuple[int, int], int]:
    """Ticks from now until each threatened cell is flamed, with chain reactions.

    A bomb whose fuse reads ``life`` explodes on the ``life``-th next tick
    unless an earlier blast reaches it first.
    """
    timers = [b.life for b in state.bombs]
    covers = [set(blast_cells(state.board, b.pos, b.blast)[0]) for b in state.bombs]
    changed = True
    while changed:
        changed = False
        for i in range(len(state.bombs)):
            for j, other in enumerate(state.bombs):
                if i != j and other.pos in covers[i] and timers[i] < timers[j]:
                    timers[j] = timers[i]
                    changed = True
    danger: dict[tuple[int, int], int] = {}
    for t, cells in zip(timers, covers):
        for c in cells:
            danger[c] = min(danger.get(c, t), t)
    return danger


def flamed_at(state: PomState, danger, cell, t: int, flame_life: int = 2) -> bool:
    """Whether ``cell`` holds a flame ``t`` ticks from now (after that tick's resolution)."""
    life = state.flames.get(cell, 0)
    if t < life:
        return True
    start = danger.get(cell)
    return start is not None and start <= t < start + flame_life


def _walkable(state: PomState, cell, me: int) -> bool:
    if not in_bounds(cell, state.size) or state.board[cell] in (RIGID, WOOD):
        return False
    if state.bomb_at(cell) is not None and cell != state.agents[me].pos:
        return False
    other = state.agents[1 - me]
    return not (other.alive and other.pos == cell)


def dijkstra(state: PomState, me: int, danger=None, flame_life: int = 2):
    """Unit-cost Dijkstra over walkable cells, skipping cells flamed on arrival.

    Returns ``(dist, prev)`` dictionaries keyed by cell.
    """
    start = state.agents[me].pos
    dist = {start: 0}
    prev = {}
    heap = [(0, start)]
    while heap:
        d, cur = heapq.heappop(heap)
        if d > dist.get(cur, INF):
            continue
        for move in MOVES.values():
            nxt = _add(cur, move)
            if not _walkable(state, nxt, me):
                continue
            if danger is not None and flamed_at(state, danger, nxt, d + 1, flame_life):
                continue
            if d + 1 < dist.get(nxt, INF):
                dist[nxt] = d + 1
                prev[nxt] = cur
                heapq.heappush(heap, (d + 1, nxt))
    return dist, prev


def first_step(prev, start, target) -> int:
    """Action for the first move on the recorded shortest path to ``target``."""
    cur = target
    while prev.get(cur) != start:
        cur = prev[cur]
    delta = (cur[0] - start[0], cur[1] - start[1])
    return next(a for a, d in MOVES.items() if d == delta)


def _nearest(dist, cells):
    best = None
    for c in cells:
        if c in dist and (best is None or (dist[c], c) < (dist[best], best)):
            best = c
    return best


def _can_escape(state: PomState, me: int, danger, config: PomConfig) -> bool:
    """A cell outside a fresh bomb's blast (and existing danger) is reachable before it fires."""
    agent = state.agents[me]
    cells, _ = blast_cells(state.board, agent.pos, agent.blast)
    risky = set(cells) | set(danger)
    dist, _ = dijkstra(state, me, danger, config.flame_life)
    return any(d < config.bomb_life and c not in risky for c, d in dist.items())


def safe_actions(state: PomState, me: int, danger, flame_life: int = 2) -> list[int]:
    """Stay and moves whose destination is not flamed on the next tick."""
    pos = state.agents[me].pos
    out = []
    for a in (STAY, *MOVES):
        cell = pos if a == STAY else _add(pos, MOVES[a])
        if a != STAY and not _walkable(state, cell, me):
            continue
        if not flamed_at(state, danger, cell, 1, flame_life):
            out.append(a)
    return out


def simple_agent_act(state: PomState, agent_id: int, rng: np.random.Generator,
                     config: PomConfig = PomConfig(), bomb_prob: float = 0.8) -> int:
    me = state.agents[agent_id]
    if not me.alive:
        return STAY
    danger = bomb_timers(state)
    safe = safe_actions(state, agent_id, danger, config.flame_life)
    dist, prev = dijkstra(state, agent_id, danger, config.flame_life)
    pos = me.pos

    def towards(target) -> int | None:
        if target is None or target == pos:
            return None
        a = first_step(prev, pos, target)
        return a if a in safe else None

    # 1. escape
    if pos in danger or pos in state.flames:
        refuges = [c for c in dist if c not in danger and c not in state.flames]
        a = towards(_nearest(dist, refuges))
        if a is not None:
            return a
        if safe:
            # no refuge in reach: buy time on the cell that burns last
            return max(safe, key=lambda x: danger.get(pos if x == STAY else _add(pos, MOVES[x]), INF))
        return STAY

    armed = me.ammo > 0 and state.bomb_at(pos) is None

    # 2. bomb a nearby enemy
    enemy = state.agents[1 - agent_id]
    if enemy.alive and abs(enemy.pos[0] - pos[0]) + abs(enemy.pos[1] - pos[1]) <= 1 and armed:
        if rng.random() < bomb_prob and _can_escape(state, agent_id, danger, config):
            return BOMB

    # 3. power-ups
    items = [c for c in dist if state.board[c] in POWERUPS]
    a = towards(_nearest(dist, items))
    if a is not None:
        return a

    # 4. wood
    woods = {(r, c) for r in range(state.size) for c in range(state.size) if state.board[r, c] == WOOD}
    if woods:
        next_to_wood = [c for c in dist if any(_add(c, d) in woods for d in MOVES.values())]
        if pos in next_to_wood and armed and _can_escape(state, agent_id, danger, config):
            return BOMB
        a = towards(_nearest(dist, next_to_wood))
        if a is not None:
            return a

    # 5. random safe move
    if not safe:
        return STAY
    return int(safe[int(rng.integers(len(safe)))])
