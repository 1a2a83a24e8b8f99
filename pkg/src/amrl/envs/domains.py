"""Single-learner views of the two-agent environments.

A domain owns the simulator plus the scripted other agent and exposes
``reset() -> obs`` and ``step(action) -> Transition``. The other agent's
executed action is reported each step as modeling ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from amrl.envs import pommerman as pom
from amrl.envs.cmotp import Cmotp, Layout, make_teammate
from amrl.envs.simple_agent import simple_agent_act
from amrl.errors import ConfigurationError
from amrl.networks import ArchitectureConfig, cmotp_config, pommerman_config


@dataclass
class Transition:
    obs: np.ndarray
    reward: float
    done: bool
    other_actions: list[int]
    win: bool = False


class Domain:
    name = "base"
    obs_shape: tuple[int, int, int]
    n_actions: int
    n_opponent_actions: int
    n_modeled_agents = 1

    def reset(self) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: int) -> Transition:
        raise NotImplementedError

    def arch_config(self, arch: str, **overrides) -> ArchitectureConfig:
        return ArchitectureConfig(arch=arch, obs_shape=self.obs_shape, n_actions=self.n_actions,
                                  n_opponent_actions=self.n_opponent_actions,
                                  n_modeled_agents=self.n_modeled_agents, **overrides)


class CmotpDomain(Domain):
    name = "cmotp"
    obs_shape = (1, 16, 16)
    n_actions = 5
    n_opponent_actions = 5

    def __init__(self, options: dict | None = None, rng: np.random.Generator | int = 0):
        opts = dict(options or {})
        layout = opts.get("layout")
        if isinstance(layout, (str, Path)):
            layout = Layout.load(layout)
        self.env = Cmotp(layout, max_steps=int(opts.get("max_steps", 1900)))
        self.teammate = make_teammate(opts.get("teammate", "hesitant"), self.env,
                                      p_greedy=float(opts.get("p_greedy", 0.8)),
                                      waypoints=opts.get("waypoints"))
        self.conv_layers = int(opts.get("conv_layers", 4))
        self.rng = np.random.default_rng(rng)
        self.state = None

    def arch_config(self, arch: str, **overrides) -> ArchitectureConfig:
        overrides.setdefault("conv_layers", self.conv_layers)
        return cmotp_config(arch, **overrides)

    def reset(self) -> np.ndarray:
        self.state, obs = self.env.reset()
        return obs[0]

    def step(self, action: int) -> Transition:
        mate = self.teammate.act(self.state, self.rng)
        self.state, obs, reward, done = self.env.step(self.state, action, mate)
        return Transition(obs[0], reward, done, [mate], win=reward > 0)


class PommermanDomain(Domain):
    name = "pommerman"
    obs_shape = (18, 8, 8)
    n_actions = 6
    n_opponent_actions = 6

    def __init__(self, options: dict | None = None, rng: np.random.Generator | int = 0):
        opts = dict(options or {})
        self.config = pom.PomConfig(**opts.get("board", {}))
        self.bomb_prob = float(opts.get("bomb_prob", 0.8))
        self.conv_layers = int(opts.get("conv_layers", 3))
        self.replay_dir = opts.get("replay_dir")
        self.rng = np.random.default_rng(rng)
        self.state = None
        self.episode = -1
        self._log = None

    def arch_config(self, arch: str, **overrides) -> ArchitectureConfig:
        overrides.setdefault("conv_layers", self.conv_layers)
        return pommerman_config(arch, **overrides)

    def reset(self) -> np.ndarray:
        seed = int(self.rng.integers(2**31 - 1))
        self.state = pom.generate_board(seed, self.config)
        self.episode += 1
        if self._log is not None:
            self._log.close()
            self._log = None
        if self.replay_dir:
            self._log = pom.ReplayLog(Path(self.replay_dir) / f"episode_{self.episode:06d}.jsonl",
                                      seed, self.config)
        return pom.encode_observation(self.state, 0)

    def step(self, action: int) -> Transition:
        opp = simple_agent_act(self.state, 1, self.rng, self.config, self.bomb_prob)
        tick = self.state.step_count
        self.state, obs, rewards, done, info = pom.step(self.state, action, opp, self.config)
        if self._log is not None:
            self._log.record(tick, (action, opp), rewards, done)
            if done:
                self._log.close()
                self._log = None
        return Transition(obs[0], rewards[0], done, [opp], win=info.winner == 0)


DomainFactory = Callable[[dict, np.random.Generator], Domain]
DOMAINS: dict[str, DomainFactory] = {"cmotp": CmotpDomain, "pommerman": PommermanDomain}


def register_domain(name: str, factory: DomainFactory) -> None:
    DOMAINS[name] = factory


def make_domain(name: str, options: dict | None = None, rng=0) -> Domain:
    try:
        factory = DOMAINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown domain {name!r}; known: {sorted(DOMAINS)}") from None
    return factory(options or {}, np.random.default_rng(rng))
