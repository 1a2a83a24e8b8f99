"""Shared fixtures and numerical helpers for the test suite."""
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "amrl", max_examples=100, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "amrl"))

DESK_SCALE = os.environ.get("AMRL_DESK_SCALE") == "1"


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_difference(fn, arr, index, h=1e-5):
    """Central difference of scalar ``fn()`` w.r.t. ``arr[index]`` (restored afterwards)."""
    old = arr[index]
    arr[index] = old + h
    up = fn()
    arr[index] = old - h
    down = fn()
    arr[index] = old
    return (up - down) / (2 * h)


def sampled_gradcheck(fn, params, grads, rng, per_tensor=3, h=1e-5):
    """Max relative error over ``per_tensor`` random coordinates of every parameter.

    ``fn`` re-evaluates the scalar loss reading ``params[name].data`` in place.
    """
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for i in picks:
            num = finite_difference(fn, flat, int(i), h)
            ana = grads[name].reshape(-1)[i]
            worst = max(worst, float(relative_error(ana, num)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class ToyDomain:
    """Cheap stand-in domain: 1x4x4 random observations, fixed-length episodes.

    Options: ``length`` (steps per episode, 0 = never terminal), ``reward``
    (per-step reward), ``fail_after`` (raise after that many steps in total),
    ``bad_steps`` (global step indices whose reward is infinite).
    """

    name = "toy"
    obs_shape = (1, 4, 4)
    n_actions = 3
    n_opponent_actions = 3
    n_modeled_agents = 1

    def __init__(self, options=None, rng=0):
        opts = dict(options or {})
        self.length = int(opts.get("length", 5))
        self.reward = float(opts.get("reward", 1.0))
        self.fail_after = opts.get("fail_after")
        self.bad_steps = set(opts.get("bad_steps", ()))
        self.rng = np.random.default_rng(rng)
        self.t = 0
        self.total = 0

    def arch_config(self, arch, **overrides):
        from amrl.networks import ArchitectureConfig
        return ArchitectureConfig(arch=arch, obs_shape=self.obs_shape, n_actions=self.n_actions,
                                  n_opponent_actions=self.n_opponent_actions, conv_layers=3, **overrides)

    def _obs(self):
        return self.rng.random(self.obs_shape)

    def reset(self):
        self.t = 0
        return self._obs()

    def step(self, action):
        from amrl.envs.domains import Transition
        if self.fail_after is not None and self.total >= self.fail_after:
            raise RuntimeError("toy domain failure")
        reward = np.inf if self.total in self.bad_steps else self.reward
        self.t += 1
        self.total += 1
        done = self.length > 0 and self.t >= self.length
        return Transition(self._obs(), reward, done, [int(self.rng.integers(3))], win=done)


def _register_toy():
    from amrl.envs import register_domain
    register_domain("toy", ToyDomain)


_register_toy()


def pytest_terminal_summary(terminalreporter):
    import sys
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.report_lines():
        terminalreporter.write_line(line)
