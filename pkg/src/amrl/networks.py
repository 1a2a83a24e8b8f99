"""A3C, AMS-A3C and AMF-A3C network builders and forward passes.

* A3C: conv stack -> FC(128) -> FC(128) -> {policy softmax, value}.
* AMS: the A3C trunk plus one softmax head per modeled agent predicting that
  agent's action, with every non-head parameter shared.
* AMF: conv stack -> two FC(64) x 2 sections. The modeling section ends in the
  policy features ``h_opp`` (fed to the opponent softmax head); the other
  section's output is multiplied element-wise by ``h_opp`` and that product
  feeds the agent's policy and value heads.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from amrl.errors import ConfigurationError, NonFiniteError
from amrl.tensor import NetworkParams, Tape, Tensor
from amrl.tensor import ops

ARCHITECTURES = ("A3C", "AMS", "AMF")
FC_UNITS = {"A3C": 128, "AMS": 128, "AMF": 64}


@dataclass(frozen=True)
class ArchitectureConfig:
    arch: str
    obs_shape: tuple[int, int, int]
    n_actions: int
    n_opponent_actions: int
    n_modeled_agents: int = 1
    conv_layers: int = 4
    conv_filters: int = 32
    kernel: int = 3
    fc_units: int = 0  # 0 -> architecture default

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        object.__setattr__(self, "obs_shape", tuple(int(d) for d in self.obs_shape))
        if not self.fc_units:
            object.__setattr__(self, "fc_units", FC_UNITS[self.arch])
        if self.fc_units != FC_UNITS[self.arch]:
            raise ConfigurationError(
                f"{self.arch} uses {FC_UNITS[self.arch]} FC units, got {self.fc_units}"
            )
        if self.conv_layers not in (3, 4):
            raise ConfigurationError(f"conv_layers must be 3 or 4, got {self.conv_layers}")
        if self.conv_filters != 32 or self.kernel != 3:
            raise ConfigurationError("conv stack is fixed at 32 filters of 3x3")
        if len(self.obs_shape) != 3 or min(self.obs_shape) < 1:
            raise ConfigurationError(f"obs_shape must be (C, H, W), got {self.obs_shape}")
        if self.n_actions < 1 or self.n_opponent_actions < 1:
            raise ConfigurationError("action counts must be positive")
        if self.arch == "A3C":
            object.__setattr__(self, "n_modeled_agents", 0)
        elif self.n_modeled_agents < 1:
            raise ConfigurationError(f"{self.arch} needs at least one modeled agent")

    @property
    def flat_features(self) -> int:
        _, h, w = self.obs_shape
        return self.conv_filters * h * w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obs_shape"] = list(self.obs_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        return cls(**d)


def cmotp_config(arch: str, **overrides) -> ArchitectureConfig:
    """1x16x16 observations, 5 actions each, 4 conv layers."""
    kw = dict(arch=arch, obs_shape=(1, 16, 16), n_actions=5, n_opponent_actions=5, conv_layers=4)
    kw.update(overrides)
    return ArchitectureConfig(**kw)


def pommerman_config(arch: str, **overrides) -> ArchitectureConfig:
    """18x8x8 observations, 6 actions each, 3 conv layers."""
    kw = dict(arch=arch, obs_shape=(18, 8, 8), n_actions=6, n_opponent_actions=6, conv_layers=3)
    kw.update(overrides)
    return ArchitectureConfig(**kw)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _dense(params: NetworkParams, name: str, n_in: int, n_out: int, rng) -> None:
    params.add(f"{name}.w", _uniform(rng, (n_out, n_in), n_in))
    params.add(f"{name}.b", np.zeros(n_out))


def _branch_names(config: ArchitectureConfig) -> tuple[list[str], list[str]]:
    """FC section prefixes: (agent section, modeling sections)."""
    if config.arch == "AMF":
        return ["a"], [f"m{k}" for k in range(config.n_modeled_agents)]
    return ["trunk"], []


def build(config: ArchitectureConfig, rng: np.random.Generator | int = 0) -> NetworkParams:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    if not isinstance(config, ArchitectureConfig):
        raise ConfigurationError("build expects an ArchitectureConfig")
    rng = np.random.default_rng(rng)
    params = NetworkParams()
    c_in = config.obs_shape[0]
    for layer in range(config.conv_layers):
        fan_in = c_in * config.kernel * config.kernel
        params.add(f"conv{layer}.w", _uniform(rng, (config.conv_filters, c_in, 3, 3), fan_in))
        params.add(f"conv{layer}.b", np.zeros(config.conv_filters))
        c_in = config.conv_filters
    units = config.fc_units
    agent_sections, model_sections = _branch_names(config)
    for section in agent_sections + model_sections:
        _dense(params, f"{section}.fc0", config.flat_features, units, rng)
        _dense(params, f"{section}.fc1", units, units, rng)
    _dense(params, "policy", units, config.n_actions, rng)
    _dense(params, "value", units, 1, rng)
    for k in range(config.n_modeled_agents):
        _dense(params, f"opp{k}", units, config.n_opponent_actions, rng)
    return params


def parameter_count(config: ArchitectureConfig) -> int:
    """Closed-form parameter count (no allocation)."""
    c, f, u = config.obs_shape[0], config.conv_filters, config.fc_units
    conv = (c * 9 * f + f) + (config.conv_layers - 1) * (f * 9 * f + f)
    sections = 1 + (config.n_modeled_agents if config.arch == "AMF" else 0)
    fc = sections * ((config.flat_features * u + u) + (u * u + u))
    heads = (u * config.n_actions + config.n_actions) + (u + 1)
    heads += config.n_modeled_agents * (u * config.n_opponent_actions + config.n_opponent_actions)
    return conv + fc + heads


@dataclass
class ForwardOutput:
    policy: Tensor
    value: Tensor
    opponent_policies: list[Tensor] = field(default_factory=list)
    opponent_features: list[Tensor] = field(default_factory=list)
    last_hidden: Tensor | None = None


class _Layers:
    """Applies named layers and pins any non-finite value to the layer."""

    def __init__(self, params: NetworkParams, tape: Tape | None):
        self.p = params
        self.tape = tape

    def _guard(self, name, fn, *args):
        try:
            return fn(*args, tape=self.tape)
        except NonFiniteError as exc:
            raise NonFiniteError(f"layer {name}: {exc}") from exc

    def conv(self, name, x):
        y = self._guard(name, ops.conv2d, x, self.p[f"{name}.w"], self.p[f"{name}.b"])
        return self._guard(name, ops.elu, y)

    def dense(self, name, x, activation=True):
        y = self._guard(name, ops.fully_connected, x, self.p[f"{name}.w"], self.p[f"{name}.b"])
        return self._guard(name, ops.elu, y) if activation else y

    def softmax_head(self, name, x):
        return self._guard(name, ops.softmax, self.dense(name, x, activation=False))


def forward(config: ArchitectureConfig, params: NetworkParams, obs,
            tape: Tape | None = None) -> ForwardOutput:
    """Evaluate every head for one observation, recording on ``tape`` if given."""
    x = obs if isinstance(obs, Tensor) else Tensor(obs)
    if x.shape != config.obs_shape:
        raise ConfigurationError(f"observation shape {x.shape} != {config.obs_shape}")
    layers = _Layers(params, tape)
    for layer in range(config.conv_layers):
        x = layers.conv(f"conv{layer}", x)
    flat = ops.flatten(x, tape=tape)

    agent_sections, model_sections = _branch_names(config)
    h = flat
    for i in range(2):
        h = layers.dense(f"{agent_sections[0]}.fc{i}", h)

    features = []
    opp_policies = []
    if config.arch == "AMF":
        for section in model_sections:
            hm = flat
            for i in range(2):
                hm = layers.dense(f"{section}.fc{i}", hm)
            features.append(hm)
        for k, hm in enumerate(features):
            opp_policies.append(layers.softmax_head(f"opp{k}", hm))
        for hm in features:
            h = layers._guard("conditioning", ops.mul, h, hm)
    else:
        for k in range(config.n_modeled_agents):
            opp_policies.append(layers.softmax_head(f"opp{k}", h))

    policy = layers.softmax_head("policy", h)
    value = layers._guard("value", ops.pick, layers.dense("value", h, activation=False), 0)
    return ForwardOutput(policy, value, opp_policies, features, h)


def architecture_of(params: NetworkParams) -> str:
    """Infer the architecture tag from parameter names."""
    names = set(params)
    if "a.fc0.w" in names:
        return "AMF"
    return "AMS" if "opp0.w" in names else "A3C"


def head_names(config: ArchitectureConfig) -> Sequence[str]:
    names = ["policy.w", "policy.b", "value.w", "value.b"]
    for k in range(config.n_modeled_agents):
        names += [f"opp{k}.w", f"opp{k}.b"]
    return names
