"""A3C loss, agent-modeling cross-entropy, their combination, and lambda schedules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from amrl.errors import ConfigurationError, ContractViolation
from amrl.tensor import Tape, Tensor
from amrl.tensor import ops


@dataclass(frozen=True)
class LossWeights:
    value: float = 0.5
    policy: float = 1.0
    entropy: float = 0.01
    gamma: float = 0.99

    def __post_init__(self):
        if min(self.value, self.policy, self.entropy) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class LambdaSchedule:
    """Weight on the agent-modeling loss as a function of the global update index.

    ``fixed`` returns ``fixed_value`` forever; ``anneal`` decays
    ``initial * rate ** update_index`` towards zero.
    """

    kind: str = "fixed"
    fixed_value: float = 0.1
    initial: float = 1.0
    rate: float = 0.999

    def __post_init__(self):
        if self.kind not in ("fixed", "anneal"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "fixed" and self.fixed_value < 0:
            raise ConfigurationError("fixed lambda must be >= 0")
        if self.kind == "anneal" and not (self.initial >= 0 and 0 < self.rate < 1):
            raise ConfigurationError("anneal needs initial >= 0 and rate in (0, 1)")

    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed-{self.fixed_value:g}"
        return f"anneal-{self.rate:g}"

    @classmethod
    def parse(cls, spec) -> "LambdaSchedule":
        """Accept a mapping, an existing schedule, or a label like ``anneal-0.999``."""
        if isinstance(spec, LambdaSchedule):
            return spec
        if isinstance(spec, dict):
            spec = dict(spec)
            if "value" in spec:
                spec["fixed_value"] = spec.pop("value")
            return cls(**spec)
        if isinstance(spec, str) and "-" in spec:
            kind, num = spec.split("-", 1)
            if kind == "fixed":
                return cls("fixed", fixed_value=float(num))
            if kind == "anneal":
                return cls("anneal", rate=float(num))
        if isinstance(spec, (int, float)):
            return cls("fixed", fixed_value=float(spec))
        raise ConfigurationError(f"cannot parse lambda schedule {spec!r}")


def schedule_value(schedule: LambdaSchedule, update_index: int) -> float:
    if update_index < 0:
        raise ContractViolation("update_index must be >= 0")
    if schedule.kind == "fixed":
        return schedule.fixed_value
    return schedule.initial * schedule.rate ** update_index


def nstep_returns_and_advantages(rewards: Sequence[float], values: Sequence[float],
                                 bootstrap_value: float, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted n-step returns computed backwards from the bootstrap, and R - V."""
    if len(rewards) == 0:
        raise ContractViolation("empty rollout")
    if len(values) != len(rewards):
        raise ContractViolation("rewards and values must have equal length")
    returns = np.empty(len(rewards))
    running = float(bootstrap_value)
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns, returns - np.asarray(values, dtype=np.float64)


def entropy(policy: Tensor, tape: Tape | None = None) -> Tensor:
    """H(pi) = -sum_a pi log pi, as a scalar node."""
    return ops.affine(ops.dot(policy, ops.log_clamped(policy, tape=tape), tape=tape), -1.0, tape=tape)


def a3c_loss(actions: Sequence[int], outputs, returns, advantages,
             weights: LossWeights = LossWeights(), tape: Tape | None = None) -> Tensor:
    """lambda_pi * L_pi + lambda_v * L_v - lambda_H * sum_t H(pi(s_t)).

    ``L_pi = -sum_t log pi(a_t|s_t) * A_t`` with the advantages taken as
    constants, and ``L_v = sum_t (R_t - V(s_t))**2``.
    """
    if not len(actions) == len(outputs) == len(returns) == len(advantages) > 0:
        raise ContractViolation("a3c_loss inputs must be non-empty and of equal length")
    terms = []
    for a, out, ret, adv in zip(actions, outputs, returns, advantages):
        logp = ops.log_clamped(ops.pick(out.policy, int(a), tape=tape), tape=tape)
        terms.append(ops.affine(logp, -weights.policy * float(adv), tape=tape))
        err = ops.affine(out.value, -1.0, float(ret), tape=tape)
        terms.append(ops.affine(ops.square(err, tape=tape), weights.value, tape=tape))
        terms.append(ops.affine(entropy(out.policy, tape=tape), -weights.entropy, tape=tape))
    return ops.add_n(terms, tape=tape)


def _one_hot(target, n: int) -> np.ndarray:
    arr = np.asarray(target, dtype=np.float64)
    if arr.ndim == 0:
        hot = np.zeros(n)
        hot[int(target)] = 1.0
        return hot
    if arr.shape != (n,):
        raise ContractViolation(f"target of shape {arr.shape} does not match {n} classes")
    return arr


def am_loss(observed_actions, predicted_policies: Sequence[Tensor],
            tape: Tape | None = None) -> Tensor:
    """Mean cross-entropy between observed actions (indices or one-hot) and predictions."""
    m = len(predicted_policies)
    if m == 0 or len(observed_actions) != m:
        raise ContractViolation("am_loss needs M >= 1 matched targets and predictions")
    terms = []
    for target, pred in zip(observed_actions, predicted_policies):
        hot = Tensor(_one_hot(target, pred.size))
        terms.append(ops.dot(hot, ops.log_clamped(pred, tape=tape), tape=tape))
    return ops.affine(ops.add_n(terms, tape=tape), -1.0 / m, tape=tape)


def combined_loss(arch: str, a3c: Tensor, am_losses: Sequence[Tensor], lambdas,
                  tape: Tape | None = None) -> Tensor:
    """``L_A3C + (1/N) * sum_i lambda_i * L_AM_i``; ``lambdas`` may be a scalar."""
    if (len(am_losses) == 0) != (arch == "A3C"):
        raise ContractViolation(f"{arch} got {len(am_losses)} agent-modeling losses")
    if not am_losses:
        return a3c
    n = len(am_losses)
    if np.isscalar(lambdas):
        lambdas = [float(lambdas)] * n
    if len(lambdas) != n:
        raise ContractViolation("one lambda per modeled agent")
    terms = [a3c] + [ops.affine(l, lam / n, tape=tape) for l, lam in zip(am_losses, lambdas)]
    return ops.add_n(terms, tape=tape)
