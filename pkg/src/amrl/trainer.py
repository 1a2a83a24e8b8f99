"""Asynchronous advantage actor-critic harness.

Each worker owns a domain, a local parameter copy and its own tapes. The
:class:`GlobalStore` is the only shared object: workers ``snapshot`` it
before every rollout and ``apply`` their gradients to it, both under one
lock. ``threaded=False`` runs the workers round-robin on the calling thread,
which is fully deterministic for any worker count.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from amrl.envs.domains import Domain, make_domain
from amrl.errors import ConfigurationError, ContractViolation, NonFiniteError, TrainingAborted
from amrl.losses import (
    LambdaSchedule, LossWeights, a3c_loss, am_loss, combined_loss, nstep_returns_and_advantages,
    schedule_value,
)
from amrl.networks import ArchitectureConfig, ForwardOutput, build, forward
from amrl.tensor import AdamConfig, AdamState, NetworkParams, Tape, adam_step, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

Gradients = dict[str, np.ndarray]


@dataclass
class Rollout:
    """Up to ``t_max`` consecutive transitions of one worker.

    ``other_agent_actions[j][t]`` is the one-hot action that other agent
    ``j`` executed at step ``t``. ``tape``/``outputs``/``params`` hold the
    collection-time forward passes so the gradient step can reuse them.
    """

    observations: list[np.ndarray]
    actions: list[int]
    rewards: list[float]
    other_agent_actions: list[list[np.ndarray]]
    values: list[float]
    terminal: bool
    bootstrap_value: float
    tape: Tape | None = field(default=None, repr=False, compare=False)
    outputs: list[ForwardOutput] | None = field(default=None, repr=False, compare=False)
    params: NetworkParams | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        m = len(self.actions)
        if m == 0:
            raise ContractViolation("a rollout holds at least one step")
        if not (len(self.observations) == len(self.rewards) == len(self.values) == m):
            raise ContractViolation("rollout lists must share one length")
        if any(len(seq) != m for seq in self.other_agent_actions):
            raise ContractViolation("other-agent action lists must match the rollout length")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ContractViolation("a terminal rollout bootstraps from 0")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class EpisodeStats:
    worker: int
    ret: float
    discounted_return: float
    length: int
    aux_accuracy: float | None
    win: bool


class WorkerEnv:
    """A domain plus the running statistics of its current episode."""

    def __init__(self, domain: Domain, arch: ArchitectureConfig, gamma: float = 0.99, worker: int = 0):
        self.domain = domain
        self.arch = arch
        self.gamma = gamma
        self.worker = worker
        self.obs: np.ndarray | None = None
        self.finished: list[EpisodeStats] = []
        self._reset_stats()

    def _reset_stats(self):
        self.ret = 0.0
        self.disc = 0.0
        self.length = 0
        self.aux_hits = 0
        self.aux_total = 0
        self.win = False

    def current(self) -> np.ndarray:
        if self.obs is None:
            self.obs = self.domain.reset()
            self._reset_stats()
        return self.obs

    def step(self, action: int, predicted: Sequence[np.ndarray] = ()):
        tr = self.domain.step(action)
        self.disc += self.gamma ** self.length * tr.reward
        self.ret += tr.reward
        self.length += 1
        for pred, actual in zip(predicted, tr.other_actions):
            self.aux_hits += int(np.argmax(pred) == actual)
            self.aux_total += 1
        self.win = bool(tr.win)
        if tr.done:
            acc = self.aux_hits / self.aux_total if self.aux_total else None
            self.finished.append(EpisodeStats(self.worker, self.ret, self.disc, self.length, acc, self.win))
            self.obs = None
        else:
            self.obs = tr.obs
        return tr

    def drain(self) -> list[EpisodeStats]:
        out, self.finished = self.finished, []
        return out


def _one_hot(index: int, n: int) -> np.ndarray:
    hot = np.zeros(n)
    hot[int(index)] = 1.0
    return hot


def collect_rollout(worker_env: WorkerEnv, local_params: NetworkParams, t_max: int,
                    rng: np.random.Generator, record: bool = True) -> Rollout:
    """Act for up to ``t_max`` steps by sampling the current policy.

    With ``record`` the forward passes stay on a tape attached to the
    rollout, valid for as long as ``local_params`` is not modified.
    """
    if t_max < 1:
        raise ConfigurationError("t_max must be >= 1")
    arch = worker_env.arch
    tape = Tape() if record else None
    obs_list, actions, rewards, values, outputs = [], [], [], [], []
    others: list[list[np.ndarray]] | None = None
    terminal = False
    for _ in range(t_max):
        obs = worker_env.current()
        out = forward(arch, local_params, obs, tape=tape)
        probs = out.policy.data
        action = int(rng.choice(len(probs), p=probs / probs.sum()))
        tr = worker_env.step(action, [p.data for p in out.opponent_policies])
        if others is None:
            others = [[] for _ in tr.other_actions]
        for seq, a in zip(others, tr.other_actions):
            seq.append(_one_hot(a, arch.n_opponent_actions))
        obs_list.append(obs)
        actions.append(action)
        rewards.append(float(tr.reward))
        values.append(out.value.item())
        outputs.append(out)
        if tr.done:
            terminal = True
            break
    bootstrap = 0.0 if terminal else forward(arch, local_params, worker_env.current()).value.item()
    return Rollout(obs_list, actions, rewards, others or [], values, terminal, bootstrap,
                   tape=tape, outputs=outputs if record else None, params=local_params if record else None)


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


def clip_by_global_norm(grads: Gradients, max_norm: float | None) -> tuple[Gradients, float]:
    norm = global_norm(grads)
    if max_norm is None or max_norm <= 0 or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def _single_gradients(rollout: Rollout, params: NetworkParams, arch: ArchitectureConfig,
                      weights: LossWeights, lam) -> tuple[Gradients, float]:
    if rollout.tape is not None and rollout.params is params and rollout.outputs is not None:
        tape, outputs = rollout.tape, rollout.outputs
    else:
        tape = Tape()
        outputs = [forward(arch, params, obs, tape=tape) for obs in rollout.observations]
    returns, advantages = nstep_returns_and_advantages(
        rollout.rewards, rollout.values, rollout.bootstrap_value, weights.gamma)
    loss = a3c_loss(rollout.actions, outputs, returns, advantages, weights, tape=tape)
    am = []
    for k in range(arch.n_modeled_agents):
        targets = rollout.other_agent_actions[k]
        am.append(am_loss(targets, [o.opponent_policies[k] for o in outputs], tape=tape))
    total = combined_loss(arch.arch, loss, am, lam, tape=tape)
    tape.backward(total)
    grads = params.gradients(tape)
    # the recorded graph is spent; drop it so a stale tape is never reused
    rollout.tape = rollout.outputs = rollout.params = None
    return grads, total.item()


def compute_gradients(rollouts: Rollout | Sequence[Rollout], local_params: NetworkParams,
                      arch: ArchitectureConfig, weights: LossWeights = LossWeights(),
                      lam: float | Sequence[float] = 0.0, clip_norm: float | None = 40.0,
                      ) -> tuple[Gradients, dict[str, float]]:
    """Gradients of the combined loss summed over one or more rollouts.

    Each rollout is differentiated on its own tape and the per-rollout
    gradients are summed, then clipped by global norm. A non-finite value
    raises :class:`NonFiniteError`; callers skip the update.
    """
    if isinstance(rollouts, Rollout):
        rollouts = [rollouts]
    if not rollouts:
        raise ContractViolation("compute_gradients needs at least one rollout")
    total: Gradients | None = None
    loss = 0.0
    try:
        for r in rollouts:
            g, l = _single_gradients(r, local_params, arch, weights, lam)
            loss += l
            total = g if total is None else {k: total[k] + g[k] for k in total}
    except NonFiniteError as exc:
        raise NonFiniteError(f"update aborted ({arch.arch}, {sum(map(len, rollouts))} steps): {exc}") from exc
    clipped, norm = clip_by_global_norm(total, clip_norm)
    if not np.isfinite(norm):
        raise NonFiniteError("update aborted: non-finite gradient norm")
    return clipped, {"loss": loss, "grad_norm": norm}


class GlobalStore:
    """Shared parameters, Adam moments and counters behind a single lock."""

    def __init__(self, params: NetworkParams, adam: AdamConfig = AdamConfig(),
                 adam_state: AdamState | None = None, update_count: int = 0, episode_count: int = 0):
        self.params = params
        self.adam = adam
        self.adam_state = adam_state if adam_state is not None else AdamState.zeros_like(params)
        self.update_count = update_count
        self.episode_count = episode_count
        self.history: list[dict[str, Any]] = []
        self._shapes = params.shapes()
        self._lock = threading.Lock()

    def snapshot(self) -> tuple[NetworkParams, int]:
        """A private copy of the parameters and the update count it reflects."""
        with self._lock:
            return self.params.copy(), self.update_count

    def apply(self, grads: Gradients, lambda_am: float | None = None, basis: int | None = None) -> int:
        """One Adam step; returns the new update count."""
        if set(grads) != set(self._shapes):
            raise ConfigurationError("gradient names do not match the global parameters")
        for k, shape in self._shapes.items():
            if np.shape(grads[k]) != shape:
                raise ConfigurationError(f"gradient shape {np.shape(grads[k])} != {shape} for {k}")
        a = self.adam
        with self._lock:
            adam_step(self.params, grads, self.adam_state, a.lr, a.beta1, a.beta2, a.eps, a.weight_decay)
            self.update_count += 1
            self.history.append({"update": self.update_count, "basis": basis, "lambda_am": lambda_am})
            return self.update_count

    def claim_episode(self) -> int:
        with self._lock:
            self.episode_count += 1
            return self.episode_count - 1

    def checkpoint(self, path: str | Path, meta: dict[str, Any]) -> Path:
        with self._lock:
            params, adam = self.params.copy(), self.adam_state.copy()
            meta = dict(meta, update_count=self.update_count, episode_count=self.episode_count)
        return save_checkpoint(path, params, adam, meta)


def apply_gradients(store: GlobalStore, grads: Gradients, lambda_am: float | None = None,
                    basis: int | None = None) -> GlobalStore:
    store.apply(grads, lambda_am, basis)
    return store


@dataclass
class TrainConfig:
    arch: str = "AMS"
    domain: str = "cmotp"
    domain_options: dict = field(default_factory=dict)
    n_workers: int = 1
    threaded: bool = True
    t_max: int = 20
    max_episodes: int = 100
    lambda_schedule: LambdaSchedule = field(default_factory=LambdaSchedule)
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    clip_norm: float | None = 40.0
    eval_every: int = 0
    eval_episodes: int = 10
    checkpoint_every: int = 0
    output_dir: str | None = None
    resume_from: str | None = None

    def __post_init__(self):
        if isinstance(self.lambda_schedule, (dict, str, int, float)):
            self.lambda_schedule = LambdaSchedule.parse(self.lambda_schedule)
        if isinstance(self.adam, dict):
            self.adam = AdamConfig(**self.adam)
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if self.n_workers < 1:
            raise ConfigurationError("n_workers must be >= 1")
        if self.t_max < 1:
            raise ConfigurationError("t_max must be >= 1")
        if self.max_episodes < 0:
            raise ConfigurationError("max_episodes must be >= 0")
        if min(self.eval_every, self.checkpoint_every, self.eval_episodes) < 0:
            raise ConfigurationError("cadences must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_schedule"] = asdict(self.lambda_schedule)
        return d


@dataclass
class TrainResult:
    store: GlobalStore
    arch: ArchitectureConfig
    episodes: list[dict[str, Any]]
    evaluations: list[dict[str, Any]]
    skipped_updates: int
    final_checkpoint: Path | None


class _JsonlSink:
    """Serialized append channel; keeps records in memory and mirrors them to disk."""

    def __init__(self, path: Path | None):
        self.records: list[dict[str, Any]] = []
        self._fh = open(path, "w") if path is not None else None
        self._lock = threading.Lock()

    def write(self, record: dict[str, Any]) -> None:
        with self._lock:
            self.records.append(record)
            if self._fh is not None:
                self._fh.write(json.dumps(record) + "\n")
                self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


class _Worker:
    def __init__(self, wid: int, run: "_Run"):
        cfg = run.config
        seq = np.random.SeedSequence([cfg.seed, wid])
        env_seed, act_seed = seq.spawn(2)
        domain = make_domain(cfg.domain, cfg.domain_options, np.random.default_rng(env_seed))
        self.env = WorkerEnv(domain, run.arch, cfg.loss.gamma, wid)
        self.rng = np.random.default_rng(act_seed)
        self.run = run
        self.wid = wid

    def run_once(self) -> None:
        run, cfg = self.run, self.run.config
        local, basis = run.store.snapshot()
        lam = schedule_value(cfg.lambda_schedule, basis) if run.arch.arch != "A3C" else 0.0
        rollout = collect_rollout(self.env, local, cfg.t_max, self.rng)
        try:
            grads, _ = compute_gradients(rollout, local, run.arch, cfg.loss, lam, cfg.clip_norm)
        except NonFiniteError as exc:
            log.warning("worker %d: %s", self.wid, exc)
            with run.lock:
                run.skipped += 1
        else:
            run.store.apply(grads, lam, basis)
        for ep in self.env.drain():
            idx = run.store.claim_episode()
            if idx >= cfg.max_episodes:
                run.stop.set()
                break
            run.log_episode(idx, ep, lam)
            if idx + 1 >= cfg.max_episodes:
                run.stop.set()


class _Run:
    def __init__(self, config: TrainConfig):
        self.config = config
        probe = make_domain(config.domain, config.domain_options, 0)
        self.arch = probe.arch_config(config.arch)
        self.out = Path(config.output_dir) if config.output_dir else None
        if config.resume_from:
            params, adam_state, meta = load_checkpoint(config.resume_from)
            if params.shapes() != build(self.arch, 0).shapes():
                raise ConfigurationError("checkpoint does not match the configured architecture")
            self.store = GlobalStore(params, config.adam, adam_state,
                                     int(meta.get("update_count", 0)), int(meta.get("episode_count", 0)))
        else:
            self.store = GlobalStore(build(self.arch, np.random.default_rng(config.seed)), config.adam)
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / "config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True))
        self.metrics = _JsonlSink(self.out / "metrics.jsonl" if self.out else None)
        self.evals = _JsonlSink(self.out / "evals.jsonl" if self.out else None)
        self.stop = threading.Event()
        self.skipped = 0
        self.lock = threading.Lock()
        self.start = time.perf_counter()
        self.errors: list[BaseException] = []

    def meta(self) -> dict[str, Any]:
        return {"arch": self.arch.to_dict(), "domain": self.config.domain,
                "domain_options": self.config.domain_options, "seed": self.config.seed}

    def save(self, name: str) -> Path | None:
        if self.out is None:
            return None
        return self.store.checkpoint(self.out / "checkpoints" / f"{name}.json", self.meta())

    def log_episode(self, idx: int, ep: EpisodeStats, lam: float) -> None:
        self.metrics.write({
            "episode": idx, "worker": ep.worker, "return": ep.ret,
            "discounted_return": ep.discounted_return, "length": ep.length,
            "lambda_am": lam, "aux_accuracy": ep.aux_accuracy,
            "wall_clock": time.perf_counter() - self.start,
        })
        n = idx + 1
        cfg = self.config
        if cfg.checkpoint_every and n % cfg.checkpoint_every == 0:
            self.save(f"episode_{n:08d}")
        if cfg.eval_every and n % cfg.eval_every == 0:
            params, _ = self.store.snapshot()
            opts = {k: v for k, v in cfg.domain_options.items() if k != "replay_dir"}
            domain = make_domain(cfg.domain, opts, np.random.default_rng([cfg.seed, n]))
            stats = evaluate(params, domain, cfg.eval_episodes, seed=cfg.seed + n, arch=self.arch)
            self.evals.write({"episode": n, **stats})


def train(config: TrainConfig) -> TrainResult:
    """Run workers until ``max_episodes`` episodes have been logged."""
    run = _Run(config)
    try:
        run.save("initial")
        if config.max_episodes > run.store.episode_count:
            workers = [_Worker(w, run) for w in range(config.n_workers)]
            if config.threaded and config.n_workers > 1:
                _run_threads(run, workers)
            else:
                _run_round_robin(run, workers)
        final = run.save("final")
    finally:
        run.metrics.close()
        run.evals.close()
    return TrainResult(run.store, run.arch, run.metrics.records, run.evals.records, run.skipped, final)


def _run_round_robin(run: _Run, workers: list[_Worker]) -> None:
    try:
        while not run.stop.is_set():
            for w in workers:
                w.run_once()
                if run.stop.is_set():
                    break
    except Exception as exc:
        raise TrainingAborted(f"worker failed: {exc!r}") from exc


def _run_threads(run: _Run, workers: list[_Worker]) -> None:
    def loop(w: _Worker):
        try:
            while not run.stop.is_set():
                w.run_once()
        except BaseException as exc:
            run.errors.append(exc)
            run.stop.set()

    threads = [threading.Thread(target=loop, args=(w,), name=f"worker-{w.wid}", daemon=True) for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if run.errors:
        raise TrainingAborted(f"worker failed: {run.errors[0]!r}") from run.errors[0]


Policy = Callable[[np.ndarray, Domain], int]


def evaluate(params: NetworkParams | None, domain: Domain, n_episodes: int, seed: int = 0,
             arch: ArchitectureConfig | None = None, policy: Policy | None = None) -> dict[str, float]:
    """Greedy (argmax) play without learning.

    ``policy`` replaces the network's action choice (e.g. a scripted agent);
    auxiliary accuracy is still measured whenever ``params`` are given.
    """
    if n_episodes <= 0:
        raise ContractViolation("evaluation needs at least one episode")
    if params is None and policy is None:
        raise ConfigurationError("evaluate needs params or a policy")
    if params is not None and arch is None:
        from amrl.networks import architecture_of
        arch = domain.arch_config(architecture_of(params))
    domain.rng = np.random.default_rng(seed)
    wenv = WorkerEnv(domain, arch, worker=-1)
    for _ in range(n_episodes):
        obs = wenv.current()
        while True:
            preds = ()
            if params is not None:
                out = forward(arch, params, obs)
                preds = [p.data for p in out.opponent_policies]
            action = policy(obs, domain) if policy is not None else int(np.argmax(out.policy.data))
            wenv.step(action, preds)
            if wenv.obs is None:
                break
            obs = wenv.obs
    eps = wenv.drain()
    rets = np.array([e.ret for e in eps])
    accs = [e.aux_accuracy for e in eps if e.aux_accuracy is not None]
    return {
        "mean_return": float(rets.mean()),
        "std_return": float(rets.std()),
        "win_rate": float(np.mean([e.win for e in eps])),
        "mean_length": float(np.mean([e.length for e in eps])),
        "aux_accuracy": float(np.mean(accs)) if accs else None,
        "episodes": len(eps),
    }
