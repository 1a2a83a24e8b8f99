"""Repeated seeded runs, curve smoothing, Welch's t-test and activation dumps."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from amrl.envs.domains import make_domain
from amrl.errors import ConfigurationError
from amrl.losses import LambdaSchedule
from amrl.networks import ArchitectureConfig, forward
from amrl.tensor import load_checkpoint
from amrl.trainer import TrainConfig, train

OUTPUT_ROOT_ENV = "AMRL_OUTPUT_ROOT"
TEST_LABEL = "Welch's t-test (two-sided, unequal variances)"


def moving_average(series: Sequence[float], window: float) -> np.ndarray:
    """Trailing mean over the last ``min(window, i + 1)`` elements at each index."""
    if not window >= 1:
        raise ConfigurationError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0 or window == 1:
        return x.copy()
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    span = idx if math.isinf(window) else np.minimum(idx, int(window))
    return (csum[idx] - csum[idx - span]) / span


@dataclass(frozen=True)
class SignificanceResult:
    t: float
    df: float
    p_value: float
    alpha: float
    significant: bool
    test: str = TEST_LABEL


def significance_test(runs_a: Sequence[float], runs_b: Sequence[float], alpha: float = 0.05) -> SignificanceResult:
    """Welch's two-sample t-test on per-run final means.

    Two constant samples with equal means give ``p = 1``; with different
    means the separation is exact and ``p = 0``.
    """
    a = np.asarray(runs_a, dtype=np.float64)
    b = np.asarray(runs_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ConfigurationError("significance_test needs at least 2 runs per side")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("alpha must lie in (0, 1)")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        t = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        p = 1.0 if diff == 0.0 else 0.0
        df = float(a.size + b.size - 2)
    else:
        t = diff / math.sqrt(se2)
        df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
        p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return SignificanceResult(float(t), float(df), p, alpha, p < alpha)


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    run_count: int = 1
    seeds: list[int] | None = None
    sweep: list[LambdaSchedule] = field(default_factory=list)
    smoothing_window: int = 100
    summary_every: int = 0

    def __post_init__(self):
        if self.run_count < 1:
            raise ConfigurationError("run_count must be >= 1")
        if self.smoothing_window < 1:
            raise ConfigurationError("smoothing_window must be >= 1")
        if self.summary_every < 0:
            raise ConfigurationError("summary_every must be >= 0")
        self.sweep = [LambdaSchedule.parse(s) for s in self.sweep]
        if self.seeds is not None and len(self.seeds) != self.run_count:
            raise ConfigurationError("need one seed per run")

    def run_seeds(self) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [self.train.seed + i for i in range(self.run_count)]

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "train"}
        d["sweep"] = [asdict(s) for s in self.sweep]
        d["train"] = self.train.to_dict()
        return d


def resolve_output(path: str | os.PathLike) -> Path:
    """Relative output paths live under ``$AMRL_OUTPUT_ROOT`` when it is set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _summary_points(max_episodes: int, every: int) -> list[int]:
    if max_episodes == 0:
        return []
    if every <= 0:
        every = max(1, max_episodes // 10)
    points = list(range(every, max_episodes + 1, every))
    if not points or points[-1] != max_episodes:
        points.append(max_episodes)
    return points


def read_returns(run_dir: Path) -> np.ndarray:
    """Per-episode undiscounted returns of one run, ordered by episode index."""
    records = [json.loads(line) for line in (Path(run_dir) / "metrics.jsonl").read_text().splitlines() if line]
    records.sort(key=lambda r: r["episode"])
    return np.array([r["return"] for r in records], dtype=np.float64)


def final_mean(returns: np.ndarray, window: int) -> float:
    return float(returns[-window:].mean()) if returns.size else math.nan


@dataclass
class ExperimentResult:
    output_dir: Path
    run_dirs: list[Path]
    summary: list[dict]
    final_means: list[float]


def _fmt(x: float) -> str:
    return repr(float(x))


def run_experiment(config: ExperimentConfig, output_dir: str | os.PathLike | None = None) -> ExperimentResult:
    """``run_count`` independent seeded runs plus ``summary.csv`` and ``runs.csv``.

    The summary holds the mean and population std (ddof 0) over runs of the
    smoothed training return at each summary episode.
    """
    out = _prepare_dir(resolve_output(output_dir or config.train.output_dir or "runs/experiment"))
    (out / "experiment.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True))
    run_dirs, curves, finals = [], [], []
    for i, seed in enumerate(config.run_seeds()):
        run_dir = out / f"run_{i:02d}"
        train(replace(config.train, seed=seed, output_dir=str(run_dir)))
        returns = read_returns(run_dir)
        run_dirs.append(run_dir)
        curves.append(moving_average(returns, config.smoothing_window))
        finals.append(final_mean(returns, config.smoothing_window))
    points = _summary_points(config.train.max_episodes, config.summary_every)
    summary = []
    for ep in points:
        vals = np.array([c[ep - 1] for c in curves])
        summary.append({"episode": ep, "mean": float(vals.mean()), "std": float(vals.std()), "runs": len(vals)})
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean", "std", "runs"])
        for row in summary:
            w.writerow([row["episode"], _fmt(row["mean"]), _fmt(row["std"]), row["runs"]])
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", "final_mean"])
        for i, (seed, fm) in enumerate(zip(config.run_seeds(), finals)):
            w.writerow([i, seed, _fmt(fm)])
    return ExperimentResult(out, run_dirs, summary, finals)


def read_final_means(experiment_dir: str | os.PathLike) -> list[float]:
    path = Path(experiment_dir) / "runs.csv"
    if not path.exists():
        raise ConfigurationError(f"{experiment_dir} has no runs.csv; is it an experiment directory?")
    with open(path, newline="") as fh:
        return [float(row["final_mean"]) for row in csv.DictReader(fh)]


def lambda_sweep(config: ExperimentConfig, output_dir: str | os.PathLike | None = None) -> list[dict]:
    """One experiment per lambda schedule, plus a merged ``comparison.csv``."""
    if not config.sweep:
        raise ConfigurationError("lambda_sweep needs a non-empty sweep list")
    out = _prepare_dir(resolve_output(output_dir or config.train.output_dir or "runs/sweep"))
    rows = []
    for schedule in config.sweep:
        sub = replace(config, train=replace(config.train, lambda_schedule=schedule), sweep=[])
        res = run_experiment(sub, out / schedule.label())
        finals = np.array(res.final_means)
        rows.append({"setting": schedule.label(), "final_mean": float(finals.mean()),
                     "final_std": float(finals.std()), "runs": len(finals)})
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "final_mean", "final_std", "runs"])
        for r in rows:
            w.writerow([r["setting"], _fmt(r["final_mean"]), _fmt(r["final_std"]), r["runs"]])
    return rows


def dump_activations(checkpoint: str | os.PathLike, domain: str, n_episodes: int, output: str | os.PathLike,
                     seed: int = 0, domain_options: dict | None = None) -> Path:
    """Greedy play writing ``episode, step, value, h0..h{n-1}`` per step to CSV.

    ``h`` is the last hidden vector feeding the policy and value heads.
    """
    params, _, meta = load_checkpoint(checkpoint)
    if "arch" not in meta:
        raise ConfigurationError("checkpoint carries no architecture metadata")
    arch = ArchitectureConfig.from_dict(meta["arch"])
    if meta.get("domain") not in (None, domain):
        raise ConfigurationError(f"checkpoint was trained on {meta['domain']!r}, not {domain!r}")
    opts = dict(meta.get("domain_options") or {}) if domain_options is None else dict(domain_options)
    opts.pop("replay_dir", None)
    env = make_domain(domain, opts, seed)
    if tuple(env.obs_shape) != tuple(arch.obs_shape) or env.n_actions != arch.n_actions:
        raise ConfigurationError(f"{arch.arch} checkpoint does not fit domain {domain!r}")
    if n_episodes < 0:
        raise ConfigurationError("n_episodes must be >= 0")
    out = Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "step", "value"] + [f"h{i}" for i in range(arch.fc_units)])
        for ep in range(n_episodes):
            obs = env.reset()
            step = 0
            while True:
                res = forward(arch, params, obs)
                w.writerow([ep, step, _fmt(res.value.item())] + [_fmt(v) for v in res.last_hidden.data])
                tr = env.step(int(np.argmax(res.policy.data)))
                step += 1
                if tr.done:
                    break
                obs = tr.obs
    return out
