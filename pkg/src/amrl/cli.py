"""``amrl`` command-line entry point.

Subcommands: train, evaluate, sweep, significance, dump-activations, replay.
Exit status is 0 on success and 2 on any configuration or runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from amrl.config import apply_overrides, load_config
from amrl.envs import make_domain
from amrl.envs import pommerman as pom
from amrl.errors import ConfigurationError, ContractViolation, NonFiniteError, TrainingAborted
from amrl.experiment import (
    dump_activations, lambda_sweep, read_final_means, resolve_output, run_experiment, significance_test,
)
from amrl.networks import ArchitectureConfig
from amrl.tensor import load_checkpoint
from amrl.trainer import evaluate


def _experiment(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"n_workers={args.workers}")
    if getattr(args, "episodes", None) is not None:
        overrides.append(f"max_episodes={args.episodes}")
    if getattr(args, "output", None) is not None:
        overrides.append(f"output_dir={args.output}")
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _experiment(args)
    res = run_experiment(cfg)
    print(f"wrote {len(res.run_dirs)} run(s) to {res.output_dir}")
    for row in res.summary[-1:]:
        print(f"episode {row['episode']}: smoothed return {row['mean']:.4f} +- {row['std']:.4f}")
    return 0


def cmd_sweep(args) -> int:
    rows = lambda_sweep(_experiment(args))
    for r in rows:
        print(f"{r['setting']:>16}  {r['final_mean']:.4f} +- {r['final_std']:.4f}  ({r['runs']} runs)")
    return 0


def _parse_options(items) -> dict:
    return apply_overrides({}, items or [])


def cmd_evaluate(args) -> int:
    params, _, meta = load_checkpoint(args.checkpoint)
    if "arch" not in meta:
        raise ConfigurationError("checkpoint carries no architecture metadata")
    arch = ArchitectureConfig.from_dict(meta["arch"])
    domain_name = args.domain or meta.get("domain")
    opts = dict(meta.get("domain_options") or {})
    opts.update(_parse_options(args.option))
    opts.pop("replay_dir", None)
    domain = make_domain(domain_name, opts, args.seed)
    result = evaluate(params, domain, args.episodes, seed=args.seed, arch=arch)
    print(json.dumps(result, indent=1))
    return 0


def cmd_significance(args) -> int:
    a = read_final_means(resolve_output(args.a))
    b = read_final_means(resolve_output(args.b))
    res = significance_test(a, b, args.alpha)
    print(json.dumps(asdict(res), indent=1))
    return 0


def cmd_dump(args) -> int:
    params_meta = load_checkpoint(args.checkpoint)[2]
    domain = args.domain or params_meta.get("domain")
    out = args.output or str(Path(args.checkpoint).with_suffix("")) + "_activations.csv"
    path = dump_activations(args.checkpoint, domain, args.episodes, resolve_output(out), seed=args.seed)
    print(f"wrote {path}")
    return 0


def cmd_replay(args) -> int:
    state, records = pom.replay(args.log)
    alive = [a.alive for a in state.agents]
    print(f"replayed {len(records)} ticks; agents alive: {alive}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def exp_args(sp, extra=True):
        sp.add_argument("--config", required=True)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        sp.add_argument("--output")
        if extra:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--workers", type=int)
            sp.add_argument("--episodes", type=int)

    sp = sub.add_parser("train", help="run one experiment (run_count seeded runs)")
    exp_args(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="run one experiment per lambda schedule")
    exp_args(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--domain")
    sp.add_argument("--option", action="append", metavar="KEY=VALUE", help="domain option override")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("significance", help="Welch's t-test between two experiment directories")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.set_defaults(func=cmd_significance)

    sp = sub.add_parser("dump-activations", help="write last-hidden activations and values to CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--domain")
    sp.add_argument("--output")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_dump)

    sp = sub.add_parser("replay", help="re-simulate a Pommerman replay log")
    sp.add_argument("--log", required=True)
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolation, NonFiniteError, TrainingAborted, OSError, KeyError) as exc:
        print(f"amrl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
