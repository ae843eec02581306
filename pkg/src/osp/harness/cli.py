"""Command line entry point: ``osp run|sweep|gen-data|verify``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .. import envs
from ..errors import ConfigError, FormatError, NumericError
from .config import ExperimentConfig, load_config, load_sweep, sweep_axes
from .runner import build_stream, rep_seeds, run, sweep
from .verify import SUITES, run_suites


def _overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    upd = {}
    if getattr(args, "seed", None) is not None:
        upd["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        upd["out"] = args.out
    if getattr(args, "threads", None) is not None:
        upd["threads"] = args.threads
    return replace(cfg, **upd).validate() if upd else cfg


def cmd_run(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    res = run(cfg, cfg.out)
    print(f"{cfg.name}: T={cfg.T} repetitions={cfg.repetitions} -> {Path(cfg.out) / cfg.name}")
    for key in ("cum_loss", "cum_exp_loss", "cum_surrogate", "regret_best"):
        if key in res.reps[0].summary:
            print(f"  {key}: {res.mean(key):.6g} +- {res.std(key):.3g}")
    return 0


def cmd_sweep(args) -> int:
    configs = [_overrides(c, args) for c in load_sweep(args.config)]
    # a file without sweep axes yields an empty table, which is not an error
    out = args.out if args.out is not None else (configs[0].out if configs else load_config(args.config).out)
    sweep(configs, out, sweep_axes(args.config))
    print(f"{len(configs)} configurations -> {out}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    seed = rep_seeds(cfg.seed, cfg.repetitions)[args.repetition][0]
    stream = build_stream(cfg, seed)
    path = Path(args.out if args.out is not None else cfg.out) / f"{cfg.name}_stream.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    envs.dump_csv(stream, path)
    print(f"{stream.T} rounds, {stream.n} features -> {path}")
    return 0


def cmd_verify(args) -> int:
    names = args.suite or None
    checks = run_suites(names)
    bad = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(bad)}/{len(checks)} checks passed")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="osp", description="Online structured prediction experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        if need_config:
            sp.add_argument("--config", required=True, help="INI experiment file")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="override the output directory")
        sp.add_argument("--threads", type=int, help="worker processes for repetitions")

    sp = sub.add_parser("run", help="run one configuration")
    common(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("sweep", help="run every grid point of a [sweep] section")
    common(sp)
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("gen-data", help="write the stream of a configuration as CSV")
    common(sp)
    sp.add_argument("--repetition", type=int, default=0, help="which repetition's stream")
    sp.set_defaults(func=cmd_gen_data)
    sp = sub.add_parser("verify", help="run the property suites")
    sp.add_argument("--suite", action="append", choices=sorted(SUITES),
                    help="suite to run (repeatable); default all")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
