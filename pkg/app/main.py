"""Command-line entry point: python -m app <command> [options]."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from app import __version__
from app.config import load_config
from app.errors import CoolingError
from app.experiments import ExperimentRunner
from app.log import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0


def _physics_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("physics")
    group.add_argument("--temperature", type=float, help="initial temperature in kelvin")
    group.add_argument("--x", type=float, help="dimensionless inverse temperature (instead of --temperature)")
    group.add_argument("--omega-a", dest="omega_a", type=float, help="resonator frequency, rad/s")
    group.add_argument("--g", type=float, help="coupling in units of omega_a")
    group.add_argument("--delta", type=float, help="detuning in units of omega_a")
    group.add_argument("--N", dest="n_rounds", type=int, help="number of measurement rounds")
    group.add_argument("--tail-tol", dest="tail_tol", type=float)
    group.add_argument("--cutoff-cap", dest="cutoff_cap", type=int)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coolopt",
        description="Measurement-based resonator cooling: simulation, sequence search and PPO optimization",
    )
    parser.add_argument("--version", action="version", version=f"coolopt {__version__}")
    parser.add_argument("--config", type=Path, help="YAML config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--log-level", dest="log_level")
    parser.add_argument("--no-progress", dest="show_progress", action="store_const", const=False)

    physics = _physics_flags()
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan-tau", parents=[physics], help="single-UM population versus interval")
    scan.add_argument("--temperatures", type=float, nargs="+")
    scan.add_argument("--grid-points", dest="grid_points", type=int)
    scan.add_argument("--tau-max", dest="tau_max", type=float)
    scan.add_argument("--scan-cutoff-cap", dest="scan_cutoff_cap", type=int)

    simulate = sub.add_parser("simulate", parents=[physics], help="run one measurement sequence")
    source = simulate.add_mutually_exclusive_group()
    source.add_argument("--pattern", help="S_u, S_c, S_k (with --k) or S_<k>")
    source.add_argument("--sequence", help="explicit 0/1 string, 0 = UM, 1 = CM")
    source.add_argument("--policy", dest="policy_path", help="policy checkpoint to generate the sequence")
    simulate.add_argument("--k", type=int)

    for name, text in (("exhaustive", "rank all 2^N sequences"), ("greedy", "per-round greedy baseline")):
        search = sub.add_parser(name, parents=[physics], help=text)
        search.add_argument("--metric", choices=["final", "summed"])
        if name == "exhaustive":
            search.add_argument("--top-k", dest="top_k", type=int)
            search.add_argument("--override-guard", dest="override_guard", action="store_const", const=True)

    train = sub.add_parser("train", parents=[physics], help="train a PPO policy")
    train.add_argument("--max-iterations", dest="max_iterations", type=int)
    train.add_argument("--episodes-per-batch", dest="episodes_per_batch", type=int)
    train.add_argument("--reward-mode", dest="reward_mode", choices=["per_step", "final"])

    generate = sub.add_parser("generate", parents=[physics], help="greedy sequence from a trained policy")
    generate.add_argument("--policy", dest="policy_path")

    reproduce = sub.add_parser("reproduce", parents=[physics], help="all data behind one figure")
    reproduce.add_argument("figure", choices=["fig1", "fig3", "fig4"])
    reproduce.add_argument("--policy", dest="policy_path", help="checkpoint file (fig3) or directory (fig4) to load")
    reproduce.add_argument("--max-iterations", dest="max_iterations", type=int)

    return parser


_PPO_KEYS = ("max_iterations", "episodes_per_batch", "reward_mode")
_NOT_CONFIG = ("command", "config", "figure")


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    values = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    ppo = {k: values.pop(k) for k in _PPO_KEYS if k in values}
    if ppo:
        values["ppo"] = ppo
    return values


def dispatch(runner: ExperimentRunner, args: argparse.Namespace) -> Dict:
    command = args.command
    if command == "scan-tau":
        return runner.scan_tau()
    if command == "simulate":
        cfg = runner.config
        return runner.simulate(pattern=cfg.pattern, sequence=cfg.sequence, policy_path=cfg.policy_path)
    if command == "exhaustive":
        return runner.exhaustive()
    if command == "greedy":
        return runner.greedy()
    if command == "train":
        return runner.train()
    if command == "generate":
        return runner.generate()
    return runner.reproduce(args.figure)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one CLI command.

    Returns:
        Exit code: 0 success, 2 config/usage, 3 physics, 4 search guard, 5 checkpoint
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, **_overrides(args))
        configure_logging(config.log_level, Path(config.out_dir) / "run.log")
        logger.info("coolopt %s: %s", __version__, args.command)
        result = dispatch(ExperimentRunner(config), args)
    except CoolingError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

    print(json.dumps(result, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
