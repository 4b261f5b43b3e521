"""
Command-line entry point: `python dualrate/main.py <command> <config> [flags]`.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import pathlib
import sys
from typing import Any, Dict, List, Optional

# Ensure local modules are importable when run as a script
CODE_ROOT = pathlib.Path(__file__).resolve().parent
if str(CODE_ROOT) not in sys.path:
    sys.path.insert(0, str(CODE_ROOT))

from config import Config
from errors import CheckpointError, ConfigurationError, NumericalDivergenceError
from pipeline import ExperimentGraph
from schemas.run_config import parse_config

logger = logging.getLogger(__name__)

COMMANDS = ("train", "sample", "distill", "eval", "ablate")
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

# Which section the --K/--k flags address for each command
_RATE_SECTION = {"train": "train", "sample": "sampler", "eval": "sampler", "distill": "distill", "ablate": "train"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualrate", description="Dual-rate diffusion desk lab")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", help="Path to a key = value run config")
    parser.add_argument("--K", type=int, default=None, help="Heavy (encoder) steps")
    parser.add_argument("--k", type=int, default=None, help="Light (denoiser) steps")
    parser.add_argument("--n", type=int, default=None, help="Number of samples")
    parser.add_argument("--guidance-w", type=float, default=None, help="Classifier-free guidance weight")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--trace-out", default=None, help="Per-step sampler trace CSV (under output_dir)")
    parser.add_argument("--variant", choices=("standard", "rollout"), default=None)
    parser.add_argument("--teacher", default=None, help="Teacher checkpoint for distill")
    return parser


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    section = _RATE_SECTION[args.command]
    overrides: Dict[str, Any] = {
        "command": args.command,
        f"{section}.K": args.K,
        f"{section}.k": args.k,
        "guidance.w": args.guidance_w,
        "seed": args.seed,
        "sampler.trace_out": args.trace_out,
        "distill.variant": args.variant,
        "distill.teacher": args.teacher,
    }
    if args.n is not None:
        overrides["eval.n_samples" if args.command == "eval" else "sampler.n"] = args.n
    return {key: value for key, value in overrides.items() if value is not None}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    args = build_parser().parse_args(argv)
    try:
        text = pathlib.Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        logger.error(f"[CONFIG] cannot read {args.config}: {exc}")
        return EXIT_CONFIG

    try:
        config = parse_config(text, cli_overrides(args))
        state = ExperimentGraph().run(config)
    except (ConfigurationError, CheckpointError) as exc:
        logger.error(f"[CONFIG] {exc}")
        return EXIT_CONFIG
    except NumericalDivergenceError as exc:
        logger.error(f"[GRAPH] numerical divergence: {exc}")
        return EXIT_DIVERGED

    for name, path in state.outputs.items():
        logger.info(f"[GRAPH] {name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
