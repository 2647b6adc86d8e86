"""Command-line entry point for the caelab experiments."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from caelab.cae_model import parameter_count, train
from caelab.config import ExperimentConfig, apply_overrides, load_config
from caelab.errors import CaeLabError, CheckpointError, ConfigError, GradientCheckError
from caelab.gradcheck import report_frame, run_gradcheck
from caelab.harness import run_acpr_obo, run_ber, run_ccdf, run_psd, write_csv

load_dotenv()

logger = logging.getLogger("caelab.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


def _add_run_flags(parser: argparse.ArgumentParser, multiple_configs: bool = False) -> None:
    if multiple_configs:
        parser.add_argument("--config", action="append", required=True,
                            help="experiment YAML; repeat once per table row group")
    else:
        parser.add_argument("--config", required=True, help="experiment YAML")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
    parser.add_argument("--out", default=None, help="output CSV path (overrides run.out)")
    parser.add_argument("--frames", type=int, default=None, help="frames per point (overrides run.frames)")
    parser.add_argument("--workers", type=int, default=None, help="worker threads (overrides run.workers)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caelab", description="MIMO-OFDM autoencoder waveform laboratory")
    parser.add_argument("--log-level", default=os.getenv("CAELAB_LOG_LEVEL", "INFO"),
                        help="logging level (default from CAELAB_LOG_LEVEL, else INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="train the autoencoder and write a checkpoint")
    _add_run_flags(train_p)
    train_p.add_argument("--checkpoint", default=None, help="checkpoint output path")

    for name, text in (("ber", "BER versus P_SNR"), ("ccdf", "CCDF of the max-antenna PAPR"),
                       ("psd", "power spectral density of the amplified signal")):
        _add_run_flags(sub.add_parser(name, help=text))

    _add_run_flags(sub.add_parser("acpr-obo", help="ACPR and OBO per method and IBO"), multiple_configs=True)

    grad_p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    grad_p.add_argument("--seed", type=int, default=0)
    grad_p.add_argument("--out", default=None, help="optional CSV report")
    return parser


def _load(path: str, args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(path)
    return apply_overrides(cfg, seed=args.seed, frames=args.frames, out=args.out, workers=args.workers)


def _train(args: argparse.Namespace) -> None:
    cfg = _load(args.config, args)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"training": cfg.training.model_copy(update={"seed": args.seed})})
    result = train(cfg, checkpoint_path=args.checkpoint or cfg.method.checkpoint)
    counts = parameter_count(result.model)
    logger.info("Training finished: %d parameters, checkpoint %s", counts["total"], result.checkpoint_path)


def _gradcheck(args: argparse.Namespace) -> None:
    results = run_gradcheck(seed=args.seed, raise_on_failure=False)
    if args.out:
        write_csv(report_frame(results), args.out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradientCheckError(f"gradient check failed for: {', '.join(failed)}")
    logger.info("All %d gradient checks passed", len(results))


def dispatch(args: argparse.Namespace) -> None:
    command = args.command
    if command == "train":
        _train(args)
    elif command == "ber":
        run_ber(_load(args.config, args))
    elif command == "ccdf":
        run_ccdf(_load(args.config, args))
    elif command == "psd":
        run_psd(_load(args.config, args))
    elif command == "acpr-obo":
        cfgs = [_load(path, args) for path in args.config]
        run_acpr_obo(cfgs, out=args.out)
    elif command == "gradcheck":
        _gradcheck(args)
    else:
        raise ConfigError(f"unknown command '{command}'")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=str(args.log_level).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except (ConfigError, CheckpointError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except CaeLabError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
