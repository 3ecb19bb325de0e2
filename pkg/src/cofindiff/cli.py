"""``cofindiff <stage> --config <path> [--seed N] [--out DIR]``"""
from __future__ import annotations

import argparse
import logging
import sys

from cofindiff.checkpoint import CheckpointCorruption
from cofindiff.config import ConfigError, RunConfig, parse_config
from cofindiff.pipeline import STAGES, MissingUpstream, run_stage

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CORRUPTION = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cofindiff", description="Conditional diffusion for financial time series.")
    p.add_argument("stage", choices=list(STAGES))
    p.add_argument("--config", help="YAML run configuration (defaults apply to missing keys)")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--out", help="output root (also settable via COFINDIFF_OUT)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
    except (ConfigError, FileNotFoundError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    try:
        manifest = run_stage(args.stage, cfg, args.out)
    except (MissingUpstream, FileNotFoundError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except CheckpointCorruption as exc:
        print(f"corrupt checkpoint: {exc}", file=sys.stderr)
        return EXIT_CORRUPTION
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("cofindiff").debug("stage failed", exc_info=True)
        print(f"{args.stage} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.stage}: wrote {', '.join(manifest['outputs']) or 'nothing'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
