"""Command-line entry point implementing the trainer contract.

Exit codes: 0 success, 4 unreadable data or hyperparameters, 5 non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import hparams as hparams_mod
from .data import DataError
from .train import NonFiniteLoss, run_job

EXIT_OK = 0
EXIT_DATA = 4
EXIT_NONFINITE = 5


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tinytrainer",
        description="weighted supervised fine-tuning of a tiny causal language model",
    )
    parser.add_argument("--data", required=True)
    parser.add_argument("--hparams", required=True)
    parser.add_argument("--base", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    try:
        hp = hparams_mod.load(args.hparams)
    except (OSError, json.JSONDecodeError, hparams_mod.HparamsError) as exc:
        print(f"error: hparams: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        manifest = run_job(Path(args.data), hp, args.base, Path(args.out))
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLoss as exc:
        print(f"error: loss: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    print(
        f"trained {manifest['checkpoint_id']}: "
        f"loss {manifest['train_loss_initial']:.4f} -> {manifest['train_loss_final']:.4f}"
    )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
