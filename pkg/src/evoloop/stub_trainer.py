"""Recording stub satisfying the trainer contract without training anything.

Emits a deterministic checkpoint id derived from the base checkpoint and the
dataset bytes, and records its invocation, so pipeline tests can assert the
full handoff without a real fine-tuning job.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="evoloop-stub-trainer")
    parser.add_argument("--data", required=True)
    parser.add_argument("--hparams", required=True)
    parser.add_argument("--base", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--fail", action="store_true", help="exit nonzero (tests only)")
    args = parser.parse_args(argv)

    if args.fail:
        print("stub trainer forced failure", file=sys.stderr)
        return 1

    data_path = Path(args.data)
    hparams_path = Path(args.hparams)
    if not data_path.exists() or not hparams_path.exists():
        print("missing data or hparams file", file=sys.stderr)
        return 4

    data_hash = hashlib.sha256(data_path.read_bytes()).hexdigest()
    hparams_hash = hashlib.sha256(hparams_path.read_bytes()).hexdigest()
    checkpoint_id = "ckpt-" + hashlib.sha256(
        f"{args.base}|{data_hash}|{hparams_hash}".encode("utf-8")
    ).hexdigest()[:12]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(
            {"checkpoint_id": checkpoint_id, "train_loss_final": 0.0},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    (out_dir / "invocation.json").write_text(
        json.dumps(
            {
                "data": data_path.name,
                "data_sha256": data_hash,
                "hparams_sha256": hparams_hash,
                "base": args.base,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
