"""Training hyperparameters: defaults, file round-trip, validation."""

from __future__ import annotations

import json
from pathlib import Path

DEFAULTS = {
    "global_batch_size": 128,
    "learning_rate": 2e-5,
    "epochs": 3,
    "max_length": 2048,
    "weight_decay": 0,
    "warmup_ratio": 0.03,
}


class HparamsError(ValueError):
    pass


def validate(hp: dict) -> dict:
    unknown = set(hp) - set(DEFAULTS)
    if unknown:
        raise HparamsError(f"unknown hyperparameters: {sorted(unknown)}")
    merged = {**DEFAULTS, **hp}
    for key in ("global_batch_size", "learning_rate", "epochs", "max_length"):
        if not merged[key] > 0:
            raise HparamsError(f"{key} must be positive, got {merged[key]}")
    if merged["weight_decay"] < 0:
        raise HparamsError("weight_decay must be >= 0")
    if not 0 <= merged["warmup_ratio"] <= 1:
        raise HparamsError("warmup_ratio must be in [0, 1]")
    return merged


def load(path: str | Path) -> dict:
    return validate(json.loads(Path(path).read_text(encoding="utf-8")))


def write_defaults(path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(DEFAULTS, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
