"""Training-file loading and byte-level tokenization with loss masking.

A sequence is input bytes, a separator, target bytes, and an end marker.
Only target-side positions (including the end marker) carry loss; input
tokens condition the prediction but contribute no loss terms of their own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

PAD = 256
SEP = 257
EOS = 258
VOCAB_SIZE = 259


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    input: str
    target: str
    weight: float


@dataclass(frozen=True)
class EncodedExample:
    tokens: tuple[int, ...]
    loss_mask: tuple[bool, ...]  # aligned with tokens; True where loss applies
    weight: float


def load_examples(path: str | Path) -> list[Example]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"training file not found: {path}")
    examples = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            ex = Example(
                input=obj["input"], target=obj["target"], weight=float(obj["weight"])
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad record ({exc})") from exc
        if ex.weight <= 0:
            raise DataError(f"{path}:{lineno}: weight must be positive")
        examples.append(ex)
    if not examples:
        raise DataError(f"{path}: no training examples")
    return examples


def encode(example: Example, max_length: int) -> EncodedExample:
    """Tokenize one example, truncating input bytes from the left if needed so
    the target (and its end marker) always fits."""
    target_tokens = list(example.target.encode("utf-8")) + [EOS]
    input_budget = max(1, max_length - len(target_tokens) - 1)
    input_tokens = list(example.input.encode("utf-8"))[-input_budget:]
    tokens = input_tokens + [SEP] + target_tokens
    tokens = tokens[-max_length:]
    mask = [False] * (len(tokens) - len(target_tokens)) + [True] * len(target_tokens)
    return EncodedExample(tokens=tuple(tokens), loss_mask=tuple(mask), weight=example.weight)
