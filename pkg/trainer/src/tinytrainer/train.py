"""Weighted fine-tuning loop and checkpoint I/O.

Per-example loss is weight × mean token cross-entropy over that example's
target positions; input positions are excluded from the loss entirely. The
batch objective is the mean of per-example losses, so scaling one example's
weight by c scales exactly that example's contribution by c.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .data import PAD, EncodedExample, encode, load_examples
from .model import TinyCausalLM, seeded_model


class NonFiniteLoss(RuntimeError):
    pass


def _collate(batch: list[EncodedExample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    width = max(len(ex.tokens) for ex in batch)
    tokens = torch.full((len(batch), width), PAD, dtype=torch.long)
    mask = torch.zeros((len(batch), width), dtype=torch.bool)
    weights = torch.tensor([ex.weight for ex in batch], dtype=torch.float32)
    for i, ex in enumerate(batch):
        tokens[i, : len(ex.tokens)] = torch.tensor(ex.tokens, dtype=torch.long)
        mask[i, : len(ex.loss_mask)] = torch.tensor(ex.loss_mask, dtype=torch.bool)
    return tokens, mask, weights


def example_losses(model: TinyCausalLM, batch: list[EncodedExample]) -> torch.Tensor:
    """Per-example weighted losses for one batch, shape (batch,)."""
    tokens, mask, weights = _collate(batch)
    logits = model(tokens)
    # Position i - 1 predicts token i, so shift: loss applies where the label
    # position is target-side. Position 0 can never be a label.
    label_mask = mask.clone()
    label_mask[:, 0] = False
    per_token = nn.functional.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]),
        tokens[:, 1:].reshape(-1),
        reduction="none",
    ).reshape(tokens.shape[0], -1)
    tgt = label_mask[:, 1:].float()
    token_counts = tgt.sum(dim=1).clamp(min=1.0)
    mean_ce = (per_token * tgt).sum(dim=1) / token_counts
    return weights * mean_ce


def dataset_loss(model: TinyCausalLM, encoded: list[EncodedExample], batch_size: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(encoded), batch_size):
            losses = example_losses(model, encoded[start : start + batch_size])
            total += float(losses.sum())
    return total / len(encoded)


@dataclass(frozen=True)
class TrainResult:
    model: TinyCausalLM
    initial_loss: float
    final_loss: float


def fine_tune(model: TinyCausalLM, encoded: list[EncodedExample], hp: dict) -> TrainResult:
    batch_size = min(int(hp["global_batch_size"]), len(encoded))
    initial_loss = dataset_loss(model, encoded, batch_size)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=hp["learning_rate"], weight_decay=hp["weight_decay"]
    )
    steps_per_epoch = math.ceil(len(encoded) / batch_size)
    total_steps = steps_per_epoch * int(hp["epochs"])
    warmup_steps = max(1, int(hp["warmup_ratio"] * total_steps))
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: min(1.0, (step + 1) / warmup_steps)
    )
    generator = torch.Generator().manual_seed(0)
    model.train()
    for _ in range(int(hp["epochs"])):
        order = torch.randperm(len(encoded), generator=generator).tolist()
        for start in range(0, len(order), batch_size):
            batch = [encoded[i] for i in order[start : start + batch_size]]
            optimizer.zero_grad()
            loss = example_losses(model, batch).mean()
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became non-finite: {float(loss)}")
            loss.backward()
            optimizer.step()
            scheduler.step()
    final_loss = dataset_loss(model, encoded, batch_size)
    if not math.isfinite(final_loss):
        raise NonFiniteLoss(f"final loss non-finite: {final_loss}")
    return TrainResult(model=model, initial_loss=initial_loss, final_loss=final_loss)


def load_base(base: str) -> TinyCausalLM:
    """Resolve a base checkpoint: a directory with weights.pt, a .pt file, or
    (for any other string) a fresh model seeded by the checkpoint id."""
    candidates = [Path(base) / "weights.pt", Path(base)]
    for path in candidates:
        if path.is_file():
            model = TinyCausalLM()
            model.load_state_dict(torch.load(path, weights_only=True))
            return model
    return seeded_model(base)


def checkpoint_id(base: str, data_bytes: bytes, hparams_bytes: bytes) -> str:
    digest = hashlib.sha256()
    for part in (base.encode("utf-8"), data_bytes, hparams_bytes):
        digest.update(hashlib.sha256(part).digest())
    return "tt-" + digest.hexdigest()[:12]


def run_job(data_path: Path, hp: dict, base: str, out_dir: Path) -> dict:
    """Execute one training job per the file contract; returns the manifest."""
    examples = load_examples(data_path)
    encoded = [encode(ex, int(hp["max_length"])) for ex in examples]
    model = load_base(base)
    result = fine_tune(model, encoded, hp)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(result.model.state_dict(), out_dir / "weights.pt")
    manifest = {
        "checkpoint_id": checkpoint_id(
            base,
            data_path.read_bytes(),
            json.dumps(hp, sort_keys=True).encode("utf-8"),
        ),
        "train_loss_final": result.final_loss,
        "train_loss_initial": result.initial_loss,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
