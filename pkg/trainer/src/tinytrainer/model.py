"""A tiny byte-level causal language model: one self-attention block over
learned token + position embeddings. Small enough to fine-tune on a laptop in
seconds, structured enough that cross-entropy on real text goes down."""

from __future__ import annotations

import hashlib

import torch
from torch import nn

from .data import PAD, VOCAB_SIZE


class TinyCausalLM(nn.Module):
    def __init__(self, d_model: int = 32, n_heads: int = 2, max_positions: int = 4096):
        super().__init__()
        self.d_model = d_model
        self.max_positions = max_positions
        self.tok = nn.Embedding(VOCAB_SIZE, d_model)
        self.pos = nn.Embedding(max_positions, d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.ln1 = nn.LayerNorm(d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model)
        )
        self.head = nn.Linear(d_model, VOCAB_SIZE)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """tokens: (batch, seq) int64 with PAD padding -> logits (batch, seq, vocab)."""
        _, seq = tokens.shape
        positions = torch.arange(seq, device=tokens.device)
        x = self.tok(tokens) + self.pos(positions)[None, :, :]
        causal = torch.triu(
            torch.ones((seq, seq), dtype=torch.bool, device=tokens.device), diagonal=1
        )
        h = self.ln1(x)
        attn_out, _ = self.attn(
            h, h, h, attn_mask=causal, key_padding_mask=tokens.eq(PAD), need_weights=False
        )
        x = x + attn_out
        x = x + self.ff(self.ln2(x))
        return self.head(x)


def seeded_model(seed_label: str, **kw) -> TinyCausalLM:
    """Deterministic fresh model whose initialization depends only on the label."""
    seed = int.from_bytes(
        hashlib.sha256(seed_label.encode("utf-8")).digest()[:8], "big"
    ) % 2**31
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = TinyCausalLM(**kw)
    finally:
        torch.random.set_rng_state(generator_state)
    return model
