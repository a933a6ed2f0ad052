"""Word-level text encoder.

The toy tier builds a word vocabulary from the training corpus and runs a
small transformer over learned word embeddings. Pooling is a masked mean so
padded positions never leak into the sentence vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..data.schema import tokenize

PAD_ID = 0
UNK_ID = 1


class Vocabulary:
    """Deterministic word -> id map with PAD/UNK reserved at 0/1."""

    def __init__(self, words: list[str]):
        self.words = list(words)
        self._ids = {w: i + 2 for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, expressions: list[str]) -> "Vocabulary":
        seen = sorted({w for e in expressions for w in tokenize(e)})
        return cls(seen)

    def __len__(self) -> int:
        return len(self.words) + 2

    def encode(self, expression: str) -> list[int]:
        tokens = tokenize(expression)
        if not tokens:
            raise ValueError(f"expression {expression!r} is empty after tokenization")
        return [self._ids.get(w, UNK_ID) for w in tokens]


@dataclass
class TextEmbedding:
    per_word: torch.Tensor  # (N, C_t)
    pooled: torch.Tensor  # (C_t,) masked mean of per_word
    attention_mask: torch.Tensor  # (N,) bool, True = real token


def masked_mean(per_word: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over rows where mask is True. per_word (..., N, C), mask (..., N)."""
    weights = mask.to(per_word.dtype).unsqueeze(-1)
    total = (per_word * weights).sum(dim=-2)
    count = weights.sum(dim=-2).clamp(min=1.0)
    return total / count


class ToyTextEncoder(nn.Module):
    def __init__(
        self,
        vocab: Vocabulary,
        dim: int = 64,
        num_layers: int = 1,
        num_heads: int = 4,
        ffn_dim: int = 128,
        max_len: int = 32,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.vocab = vocab
        self.dim = dim
        self.max_len = max_len
        self.embed = nn.Embedding(len(vocab), dim, padding_idx=PAD_ID)
        self.pos = nn.Embedding(max_len, dim)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                dim, num_heads, dim_feedforward=ffn_dim, dropout=dropout, batch_first=True
            )
            for _ in range(num_layers)
        )

    def forward(self, token_ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """token_ids (B, N) long, mask (B, N) bool -> per_word (B, N, C), pooled (B, C)."""
        if token_ids.shape[1] > self.max_len:
            raise ValueError(f"expression length {token_ids.shape[1]} exceeds max_len {self.max_len}")
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        x = self.embed(token_ids) + self.pos(positions)[None]
        key_padding = ~mask
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=key_padding)
        return x, masked_mean(x, mask)

    def encode_text(self, expression: str) -> TextEmbedding:
        """Encode one expression; raises on text that tokenizes to nothing."""
        ids = torch.tensor([self.vocab.encode(expression)], dtype=torch.long)
        mask = torch.ones_like(ids, dtype=torch.bool)
        per_word, pooled = self.forward(ids, mask)
        return TextEmbedding(per_word=per_word[0], pooled=pooled[0], attention_mask=mask[0])


def pad_token_batch(id_lists: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad variable-length id lists into (B, N_max) ids + bool mask."""
    n_max = max(len(ids) for ids in id_lists)
    batch = torch.full((len(id_lists), n_max), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(id_lists), n_max), dtype=torch.bool)
    for i, ids in enumerate(id_lists):
        batch[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[i, : len(ids)] = True
    return batch, mask
