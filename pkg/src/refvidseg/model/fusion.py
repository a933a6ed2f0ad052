"""Multimodal fusion: token assembly, transformer encoder/decoder, mask head.

The video grid, augmented instrument embeddings and text tokens are flattened
into one sequence (video t-major row-major, instruments t-major x-major, text
last) and fused by a self-attention stack. A fixed set of learned queries is
issued per frame; the query slot index ties the per-frame outputs into
instance sequences. Masks come from a dot product between a per-frame
query-derived kernel and the finest feature-pyramid map (stride 4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .instruments import InstrumentGraph

TOKEN_VIDEO, TOKEN_INSTRUMENT, TOKEN_TEXT = 0, 1, 2


def _sincos(dim: int, coords: torch.Tensor) -> torch.Tensor:
    """Standard sinusoidal code; coords (...,) float -> (..., dim), dim even."""
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=coords.dtype, device=coords.device)
        * (-math.log(10000.0) / max(half - 1, 1))
    )
    args = coords[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def spacetime_position_codes(
    dim: int, t: torch.Tensor, y: torch.Tensor, x: torch.Tensor
) -> torch.Tensor:
    """Concatenated (t, y, x) sinusoids filling ``dim`` channels."""
    d_t = (dim // 3) // 2 * 2
    d_y = d_t
    d_x = dim - 2 * d_t
    return torch.cat([_sincos(d_t, t), _sincos(d_y, y), _sincos(d_x, x)], dim=-1)


@dataclass
class MultiModalSequence:
    tokens: torch.Tensor  # (L, D), positional codes already added
    token_type: torch.Tensor  # (L,) int: 0 video, 1 instrument, 2 text
    mask: torch.Tensor  # (L,) bool, True = real token
    num_frames: int


@dataclass
class InstanceSequence:
    per_frame_query_outputs: torch.Tensor  # (T, D)
    mask_logits: torch.Tensor  # (T, h, w) at the mask stride
    frame_reference_logits: torch.Tensor  # (T,)

    @property
    def reference_logit(self) -> float:
        return float(self.frame_reference_logits.mean())


@dataclass
class PredictionSet:
    query_outputs: torch.Tensor  # (N_q, T, D)
    mask_logits: torch.Tensor  # (N_q, T, h, w)
    frame_reference_logits: torch.Tensor  # (N_q, T)
    mask_stride: int

    def __len__(self) -> int:
        return self.query_outputs.shape[0]

    @property
    def sequences(self) -> list[InstanceSequence]:
        return [
            InstanceSequence(
                per_frame_query_outputs=self.query_outputs[q],
                mask_logits=self.mask_logits[q],
                frame_reference_logits=self.frame_reference_logits[q],
            )
            for q in range(len(self))
        ]


def select_reference(prediction: PredictionSet) -> int:
    """Index of the sequence with the highest mean per-frame reference logit.

    Ties resolve to the lowest query index.
    """
    means = prediction.frame_reference_logits.mean(dim=1)
    return int(torch.argmax(means))


def upsample_mask_logits(logits: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinearly upsample (..., h, w) mask logits to frame resolution."""
    lead = logits.shape[:-2]
    flat = logits.reshape(-1, 1, *logits.shape[-2:])
    out = F.interpolate(flat, size=size, mode="bilinear", align_corners=False)
    return out.reshape(*lead, *size)


class MaskFeaturePyramid(nn.Module):
    """Top-down merge into a stride-4 mask map.

    The coarsest level is the fused video-token block coming out of the
    transformer encoder (it carries positional codes and text-conditioned
    context, which the raw convolutional pyramid lacks); the stride-8 and
    stride-4 backbone levels add spatial detail on the way down.
    """

    def __init__(self, fused_dim: int, in_channels: dict[int, int], mask_dim: int = 32):
        super().__init__()
        self.mask_dim = mask_dim
        self.lateral_fused = nn.Conv2d(fused_dim, mask_dim, kernel_size=1)
        self.laterals = nn.ModuleDict(
            {str(s): nn.Conv2d(in_channels[s], mask_dim, kernel_size=1) for s in (8, 4)}
        )
        self.act = nn.GELU()
        self.out_conv = nn.Conv2d(mask_dim, mask_dim, kernel_size=3, padding=1)

    def forward(self, fused_video: torch.Tensor, pyramid: dict[int, torch.Tensor]) -> torch.Tensor:
        """fused_video (B, T, h, w, D) at the fusion stride; pyramid holds the
        backbone's (B, T, C, h, w) levels at strides 8 and 4.
        Returns (B, T, mask_dim, h4, w4)."""
        b, t = fused_video.shape[:2]
        top = fused_video.permute(0, 1, 4, 2, 3).reshape(b * t, fused_video.shape[-1], *fused_video.shape[2:4])
        flat8 = pyramid[8].reshape(b * t, *pyramid[8].shape[2:])
        flat4 = pyramid[4].reshape(b * t, *pyramid[4].shape[2:])
        x = self.lateral_fused(top)
        x = F.interpolate(x, size=flat8.shape[-2:], mode="nearest") + self.laterals["8"](flat8)
        x = self.act(x)
        x = F.interpolate(x, size=flat4.shape[-2:], mode="nearest") + self.laterals["4"](flat4)
        x = self.out_conv(self.act(x))
        return x.reshape(b, t, self.mask_dim, *x.shape[-2:])


class FusionModel(nn.Module):
    def __init__(
        self,
        dim: int = 128,
        heads: int = 8,
        encoder_layers: int = 2,
        decoder_layers: int = 2,
        ffn_dim: int = 512,
        num_queries: int = 50,
        mask_dim: int = 32,
        max_text_len: int = 32,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.dim = dim
        self.num_queries = num_queries
        self.instrument_type_offset = nn.Parameter(torch.zeros(dim))
        self.text_pos = nn.Embedding(max_text_len, dim)
        self.query_embed = nn.Embedding(num_queries, dim)
        self.encoder_stack = nn.ModuleList(
            nn.TransformerEncoderLayer(dim, heads, ffn_dim, dropout=dropout, batch_first=True)
            for _ in range(encoder_layers)
        )
        self.decoder_stack = nn.ModuleList(
            nn.TransformerDecoderLayer(dim, heads, ffn_dim, dropout=dropout, batch_first=True)
            for _ in range(decoder_layers)
        )
        self.reference_head = nn.Linear(dim, 1)
        self.kernel_head = nn.Sequential(
            nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, mask_dim)
        )
        self.mask_bias = nn.Parameter(torch.zeros(1))

    # ------------------------------------------------------------------
    # token assembly

    def assemble(
        self,
        video_tokens: torch.Tensor,  # (T, h, w, D) in the shared space
        instrument_graph: InstrumentGraph,
        text_tokens: torch.Tensor,  # (N, D) in the shared space
        stride: int,
    ) -> MultiModalSequence:
        """Order: video (t-major, row-major), instruments (t-major, x-major), text."""
        t, h, w, d = video_tokens.shape
        if d != self.dim or text_tokens.shape[-1] != self.dim:
            raise ValueError(f"tokens must live in the shared dim {self.dim}")
        device = video_tokens.device
        dtype = video_tokens.dtype

        tt, yy, xx = torch.meshgrid(
            torch.arange(t, dtype=dtype, device=device),
            torch.arange(h, dtype=dtype, device=device),
            torch.arange(w, dtype=dtype, device=device),
            indexing="ij",
        )
        video_pe = spacetime_position_codes(self.dim, tt.reshape(-1), yy.reshape(-1), xx.reshape(-1))
        video_flat = video_tokens.reshape(t * h * w, d) + video_pe

        if len(instrument_graph) > 0:
            inst_feats = instrument_graph.feature_matrix()
            if inst_feats.shape[-1] != self.dim:
                raise ValueError("instrument embeddings must live in the shared dim")
            centers_t = torch.tensor([n.frame_id for n in instrument_graph.nodes], dtype=dtype)
            centers_y = torch.tensor(
                [(n.bbox[1] + n.bbox[3]) / 2.0 / stride for n in instrument_graph.nodes], dtype=dtype
            )
            centers_x = torch.tensor(
                [(n.bbox[0] + n.bbox[2]) / 2.0 / stride for n in instrument_graph.nodes], dtype=dtype
            )
            inst_pe = spacetime_position_codes(self.dim, centers_t, centers_y, centers_x)
            inst_flat = inst_feats + inst_pe + self.instrument_type_offset
        else:
            inst_flat = video_tokens.new_zeros((0, d))

        n = text_tokens.shape[0]
        text_flat = text_tokens + self.text_pos(torch.arange(n, device=device))

        tokens = torch.cat([video_flat, inst_flat, text_flat], dim=0)
        token_type = torch.cat(
            [
                torch.full((video_flat.shape[0],), TOKEN_VIDEO),
                torch.full((inst_flat.shape[0],), TOKEN_INSTRUMENT),
                torch.full((n,), TOKEN_TEXT),
            ]
        )
        return MultiModalSequence(
            tokens=tokens,
            token_type=token_type,
            mask=torch.ones(tokens.shape[0], dtype=torch.bool),
            num_frames=t,
        )

    @staticmethod
    def pad_sequences(sequences: list[MultiModalSequence]) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad to a (B, L_max, D) batch plus a (B, L_max) validity mask."""
        l_max = max(s.tokens.shape[0] for s in sequences)
        d = sequences[0].tokens.shape[1]
        tokens = sequences[0].tokens.new_zeros((len(sequences), l_max, d))
        mask = torch.zeros((len(sequences), l_max), dtype=torch.bool)
        for i, s in enumerate(sequences):
            tokens[i, : s.tokens.shape[0]] = s.tokens
            mask[i, : s.tokens.shape[0]] = True
        return tokens, mask

    # ------------------------------------------------------------------
    # fusion + decoding

    def encode_fuse(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L, D) self-attention stack; padded positions are never attended to.

        A zero-layer stack is the identity.
        """
        key_padding = ~mask
        for layer in self.encoder_stack:
            tokens = layer(tokens, src_key_padding_mask=key_padding)
        return tokens

    def decode_queries(
        self, fused: torch.Tensor, mask: torch.Tensor, num_frames: int
    ) -> torch.Tensor:
        """Issue the same learned queries for every frame; returns (B, T, N_q, D).

        A query's identity across frames comes from its slot index; frames are
        distinguished only by a temporal positional code added to the query.
        """
        b = fused.shape[0]
        dtype = fused.dtype
        queries = self.query_embed.weight.to(dtype)  # (N_q, D)
        t_codes = spacetime_position_codes(
            self.dim,
            torch.arange(num_frames, dtype=dtype, device=fused.device),
            torch.zeros(num_frames, dtype=dtype, device=fused.device),
            torch.zeros(num_frames, dtype=dtype, device=fused.device),
        )  # (T, D)
        tgt = (queries[None, :, :] + t_codes[:, None, :]).reshape(1, -1, self.dim)
        tgt = tgt.expand(b, -1, -1)
        out = tgt
        for layer in self.decoder_stack:
            out = layer(out, fused, memory_key_padding_mask=~mask)
        return out.reshape(b, num_frames, self.num_queries, self.dim)

    def predict_heads(
        self, query_outputs: torch.Tensor, mask_features: torch.Tensor, mask_stride: int = 4
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """query_outputs (B, T, N_q, D), mask_features (B, T, C, h, w) ->
        mask logits (B, N_q, T, h, w) and reference logits (B, N_q, T)."""
        kernels = self.kernel_head(query_outputs)  # (B, T, N_q, C)
        logits = torch.einsum("btqc,btchw->bqthw", kernels, mask_features) + self.mask_bias
        ref = self.reference_head(query_outputs).squeeze(-1)  # (B, T, N_q)
        return logits, ref.permute(0, 2, 1)

    @staticmethod
    def split_predictions(
        mask_logits: torch.Tensor,
        ref_logits: torch.Tensor,
        query_outputs: torch.Tensor,
        mask_stride: int,
    ) -> list[PredictionSet]:
        return [
            PredictionSet(
                query_outputs=query_outputs[b].permute(1, 0, 2),
                mask_logits=mask_logits[b],
                frame_reference_logits=ref_logits[b],
                mask_stride=mask_stride,
            )
            for b in range(mask_logits.shape[0])
        ]
