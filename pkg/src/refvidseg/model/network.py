"""Full referring-segmentation network driven by a RunConfig.

All sub-modules are always constructed (so parameter initialization is
identical across ablation settings); the instrument branch and the relation
module are forward-time toggles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from ..config import RunConfig
from .fusion import FusionModel, MaskFeaturePyramid, PredictionSet
from .graph_relation import GraphRelationParams, grm_forward
from .instruments import Detection, InstrumentEmbedding, InstrumentGraph, ToyPatchEncoder
from .projection import SharedProjection
from .text import ToyTextEncoder, Vocabulary, pad_token_batch
from .video import PYRAMID_STRIDES, ToyVideoEncoder, stack_clip_batch


@dataclass
class ModelInput:
    """One sample window, fully prepared for the forward pass."""

    clip: torch.Tensor  # (T, 3, H, W) float in [0, 1]
    token_ids: list[int]
    detections: list[Detection] = field(default_factory=list)  # sorted (frame, x_min)
    patches: torch.Tensor | None = None  # (K, 3, 224, 224) aligned with detections
    track_keys: list[int] = field(default_factory=list)


class ReferringSegmenter(nn.Module):
    def __init__(self, config: RunConfig, vocab: Vocabulary):
        super().__init__()
        self.config = config
        enc = config.encoder
        self.video_encoder = ToyVideoEncoder(
            pyramid_channels=enc.pyramid_channels,
            stem_channels=enc.stem_channels,
            fusion_stride=enc.fusion_stride,
            temporal_mixing=enc.temporal_mixing,
            pixel_mean=enc.pixel_mean,
            pixel_std=enc.pixel_std,
        )
        self.text_encoder = ToyTextEncoder(
            vocab,
            dim=enc.text_dim,
            num_layers=enc.text_layers,
            num_heads=enc.text_heads,
            ffn_dim=enc.text_ffn,
            max_len=enc.max_text_len,
        )
        self.patch_encoder = ToyPatchEncoder(
            out_dim=config.instrument_branch.patch_dim,
            pool_to=config.instrument_branch.patch_pool,
            widths=config.instrument_branch.patch_widths,
        )
        self.projection = SharedProjection(
            {
                "video": self.video_encoder.feature_dim,
                "text": enc.text_dim,
                "instrument": config.instrument_branch.patch_dim,
            },
            config.shared_dim,
        )
        self.relation = GraphRelationParams(config.shared_dim, layers=config.grm.layers)
        fus = config.fusion
        self.fusion = FusionModel(
            dim=config.shared_dim,
            heads=fus.heads,
            encoder_layers=fus.encoder_layers,
            decoder_layers=fus.decoder_layers,
            ffn_dim=fus.ffn_dim,
            num_queries=fus.num_queries,
            mask_dim=fus.mask_dim,
            max_text_len=enc.max_text_len,
            dropout=fus.dropout,
        )
        self.mask_pyramid = MaskFeaturePyramid(
            fused_dim=config.shared_dim,
            in_channels=dict(zip(PYRAMID_STRIDES, enc.pyramid_channels)),
            mask_dim=fus.mask_dim,
        )
        self.mask_stride = 4

    @property
    def vocab(self) -> Vocabulary:
        return self.text_encoder.vocab

    def forward(self, batch: list[ModelInput]) -> list[PredictionSet]:
        cfg = self.config
        clips = stack_clip_batch([item.clip for item in batch])
        num_frames = clips.shape[1]
        pyramid = self.video_encoder.forward_pyramid(self.video_encoder.normalize(clips))
        stride = self.video_encoder.fusion_stride
        fusion_level = pyramid[stride]  # (B, T, C, h, w)
        video_tokens = self.projection(fusion_level.permute(0, 1, 3, 4, 2), "video")

        ids, text_mask = pad_token_batch([item.token_ids for item in batch])
        per_word, pooled = self.text_encoder(ids, text_mask)
        text_tokens = self.projection(per_word, "text")  # (B, N, D)
        text_nodes = self.projection(pooled, "text")  # (B, D)

        graphs = self._instrument_graphs(batch, text_nodes)

        sequences = []
        for i, item in enumerate(batch):
            n_words = int(text_mask[i].sum())
            sequences.append(
                self.fusion.assemble(video_tokens[i], graphs[i], text_tokens[i, :n_words], stride)
            )
        tokens, pad_mask = self.fusion.pad_sequences(sequences)
        fused = self.fusion.encode_fuse(tokens, pad_mask)
        query_outputs = self.fusion.decode_queries(fused, pad_mask, num_frames)
        # the video block sits at the front of every sequence, same length batch-wide
        t, h, w = fusion_level.shape[1], fusion_level.shape[3], fusion_level.shape[4]
        fused_video = fused[:, : t * h * w].reshape(-1, t, h, w, self.config.shared_dim)
        mask_features = self.mask_pyramid(fused_video, pyramid)
        mask_logits, ref_logits = self.fusion.predict_heads(query_outputs, mask_features)
        return self.fusion.split_predictions(mask_logits, ref_logits, query_outputs, self.mask_stride)

    def _instrument_graphs(
        self, batch: list[ModelInput], text_nodes: torch.Tensor
    ) -> list[InstrumentGraph]:
        cfg = self.config
        if not cfg.instrument_branch.enabled:
            return [InstrumentGraph(nodes=[]) for _ in batch]
        counts = [0 if item.patches is None else item.patches.shape[0] for item in batch]
        total = sum(counts)
        if total == 0:
            return [InstrumentGraph(nodes=[]) for _ in batch]
        all_patches = torch.cat([item.patches for item in batch if item.patches is not None])
        embedded = self.projection(self.patch_encoder(all_patches), "instrument")
        graphs = []
        offset = 0
        for i, item in enumerate(batch):
            k = counts[i]
            vectors = embedded[offset : offset + k]
            offset += k
            if cfg.grm.enabled and k > 0:
                vectors = grm_forward(
                    text_nodes[i],
                    vectors,
                    self.relation,
                    propagation_enabled=cfg.grm.graph_propagation_enabled,
                )
            nodes = [
                InstrumentEmbedding(
                    vector=vectors[j],
                    frame_id=item.detections[j].frame_id,
                    bbox=item.detections[j].bbox,
                    track_key=item.track_keys[j] if item.track_keys else j,
                )
                for j in range(k)
            ]
            graphs.append(InstrumentGraph(nodes=nodes))
        return graphs
