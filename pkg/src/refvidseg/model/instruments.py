"""Object-level branch: per-frame detection, patch embedding, graph assembly.

Detection is a provider interface. The default provider replays annotated
ground-truth boxes; a brightness-threshold provider handles synthetic frames
without annotations; an external provider reads precomputed boxes from a
sidecar JSON file. Detected regions are cropped, resized to 224x224, embedded
by a small convolutional encoder, and projected into the shared space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from torch import nn

from ..data.schema import VideoRecord

PATCH_SIZE = 224


@dataclass(frozen=True)
class Detection:
    frame_id: int
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (exclusive max)
    confidence: float
    source: str  # "gt" | "detector"


@dataclass
class InstrumentEmbedding:
    vector: torch.Tensor  # (D,)
    frame_id: int
    bbox: tuple[int, int, int, int]
    track_key: int


@dataclass
class InstrumentGraph:
    """Node set of object-level embeddings; relations live in the multimodal graph."""

    nodes: list[InstrumentEmbedding]

    def __len__(self) -> int:
        return len(self.nodes)

    def feature_matrix(self) -> torch.Tensor:
        if not self.nodes:
            return torch.zeros((0, 0))
        return torch.stack([n.vector for n in self.nodes])


# ---------------------------------------------------------------------------
# detection providers


class GroundTruthProvider:
    """Replays annotated boxes; confidence is exactly 1.0."""

    def __init__(self, video: VideoRecord):
        self.video = video

    def detect(self, frame_id: int, image=None) -> list[Detection]:
        dets = []
        for inst in self.video.instruments:
            ann = inst.per_frame.get(frame_id)
            if ann is not None:
                dets.append(Detection(frame_id, tuple(ann.bbox), 1.0, "gt"))
        return dets


class ThresholdProvider:
    """Connected components of bright-over-background pixels (synthetic frames)."""

    def __init__(self, threshold: int = 40, min_area: int = 16):
        self.threshold = threshold
        self.min_area = min_area

    def detect(self, frame_id: int, image) -> list[Detection]:
        bright = np.asarray(image).max(axis=2) > self.threshold
        labels, count = ndimage.label(bright)
        dets = []
        for region in range(1, count + 1):
            ys, xs = np.nonzero(labels == region)
            if ys.size < self.min_area:
                continue
            bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
            dets.append(Detection(frame_id, bbox, 1.0, "detector"))
        return dets


class ExternalProvider:
    """Reads precomputed per-frame boxes from a sidecar JSON file."""

    def __init__(self, sidecar_path: str | Path):
        path = Path(sidecar_path)
        if not path.is_file():
            raise FileNotFoundError(f"detection sidecar not found: {path}")
        self.by_frame = {int(k): v for k, v in json.loads(path.read_text()).items()}

    def detect(self, frame_id: int, image=None) -> list[Detection]:
        return [
            Detection(frame_id, tuple(int(v) for v in d["bbox"]), float(d["confidence"]), "detector")
            for d in self.by_frame.get(frame_id, [])
        ]


def detect(frame_id: int, image, provider) -> list[Detection]:
    """Run one provider on one frame, ordered by x_min for stable downstream identity."""
    dets = provider.detect(frame_id, image)
    return sorted(dets, key=lambda d: (d.bbox[0], d.bbox[1]))


def cap_detections(dets: list[Detection], max_per_frame: int) -> list[Detection]:
    """Keep the highest-confidence boxes (stable order on ties)."""
    if len(dets) <= max_per_frame:
        return dets
    ranked = sorted(enumerate(dets), key=lambda kv: (-kv[1].confidence, kv[0]))
    keep = sorted(idx for idx, _ in ranked[:max_per_frame])
    return [dets[i] for i in keep]


# ---------------------------------------------------------------------------
# crop + embed


def crop_resize(frame, bbox: tuple[int, int, int, int], size: int = PATCH_SIZE) -> torch.Tensor:
    """Crop ``bbox`` from an (H, W, 3) frame and bilinearly resize to (3, size, size).

    Aspect ratio is not preserved. Output is float in [0, 1].
    """
    x0, y0, x1, y1 = bbox
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"zero-area bbox {bbox}")
    frame_t = torch.as_tensor(np.asarray(frame))
    if frame_t.dtype == torch.uint8:
        frame_t = frame_t.float() / 255.0
    h, w = frame_t.shape[0], frame_t.shape[1]
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"bbox {bbox} outside {h}x{w} frame")
    patch = frame_t[y0:y1, x0:x1].permute(2, 0, 1)[None]  # (1, 3, bh, bw)
    resized = F.interpolate(patch, size=(size, size), mode="bilinear", align_corners=False)
    return resized[0]


class ToyPatchEncoder(nn.Module):
    """Small convolutional embedder for 224x224 instrument patches."""

    def __init__(self, out_dim: int = 64, pool_to: int = 56, widths: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        self.out_dim = out_dim
        self.pool_to = pool_to
        c1, c2, c3 = widths
        self.convs = nn.Sequential(
            nn.Conv2d(3, c1, 3, stride=2, padding=1),
            nn.GroupNorm(4, c1),
            nn.GELU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.GroupNorm(4, c2),
            nn.GELU(),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1),
            nn.GroupNorm(4, c3),
            nn.GELU(),
        )
        self.head = nn.Linear(c3, out_dim)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """(K, 3, 224, 224) -> (K, out_dim)."""
        if patches.shape[0] == 0:
            return patches.new_zeros((0, self.out_dim))
        x = F.adaptive_avg_pool2d(patches, self.pool_to)
        x = self.convs(x)
        x = x.mean(dim=(2, 3))
        return self.head(x)


# ---------------------------------------------------------------------------
# cross-frame association + graph


def bbox_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0, ix1 - ix0) * max(0, iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def assign_track_keys(dets_by_frame: list[list[Detection]], iou_threshold: float = 0.3) -> list[list[int]]:
    """Greedy frame-to-frame IoU association; returns a track key per detection."""
    next_key = 0
    keys: list[list[int]] = []
    prev: list[tuple[Detection, int]] = []
    for dets in dets_by_frame:
        frame_keys = [-1] * len(dets)
        candidates = []
        for i, det in enumerate(dets):
            for j, (pdet, _) in enumerate(prev):
                iou = bbox_iou(det.bbox, pdet.bbox)
                if iou >= iou_threshold:
                    candidates.append((iou, i, j))
        used_i, used_j = set(), set()
        for iou, i, j in sorted(candidates, key=lambda c: -c[0]):
            if i in used_i or j in used_j:
                continue
            frame_keys[i] = prev[j][1]
            used_i.add(i)
            used_j.add(j)
        for i in range(len(dets)):
            if frame_keys[i] < 0:
                frame_keys[i] = next_key
                next_key += 1
        keys.append(frame_keys)
        prev = list(zip(dets, frame_keys))
    return keys


def build_instrument_graph(embeddings: list[InstrumentEmbedding]) -> InstrumentGraph:
    """Node order is stable by (frame_id, bbox x_min)."""
    ordered = sorted(embeddings, key=lambda e: (e.frame_id, e.bbox[0], e.bbox[1]))
    return InstrumentGraph(nodes=list(ordered))
