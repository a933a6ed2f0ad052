"""Sample preparation: frames, detections, patches and supervision targets.

Everything here is parameter-free data plumbing, so it runs outside autograd
and can be cached across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .config import RunConfig
from .data.ops import FrameWindow
from .data.schema import DatasetIndex, ReferringSample, VideoRecord
from .model.instruments import (
    ExternalProvider,
    GroundTruthProvider,
    ThresholdProvider,
    assign_track_keys,
    cap_detections,
    crop_resize,
    detect,
)
from .model.network import ModelInput
from .model.text import Vocabulary


class FrameCache:
    """Decoded frame images keyed by absolute path."""

    def __init__(self):
        self._cache: dict[str, np.ndarray] = {}

    def load(self, root, image_path: str) -> np.ndarray:
        key = str(root / image_path)
        if key not in self._cache:
            with Image.open(key) as img:
                self._cache[key] = np.array(img.convert("RGB"))
        return self._cache[key]


def resize_scale(height: int, width: int, min_short: int, max_long: int) -> float:
    """Scale so the shorter side reaches ``min_short`` unless that would push the
    longer side past ``max_long``, in which case the longer side pins the scale."""
    short, long = min(height, width), max(height, width)
    scale = min_short / short
    if long * scale > max_long:
        scale = max_long / long
    return scale


def scaled_size(height: int, width: int, scale: float) -> tuple[int, int]:
    return max(1, round(height * scale)), max(1, round(width * scale))


def _resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    tensor = torch.as_tensor(image).permute(2, 0, 1)[None].float()
    out = F.interpolate(tensor, size=size, mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).clamp(0, 255).byte().numpy()


def _resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    tensor = torch.as_tensor(mask)[None, None].float()
    out = F.interpolate(tensor, size=size, mode="nearest")
    return out[0, 0].byte().numpy()


def _scale_bbox(bbox, scale: float, size: tuple[int, int]) -> tuple[int, int, int, int]:
    h, w = size
    x0 = min(int(bbox[0] * scale), w - 1)
    y0 = min(int(bbox[1] * scale), h - 1)
    x1 = max(min(round(bbox[2] * scale), w), x0 + 1)
    y1 = max(min(round(bbox[3] * scale), h), y0 + 1)
    return (x0, y0, int(x1), int(y1))


def build_provider(config: RunConfig, video: VideoRecord, root):
    name = config.detector.provider
    if name == "ground_truth":
        return GroundTruthProvider(video)
    if name == "threshold_detector":
        return ThresholdProvider(
            threshold=config.detector.brightness_threshold, min_area=config.detector.min_area
        )
    if name == "external":
        sidecar = f"{config.detector.sidecar_dir or root}/{video.video_id}.json"
        return ExternalProvider(sidecar)
    raise ValueError(f"unknown detector provider '{name}'")


@dataclass
class TargetSet:
    """Supervision for one window: per-instrument mask stacks at input resolution."""

    masks: torch.Tensor  # (M, T, H, W) float 0/1
    instance_ids: list[str]
    referred_index: int
    real_frames: torch.Tensor  # (T,) bool, False on repeat-padded positions
    original_size: tuple[int, int]  # (H, W) before any resize


def prepare_sample(
    index: DatasetIndex,
    sample: ReferringSample,
    window: FrameWindow,
    config: RunConfig,
    vocab: Vocabulary,
    cache: FrameCache,
) -> tuple[ModelInput, TargetSet]:
    video = index.video_by_id(sample.video_id)
    frames = [video.frame_by_id(fid) for fid in window.frame_ids]
    original_size = (frames[0].height, frames[0].width)

    scale = 1.0
    size = original_size
    if config.train.resize_enabled:
        scale = resize_scale(*original_size, config.train.resize_min_short, config.train.resize_max_long)
        size = scaled_size(*original_size, scale)

    images = []
    for frame in frames:
        image = cache.load(index.root, frame.image_path)
        if image.shape[:2] != original_size:
            raise ValueError(
                f"frame {frame.image_path}: file is {image.shape[:2]}, manifest says {original_size}"
            )
        if scale != 1.0:
            image = _resize_image(image, size)
        images.append(image)

    clip = torch.stack([torch.as_tensor(img) for img in images]).permute(0, 3, 1, 2).float() / 255.0

    # detections + patches (skipped entirely when the branch is off)
    detections, patches, track_keys = [], None, []
    if config.instrument_branch.enabled:
        provider = build_provider(config, video, index.root)
        per_frame = []
        for pos, frame in enumerate(frames):
            dets = detect(frame.frame_id, images[pos], provider)
            if config.detector.provider == "ground_truth" and scale != 1.0:
                dets = [
                    type(d)(d.frame_id, _scale_bbox(d.bbox, scale, size), d.confidence, d.source)
                    for d in dets
                ]
            per_frame.append(cap_detections(dets, config.detector.max_per_frame))
        keys_per_frame = assign_track_keys(per_frame, config.detector.track_iou_threshold)
        flat, keys = [], []
        for pos in range(len(frames)):
            for det, key in zip(per_frame[pos], keys_per_frame[pos]):
                # position index within the window, not the raw frame id, so the
                # fusion temporal codes line up with the video tokens
                flat.append(type(det)(pos, det.bbox, det.confidence, det.source))
                keys.append(key)
        order = sorted(range(len(flat)), key=lambda i: (flat[i].frame_id, flat[i].bbox[0], flat[i].bbox[1]))
        detections = [flat[i] for i in order]
        track_keys = [keys[i] for i in order]
        if detections:
            patches = torch.stack(
                [crop_resize(images[d.frame_id], d.bbox) for d in detections]
            )

    model_input = ModelInput(
        clip=clip,
        token_ids=vocab.encode(sample.expression),
        detections=detections,
        patches=patches,
        track_keys=track_keys,
    )

    # targets: every instrument with a mask on some real frame of the window
    real = [pos < len(window.frame_ids) - window.num_padded for pos in range(len(window.frame_ids))]
    target_masks, instance_ids = [], []
    for inst in video.instruments:
        if not any(fid in inst.per_frame for fid, r in zip(window.frame_ids, real) if r):
            continue
        stack = []
        for fid in window.frame_ids:
            if fid in inst.per_frame:
                mask = inst.decode_mask(video.frame_by_id(fid))
                if scale != 1.0:
                    mask = _resize_mask(mask, size)
            else:
                mask = np.zeros(size, dtype=np.uint8)
            stack.append(torch.as_tensor(mask))
        target_masks.append(torch.stack(stack).float())
        instance_ids.append(inst.instance_id)
    if sample.target_instance_id not in instance_ids:
        raise ValueError(
            f"sample '{sample.sample_id}': referred instance has no mask in window {window.frame_ids}"
        )
    targets = TargetSet(
        masks=torch.stack(target_masks),
        instance_ids=instance_ids,
        referred_index=instance_ids.index(sample.target_instance_id),
        real_frames=torch.tensor(real, dtype=torch.bool),
        original_size=original_size,
    )
    return model_input, targets
