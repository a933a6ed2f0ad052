"""Checkpoint inference on a directory of frames, with overlay rendering."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .config import RunConfig
from .model.fusion import select_reference, upsample_mask_logits
from .model.instruments import ThresholdProvider, assign_track_keys, cap_detections, crop_resize, detect
from .model.network import ModelInput, ReferringSegmenter

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
OVERLAY_COLOR = np.array([64, 200, 255], dtype=np.float32)  # fill
OUTLINE_COLOR = np.array([255, 255, 255], dtype=np.float32)
OVERLAY_ALPHA = 0.5


def list_frames(frames_dir: str | Path) -> list[Path]:
    frames = sorted(
        p for p in Path(frames_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not frames:
        raise FileNotFoundError(f"no frame images found in {frames_dir}")
    return frames


def _load_images(paths: list[Path]) -> list[np.ndarray]:
    images = []
    for path in paths:
        try:
            with Image.open(path) as img:
                images.append(np.array(img.convert("RGB")))
        except OSError as exc:
            raise OSError(f"unreadable frame {path}: {exc}") from exc
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ValueError(f"mixed frame sizes in {paths[0].parent}: {sorted(shapes)}")
    return images


def _window_input(
    images: list[np.ndarray], expression: str, model: ReferringSegmenter, config: RunConfig
) -> ModelInput:
    clip = torch.stack([torch.as_tensor(img) for img in images]).permute(0, 3, 1, 2).float() / 255.0
    provider = ThresholdProvider(
        threshold=config.detector.brightness_threshold, min_area=config.detector.min_area
    )
    detections, patches, keys = [], None, []
    if config.instrument_branch.enabled:
        per_frame = [
            cap_detections(detect(pos, images[pos], provider), config.detector.max_per_frame)
            for pos in range(len(images))
        ]
        keys_per_frame = assign_track_keys(per_frame, config.detector.track_iou_threshold)
        flat = [
            (type(det)(pos, det.bbox, det.confidence, det.source), key)
            for pos in range(len(images))
            for det, key in zip(per_frame[pos], keys_per_frame[pos])
        ]
        flat.sort(key=lambda dk: (dk[0].frame_id, dk[0].bbox[0], dk[0].bbox[1]))
        detections = [d for d, _ in flat]
        keys = [k for _, k in flat]
        if detections:
            patches = torch.stack([crop_resize(images[d.frame_id], d.bbox) for d in detections])
    return ModelInput(
        clip=clip,
        token_ids=model.vocab.encode(expression),
        detections=detections,
        patches=patches,
        track_keys=keys,
    )


def render_overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Alpha-blend the mask onto the frame and outline its boundary."""
    out = image.astype(np.float32).copy()
    region = mask.astype(bool)
    out[region] = (1 - OVERLAY_ALPHA) * out[region] + OVERLAY_ALPHA * OVERLAY_COLOR
    interior = ndimage.binary_erosion(region, iterations=1, border_value=0)
    outline = region & ~interior
    out[outline] = OUTLINE_COLOR
    return out.clip(0, 255).astype(np.uint8)


def run_inference(
    model: ReferringSegmenter,
    config: RunConfig,
    frames_dir: str | Path,
    expression: str,
    out_dir: str | Path,
) -> list[Path]:
    """Predict the referred mask for every frame; writes masks + overlays.

    Returns the list of written mask paths (one per input frame).
    """
    frame_paths = list_frames(frames_dir)
    images = _load_images(frame_paths)
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    model.eval()

    window = config.train.window
    written = []
    for start in range(0, len(images), window):
        chunk = images[start : start + window]
        pad = window - len(chunk)
        padded = chunk + [chunk[-1]] * pad
        model_input = _window_input(padded, expression, model, config)
        with torch.no_grad():
            prediction = model([model_input])[0]
        chosen = select_reference(prediction)
        logits = upsample_mask_logits(prediction.mask_logits[chosen], chunk[0].shape[:2])
        masks = (torch.sigmoid(logits) > 0.5).numpy().astype(np.uint8)
        for offset in range(len(chunk)):
            frame_idx = start + offset
            stem = frame_paths[frame_idx].stem
            mask = masks[offset]
            mask_path = out / "masks" / f"{stem}.png"
            Image.fromarray(mask * 255).save(mask_path)
            overlay = render_overlay(images[frame_idx], mask)
            Image.fromarray(overlay).save(out / "overlays" / f"{stem}.png")
            written.append(mask_path)
    return written
