"""Deterministic synthetic clip generator.

Each clip holds a few colored shapes drifting on a dark canvas with exact
masks and tight boxes. Expressions are templated from object attributes; a
configurable fraction of clips contains two identical-looking objects whose
expressions can only be resolved by screen side or motion, which is the case
the relation module is supposed to win.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rle import encode_rle
from .schema import (
    DatasetIndex,
    FrameRecord,
    InstrumentInstance,
    MaskAnnotation,
    ReferringSample,
    VideoRecord,
    save_manifest,
)

COLOR_RGB = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 90, 230),
    "yellow": (230, 210, 40),
    "magenta": (210, 50, 200),
    "cyan": (40, 200, 210),
}

# motion verb -> unit direction (dx, dy) in pixel coordinates
MOTIONS = {
    "idle": (0.0, 0.0),
    "moving left": (-1.0, 0.0),
    "moving right": (1.0, 0.0),
    "moving up": (0.0, -1.0),
    "moving down": (0.0, 1.0),
}


class GenerationError(ValueError):
    """Raised when objects cannot be placed on the configured canvas."""


@dataclass
class SyntheticConfig:
    seed: int = 0
    num_clips: int = 10
    frames_per_clip: int = 3
    canvas: tuple[int, int] = (64, 96)  # (H, W)
    objects_per_clip: tuple[int, int] = (2, 4)  # inclusive range
    shapes: tuple[str, ...] = ("circle", "square", "triangle")
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow", "magenta", "cyan")
    motions: tuple[str, ...] = ("idle", "moving left", "moving right", "moving up", "moving down")
    same_type_fraction: float = 0.5
    size_range: tuple[int, int] = (8, 12)  # object half-extent in pixels
    speed_range: tuple[float, float] = (1.5, 3.5)  # pixels per frame when moving

    def validate(self):
        if not 0.0 <= self.same_type_fraction <= 1.0:
            raise ValueError(f"same_type_fraction must be in [0,1], got {self.same_type_fraction}")
        for name, rng in (
            ("objects_per_clip", self.objects_per_clip),
            ("size_range", self.size_range),
            ("speed_range", self.speed_range),
        ):
            if rng[0] > rng[1]:
                raise ValueError(f"{name} range {rng} is empty")
        if self.num_clips < 0 or self.frames_per_clip < 1:
            raise ValueError("num_clips must be >= 0 and frames_per_clip >= 1")
        if not self.shapes or not self.colors or not self.motions:
            raise ValueError("shape/color/motion vocabularies must be nonempty")
        if self.same_type_fraction > 0 and self.objects_per_clip[1] < 2:
            raise ValueError("same-type clips need objects_per_clip to allow >= 2 objects")
        h, w = self.canvas
        r_max = self.size_range[1]
        if min(h, w) < 2 * r_max + 6:
            raise GenerationError(
                f"canvas {self.canvas} too small for objects of half-extent {r_max}"
            )
        unknown = [c for c in self.colors if c not in COLOR_RGB]
        if unknown:
            raise ValueError(f"unknown colors {unknown}")
        unknown = [m for m in self.motions if m not in MOTIONS]
        if unknown:
            raise ValueError(f"unknown motions {unknown}")


def rasterize_shape(shape: str, cx: int, cy: int, r: int, height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    if shape == "circle":
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    elif shape == "square":
        mask = (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r)
    elif shape == "triangle":  # apex up
        rel = (ys - (cy - r)) / (2.0 * r)
        mask = (ys >= cy - r) & (ys <= cy + r) & (np.abs(xs - cx) <= r * rel)
    else:
        raise ValueError(f"unknown shape '{shape}'")
    return mask.astype(np.uint8)


@dataclass
class _Object:
    shape: str
    color: str
    r: int
    motion: str
    start: tuple[float, float] = (0.0, 0.0)  # (cx, cy)
    speed: float = 0.0
    side: str = ""  # screen side at frame 0

    def center_at(self, t: int) -> tuple[int, int]:
        dx, dy = MOTIONS[self.motion]
        return (
            int(round(self.start[0] + dx * self.speed * t)),
            int(round(self.start[1] + dy * self.speed * t)),
        )


def _bbox_at(obj: _Object, t: int) -> tuple[int, int, int, int]:
    cx, cy = obj.center_at(t)
    return (cx - obj.r, cy - obj.r, cx + obj.r + 1, cy + obj.r + 1)


def _boxes_clear(a, b, gap: int = 2) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax1 + gap <= bx0 or bx1 + gap <= ax0 or ay1 + gap <= by0 or by1 + gap <= ay0


def _place_object(
    rng: np.random.Generator,
    obj: _Object,
    placed: list[_Object],
    cfg: SyntheticConfig,
    side: str | None,
) -> bool:
    """Sample a start position/speed keeping the object in-bounds, clear of others,
    and (when ``side`` is given) wholly on that half of the canvas at every frame."""
    h, w = cfg.canvas
    margin = obj.r + 2
    if side == "left":
        lo_x, hi_x = margin, w // 2 - margin
    elif side == "right":
        lo_x, hi_x = w // 2 + margin, w - margin
    else:
        lo_x, hi_x = margin, w - margin
    if hi_x <= lo_x:
        return False
    for _ in range(200):
        cx = float(rng.integers(lo_x, hi_x))
        cy = float(rng.integers(margin, h - margin))
        speed = float(rng.uniform(*cfg.speed_range)) if obj.motion != "idle" else 0.0
        candidate = _Object(obj.shape, obj.color, obj.r, obj.motion, (cx, cy), speed)
        ok = True
        for t in range(cfg.frames_per_clip):
            x0, y0, x1, y1 = _bbox_at(candidate, t)
            if x0 < 1 or y0 < 1 or x1 > w - 1 or y1 > h - 1:
                ok = False
                break
            if side == "left" and x1 > w // 2 - 1:
                ok = False
                break
            if side == "right" and x0 < w // 2 + 1:
                ok = False
                break
            if any(not _boxes_clear(_bbox_at(candidate, t), _bbox_at(other, t)) for other in placed):
                ok = False
                break
        if ok:
            obj.start, obj.speed = candidate.start, candidate.speed
            return True
    return False


def _expression(obj: _Object, mode: str, rng: np.random.Generator) -> str:
    """mode: 'unique' | 'side' | 'motion'."""
    if mode == "side":
        return f"the {obj.color} {obj.shape} on the {obj.side} is {obj.motion}"
    if mode == "motion":
        return f"the {obj.color} {obj.shape} that is {obj.motion}"
    template = rng.integers(0, 3)
    if template == 0:
        return f"{obj.color} {obj.shape} is {obj.motion}"
    if template == 1:
        return f"the {obj.color} {obj.shape} on the {obj.side} is {obj.motion}"
    return f"the {obj.color} {obj.shape} is {obj.motion}"


def _build_clip(
    rng: np.random.Generator, cfg: SyntheticConfig, clip_idx: int, same_type: bool
) -> tuple[list[_Object], list[str]]:
    """Returns placed objects and the expression mode per object."""
    h, w = cfg.canvas
    combos = [(c, s) for c in cfg.colors for s in cfg.shapes]
    for _restart in range(50):
        lo, hi = cfg.objects_per_clip
        n = int(rng.integers(max(lo, 2) if same_type else lo, hi + 1))
        idx = rng.permutation(len(combos))
        chosen = [combos[i] for i in idx[:n]]
        if same_type:
            chosen[1] = chosen[0]  # duplicate the first (color, shape)
        disamb = str(rng.choice(["side", "motion"])) if same_type else ""

        objects: list[_Object] = []
        modes: list[str] = []
        failed = False
        for j, (color, shape) in enumerate(chosen):
            r = int(rng.integers(cfg.size_range[0], cfg.size_range[1] + 1))
            motion = str(rng.choice(cfg.motions))
            side = None
            mode = "unique"
            if same_type and j < 2:
                if disamb == "side":
                    side = "left" if j == 0 else "right"
                    mode = "side"
                else:
                    choices = list(cfg.motions)
                    if j == 1:
                        choices = [m for m in cfg.motions if m != objects[0].motion]
                    motion = str(rng.choice(choices))
                    mode = "motion"
            obj = _Object(shape, color, r, motion)
            if not _place_object(rng, obj, objects, cfg, side):
                failed = True
                break
            objects.append(obj)
            modes.append(mode)
        if failed:
            continue
        for obj in objects:
            obj.side = "left" if obj.start[0] < w / 2 else "right"
        return objects, modes
    raise GenerationError(
        f"clip {clip_idx}: could not place {cfg.objects_per_clip} objects on canvas {cfg.canvas}"
    )


def generate_synthetic(config: SyntheticConfig, out_dir: str | Path) -> DatasetIndex:
    """Generate clips + manifest under ``out_dir``; deterministic for a fixed config."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    num_same = int(round(config.num_clips * config.same_type_fraction))
    same_flags = np.array([i < num_same for i in range(config.num_clips)])
    rng.shuffle(same_flags)

    h, w = config.canvas
    videos: list[VideoRecord] = []
    samples: list[ReferringSample] = []
    for clip_idx in range(config.num_clips):
        video_id = f"clip{clip_idx:04d}"
        objects, modes = _build_clip(rng, config, clip_idx, bool(same_flags[clip_idx]))

        frames: list[FrameRecord] = []
        instruments = [
            InstrumentInstance(
                instance_id=f"{video_id}_obj{j}",
                category=f"{obj.color} {obj.shape}",
                per_frame={},
            )
            for j, obj in enumerate(objects)
        ]
        clip_dir = out / video_id
        clip_dir.mkdir(exist_ok=True)
        for t in range(config.frames_per_clip):
            image = np.zeros((h, w, 3), dtype=np.uint8)
            for j, obj in enumerate(objects):
                cx, cy = obj.center_at(t)
                mask = rasterize_shape(obj.shape, cx, cy, obj.r, h, w)
                image[mask == 1] = COLOR_RGB[obj.color]
                ys, xs = np.nonzero(mask)
                bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
                instruments[j].per_frame[t] = MaskAnnotation(bbox=bbox, rle=encode_rle(mask))
            rel_path = f"{video_id}/frame{t:03d}.png"
            Image.fromarray(image).save(clip_dir / f"frame{t:03d}.png")
            frames.append(FrameRecord(frame_id=t, image_path=rel_path, height=h, width=w))

        videos.append(
            VideoRecord(
                video_id=video_id,
                sequence_number=clip_idx,
                frames=frames,
                instruments=instruments,
            )
        )
        for j, (obj, mode) in enumerate(zip(objects, modes)):
            samples.append(
                ReferringSample(
                    sample_id=f"{video_id}_s{j:02d}",
                    video_id=video_id,
                    expression=_expression(obj, mode, rng),
                    target_instance_id=f"{video_id}_obj{j}",
                    frame_range=(0, config.frames_per_clip - 1),
                )
            )

    index = DatasetIndex(
        dataset_name="synthetic",
        split_tag="train",
        root=out,
        videos=videos,
        samples=samples,
    )
    save_manifest(index, out)
    return index


def same_type_sample_ids(index: DatasetIndex) -> set[str]:
    """Samples whose target shares its category with another object in the same clip.

    These are exactly the expressions that are resolvable only by position or
    motion; they form the disambiguation subset for evaluation.
    """
    ids = set()
    for sample in index.samples:
        video = index.video_by_id(sample.video_id)
        target = video.instrument_by_id(sample.target_instance_id)
        twins = [
            i
            for i in video.instruments
            if i.category == target.category and i.instance_id != target.instance_id
        ]
        if twins:
            ids.add(sample.sample_id)
    return ids
