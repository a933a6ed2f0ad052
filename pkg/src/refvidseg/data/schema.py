"""Annotation schema: manifest types, loading, and validation.

A dataset lives in a root directory holding one ``manifest.json`` plus the
frame images it references. Masks are stored inline as run-length strings at
frame resolution; boxes are tight ``[x_min, y_min, x_max, y_max]`` pixel
rectangles with exclusive maxima.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rle import decode_rle

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class DatasetError(ValueError):
    """Raised on any manifest schema or cross-reference violation."""


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    image_path: str
    height: int
    width: int


@dataclass(frozen=True)
class MaskAnnotation:
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (exclusive max)
    rle: str


@dataclass
class InstrumentInstance:
    instance_id: str
    category: str
    per_frame: dict[int, MaskAnnotation]

    def decode_mask(self, frame: FrameRecord) -> np.ndarray:
        return decode_rle(self.per_frame[frame.frame_id].rle, frame.height, frame.width)


@dataclass
class ReferringSample:
    sample_id: str
    video_id: str
    expression: str
    target_instance_id: str
    frame_range: tuple[int, int]  # inclusive [first, last] frame ids


@dataclass
class VideoRecord:
    video_id: str
    sequence_number: int
    frames: list[FrameRecord]
    instruments: list[InstrumentInstance]

    def frame_by_id(self, frame_id: int) -> FrameRecord:
        return self._frame_index[frame_id]

    def instrument_by_id(self, instance_id: str) -> InstrumentInstance:
        return self._instrument_index[instance_id]

    def __post_init__(self):
        self._frame_index = {f.frame_id: f for f in self.frames}
        self._instrument_index = {i.instance_id: i for i in self.instruments}


@dataclass
class DatasetIndex:
    dataset_name: str
    split_tag: str
    root: Path
    videos: list[VideoRecord]
    samples: list[ReferringSample]

    def video_by_id(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)


def tokenize(expression: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    cleaned = "".join(c if c.isalnum() or c.isspace() else " " for c in expression.lower())
    return cleaned.split()


# ---------------------------------------------------------------------------
# manifest parsing


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise DatasetError(f"{where}: missing required key '{key}'")
    return obj[key]


def _parse_frame(raw: dict, where: str) -> FrameRecord:
    frame = FrameRecord(
        frame_id=int(_require(raw, "frame_id", where)),
        image_path=str(_require(raw, "image_path", where)),
        height=int(_require(raw, "height", where)),
        width=int(_require(raw, "width", where)),
    )
    if frame.height < 1 or frame.width < 1:
        raise DatasetError(f"{where}: non-positive frame size {frame.height}x{frame.width}")
    return frame


def _parse_instrument(raw: dict, where: str) -> InstrumentInstance:
    per_frame = {}
    for frame_key, ann in _require(raw, "per_frame", where).items():
        bbox = tuple(int(v) for v in _require(ann, "bbox", where))
        if len(bbox) != 4:
            raise DatasetError(f"{where}: bbox must have 4 entries, got {len(bbox)}")
        per_frame[int(frame_key)] = MaskAnnotation(bbox=bbox, rle=str(_require(ann, "rle", where)))
    return InstrumentInstance(
        instance_id=str(_require(raw, "instance_id", where)),
        category=str(_require(raw, "category", where)),
        per_frame=per_frame,
    )


def _parse_video(raw: dict) -> VideoRecord:
    video_id = str(_require(raw, "video_id", "video"))
    where = f"video '{video_id}'"
    frames = [_parse_frame(f, where) for f in _require(raw, "frames", where)]
    frame_ids = [f.frame_id for f in frames]
    if any(b <= a for a, b in zip(frame_ids, frame_ids[1:])):
        raise DatasetError(f"{where}: frame_ids must be strictly increasing, got {frame_ids}")
    instruments = [_parse_instrument(i, where) for i in _require(raw, "instruments", where)]
    seen = set()
    for inst in instruments:
        if inst.instance_id in seen:
            raise DatasetError(f"{where}: duplicate instance_id '{inst.instance_id}'")
        seen.add(inst.instance_id)
    return VideoRecord(
        video_id=video_id,
        sequence_number=int(_require(raw, "sequence_number", where)),
        frames=frames,
        instruments=instruments,
    )


def _parse_sample(raw: dict) -> ReferringSample:
    sample_id = str(_require(raw, "sample_id", "sample"))
    where = f"sample '{sample_id}'"
    frame_range = tuple(int(v) for v in _require(raw, "frame_range", where))
    if len(frame_range) != 2 or frame_range[0] > frame_range[1]:
        raise DatasetError(f"{where}: invalid frame_range {frame_range}")
    expression = str(_require(raw, "expression", where))
    if not tokenize(expression):
        raise DatasetError(f"{where}: expression is empty after tokenization")
    return ReferringSample(
        sample_id=sample_id,
        video_id=str(_require(raw, "video_id", where)),
        expression=expression,
        target_instance_id=str(_require(raw, "target_instance_id", where)),
        frame_range=frame_range,
    )


def _validate_masks(video: VideoRecord):
    """Check that every mask decodes at frame resolution and its bbox is tight."""
    for inst in video.instruments:
        for frame_id, ann in inst.per_frame.items():
            if frame_id not in video._frame_index:
                raise DatasetError(
                    f"video '{video.video_id}': instrument '{inst.instance_id}' annotates "
                    f"unknown frame {frame_id}"
                )
            frame = video.frame_by_id(frame_id)
            try:
                mask = decode_rle(ann.rle, frame.height, frame.width)
            except ValueError as exc:
                raise DatasetError(
                    f"video '{video.video_id}': instrument '{inst.instance_id}' frame "
                    f"{frame_id}: {exc}"
                ) from exc
            x0, y0, x1, y1 = ann.bbox
            if not (0 <= x0 < x1 <= frame.width and 0 <= y0 < y1 <= frame.height):
                raise DatasetError(
                    f"video '{video.video_id}': instrument '{inst.instance_id}' frame "
                    f"{frame_id}: bbox {ann.bbox} outside {frame.height}x{frame.width} frame"
                )
            ys, xs = np.nonzero(mask)
            if ys.size == 0:
                raise DatasetError(
                    f"video '{video.video_id}': instrument '{inst.instance_id}' frame "
                    f"{frame_id}: empty mask"
                )
            tight = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
            if tight != ann.bbox:
                raise DatasetError(
                    f"video '{video.video_id}': instrument '{inst.instance_id}' frame "
                    f"{frame_id}: bbox {ann.bbox} is not tight around mask (expected {tight})"
                )


def validate_index(index: DatasetIndex):
    """Run all cross-reference and mask invariants; raises DatasetError."""
    video_ids = {v.video_id for v in index.videos}
    if len(video_ids) != len(index.videos):
        raise DatasetError("duplicate video_id in manifest")
    for video in index.videos:
        _validate_masks(video)
    sample_ids = set()
    for sample in index.samples:
        if sample.sample_id in sample_ids:
            raise DatasetError(f"duplicate sample_id '{sample.sample_id}'")
        sample_ids.add(sample.sample_id)
        if sample.video_id not in video_ids:
            raise DatasetError(
                f"sample '{sample.sample_id}': unknown video '{sample.video_id}'"
            )
        video = index.video_by_id(sample.video_id)
        if sample.target_instance_id not in video._instrument_index:
            raise DatasetError(
                f"sample '{sample.sample_id}': dangling instance reference "
                f"'{sample.target_instance_id}' in video '{sample.video_id}'"
            )
        inst = video.instrument_by_id(sample.target_instance_id)
        first, last = sample.frame_range
        in_range = [f.frame_id for f in video.frames if first <= f.frame_id <= last]
        if not in_range:
            raise DatasetError(
                f"sample '{sample.sample_id}': frame_range {sample.frame_range} covers no "
                f"frames of video '{sample.video_id}'"
            )
        for frame_id in in_range:
            if frame_id not in inst.per_frame:
                raise DatasetError(
                    f"sample '{sample.sample_id}': target '{sample.target_instance_id}' has "
                    f"no mask on frame {frame_id}"
                )


def load_dataset(root_path: str | Path, split_tag: str = "train") -> DatasetIndex:
    """Load and fully validate the manifest under ``root_path``."""
    root = Path(root_path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"missing manifest file: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: not valid JSON: {exc}") from exc
    version = _require(raw, "format_version", str(manifest_path))
    if version != MANIFEST_VERSION:
        raise DatasetError(f"{manifest_path}: unsupported format_version {version}")
    index = DatasetIndex(
        dataset_name=str(_require(raw, "dataset_name", str(manifest_path))),
        split_tag=split_tag,
        root=root,
        videos=[_parse_video(v) for v in _require(raw, "videos", str(manifest_path))],
        samples=[_parse_sample(s) for s in _require(raw, "samples", str(manifest_path))],
    )
    validate_index(index)
    return index


def index_to_manifest(index: DatasetIndex) -> dict:
    """Serialize an index back to the manifest dict form."""
    return {
        "format_version": MANIFEST_VERSION,
        "dataset_name": index.dataset_name,
        "videos": [
            {
                "video_id": v.video_id,
                "sequence_number": v.sequence_number,
                "frames": [
                    {
                        "frame_id": f.frame_id,
                        "image_path": f.image_path,
                        "height": f.height,
                        "width": f.width,
                    }
                    for f in v.frames
                ],
                "instruments": [
                    {
                        "instance_id": i.instance_id,
                        "category": i.category,
                        "per_frame": {
                            str(fid): {"bbox": list(ann.bbox), "rle": ann.rle}
                            for fid, ann in sorted(i.per_frame.items())
                        },
                    }
                    for i in v.instruments
                ],
            }
            for v in index.videos
        ],
        "samples": [
            {
                "sample_id": s.sample_id,
                "video_id": s.video_id,
                "expression": s.expression,
                "target_instance_id": s.target_instance_id,
                "frame_range": list(s.frame_range),
            }
            for s in index.samples
        ],
    }


def save_manifest(index: DatasetIndex, root: str | Path) -> Path:
    path = Path(root) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(index_to_manifest(index), indent=2, sort_keys=True) + "\n")
    return path
