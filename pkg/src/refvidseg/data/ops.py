"""Dataset-level operations: corpus statistics, benchmark splits, clip windows."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

from .schema import DatasetError, DatasetIndex, ReferringSample, tokenize

# Validation sequences fixed by the benchmark protocol.
_VAL_SEQUENCES = {
    "rs17": set(range(8, 14)),  # sequences 8-13
    "rs18": {2, 5, 9, 15},
}


@dataclass
class StatsReport:
    pair_count: int
    word_min: int  # 0 when the index is empty
    word_max: int
    word_freq: dict[str, int]


def dataset_stats(index: DatasetIndex) -> StatsReport:
    """Pair count and expression word statistics over all samples."""
    counts = []
    freq = Counter()
    for sample in index.samples:
        words = tokenize(sample.expression)
        counts.append(len(words))
        freq.update(words)
    return StatsReport(
        pair_count=len(index.samples),
        word_min=min(counts) if counts else 0,
        word_max=max(counts) if counts else 0,
        word_freq=dict(freq),
    )


def _normalize_dataset_name(dataset_name: str) -> str:
    name = dataset_name.lower().replace("-", "_")
    for key in _VAL_SEQUENCES:
        if name.endswith(key) or name == key:
            return key
    raise DatasetError(f"unknown dataset name '{dataset_name}' (expected rs17 or rs18)")


def split_endovis(index: DatasetIndex, dataset_name: str) -> tuple[DatasetIndex, DatasetIndex]:
    """Partition an index into (train, val) by the benchmark's fixed sequence split."""
    val_sequences = _VAL_SEQUENCES[_normalize_dataset_name(dataset_name)]
    present = {v.sequence_number for v in index.videos}
    missing = sorted(val_sequences - present)
    if missing:
        raise DatasetError(
            f"dataset '{dataset_name}' is missing validation sequence(s) {missing}"
        )

    def subset(keep_val: bool, tag: str) -> DatasetIndex:
        videos = [
            v for v in index.videos if (v.sequence_number in val_sequences) == keep_val
        ]
        video_ids = {v.video_id for v in videos}
        samples = [s for s in index.samples if s.video_id in video_ids]
        return replace(index, split_tag=tag, videos=videos, samples=samples)

    return subset(False, "train"), subset(True, "val")


@dataclass(frozen=True)
class FrameWindow:
    """A fixed-length run of frame ids; trailing entries may repeat the last real frame."""

    frame_ids: tuple[int, ...]
    num_padded: int  # count of repeated tail entries

    @property
    def padded_flags(self) -> tuple[bool, ...]:
        n = len(self.frame_ids)
        return tuple(i >= n - self.num_padded for i in range(n))


def clip_windows(sample: ReferringSample, video_frame_ids: list[int], window: int) -> list[FrameWindow]:
    """Contiguous windows of length ``window`` covering the sample's frame_range.

    The final partial window is padded by repeating its last frame.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    first, last = sample.frame_range
    ids = [fid for fid in video_frame_ids if first <= fid <= last]
    if not ids:
        raise ValueError(
            f"sample '{sample.sample_id}': frame_range {sample.frame_range} covers no frames"
        )
    windows = []
    for start in range(0, len(ids), window):
        chunk = ids[start : start + window]
        pad = window - len(chunk)
        chunk = chunk + [chunk[-1]] * pad
        windows.append(FrameWindow(frame_ids=tuple(chunk), num_padded=pad))
    return windows
