from .ops import FrameWindow, StatsReport, clip_windows, dataset_stats, split_endovis
from .rle import decode_rle, encode_rle
from .schema import (
    DatasetError,
    DatasetIndex,
    FrameRecord,
    InstrumentInstance,
    MaskAnnotation,
    ReferringSample,
    VideoRecord,
    load_dataset,
    save_manifest,
    tokenize,
    validate_index,
)
from .synthetic import GenerationError, SyntheticConfig, generate_synthetic, same_type_sample_ids

__all__ = [
    "FrameWindow",
    "StatsReport",
    "clip_windows",
    "dataset_stats",
    "split_endovis",
    "decode_rle",
    "encode_rle",
    "DatasetError",
    "DatasetIndex",
    "FrameRecord",
    "InstrumentInstance",
    "MaskAnnotation",
    "ReferringSample",
    "VideoRecord",
    "load_dataset",
    "save_manifest",
    "tokenize",
    "validate_index",
    "GenerationError",
    "SyntheticConfig",
    "generate_synthetic",
    "same_type_sample_ids",
]
