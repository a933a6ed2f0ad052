"""Metric suite: per-sample IoU, Precision@K, Overall/Mean IoU, threshold-mAP."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, config_hash
from .data.ops import clip_windows
from .data.schema import DatasetIndex
from .inputs import FrameCache, prepare_sample
from .model.fusion import select_reference, upsample_mask_logits

MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
PRECISION_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class SampleResult:
    sample_id: str
    intersection: int  # pixels, summed over the sample's evaluated frames
    union: int

    @property
    def iou(self) -> float:
        if self.union == 0:
            # empty gt and empty prediction: correctly predicting absence scores 1
            return 1.0 if self.intersection == 0 else 0.0
        return self.intersection / self.union


@dataclass
class EvalReport:
    precision_at: dict[float, float]  # K -> percentage
    overall_iou: float
    mean_iou: float
    map_50_95: float
    n_samples: int


def sample_iou(pred_masks, gt_masks, sample_id: str = "") -> SampleResult:
    """Accumulate pixel counts across all frames of one sample, then take the ratio.

    ``pred_masks``/``gt_masks``: sequences of same-shaped binary (H, W) arrays.
    """
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"frame count mismatch: {len(pred_masks)} vs {len(gt_masks)}")
    intersection = 0
    union = 0
    for pred, gt in zip(pred_masks, gt_masks):
        pred = np.asarray(pred, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if pred.shape != gt.shape:
            raise ValueError(f"resolution mismatch: {pred.shape} vs {gt.shape}")
        intersection += int(np.logical_and(pred, gt).sum())
        union += int(np.logical_or(pred, gt).sum())
    return SampleResult(sample_id=sample_id, intersection=intersection, union=union)


def precision_at_k(results: list[SampleResult], k: float) -> float:
    """Percentage of samples with IoU strictly above ``k``."""
    if not results:
        raise ValueError("no results")
    if not 0 < k < 1:
        raise ValueError(f"threshold must be in (0, 1), got {k}")
    hits = sum(1 for r in results if r.iou > k)
    return 100.0 * hits / len(results)


def overall_iou(results: list[SampleResult]) -> float:
    """Pooled intersection over pooled union, as a percentage."""
    if not results:
        raise ValueError("no results")
    total_i = sum(r.intersection for r in results)
    total_u = sum(r.union for r in results)
    if total_u == 0:
        return 100.0 if total_i == 0 else 0.0
    return 100.0 * total_i / total_u


def mean_iou(results: list[SampleResult]) -> float:
    if not results:
        raise ValueError("no results")
    return 100.0 * sum(r.iou for r in results) / len(results)


def map_50_95(results: list[SampleResult]) -> float:
    """Mean over the ten IoU thresholds of the per-threshold success proportion."""
    if not results:
        raise ValueError("no results")
    return sum(precision_at_k(results, k) for k in MAP_THRESHOLDS) / len(MAP_THRESHOLDS)


def build_report(results: list[SampleResult]) -> EvalReport:
    return EvalReport(
        precision_at={k: precision_at_k(results, k) for k in PRECISION_THRESHOLDS},
        overall_iou=overall_iou(results),
        mean_iou=mean_iou(results),
        map_50_95=map_50_95(results),
        n_samples=len(results),
    )


# ---------------------------------------------------------------------------
# predictors


class ModelPredictor:
    """Selects the reference sequence and thresholds its upsampled masks."""

    def __init__(self, model):
        self.model = model

    def __call__(self, model_input, targets, gt_masks) -> list[np.ndarray]:
        with torch.no_grad():
            prediction = self.model([model_input])[0]
        chosen = select_reference(prediction)
        logits = upsample_mask_logits(prediction.mask_logits[chosen], targets.original_size)
        masks = (torch.sigmoid(logits) > 0.5).numpy().astype(np.uint8)
        return [masks[t] for t in range(masks.shape[0]) if bool(targets.real_frames[t])]


class OraclePredictor:
    """Debug upper bound: emits the ground-truth masks."""

    def __call__(self, model_input, targets, gt_masks) -> list[np.ndarray]:
        return list(gt_masks)


class EmptyPredictor:
    """Debug lower bound: all-background masks."""

    def __call__(self, model_input, targets, gt_masks) -> list[np.ndarray]:
        h, w = targets.original_size
        return [np.zeros((h, w), dtype=np.uint8) for _ in gt_masks]


def evaluate_model(
    model_or_predictor,
    val_index: DatasetIndex,
    config: RunConfig,
    sample_ids: set[str] | None = None,
) -> tuple[EvalReport, list[SampleResult]]:
    """Window the validation samples, predict, and pool IoU per sample.

    Repeat-padded frames are excluded from metric accumulation. ``sample_ids``
    restricts evaluation to a subset (e.g. the disambiguation samples).
    """
    if isinstance(model_or_predictor, torch.nn.Module):
        predictor = ModelPredictor(model_or_predictor)
        vocab = model_or_predictor.vocab
    else:
        predictor = model_or_predictor
        from .model.text import Vocabulary

        vocab = Vocabulary.build([s.expression for s in val_index.samples])

    cache = FrameCache()
    results = []
    for sample in val_index.samples:
        if sample_ids is not None and sample.sample_id not in sample_ids:
            continue
        video = val_index.video_by_id(sample.video_id)
        instrument = video.instrument_by_id(sample.target_instance_id)
        frame_ids = [f.frame_id for f in video.frames]
        intersection, union = 0, 0
        for window in clip_windows(sample, frame_ids, config.train.window):
            model_input, targets = prepare_sample(val_index, sample, window, config, vocab, cache)
            # ground truth at annotation resolution, real frames only
            gt_masks = [
                instrument.decode_mask(video.frame_by_id(fid))
                for fid, padded in zip(window.frame_ids, window.padded_flags)
                if not padded
            ]
            pred_masks = predictor(model_input, targets, gt_masks)
            partial = sample_iou(pred_masks, gt_masks, sample.sample_id)
            intersection += partial.intersection
            union += partial.union
        results.append(SampleResult(sample.sample_id, intersection, union))
    if not results:
        raise ValueError("no samples evaluated (empty split or filter)")
    return build_report(results), results


# ---------------------------------------------------------------------------
# report IO


def report_to_dict(report: EvalReport, results: list[SampleResult], config: RunConfig | None = None) -> dict:
    return {
        "format_version": 1,
        "metrics": {
            "precision_at": {str(k): v for k, v in report.precision_at.items()},
            "overall_iou": report.overall_iou,
            "mean_iou": report.mean_iou,
            "map_50_95": report.map_50_95,
            "n_samples": report.n_samples,
        },
        "per_sample": [
            {"sample_id": r.sample_id, "iou": r.iou, "intersection": r.intersection, "union": r.union}
            for r in results
        ],
        "config_hash": config_hash(config) if config is not None else "",
    }


def save_report(path: str | Path, report: EvalReport, results: list[SampleResult], config: RunConfig | None = None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report_to_dict(report, results, config), indent=2, sort_keys=True) + "\n")


def format_table_row(label: str, report: EvalReport) -> str:
    p = report.precision_at
    return (
        f"{label:<12} | P@0.5 {p[0.5]:5.1f}  P@0.6 {p[0.6]:5.1f}  P@0.7 {p[0.7]:5.1f}  "
        f"P@0.8 {p[0.8]:5.1f}  P@0.9 {p[0.9]:5.1f} | Overall {report.overall_iou:5.1f}  "
        f"Mean {report.mean_iou:5.1f} | mAP {report.map_50_95:5.1f}"
    )
