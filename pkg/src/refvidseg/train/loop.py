"""Training loop: set-prediction supervision, optimizer schedule, checkpoints."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..config import RunConfig, config_to_dict, dataclass_from_dict
from ..data.ops import clip_windows
from ..data.schema import DatasetIndex
from ..inputs import FrameCache, TargetSet, prepare_sample
from ..model.fusion import PredictionSet, upsample_mask_logits
from ..model.network import ReferringSegmenter
from ..model.text import Vocabulary
from .losses import reference_loss, sequence_dice_loss
from .matcher import build_cost_matrix, hungarian_match
from .schedule import lr_at

CHECKPOINT_VERSION = 1


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def downsample_masks(masks: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """(M, T, H, W) binary -> (M, T, h, w) binary float at the mask stride."""
    m, t = masks.shape[:2]
    flat = masks.reshape(m * t, 1, *masks.shape[2:])
    down = F.interpolate(flat, size=size, mode="bilinear", align_corners=False)
    return (down > 0.5).float().reshape(m, t, *size)


def sample_loss(
    prediction: PredictionSet,
    targets: TargetSet,
    config: RunConfig,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (dice, reference) loss terms for one sample.

    Matching costs are computed at the mask stride against downsampled targets
    (ordering is all that matters there); the dice supervision of matched pairs
    runs at input resolution through bilinearly upsampled logits, mirroring how
    masks are produced at inference.
    """
    lam_d, lam_r = config.train.lambda_dice, config.train.lambda_ref
    gt_small = downsample_masks(targets.masks, prediction.mask_logits.shape[-2:])
    cost = build_cost_matrix(
        prediction, gt_small, targets.referred_index, lam_d, lam_r, targets.real_frames
    )
    assignment = hungarian_match(cost)
    referred_query = assignment.query_for_target(targets.referred_index)

    input_size = tuple(targets.masks.shape[-2:])
    dice_terms = []
    for q, t in assignment.pairs:
        if t != targets.referred_index and not config.train.supervise_unreferred_masks:
            continue
        full_logits = upsample_mask_logits(prediction.mask_logits[q], input_size)
        dice_terms.append(sequence_dice_loss(full_logits, targets.masks[t], targets.real_frames))
    dice = torch.stack(dice_terms).mean()
    ref = reference_loss(prediction.frame_reference_logits, referred_query, targets.real_frames)
    return dice, ref


@dataclass
class FitResult:
    model: ReferringSegmenter
    metric_log: list[dict]
    checkpoints: list[Path]
    best_checkpoint: Path | None


def fit(
    train_index: DatasetIndex,
    config: RunConfig,
    val_index: DatasetIndex | None = None,
    log_fn=None,
    max_epochs: int | None = None,
) -> FitResult:
    """Train on every (sample, window) pair of the index; deterministic per seed."""
    from ..evaluation import evaluate_model  # local import to avoid a cycle

    log = log_fn or (lambda msg: None)
    seed_everything(config.seed)
    torch.set_num_threads(max(1, torch.get_num_threads()))

    vocab = Vocabulary.build([s.expression for s in train_index.samples])
    model = ReferringSegmenter(config, vocab)
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.train.lr,
        betas=config.train.betas,
        weight_decay=config.train.weight_decay,
    )

    pairs = []
    for sample in train_index.samples:
        video = train_index.video_by_id(sample.video_id)
        frame_ids = [f.frame_id for f in video.frames]
        for window in clip_windows(sample, frame_ids, config.train.window):
            pairs.append((sample, window))
    if not pairs:
        raise ValueError("training index contains no samples")

    cache = FrameCache()
    shuffle_rng = np.random.default_rng(config.seed)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    epochs = config.train.epochs if max_epochs is None else min(max_epochs, config.train.epochs)
    metric_log: list[dict] = []
    checkpoints: list[Path] = []
    best_path: Path | None = None
    best_miou = -1.0

    for epoch in range(epochs):
        lr = lr_at(epoch, config.train)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = shuffle_rng.permutation(len(pairs))
        epoch_dice, epoch_ref, epoch_total, steps = 0.0, 0.0, 0.0, 0
        t0 = time.time()
        for start in range(0, len(order), config.train.batch_size):
            chunk = order[start : start + config.train.batch_size]
            inputs, target_sets = [], []
            for idx in chunk:
                sample, window = pairs[idx]
                model_input, targets = prepare_sample(
                    train_index, sample, window, config, vocab, cache
                )
                inputs.append(model_input)
                target_sets.append(targets)
            predictions = model(inputs)
            dice_terms, ref_terms = [], []
            for prediction, targets in zip(predictions, target_sets):
                dice, ref = sample_loss(prediction, targets, config)
                dice_terms.append(dice)
                ref_terms.append(ref)
            dice = torch.stack(dice_terms).mean()
            ref = torch.stack(ref_terms).mean()
            total = config.train.lambda_dice * dice + config.train.lambda_ref * ref
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {steps}: "
                    f"dice={float(dice):.4f} reference={float(ref):.4f}"
                )
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            for name, param in model.named_parameters():
                if param.grad is not None and not torch.isfinite(param.grad).all():
                    raise RuntimeError(f"non-finite gradient in '{name}' at epoch {epoch}")
            optimizer.step()
            epoch_dice += float(dice.detach())
            epoch_ref += float(ref.detach())
            epoch_total += float(total.detach())
            steps += 1

        entry = {
            "epoch": epoch,
            "lr": lr,
            "dice": epoch_dice / steps,
            "reference": epoch_ref / steps,
            "loss": epoch_total / steps,
            "seconds": round(time.time() - t0, 2),
        }

        run_val = val_index is not None and (
            (config.train.val_interval and (epoch + 1) % config.train.val_interval == 0)
            or epoch == epochs - 1
        )
        if run_val:
            model.eval()
            report, _ = evaluate_model(model, val_index, config)
            model.train()
            entry["val_mean_iou"] = report.mean_iou
            if report.mean_iou > best_miou:
                best_miou = report.mean_iou
                best_path = out_dir / "best.pt"
                save_checkpoint(best_path, model, config, epoch, metric_log + [entry])

        metric_log.append(entry)
        log(
            f"epoch {epoch:3d}  loss {entry['loss']:.4f}  dice {entry['dice']:.4f}  "
            f"ref {entry['reference']:.4f}  lr {lr:.2e}  ({entry['seconds']}s)"
            + (f"  val mIoU {entry.get('val_mean_iou', float('nan')):.2f}" if run_val else "")
        )

        if (epoch + 1) % config.train.checkpoint_interval == 0 or epoch == epochs - 1:
            path = out_dir / f"checkpoint_epoch{epoch:04d}.pt"
            save_checkpoint(path, model, config, epoch, metric_log)
            checkpoints.append(path)

    model.eval()
    return FitResult(model=model, metric_log=metric_log, checkpoints=checkpoints, best_checkpoint=best_path)


# ---------------------------------------------------------------------------
# checkpoints


def _split_state_by_module(model: ReferringSegmenter) -> dict[str, dict]:
    blobs: dict[str, dict] = {}
    for key, value in model.state_dict().items():
        module, _, rest = key.partition(".")
        blobs.setdefault(module, {})[rest] = value
    return blobs


def save_checkpoint(path: str | Path, model: ReferringSegmenter, config: RunConfig, epoch: int, metric_log: list[dict]):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config_to_dict(config),
        "vocab": list(model.vocab.words),
        "modules": _split_state_by_module(model),
        "epoch": epoch,
        "metric_log": metric_log,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[ReferringSegmenter, RunConfig, int, list[dict]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config = dataclass_from_dict(RunConfig, payload["config"])
    config.validate()
    model = ReferringSegmenter(config, Vocabulary(payload["vocab"]))
    state = {}
    for module, blob in payload["modules"].items():
        for key, value in blob.items():
            state[f"{module}.{key}"] = value
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise ValueError(
            f"{path}: checkpoint incompatible with config "
            f"(missing {sorted(missing)[:3]}, unexpected {sorted(unexpected)[:3]})"
        )
    model.eval()
    return model, config, payload["epoch"], payload["metric_log"]
