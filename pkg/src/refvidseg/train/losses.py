"""Segmentation + referring losses and the pairwise matching cost."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

DICE_EPS = 1.0


@dataclass
class LossBreakdown:
    dice: float
    reference: float
    total: float
    weights: tuple[float, float]  # (lambda_dice, lambda_ref)


def dice_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps) over the whole tensor.

    ``pred`` must be in [0, 1] (probabilities), ``gt`` binary, same shape.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    p = pred.reshape(-1)
    g = gt.reshape(-1).to(pred.dtype)
    intersection = (p * g).sum()
    return 1.0 - (2.0 * intersection + eps) / (p.sum() + g.sum() + eps)


def sequence_dice_loss(
    mask_logits: torch.Tensor, gt_masks: torch.Tensor, real_frames: torch.Tensor
) -> torch.Tensor:
    """Mean per-frame dice loss of sigmoid(logits) against gt over real frames.

    mask_logits (T, h, w), gt_masks (T, h, w), real_frames (T,) bool.
    """
    if mask_logits.shape != gt_masks.shape:
        raise ValueError(
            f"frame stack mismatch: {tuple(mask_logits.shape)} vs {tuple(gt_masks.shape)}"
        )
    probs = torch.sigmoid(mask_logits)
    losses = [
        dice_loss(probs[t], gt_masks[t])
        for t in range(mask_logits.shape[0])
        if bool(real_frames[t])
    ]
    return torch.stack(losses).mean()


def match_cost(
    mask_logits: torch.Tensor,  # (T, h, w) one query's logits
    frame_reference_logits: torch.Tensor,  # (T,)
    gt_masks: torch.Tensor,  # (T, h, w) binary
    is_referred: bool,
    lambda_dice: float,
    lambda_ref: float,
    real_frames: torch.Tensor,
) -> torch.Tensor:
    """Assignment cost for one (query sequence, target) pair.

    Dice term rewards mask overlap; the reference term pulls the referred
    target toward confident sequences and pushes the rest away.
    """
    dice_term = sequence_dice_loss(mask_logits, gt_masks, real_frames)
    ref_logit = frame_reference_logits[real_frames].mean()
    ref_term = -ref_logit if is_referred else ref_logit
    return lambda_dice * dice_term + lambda_ref * ref_term


def reference_loss(
    frame_reference_logits: torch.Tensor,  # (N_q, T)
    referred_query: int | None,
    real_frames: torch.Tensor,
) -> torch.Tensor:
    """BCE on reference logits: the query matched to the referred target is
    positive on every real frame; every other query (matched to an unreferred
    target or unmatched) is negative. Mean over queries and real frames."""
    logits = frame_reference_logits[:, real_frames]
    targets = torch.zeros_like(logits)
    if referred_query is not None:
        targets[referred_query] = 1.0
    return F.binary_cross_entropy_with_logits(logits, targets, reduction="mean")
