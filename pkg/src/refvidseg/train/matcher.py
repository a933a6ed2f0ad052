"""Optimal one-to-one assignment between query sequences and targets."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from scipy.optimize import linear_sum_assignment

from ..model.fusion import PredictionSet
from .losses import match_cost


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]  # (query_index, target_index), sorted by target
    unmatched_queries: list[int]

    def query_for_target(self, target_index: int) -> int:
        for q, m in self.pairs:
            if m == target_index:
                return q
        raise KeyError(target_index)


def hungarian_match(cost_matrix: torch.Tensor) -> Assignment:
    """Exact minimum-cost assignment of targets to queries; M must not exceed N_q."""
    if cost_matrix.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {tuple(cost_matrix.shape)}")
    n_q, m = cost_matrix.shape
    if m > n_q:
        raise ValueError(f"more targets ({m}) than queries ({n_q})")
    cost = cost_matrix.detach().cpu().numpy()
    if not torch.isfinite(cost_matrix).all():
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: rc[1])
    matched = {q for q, _ in pairs}
    return Assignment(
        pairs=[(int(q), int(t)) for q, t in pairs],
        unmatched_queries=[q for q in range(n_q) if q not in matched],
    )


def build_cost_matrix(
    prediction: PredictionSet,
    gt_masks: torch.Tensor,  # (M, T, h, w) at the prediction's mask resolution
    referred_index: int,
    lambda_dice: float,
    lambda_ref: float,
    real_frames: torch.Tensor,
) -> torch.Tensor:
    """(N_q, M) matrix of match_cost values; computed without gradients."""
    n_q = len(prediction)
    m = gt_masks.shape[0]
    with torch.no_grad():
        cost = torch.zeros((n_q, m))
        for q in range(n_q):
            for t in range(m):
                cost[q, t] = match_cost(
                    prediction.mask_logits[q],
                    prediction.frame_reference_logits[q],
                    gt_masks[t],
                    is_referred=(t == referred_index),
                    lambda_dice=lambda_dice,
                    lambda_ref=lambda_ref,
                    real_frames=real_frames,
                )
    return cost
