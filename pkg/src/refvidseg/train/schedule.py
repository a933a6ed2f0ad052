"""Stepwise learning-rate schedule."""

from __future__ import annotations

from ..config import TrainConfig


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for ``epoch``: the base rate decayed once per passed milestone."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    steps = sum(1 for milestone in config.decay_epochs if epoch >= milestone)
    return config.lr * (config.lr_decay**steps)
