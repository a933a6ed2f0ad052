"""Per-modality linear maps into the shared embedding space."""

from __future__ import annotations

import torch
from torch import nn


class SharedProjection(nn.Module):
    """Independent learned linear projections, one per registered modality."""

    def __init__(self, input_dims: dict[str, int], shared_dim: int):
        super().__init__()
        self.shared_dim = shared_dim
        self.proj = nn.ModuleDict(
            {name: nn.Linear(dim, shared_dim) for name, dim in input_dims.items()}
        )

    def forward(self, x: torch.Tensor, modality: str) -> torch.Tensor:
        if modality not in self.proj:
            raise KeyError(
                f"unregistered modality '{modality}' (have {sorted(self.proj.keys())})"
            )
        return self.proj[modality](x)
