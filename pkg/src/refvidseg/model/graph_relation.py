"""Text-guided relation graph over instrument embeddings.

One text node and K visual nodes form a directed graph: information flows
text -> visual only, plus self-loops. The module propagates the sentence
embedding into the visual nodes, scores each (updated) visual node against
the text node with a single-layer feedforward attention, and rescales the
original visual embeddings residually by the resulting weights.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F
from torch import nn

from .instruments import InstrumentGraph


@dataclass
class MultiModalGraph:
    text_node: torch.Tensor  # (D,)
    visual_nodes: torch.Tensor  # (K, D)
    adjacency: torch.Tensor  # (K+1, K+1), row = receiver; index 0 is the text node


@dataclass
class RelationWeights:
    alpha: torch.Tensor  # (K,), positive, sums to 1


class GraphRelationParams(nn.Module):
    """Trainable weights: per-layer propagation matrices, shared attention matrix,
    and the scalar pair scorer."""

    def __init__(self, dim: int, layers: int = 1, negative_slope: float = 0.2):
        super().__init__()
        if layers < 1:
            raise ValueError("layers must be >= 1")
        self.dim = dim
        self.negative_slope = negative_slope
        self.w_alphas = nn.ParameterList(
            nn.Parameter(torch.empty(dim, dim)) for _ in range(layers)
        )
        self.w_beta = nn.Parameter(torch.empty(dim, dim))
        self.phi_weight = nn.Parameter(torch.empty(2 * dim))
        self.phi_bias = nn.Parameter(torch.zeros(1))
        for w in self.w_alphas:
            nn.init.xavier_uniform_(w)
        nn.init.xavier_uniform_(self.w_beta)
        nn.init.normal_(self.phi_weight, std=dim**-0.5)

    @property
    def w_alpha(self) -> nn.Parameter:
        return self.w_alphas[0]


def build_graph(text_feature: torch.Tensor, graph: InstrumentGraph | torch.Tensor) -> MultiModalGraph:
    """Assemble the directed multimodal graph; node features are copied, not aliased.

    ``text_feature``: (D,) pooled sentence embedding in the shared space.
    ``graph``: instrument graph (or a raw (K, D) feature matrix).
    """
    visual = graph.feature_matrix() if isinstance(graph, InstrumentGraph) else graph
    k = visual.shape[0]
    if k > 0 and visual.shape[1] != text_feature.shape[0]:
        raise ValueError(
            f"visual dim {visual.shape[1]} != text dim {text_feature.shape[0]}"
        )
    adjacency = torch.eye(k + 1, dtype=text_feature.dtype)  # self-loops everywhere
    adjacency[1:, 0] = 1.0  # text -> visual edges; nothing flows into the text node
    if k > 0:
        visual = visual.clone()
    else:
        visual = text_feature.new_zeros((0, text_feature.shape[0]))
    return MultiModalGraph(
        text_node=text_feature.clone(), visual_nodes=visual, adjacency=adjacency
    )


def propagate(graph: MultiModalGraph, w_alpha: torch.Tensor) -> MultiModalGraph:
    """One directed message-passing step: each visual node aggregates itself plus the
    text node, then is linearly transformed and rectified. The text node is returned
    unchanged (structural masking, not a transformed copy)."""
    if w_alpha.shape != (graph.text_node.shape[0],) * 2:
        raise ValueError(f"w_alpha shape {tuple(w_alpha.shape)} does not match node dim")
    if graph.visual_nodes.shape[0] == 0:
        return replace(graph, visual_nodes=graph.visual_nodes.clone())
    aggregated = graph.visual_nodes + graph.text_node[None, :]
    updated = F.relu(aggregated @ w_alpha)
    return MultiModalGraph(
        text_node=graph.text_node,
        visual_nodes=updated,
        adjacency=graph.adjacency,
    )


def relation_scores(
    graph: MultiModalGraph,
    w_beta: torch.Tensor,
    phi_weight: torch.Tensor,
    phi_bias: torch.Tensor | float = 0.0,
    negative_slope: float = 0.2,
) -> torch.Tensor:
    """Raw pairwise scores: a single-layer feedforward maps each transformed
    (visual, text) pair to one scalar. Returns (K,)."""
    k = graph.visual_nodes.shape[0]
    if k == 0:
        raise ValueError("attention requires at least one visual node")
    t_beta = graph.text_node @ w_beta  # (D,)
    v_beta = graph.visual_nodes @ w_beta  # (K, D)
    pairs = torch.cat([v_beta, t_beta[None, :].expand(k, -1)], dim=1)  # (K, 2D)
    return F.leaky_relu(pairs @ phi_weight + phi_bias, negative_slope=negative_slope)


def normalize_scores(scores: torch.Tensor) -> torch.Tensor:
    """Max-stabilized softmax over visual nodes."""
    shifted = scores - scores.max()
    return torch.softmax(shifted, dim=0)


def attention_coefficients(
    graph: MultiModalGraph,
    w_beta: torch.Tensor,
    phi_weight: torch.Tensor,
    phi_bias: torch.Tensor | float = 0.0,
    negative_slope: float = 0.2,
) -> RelationWeights:
    """Relation weight per visual node: softmax of the feedforward scores."""
    scores = relation_scores(graph, w_beta, phi_weight, phi_bias, negative_slope)
    return RelationWeights(alpha=normalize_scores(scores))


def augment(f_in: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Residual per-node rescaling: row i becomes (1 + alpha_i) * f_in_i."""
    if alpha.shape[0] != f_in.shape[0]:
        raise ValueError(f"alpha length {alpha.shape[0]} != node count {f_in.shape[0]}")
    return f_in + alpha[:, None] * f_in


def grm_forward(
    text_feature: torch.Tensor,
    graph: InstrumentGraph | torch.Tensor,
    params: GraphRelationParams,
    propagation_enabled: bool = True,
) -> torch.Tensor:
    """Full module: build -> propagate -> attention -> residual augmentation.

    Attention is computed on post-propagation features; the residual update
    applies to the original embeddings. Returns the augmented (K, D) matrix;
    K = 0 passes through empty.
    """
    f_in = graph.feature_matrix() if isinstance(graph, InstrumentGraph) else graph
    if f_in.shape[0] == 0:
        return f_in
    g = build_graph(text_feature, f_in)
    if propagation_enabled:
        for w_alpha in params.w_alphas:
            g = propagate(g, w_alpha)
    weights = attention_coefficients(
        g, params.w_beta, params.phi_weight, params.phi_bias, params.negative_slope
    )
    return augment(f_in, weights.alpha)


def augment_graph(
    text_feature: torch.Tensor,
    graph: InstrumentGraph,
    params: GraphRelationParams,
    propagation_enabled: bool = True,
) -> InstrumentGraph:
    """grm_forward over an InstrumentGraph, preserving node metadata."""
    if len(graph) == 0:
        return graph
    updated = grm_forward(text_feature, graph, params, propagation_enabled)
    nodes = [replace(node, vector=updated[i]) for i, node in enumerate(graph.nodes)]
    return InstrumentGraph(nodes=nodes)
