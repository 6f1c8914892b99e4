"""Graph-based camera parameter fusion: one visual node, seven parameter
nodes, physically motivated edges and two graph-attention layers."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

# Node ordering: 0 = visual hub, then the seven settings in canonical order.
NODE_NAMES = (
    "visual",
    "aperture",
    "shutter",
    "iso",
    "white_balance",
    "contrast",
    "saturation",
    "sharpness",
)
N_NODES = 8

_NODE_INDEX = {name: i for i, name in enumerate(NODE_NAMES)}


def build_edges() -> frozenset[tuple[int, int]]:
    """The fixed 14-edge undirected set.

    Visual hub to every parameter, the exposure triangle
    (aperture/shutter/iso), the post-processing clique
    (contrast/saturation/sharpness) and the white-balance/saturation link.
    """
    edges: set[tuple[int, int]] = set()

    def add(a: str, b: str) -> None:
        i, j = _NODE_INDEX[a], _NODE_INDEX[b]
        edges.add((min(i, j), max(i, j)))

    for name in NODE_NAMES[1:]:
        add("visual", name)
    for a, b in (("aperture", "shutter"), ("aperture", "iso"), ("shutter", "iso")):
        add(a, b)
    for a, b in (
        ("contrast", "saturation"),
        ("contrast", "sharpness"),
        ("saturation", "sharpness"),
    ):
        add(a, b)
    add("white_balance", "saturation")
    return frozenset(edges)


def adjacency(self_loops: bool = True) -> torch.Tensor:
    adj = torch.zeros(N_NODES, N_NODES, dtype=torch.bool)
    for i, j in build_edges():
        adj[i, j] = adj[j, i] = True
    if self_loops:
        adj |= torch.eye(N_NODES, dtype=torch.bool)
    return adj


@dataclass(frozen=True)
class GatLayerConfig:
    in_dim: int
    out_dim_per_head: int
    heads: int = 1
    concat: bool = True

    def __post_init__(self) -> None:
        if self.heads < 1:
            raise ValueError("heads must be >= 1")

    @property
    def out_dim(self) -> int:
        return self.out_dim_per_head * (self.heads if self.concat else 1)


class GraphAttentionLayer(nn.Module):
    """Multi-head graph attention with additive logits and leaky-rectified
    scoring; attention is normalized over each node's neighborhood
    (self-loop included)."""

    NEGATIVE_SLOPE = 0.2

    def __init__(self, cfg: GatLayerConfig):
        super().__init__()
        self.cfg = cfg
        h, d_in, d_out = cfg.heads, cfg.in_dim, cfg.out_dim_per_head
        self.weight = nn.Parameter(torch.empty(h, d_in, d_out))
        self.attn_src = nn.Parameter(torch.empty(h, d_out))
        self.attn_dst = nn.Parameter(torch.empty(h, d_out))
        nn.init.xavier_uniform_(self.weight)
        nn.init.xavier_uniform_(self.attn_src.unsqueeze(0))
        nn.init.xavier_uniform_(self.attn_dst.unsqueeze(0))

    def attention(self, x: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        """Attention tensor (B, heads, N, N); row i is node i's distribution."""
        h = torch.einsum("bnd,hdo->bhno", x, self.weight)
        src = (h * self.attn_src[None, :, None, :]).sum(-1)  # (B, H, N)
        dst = (h * self.attn_dst[None, :, None, :]).sum(-1)
        logits = src.unsqueeze(-1) + dst.unsqueeze(-2)  # e_ij = s_i + d_j
        logits = nn.functional.leaky_relu(logits, negative_slope=self.NEGATIVE_SLOPE)
        logits = logits.masked_fill(~adj[None, None], float("-inf"))
        return torch.softmax(logits, dim=-1)

    def forward(self, x: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        h = torch.einsum("bnd,hdo->bhno", x, self.weight)
        attn = self.attention(x, adj)
        out = torch.matmul(attn, h)  # (B, H, N, d_out)
        if self.cfg.concat:
            return out.permute(0, 2, 1, 3).reshape(x.shape[0], x.shape[1], -1)
        return out.mean(dim=1)


class ParameterGraphFusion(nn.Module):
    """Encode the visual feature and the seven normalized settings as graph
    nodes, run two attention layers, and read the updated visual node back
    out at the visual feature width."""

    def __init__(self, feature_dim: int, node_dim: int = 128, heads: int = 4):
        super().__init__()
        if node_dim % heads != 0:
            raise ValueError("node_dim must be divisible by the head count")
        self.feature_dim = feature_dim
        self.node_dim = node_dim
        self.visual_proj = nn.Linear(feature_dim, node_dim)
        # Scalar settings: value times a learned per-parameter vector, plus bias.
        self.param_weight = nn.Parameter(torch.empty(7, node_dim))
        self.param_bias = nn.Parameter(torch.zeros(7, node_dim))
        nn.init.xavier_uniform_(self.param_weight)
        self.gat1 = GraphAttentionLayer(
            GatLayerConfig(in_dim=node_dim, out_dim_per_head=node_dim // heads, heads=heads)
        )
        self.gat2 = GraphAttentionLayer(
            GatLayerConfig(in_dim=node_dim, out_dim_per_head=node_dim, heads=1, concat=False)
        )
        # Residual read-out, zero-initialized: with fusion enabled the model
        # starts exactly on the visual path and learns an additive
        # parameter-aware correction.
        self.out_proj = nn.Linear(node_dim, feature_dim)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)
        self.register_buffer("adj", adjacency(self_loops=True), persistent=False)

    def encode_nodes(self, f_q: torch.Tensor, p_norm: torch.Tensor) -> torch.Tensor:
        """(B, 8, D) node matrix; row 0 is the visual node."""
        visual = self.visual_proj(f_q).unsqueeze(1)  # (B, 1, D)
        params = p_norm.unsqueeze(-1) * self.param_weight[None] + self.param_bias[None]
        return torch.cat([visual, params], dim=1)

    def node_updates(self, f_q: torch.Tensor, p_norm: torch.Tensor) -> torch.Tensor:
        x = self.encode_nodes(f_q, p_norm)
        h1 = nn.functional.elu(self.gat1(x, self.adj))
        return self.gat2(h1, self.adj)

    def attention_maps(self, f_q, p_norm):
        x = self.encode_nodes(f_q, p_norm)
        a1 = self.gat1.attention(x, self.adj)
        h1 = nn.functional.elu(self.gat1(x, self.adj))
        a2 = self.gat2.attention(h1, self.adj)
        return a1, a2

    def forward(self, f_q: torch.Tensor, p_norm: torch.Tensor) -> torch.Tensor:
        if p_norm is None:
            raise ValueError("parameter fusion called without camera parameters")
        h2 = self.node_updates(f_q, p_norm)
        return f_q + self.out_proj(h2[:, 0, :])
