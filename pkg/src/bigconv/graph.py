"""Boundary-aware input-dependent graph convolution over image vertices.

A feature map with N = H*W positions and C channels is treated as a graph of
N vertices.  The adjacency is built from the features themselves: a dot
product of learned embeddings, reweighted per channel by a channel-attention
diagonal and per vertex pair by a rank-one spatial weighting.  The boundary
variant derives the column side of the spatial weighting from the features
masked by a predicted boundary map, up-weighting affinities into boundary
pixels.

The adjacency is never materialized: products against it, the degree vector,
and the normalized-Laplacian application all run through the low-rank
factors in O(N * C * C') time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as en
from .engine import ShapeError, Tensor

VARIANTS = ("classic", "channel", "spatial", "channel_spatial", "boundary")
FACTORED_VARIANTS = ("channel", "spatial", "channel_spatial", "boundary")

DEGREE_EPSILON = 1e-4


@dataclass
class VertexEmbeddings:
    """An (N, C) feature matrix laid out over an H x W grid (N = H*W)."""

    map: Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.map.ndim != 2 or self.map.shape[0] != self.height * self.width:
            raise ShapeError(
                f"vertex map {self.map.shape} does not cover a "
                f"{self.height}x{self.width} grid"
            )

    @property
    def n_vertices(self) -> int:
        return self.map.shape[0]

    @property
    def channels(self) -> int:
        return self.map.shape[1]


@dataclass
class BoundaryMap:
    """Single-channel soft boundary prediction, entries in [0, 1]."""

    map: Tensor

    def __post_init__(self):
        if self.map.ndim != 2 or self.map.shape[1] != 1:
            raise ShapeError(f"boundary map must be (N, 1), got {self.map.shape}")
        d = self.map.data
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise ValueError("boundary map entries must lie in [0, 1]")


@dataclass
class BiGConvParams:
    """Trainable weights of one layer.

    The channel-attention MLP has hidden width max(1, C // reduction) and no
    biases; the three spatial 1x1 convs act on single-channel maps, so each
    is a scalar weight plus bias.
    """

    w_psi: Tensor        # (C, C) embedding for the channel-attention term
    w_second: Tensor     # (C, C) embedding for the spatial term
    mlp_w1: Tensor       # (C, Ch)
    mlp_w2: Tensor       # (Ch, C)
    conv_s_w: Tensor     # (1, 1) spatial-attention conv
    conv_s_b: Tensor     # (1, 1)
    conv_u_w: Tensor     # (1, 1) boundary row factor conv
    conv_u_b: Tensor     # (1, 1)
    conv_v_w: Tensor     # (1, 1) boundary column factor conv (masked features)
    conv_v_b: Tensor     # (1, 1)
    w_g: Tensor          # (C, C) output projection
    degree_epsilon: float = DEGREE_EPSILON

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, reduction: int = 4,
             scale: float = 0.3) -> "BiGConvParams":
        c = channels
        ch = max(1, c // reduction)

        def w(rows, cols, s):
            return Tensor(rng.normal(0.0, s, size=(rows, cols)))

        return cls(
            w_psi=w(c, c, scale / np.sqrt(c)),
            w_second=w(c, c, scale / np.sqrt(c)),
            mlp_w1=w(c, ch, scale),
            mlp_w2=w(ch, c, scale),
            conv_s_w=w(1, 1, scale),
            conv_s_b=Tensor(np.zeros((1, 1))),
            conv_u_w=w(1, 1, scale),
            conv_u_b=Tensor(np.zeros((1, 1))),
            conv_v_w=w(1, 1, scale),
            conv_v_b=Tensor(np.zeros((1, 1))),
            w_g=w(c, c, scale / np.sqrt(c)),
        )

    def named_tensors(self):
        """Declaration-ordered (name, tensor) pairs for registries/checkpoints."""
        return [
            ("w_psi", self.w_psi), ("w_second", self.w_second),
            ("mlp_w1", self.mlp_w1), ("mlp_w2", self.mlp_w2),
            ("conv_s_w", self.conv_s_w), ("conv_s_b", self.conv_s_b),
            ("conv_u_w", self.conv_u_w), ("conv_u_b", self.conv_u_b),
            ("conv_v_w", self.conv_v_w), ("conv_v_b", self.conv_v_b),
            ("w_g", self.w_g),
        ]


@dataclass
class AdjacencyFactors:
    """Factored form of the input-dependent adjacency.

    The implied dense matrix is

        A = channel_embed @ diag(channel_weights) @ channel_embed.T
          + (spatial_embed @ spatial_embed.T) * (row_scale @ col_scale.T)

    For non-boundary variants row_scale == col_scale (the spatial-attention
    diagonal, or all-ones when spatial attention is off).
    """

    channel_embed: Tensor    # (N, C)
    spatial_embed: Tensor    # (N, C)
    channel_weights: Tensor  # (1, C), entries in (0, 1] (ones when disabled)
    row_scale: Tensor        # (N, 1)
    col_scale: Tensor        # (N, 1)
    variant: str
    degree_epsilon: float = DEGREE_EPSILON

    @property
    def n_vertices(self) -> int:
        return self.channel_embed.shape[0]


def channel_attention(r: VertexEmbeddings, p: BiGConvParams) -> Tensor:
    """Per-channel weights in (0, 1): sigmoid(MLP(max-pool over positions))."""
    pooled = en.pool_over_positions(r.map)                 # (1, C)
    hidden = en.relu(en.matmul(pooled, p.mlp_w1))          # (1, Ch)
    return en.sigmoid(en.matmul(hidden, p.mlp_w2))         # (1, C)


def spatial_attention(r: VertexEmbeddings, p: BiGConvParams) -> Tensor:
    """Per-vertex weights in (0, 1): sigmoid(1x1 conv of max-pool over channels)."""
    pooled = en.pool_over_channels(r.map)                  # (N, 1)
    return en.sigmoid(pooled * p.conv_s_w + p.conv_s_b)


def boundary_spatial_factors(r: VertexEmbeddings, b: BoundaryMap,
                             p: BiGConvParams) -> tuple[Tensor, Tensor]:
    """Row/column factors of the boundary-aware spatial weighting.

    The rank-one matrix row_scale @ col_scale.T is never materialized; the
    column side pools the features masked by the boundary map, so affinities
    into boundary pixels are emphasized.
    """
    if b.map.shape[0] != r.n_vertices:
        raise ShapeError(
            f"boundary map has {b.map.shape[0]} vertices, features have {r.n_vertices}"
        )
    row = en.sigmoid(en.pool_over_channels(r.map) * p.conv_u_w + p.conv_u_b)
    masked = r.map * b.map  # boundary column broadcast across channels
    col = en.sigmoid(en.pool_over_channels(masked) * p.conv_v_w + p.conv_v_b)
    return row, col


def build_adjacency_factors(r: VertexEmbeddings, b: BoundaryMap | None,
                            p: BiGConvParams, variant: str) -> AdjacencyFactors:
    """Assemble the factored adjacency for one of the input-dependent variants."""
    if variant not in FACTORED_VARIANTS:
        raise ValueError(
            f"variant {variant!r} has no factored adjacency; expected one of "
            f"{FACTORED_VARIANTS}"
        )
    if variant == "boundary" and b is None:
        raise ValueError("boundary variant requires a boundary map")

    n = r.n_vertices
    psi = en.matmul(r.map, p.w_psi)
    second = en.matmul(r.map, p.w_second)

    if variant in ("channel", "channel_spatial", "boundary"):
        lam = channel_attention(r, p)
    else:
        lam = Tensor(np.ones((1, r.channels)))

    if variant == "boundary":
        row, col = boundary_spatial_factors(r, b, p)
    elif variant in ("spatial", "channel_spatial"):
        row = spatial_attention(r, p)
        col = row
    else:
        row = Tensor(np.ones((n, 1)))
        col = row

    return AdjacencyFactors(psi, second, lam, row, col, variant,
                            degree_epsilon=p.degree_epsilon)


def adjacency_apply(f: AdjacencyFactors, z: Tensor) -> Tensor:
    """A @ z through the factors in O(N*C*C'), never forming the N x N matrix."""
    if z.ndim != 2 or z.shape[0] != f.n_vertices:
        raise ShapeError(
            f"adjacency_apply: z {z.shape} does not match {f.n_vertices} vertices"
        )
    lam_col = en.reshape(f.channel_weights, (f.channel_weights.shape[1], 1))
    term1 = en.matmul(f.channel_embed,
                      lam_col * en.matmul(en.transpose(f.channel_embed), z))
    inner = en.matmul(en.transpose(f.spatial_embed), f.col_scale * z)
    term2 = f.row_scale * en.matmul(f.spatial_embed, inner)
    return term1 + term2


def degree(f: AdjacencyFactors) -> tuple[Tensor, int]:
    """Exact adjacency row sums, clamped from below at degree_epsilon.

    Returns the clamped degree column and how many entries were clamped.
    Embedding dot products are signed, so raw degrees can be non-positive;
    the clamp keeps the inverse square root defined.
    """
    ones = Tensor(np.ones((f.n_vertices, 1)))
    raw = adjacency_apply(f, ones)
    clamp_count = int(np.count_nonzero(raw.data < f.degree_epsilon))
    return en.clamp_min(raw, f.degree_epsilon), clamp_count


def laplacian_apply(f: AdjacencyFactors, x: Tensor,
                    deg: Tensor | None = None) -> Tensor:
    """(I - D^-1/2 A D^-1/2) @ x through the factors; linear in N."""
    if deg is None:
        deg, _ = degree(f)
    inv_root = en.recip_sqrt(deg)
    return x - inv_root * adjacency_apply(f, inv_root * x)


def bigconv_layer(r: VertexEmbeddings, b: BoundaryMap | None,
                  p: BiGConvParams, variant: str) -> VertexEmbeddings:
    """One graph-convolution layer: relu(L @ r @ W) plus the input residual."""
    f = build_adjacency_factors(r, b, p, variant)
    deg, _ = degree(f)
    propagated = laplacian_apply(f, en.matmul(r.map, p.w_g), deg)
    return VertexEmbeddings(en.relu(propagated) + r.map, r.height, r.width)


def classic_gcn_layer(x: Tensor, theta: Tensor, height: int, width: int) -> Tensor:
    """Input-independent baseline: D^-1/2 (A + I) D^-1/2 @ x @ theta.

    A is the hand-crafted 4-neighbor grid adjacency; degrees are its
    row sums after adding self-loops.
    """
    if x.ndim != 2 or x.shape[0] != height * width:
        raise ShapeError(f"classic_gcn_layer: {x.shape} does not cover {height}x{width}")
    inv_root = Tensor(1.0 / np.sqrt(en.grid_degrees(height, width, x.data.dtype)))
    propagated = inv_root * en.grid_neighbor_sum(inv_root * x, height, width)
    return en.matmul(propagated, theta)
