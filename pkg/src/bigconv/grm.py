"""Graph reasoning module: a chain of graph-convolution layers.

Layers are linked either by plain residual hand-off (each layer already adds
its own residual) or by a gated recurrent unit, where the chain state is the
hidden vector and each layer's output is the step input.  The GRU is the
standard fully-connected cell applied per vertex with shared weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as en
from .engine import ShapeError, Tensor
from .graph import BiGConvParams, BoundaryMap, VertexEmbeddings, bigconv_layer, classic_gcn_layer

CONNECTIONS = ("residual", "gru")


@dataclass
class GruParams:
    """Update gate z, reset gate s, candidate h; each x-weight, h-weight, bias."""

    wz: Tensor
    uz: Tensor
    bz: Tensor
    ws: Tensor
    us: Tensor
    bs: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, scale: float = 0.3) -> "GruParams":
        s = scale / np.sqrt(channels)

        def w():
            return Tensor(rng.normal(0.0, s, size=(channels, channels)))

        def b():
            return Tensor(np.zeros((1, channels)))

        return cls(wz=w(), uz=w(), bz=b(), ws=w(), us=w(), bs=b(),
                   wh=w(), uh=w(), bh=b())

    def named_tensors(self):
        return [("wz", self.wz), ("uz", self.uz), ("bz", self.bz),
                ("ws", self.ws), ("us", self.us), ("bs", self.bs),
                ("wh", self.wh), ("uh", self.uh), ("bh", self.bh)]


@dataclass
class GrmConfig:
    """Chain depth, connection style, and per-layer parameters."""

    layers: list[BiGConvParams]
    connection: str = "gru"
    gru: GruParams | None = field(default=None)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("reasoning chain needs at least one layer")
        if self.connection not in CONNECTIONS:
            raise ValueError(f"connection must be one of {CONNECTIONS}")
        if self.connection == "gru" and self.gru is None:
            raise ValueError("gru connection requires gate parameters")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, n_layers: int = 3,
             connection: str = "gru", reduction: int = 4) -> "GrmConfig":
        layers = [BiGConvParams.init(channels, rng, reduction=reduction)
                  for _ in range(n_layers)]
        gru = GruParams.init(channels, rng) if connection == "gru" else None
        return cls(layers=layers, connection=connection, gru=gru)


def gru_cell(h: Tensor, x: Tensor, gates: GruParams) -> Tensor:
    """One GRU step; gates stay in (0, 1), output is their convex mix."""
    if h.shape != x.shape:
        raise ShapeError(f"gru_cell state {h.shape} and input {x.shape} differ")
    z = en.sigmoid(en.matmul(x, gates.wz) + en.matmul(h, gates.uz) + gates.bz)
    s = en.sigmoid(en.matmul(x, gates.ws) + en.matmul(h, gates.us) + gates.bs)
    cand = en.tanh(en.matmul(x, gates.wh) + en.matmul(s * h, gates.uh) + gates.bh)
    return (1.0 - z) * h + z * cand


def grm_forward(r: VertexEmbeddings, b: BoundaryMap | None, cfg: GrmConfig,
                variant: str = "boundary") -> VertexEmbeddings:
    """Run the chained layers; variant 'classic' swaps in the grid baseline.

    For the classic baseline each link wraps the bare propagation with the
    same relu + residual convention so all variants share structure and
    parameter count in ablations (w_g doubles as its projection).
    """
    h = r.map
    for p in cfg.layers:
        if variant == "classic":
            x = en.relu(classic_gcn_layer(h, p.w_g, r.height, r.width)) + h
        else:
            x = bigconv_layer(VertexEmbeddings(h, r.height, r.width), b, p, variant).map
        h = gru_cell(h, x, cfg.gru) if cfg.connection == "gru" else x
    return VertexEmbeddings(h, r.height, r.width)
