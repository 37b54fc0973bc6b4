"""Desk-scale end-to-end segmentation pipeline.

A small four-stage encoder (1x1 linear map + relu + 2x2 max-pool per stage)
yields feature grids at strides 2/4/8/16.  Two aggregation chains fuse them
coarse-to-fine: the deeper chain stops at the region grid, the shallower one
at the boundary grid (twice the region resolution).  The region head emits
two-channel logits, the boundary head a soft boundary map that is
downsampled by two and fed to the graph reasoning module together with the
region logits.  Training minimizes region Dice (on logits upsampled back to
image resolution) plus a weighted boundary Dice, with Adam.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine as en
from .data import SceneSample, boundary_from_mask
from .engine import Tensor
from .graph import BiGConvParams, BoundaryMap, VARIANTS, VertexEmbeddings
from .grm import CONNECTIONS, GrmConfig, GruParams, grm_forward
from .metrics import default_biou_band, metric_bacc_flagged, metric_biou, metric_dice

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DICE_SMOOTH = 1.0


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    image_size: int = 64
    encoder_widths: tuple = (8, 16, 24, 24)
    agg_channels: int = 16
    rs_size: int = 16
    rs_channels: int = 2
    bs_size: int = 32
    grm_layers: int = 3
    grm_connection: str = "gru"
    variant: str = "boundary"
    alpha: float = 1.0
    learning_rate: float = 6e-3
    decayed_learning_rate: float = 0.36e-3
    decay_fraction: float = 0.6
    iterations: int = 500
    batch_size: int = 8
    seed: int = 7
    degree_epsilon: float = 1e-4
    reduction: int = 4
    init_scale: float = 0.5

    def level_sizes(self) -> list[int]:
        return [self.image_size // 2 ** (k + 1) for k in range(4)]

    def validate(self) -> "PipelineConfig":
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if self.image_size % 16 != 0 or self.image_size < 16:
            raise ConfigError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if len(self.encoder_widths) != 4 or any(w < 1 for w in self.encoder_widths):
            raise ConfigError(f"encoder_widths must be four positive ints, got {self.encoder_widths}")
        sizes = self.level_sizes()
        if self.bs_size != 2 * self.rs_size:
            raise ConfigError(
                f"boundary grid ({self.bs_size}) must be 2x the region grid ({self.rs_size}) per side")
        for name, value in (("rs_size", self.rs_size), ("bs_size", self.bs_size)):
            if value not in sizes[:-1]:
                raise ConfigError(
                    f"{name}={value} must match an encoder level above the coarsest: {sizes[:-1]}")
        if self.rs_channels < 1:
            raise ConfigError("rs_channels must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.grm_connection not in CONNECTIONS:
            raise ConfigError(f"grm_connection must be one of {CONNECTIONS}")
        if self.grm_layers < 1:
            raise ConfigError("grm_layers must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch_size must be >= 1 and iterations >= 0")
        if not 0.0 <= self.decay_fraction <= 1.0:
            raise ConfigError("decay_fraction must lie in [0, 1]")
        return self

    @classmethod
    def tiny(cls, seed: int = 0) -> "PipelineConfig":
        """32x32 images, 8x8 region grid (64 vertices): for gradient checks."""
        return cls(image_size=32, encoder_widths=(3, 4, 6, 6), agg_channels=4,
                   rs_size=8, bs_size=16, batch_size=2, iterations=20, seed=seed)


@dataclass
class ModelState:
    config: PipelineConfig
    params: dict            # name -> Tensor, declaration order
    grm: GrmConfig
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    iteration: int = 0

    def named_parameters(self):
        return list(self.params.items())


def _agg_plan(cfg: PipelineConfig, target: int) -> list[int]:
    """Level indices fused into the chain, coarse to fine, ending at `target`."""
    sizes = cfg.level_sizes()
    plan = []
    for i in (2, 1, 0):
        if sizes[i] <= target:
            plan.append(i)
    return plan


def init_model(cfg: PipelineConfig) -> ModelState:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, Tensor] = {}

    def register(name, rows, cols, fill=None):
        s = cfg.init_scale / math.sqrt(rows)
        data = (np.full((rows, cols), fill) if fill is not None
                else rng.normal(0.0, s, size=(rows, cols)))
        params[name] = Tensor(data)
        return params[name]

    # relu-stage biases start slightly positive: with tiny widths a zero-bias
    # relu chain can die wholesale at init, collapsing every position to the
    # same feature row (and max-pools to all-way ties)
    widths = list(cfg.encoder_widths)
    c_in = 1
    for k, c_out in enumerate(widths):
        register(f"enc{k}_w", c_in, c_out)
        register(f"enc{k}_b", 1, c_out, fill=0.05)
        c_in = c_out

    for prefix, target in (("ragg", cfg.rs_size), ("bagg", cfg.bs_size)):
        carry_ch = widths[3]
        for i in _agg_plan(cfg, target):
            register(f"{prefix}{i}_carry_w", carry_ch, cfg.agg_channels)
            register(f"{prefix}{i}_carry_b", 1, cfg.agg_channels, fill=0.05)
            register(f"{prefix}{i}_skip_w", widths[i], cfg.agg_channels)
            register(f"{prefix}{i}_skip_b", 1, cfg.agg_channels, fill=0.05)
            carry_ch = cfg.agg_channels

    register("rhead_w", cfg.agg_channels, cfg.rs_channels)
    register("rhead_b", 1, cfg.rs_channels, fill=0.0)
    register("bhead_w", cfg.agg_channels, 1)
    register("bhead_b", 1, 1, fill=0.0)

    layers = []
    for l in range(cfg.grm_layers):
        p = BiGConvParams.init(cfg.rs_channels, rng, reduction=cfg.reduction,
                               scale=cfg.init_scale)
        p.degree_epsilon = cfg.degree_epsilon
        for name, t in p.named_tensors():
            params[f"grm{l}_{name}"] = t
        layers.append(p)
    gru = None
    if cfg.grm_connection == "gru":
        gru = GruParams.init(cfg.rs_channels, rng, scale=cfg.init_scale)
        for name, t in gru.named_tensors():
            params[f"gru_{name}"] = t
    grm = GrmConfig(layers=layers, connection=cfg.grm_connection, gru=gru)

    state = ModelState(config=cfg, params=params, grm=grm)
    for name, p in params.items():
        state.adam_m[name] = np.zeros_like(p.data)
        state.adam_v[name] = np.zeros_like(p.data)
    return state


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _flat(grid: Tensor) -> Tensor:
    h, w, c = grid.shape
    return en.reshape(grid, (h * w, c))

def _grid(flat: Tensor, size: int) -> Tensor:
    return en.reshape(flat, (size, size, flat.shape[1]))


def encoder_forward(state: ModelState, image: np.ndarray) -> list[Tensor]:
    """Four feature grids at strides 2, 4, 8, 16 of the input image."""
    cfg = state.config
    s = cfg.image_size
    if image.shape != (s, s):
        raise ConfigError(f"image shape {image.shape} does not match configured {s}x{s}")
    x = Tensor(np.asarray(image, dtype=np.float64).reshape(s, s, 1))
    levels = []
    for k in range(4):
        flat = en.relu(en.linear_map(_flat(x), state.params[f"enc{k}_w"],
                                     state.params[f"enc{k}_b"]))
        x = en.max_pool_2x2(_grid(flat, x.shape[0]))
        levels.append(x)
    return levels


def feature_aggregation(state: ModelState, levels: list[Tensor], which: str) -> Tensor:
    """Chain pairwise fusion blocks coarse-to-fine up to the configured grid.

    Each block applies a 1x1 linear map to both resolutions, bilinearly
    resamples the coarser result up to the finer one, adds and applies relu.
    """
    cfg = state.config
    if len(levels) < 2:
        raise ConfigError(f"feature aggregation needs at least 2 levels, got {len(levels)}")
    if which == "deep_for_region":
        prefix, target = "ragg", cfg.rs_size
    elif which == "shallow_for_boundary":
        prefix, target = "bagg", cfg.bs_size
    else:
        raise ConfigError(f"unknown aggregation path {which!r}")

    y = levels[3]
    for i in _agg_plan(cfg, target):
        size = levels[i].shape[0]
        carried = en.linear_map(_flat(y), state.params[f"{prefix}{i}_carry_w"],
                                state.params[f"{prefix}{i}_carry_b"])
        skipped = en.linear_map(_flat(levels[i]), state.params[f"{prefix}{i}_skip_w"],
                                state.params[f"{prefix}{i}_skip_b"])
        up = en.bilinear_resample(_grid(carried, y.shape[0]), (size, size))
        y = en.relu(up + _grid(skipped, size))
    return y


def heads_forward(state: ModelState, region_feats: Tensor,
                  boundary_feats: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Region logits (N, 2), boundary map in (0, 1), and its 2x downsample."""
    cfg = state.config
    if region_feats.shape[0] != cfg.rs_size or boundary_feats.shape[0] != cfg.bs_size:
        raise ConfigError(
            f"head inputs {region_feats.shape[:2]}/{boundary_feats.shape[:2]} do not match "
            f"configured grids {cfg.rs_size}/{cfg.bs_size}")
    rs_logits = en.linear_map(_flat(region_feats), state.params["rhead_w"],
                              state.params["rhead_b"])
    bs_map = en.sigmoid(en.linear_map(_flat(boundary_feats), state.params["bhead_w"],
                                      state.params["bhead_b"]))
    bs_down = _flat(en.bilinear_resample(_grid(bs_map, cfg.bs_size),
                                         (cfg.rs_size, cfg.rs_size)))
    return rs_logits, bs_map, bs_down


@dataclass
class ForwardResult:
    rs_logits: Tensor      # (rs^2, 2) before reasoning
    refined: Tensor        # (rs^2, 2) after the reasoning chain
    bs_map: Tensor         # (bs^2, 1)
    bs_down: Tensor        # (rs^2, 1)
    logits_full: Tensor    # (image^2, 2) refined logits at image resolution


def forward(state: ModelState, image: np.ndarray) -> ForwardResult:
    cfg = state.config
    levels = encoder_forward(state, image)
    region_feats = feature_aggregation(state, levels, "deep_for_region")
    boundary_feats = feature_aggregation(state, levels, "shallow_for_boundary")
    rs_logits, bs_map, bs_down = heads_forward(state, region_feats, boundary_feats)

    r = VertexEmbeddings(rs_logits, cfg.rs_size, cfg.rs_size)
    b = BoundaryMap(bs_down)
    refined = grm_forward(r, b, state.grm, cfg.variant).map

    up = en.bilinear_resample(_grid(refined, cfg.rs_size),
                              (cfg.image_size, cfg.image_size))
    logits_full = _flat(up)
    return ForwardResult(rs_logits, refined, bs_map, bs_down, logits_full)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def dice_loss(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Smoothed Dice loss, differentiable in pred; pred must lie in [0, 1]."""
    g = np.asarray(gt, dtype=np.float64).reshape(pred.shape)
    if pred.data.min() < 0.0 or pred.data.max() > 1.0:
        raise ValueError("dice_loss predictions must lie in [0, 1]")
    if not np.all((g == 0.0) | (g == 1.0)):
        raise ValueError("dice_loss ground truth must be binary")
    inter = en.tsum(pred * Tensor(g))
    denom = en.tsum(pred) + float(g.sum())
    return 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)


def loss_components(region_logits: Tensor, region_gt: np.ndarray, boundary_pred: Tensor,
                    boundary_gt: np.ndarray, alpha: float) -> tuple[Tensor, float, float]:
    """Total loss tensor plus its region/boundary components as floats."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    g = np.asarray(region_gt, dtype=np.float64).reshape(-1, 1)
    if not np.all((g == 0.0) | (g == 1.0)):
        raise ValueError("region ground truth must be binary")
    onehot = np.concatenate([1.0 - g, g], axis=1)
    probs = en.softmax(region_logits, axis=1)

    inter = en.tsum(probs * Tensor(onehot), axis=0)            # (1, 2)
    denom = en.tsum(probs, axis=0) + Tensor(onehot.sum(axis=0, keepdims=True))
    dice_vec = 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    l_region = en.tsum(dice_vec) * 0.5

    l_boundary = dice_loss(boundary_pred, boundary_gt)
    loss = l_region + alpha * l_boundary
    return loss, l_region.item(), l_boundary.item()


def total_loss(region_logits: Tensor, region_gt: np.ndarray, boundary_pred: Tensor,
               boundary_gt: np.ndarray, alpha: float) -> Tensor:
    """Softmaxed two-class region Dice (channel mean) plus alpha * boundary Dice."""
    return loss_components(region_logits, region_gt, boundary_pred,
                           boundary_gt, alpha)[0]


def downsample_mask(mask: np.ndarray, target: int) -> np.ndarray:
    """Majority-style downsample: bilinear on the float mask, threshold at 0.5."""
    m = np.asarray(mask, dtype=np.float64)
    t = en.bilinear_resample(Tensor(m[..., None]), (target, target))
    return t.data[..., 0] >= 0.5


def boundary_target(sample: SceneSample, bs_size: int) -> np.ndarray:
    """Boundary supervision at the boundary head's native grid."""
    return boundary_from_mask(downsample_mask(sample.region_gt, bs_size), 1)


def sample_loss(state: ModelState, sample: SceneSample) -> tuple[Tensor, float, float]:
    cfg = state.config
    result = forward(state, sample.image)
    return loss_components(result.logits_full, sample.region_gt.reshape(-1, 1),
                           result.bs_map,
                           boundary_target(sample, cfg.bs_size).reshape(-1, 1),
                           cfg.alpha)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def learning_rate_at(cfg: PipelineConfig, iteration: int) -> float:
    if iteration >= cfg.decay_fraction * cfg.iterations:
        return cfg.decayed_learning_rate
    return cfg.learning_rate


def train_step(state: ModelState, batch: list[SceneSample],
               learning_rate: float | None = None) -> tuple[float, float, float]:
    """One forward/backward/Adam update over a batch; returns loss components.

    A zero learning rate advances only the iteration counter.  A non-finite
    loss aborts, naming the first non-finite tensor in the forward graph.
    """
    cfg = state.config
    losses, l_rs, l_bs = [], [], []
    for sample in batch:
        loss, l_r, l_b = sample_loss(state, sample)
        losses.append(loss)
        l_rs.append(l_r)
        l_bs.append(l_b)
    batch_loss = losses[0]
    for extra in losses[1:]:
        batch_loss = batch_loss + extra
    batch_loss = batch_loss * (1.0 / len(losses))

    if not np.all(np.isfinite(batch_loss.data)):
        culprit = en.first_nonfinite(batch_loss) or "loss"
        raise NonFiniteLossError(f"non-finite loss; first non-finite tensor: {culprit}")

    lr = learning_rate_at(cfg, state.iteration) if learning_rate is None else learning_rate
    if lr != 0.0:
        # parameters outside this variant's graph keep grad None, not stale values
        for p in state.params.values():
            p.grad = None
        batch_loss.backward(np.ones_like(batch_loss.data))
        t = state.iteration + 1
        bias1 = 1.0 - ADAM_BETA1 ** t
        bias2 = 1.0 - ADAM_BETA2 ** t
        for name, p in state.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = state.adam_m[name]
            v = state.adam_v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p.data = p.data - lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
    state.iteration += 1
    return float(batch_loss.data.reshape(-1)[0]), float(np.mean(l_rs)), float(np.mean(l_bs))


def train(state: ModelState, samples: list[SceneSample],
          iterations: int | None = None, log_rows: list | None = None) -> ModelState:
    """Deterministic epoch-shuffled training loop."""
    cfg = state.config
    iters = cfg.iterations if iterations is None else iterations
    rng = np.random.default_rng([cfg.seed, 0x5E0])
    queue: list[int] = []
    for _ in range(iters):
        batch = []
        for _ in range(cfg.batch_size):
            if not queue:
                queue = list(rng.permutation(len(samples)))
            batch.append(samples[queue.pop(0)])
        total, l_r, l_b = train_step(state, batch)
        if log_rows is not None:
            log_rows.append((state.iteration, total, l_r, l_b))
    return state


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict_mask(state: ModelState, image: np.ndarray) -> np.ndarray:
    """Hard foreground mask at image resolution (argmax of upsampled logits)."""
    result = forward(state, image)
    s = state.config.image_size
    return (result.logits_full.data[:, 1] > result.logits_full.data[:, 0]).reshape(s, s)


def evaluate(state: ModelState, samples: list[SceneSample],
             band: int | None = None) -> dict:
    """Per-class Dice / balanced accuracy / boundary IoU over a sample list."""
    cfg = state.config
    if band is None:
        band = default_biou_band(cfg.image_size, cfg.image_size)
    per_sample = []
    for sample in samples:
        pred = predict_mask(state, sample.image)
        gt = sample.region_gt.astype(bool)
        row = {"seed": sample.seed}
        for cls, p, g in (("foreground", pred, gt), ("background", ~pred, ~gt)):
            bacc, degenerate = metric_bacc_flagged(p, g)
            row[cls] = {
                "dice": metric_dice(p, g),
                "bacc": bacc,
                "bacc_degenerate": degenerate,
                "biou": metric_biou(p, g, band),
            }
        per_sample.append(row)

    def mean_of(cls, key):
        return float(np.mean([r[cls][key] for r in per_sample])) if per_sample else 0.0

    per_class = {
        cls: {key: mean_of(cls, key) for key in ("dice", "bacc", "biou")}
        for cls in ("foreground", "background")
    }
    return {
        "seed": cfg.seed,
        "n_samples": len(samples),
        "biou_band": band,
        "config": asdict(cfg),
        "per_class": per_class,
        "mean_region_dice": per_class["foreground"]["dice"],
        "per_sample": per_sample,
    }
