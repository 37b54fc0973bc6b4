"""Boundary-aware input-dependent graph convolution.

Feature maps become graphs over their spatial positions; the adjacency is
estimated from the features themselves, refined by channel and spatial
attention, and fused with a predicted boundary map.  The low-rank structure
keeps adjacency products, degrees and the normalized-Laplacian application
linear in the number of vertices, verified against dense brute-force
oracles.
"""

from .engine import (DomainError, ShapeError, Tensor, bilinear_resample, linear_map,
                     matmul, pool_over_channels, pool_over_positions, vjp)
from .graph import (AdjacencyFactors, BiGConvParams, BoundaryMap, VARIANTS,
                    VertexEmbeddings, adjacency_apply, bigconv_layer,
                    boundary_spatial_factors, build_adjacency_factors,
                    channel_attention, classic_gcn_layer, degree, laplacian_apply,
                    spatial_attention)
from .grm import GrmConfig, GruParams, grm_forward, gru_cell
from .metrics import metric_bacc, metric_biou, metric_dice
from .data import SceneSample, boundary_from_mask, generate_scene, generate_dataset
from .pipeline import (ModelState, PipelineConfig, dice_loss, evaluate, init_model,
                       predict_mask, total_loss, train, train_step)
from .oracle import (dense_adjacency, dense_degree_laplacian, equivalence_check,
                     grad_check, run_equivalence_suite, scaling_bench)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
