"""Independent brute-force oracles and checkers for the factored fast paths.

Everything here recomputes results from raw parameter values with
straight-line numpy: the dense adjacency is materialized term by term and
never calls into the factored implementations, so agreement between the two
paths is evidence, not tautology.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import engine as en
from . import graph
from .engine import Tensor

DENSE_GUARD_N = 8192


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _rank_term_sum(left: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Sum_c weights[c] * outer(left[:, c], left[:, c]), built channel by channel."""
    n = left.shape[0]
    acc = np.zeros((n, n), dtype=left.dtype)
    for c in range(left.shape[1]):
        acc += weights[c] * np.outer(left[:, c], left[:, c])
    return acc


def dense_factor_arrays(r: np.ndarray, b: np.ndarray | None,
                        p: graph.BiGConvParams, variant: str):
    """Recompute embeddings, channel weights and spatial factors independently."""
    r = np.asarray(r, dtype=np.float64)
    n, c = r.shape
    psi = r @ p.w_psi.data
    second = r @ p.w_second.data

    if variant in ("channel", "channel_spatial", "boundary"):
        pooled = r.max(axis=0)
        hidden = np.maximum(pooled @ p.mlp_w1.data, 0.0)
        lam = _sigmoid(hidden @ p.mlp_w2.data).reshape(-1)
    else:
        lam = np.ones(c)

    if variant == "boundary":
        if b is None:
            raise ValueError("boundary variant requires a boundary map")
        b = np.asarray(b, dtype=np.float64).reshape(n, 1)
        u = _sigmoid(r.max(axis=1) * p.conv_u_w.item() + p.conv_u_b.item())
        v = _sigmoid((r * b).max(axis=1) * p.conv_v_w.item() + p.conv_v_b.item())
    elif variant in ("spatial", "channel_spatial"):
        u = _sigmoid(r.max(axis=1) * p.conv_s_w.item() + p.conv_s_b.item())
        v = u
    else:
        u = np.ones(n)
        v = u
    return psi, second, lam, u, v


def dense_from_factor_arrays(psi, second, lam, u, v) -> np.ndarray:
    """Materialize psi diag(lam) psi^T + (second second^T) * outer(u, v)."""
    n = psi.shape[0]
    if n > DENSE_GUARD_N:
        raise ValueError(f"dense oracle guard: N={n} exceeds {DENSE_GUARD_N}")
    adj = _rank_term_sum(psi, np.asarray(lam).reshape(-1))
    gram = _rank_term_sum(second, np.ones(second.shape[1]))
    adj += gram * np.outer(u, v)
    return adj


def dense_adjacency(r, b, p: graph.BiGConvParams, variant: str) -> np.ndarray:
    """The input-dependent adjacency, fully materialized."""
    if variant not in graph.FACTORED_VARIANTS:
        raise ValueError(f"no dense input-dependent adjacency for variant {variant!r}")
    return dense_from_factor_arrays(*dense_factor_arrays(r, b, p, variant))


def dense_grid_matrix(height: int, width: int) -> np.ndarray:
    """4-neighbor grid adjacency plus self-loops, materialized."""
    n = height * width
    if n > DENSE_GUARD_N:
        raise ValueError(f"dense oracle guard: N={n} exceeds {DENSE_GUARD_N}")
    adj = np.eye(n)
    for i in range(height):
        for j in range(width):
            a = i * width + j
            if i + 1 < height:
                adj[a, a + width] = adj[a + width, a] = 1.0
            if j + 1 < width:
                adj[a, a + 1] = adj[a + 1, a] = 1.0
    return adj


@dataclass
class DenseGraph:
    adjacency: np.ndarray
    degree_raw: np.ndarray   # exact row sums, fixed numpy order
    degree: np.ndarray       # clamped from below
    clamp_count: int
    laplacian: np.ndarray    # I - D^-1/2 A D^-1/2 with clamped degrees


def dense_degree_laplacian(adj: np.ndarray,
                           epsilon: float = graph.DEGREE_EPSILON) -> DenseGraph:
    adj = np.asarray(adj, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got {adj.shape}")
    raw = adj.sum(axis=1)
    clamp_count = int(np.count_nonzero(raw < epsilon))
    clamped = np.maximum(raw, epsilon)
    s = 1.0 / np.sqrt(clamped)
    lap = np.eye(adj.shape[0]) - s[:, None] * adj * s[None, :]
    return DenseGraph(adj, raw, clamped, clamp_count, lap)


# ---------------------------------------------------------------------------
# equivalence checking
# ---------------------------------------------------------------------------

@dataclass
class EquivalenceReport:
    variant: str
    n: int
    errors: dict
    clamp_count: int
    tolerance: float
    passed: bool

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        errs = ", ".join(f"{k}={v:.3e}" for k, v in self.errors.items())
        return f"[{status}] variant={self.variant} N={self.n} {errs} clamp={self.clamp_count}"


def _rel_err(fast: np.ndarray, dense: np.ndarray) -> float:
    scale = max(float(np.abs(dense).max(initial=0.0)), 1e-8)
    return float(np.abs(fast - dense).max(initial=0.0)) / scale


def equivalence_check(r, b, p: graph.BiGConvParams, variant: str, z,
                      tolerance: float = 1e-8, perturb: float = 0.0) -> EquivalenceReport:
    """Compare factored adjacency/degree/Laplacian application against dense.

    `perturb` adds a constant to the factored results; it exists so the
    checker can prove it detects injected errors.
    """
    r = np.asarray(r, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    n = r.shape[0]

    if variant == "classic":
        height, width = _square_dims(n)
        dense = dense_degree_laplacian(dense_grid_matrix(height, width))
        s = 1.0 / np.sqrt(dense.degree)
        fast_prop = (Tensor(s.reshape(-1, 1))
                     * en.grid_neighbor_sum(Tensor(s.reshape(-1, 1)) * Tensor(z),
                                            height, width)).data + perturb
        fast_deg = en.grid_degrees(height, width).reshape(-1) + perturb
        dense_prop = s[:, None] * (dense.adjacency @ (s[:, None] * z))
        errors = {
            "adjacency_apply": _rel_err(fast_prop, dense_prop),
            "degree": _rel_err(fast_deg, dense.degree_raw),
        }
        clamp_count = dense.clamp_count
    else:
        rt = graph.VertexEmbeddings(Tensor(r), 1, n)
        bt = graph.BoundaryMap(Tensor(np.asarray(b).reshape(n, 1))) if b is not None else None
        factors = graph.build_adjacency_factors(rt, bt, p, variant)
        adj = dense_adjacency(r, b, p, variant)
        dense = dense_degree_laplacian(adj, epsilon=p.degree_epsilon)

        fast_apply = graph.adjacency_apply(factors, Tensor(z)).data + perturb
        deg_t, clamp_count = graph.degree(factors)
        raw_fast = graph.adjacency_apply(factors, Tensor(np.ones((n, 1)))).data.reshape(-1)
        fast_lap = graph.laplacian_apply(factors, Tensor(z), deg_t).data + perturb

        errors = {
            "adjacency_apply": _rel_err(fast_apply, adj @ z),
            "degree": _rel_err(raw_fast + perturb, dense.degree_raw),
            "laplacian_apply": _rel_err(fast_lap, dense.laplacian @ z),
        }

    passed = all(e <= tolerance for e in errors.values())
    return EquivalenceReport(variant, n, errors, clamp_count, tolerance, passed)


def _square_dims(n: int) -> tuple[int, int]:
    side = int(round(np.sqrt(n)))
    if side * side == n:
        return side, side
    return 1, n


def random_instance(rng: np.random.Generator, n: int, channels: int,
                    variant: str) -> tuple[np.ndarray, np.ndarray | None,
                                           graph.BiGConvParams, np.ndarray]:
    """A random (features, boundary, params, probe) tuple for checks."""
    r = rng.uniform(-1.0, 1.0, size=(n, channels))
    b = rng.uniform(0.0, 1.0, size=(n, 1)) if variant == "boundary" else None
    p = graph.BiGConvParams.init(channels, rng)
    z = rng.uniform(-1.0, 1.0, size=(n, channels))
    return r, b, p, z


def clampfree_instance(rng: np.random.Generator, n: int, channels: int,
                       variant: str) -> tuple[np.ndarray, np.ndarray | None,
                                              graph.BiGConvParams, np.ndarray]:
    """Like random_instance, but embeddings stay positive so no degree clamps.

    Signed dot products are what drive degrees non-positive; positive
    features and weights keep every row sum safely above the clamp floor.
    """
    r, b, p, z = random_instance(rng, n, channels, variant)
    r = rng.uniform(0.1, 1.0, size=(n, channels))
    for t in (p.w_psi, p.w_second):
        t.data = np.abs(t.data) + 0.05
    return r, b, p, z


def run_equivalence_suite(seeds=range(50), sizes=(4, 16, 64, 256),
                          variants=graph.VARIANTS, channels: int = 3,
                          tolerance: float = 1e-8) -> list[EquivalenceReport]:
    reports = []
    for variant in variants:
        for n in sizes:
            for seed in seeds:
                rng = np.random.default_rng([seed, n, graph.VARIANTS.index(variant)])
                r, b, p, z = random_instance(rng, n, channels, variant)
                reports.append(equivalence_check(r, b, p, variant, z, tolerance))
    return reports


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    n_checked: int = 0
    n_skipped: int = 0
    n_below_noise: int = 0
    max_rel_err: float = 0.0
    threshold: float = 1e-4
    failures: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"[{status}] grad check: {self.n_checked} coords, "
                f"max rel err {self.max_rel_err:.3e}, {self.n_skipped} kink-skipped, "
                f"{self.n_below_noise} below fd noise")


def _one_sided_kink(d_plus: float, d_minus: float, noise: float) -> bool:
    # a kink at the evaluation point shows as disagreeing one-sided slopes;
    # slopes within roundoff of each other count as agreeing
    scale = max(abs(d_plus), abs(d_minus))
    return scale > 8.0 * noise and abs(d_plus - d_minus) > max(0.1 * scale, 8.0 * noise)


def grad_check(scalar_fn, params: list[Tensor], eps: float = 1e-5,
               threshold: float = 1e-4) -> GradCheckReport:
    """Central finite differences against the reverse-mode gradient.

    `scalar_fn` rebuilds its scalar output from the current `params` data on
    every call.  Relative error uses denominator max(|fd|, |grad|, 1e-8);
    a failure must also clear the fp64 roundoff floor of the difference
    quotient, otherwise near-zero gradients fail on noise alone.
    Coordinates sitting on a kink (one-sided slopes disagree, e.g. relu at
    exactly zero or a max-pool tie flip) are skipped and listed, not failed.
    A coordinate failing at step `eps` is retried at eps/16: if the two
    estimates disagree, the coarse step straddled a kink and the fine
    estimate is the valid reference.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = scalar_fn()
    f0 = out.item()
    if not np.isfinite(f0):
        raise ValueError("scalar function value is not finite")
    for t in params:  # a param absent from this graph must read as zero grad
        t.grad = None
    out.backward(np.ones_like(out.data))
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in params]

    ulp = float(np.finfo(np.float64).eps)
    noise = 32.0 * max(1.0, abs(f0)) * ulp / (2.0 * eps)

    report = GradCheckReport(threshold=threshold)
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for ci in range(flat.size):
            def slopes(h):
                orig = flat[ci]
                flat[ci] = orig + h
                fp = scalar_fn().item()
                flat[ci] = orig - h
                fm = scalar_fn().item()
                flat[ci] = orig
                return (fp - fm) / (2.0 * h), (fp - f0) / h, (f0 - fm) / h

            central, d_plus, d_minus = slopes(eps)
            if _one_sided_kink(d_plus, d_minus, noise):
                report.n_skipped += 1
                report.skipped.append((pi, ci))
                continue

            a = analytic[pi].reshape(-1)[ci]
            diff = abs(central - a)
            rel = diff / max(abs(central), abs(a), 1e-8)
            noise_here = noise
            if rel > threshold and diff > noise:
                # kink inside the step span, or a genuine error: refine
                fine, dp1, dm1 = slopes(eps / 16.0)
                noise_f = noise * 16.0
                if _one_sided_kink(dp1, dm1, noise_f):
                    report.n_skipped += 1
                    report.skipped.append((pi, ci))
                    continue
                if abs(fine - central) > max(
                        0.5 * threshold * max(abs(central), abs(fine)), noise_f):
                    diff = abs(fine - a)
                    rel = diff / max(abs(fine), abs(a), 1e-8)
                    noise_here = noise_f
                if rel > threshold and diff > noise_here:
                    report.failures.append((pi, ci, rel))
            report.n_checked += 1
            if rel > threshold and diff <= noise_here:
                report.n_below_noise += 1  # too small to verify against fd
            else:
                report.max_rel_err = max(report.max_rel_err, rel)
    return report


# ---------------------------------------------------------------------------
# scaling benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchReport:
    rows: list               # (method, n, channels, median_seconds)
    slope_factored: float
    slope_dense: float

    def to_csv(self) -> str:
        lines = ["method,N,C,median_seconds"]
        for method, n, c, median in self.rows:
            lines.append(f"{method},{n},{c},{median:.9f}")
        return "\n".join(lines) + "\n"

    def __str__(self):
        return (f"factored slope {self.slope_factored:.3f}, "
                f"dense slope {self.slope_dense:.3f} over "
                f"N={sorted({r[1] for r in self.rows})}")


def _random_factors(rng: np.random.Generator, n: int, channels: int) -> graph.AdjacencyFactors:
    return graph.AdjacencyFactors(
        channel_embed=Tensor(rng.uniform(-1.0, 1.0, size=(n, channels))),
        spatial_embed=Tensor(rng.uniform(-1.0, 1.0, size=(n, channels))),
        channel_weights=Tensor(rng.uniform(0.2, 0.8, size=(1, channels))),
        row_scale=Tensor(rng.uniform(0.2, 0.8, size=(n, 1))),
        col_scale=Tensor(rng.uniform(0.2, 0.8, size=(n, 1))),
        variant="boundary",
    )


def scaling_bench(sizes=(256, 1024, 4096), repeats: int = 5,
                  channels: int = 8, seed: int = 0) -> BenchReport:
    """Median wall-times of factored vs dense Laplacian application.

    Assertions belong on the fitted log-log slopes, not the absolute times:
    the factored path is linear in N, the dense product quadratic.
    """
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    rows = []
    med_fac, med_den = [], []
    for n in sizes:
        rng = np.random.default_rng([seed, n])
        factors = _random_factors(rng, n, channels)
        x = Tensor(rng.uniform(-1.0, 1.0, size=(n, channels)))
        deg, _ = graph.degree(factors)

        dense_adj = dense_from_factor_arrays(
            factors.channel_embed.data, factors.spatial_embed.data,
            factors.channel_weights.data, factors.row_scale.data.reshape(-1),
            factors.col_scale.data.reshape(-1))
        dense_lap = dense_degree_laplacian(dense_adj).laplacian

        graph.laplacian_apply(factors, x, deg)  # warm-up
        _ = dense_lap @ x.data

        fac_times, den_times = [], []
        for _rep in range(max(1, repeats)):
            t0 = time.perf_counter()
            graph.laplacian_apply(factors, x, deg)
            fac_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            _ = dense_lap @ x.data
            den_times.append(time.perf_counter() - t0)
        mf = float(np.median(fac_times))
        md = float(np.median(den_times))
        rows.append(("factored", n, channels, mf))
        rows.append(("dense", n, channels, md))
        med_fac.append(mf)
        med_den.append(md)

    logs = np.log(np.asarray(sizes, dtype=np.float64))
    slope_fac = float(np.polyfit(logs, np.log(med_fac), 1)[0])
    slope_den = float(np.polyfit(logs, np.log(med_den), 1)[0])
    return BenchReport(rows, slope_fac, slope_den)
