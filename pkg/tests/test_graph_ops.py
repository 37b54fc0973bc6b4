"""Attention diagonals, factored adjacency, degrees, Laplacian, layers."""

import numpy as np
import pytest

import bigconv.engine as en
from bigconv import graph, oracle
from bigconv.engine import Tensor
from bigconv.graph import (BiGConvParams, BoundaryMap, VertexEmbeddings,
                           adjacency_apply, bigconv_layer, boundary_spatial_factors,
                           build_adjacency_factors, channel_attention,
                           classic_gcn_layer, degree, laplacian_apply,
                           spatial_attention)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def make_instance(seed, n=12, c=3, variant="boundary"):
    rng = np.random.default_rng(seed)
    r, b, p, z = oracle.random_instance(rng, n, c, variant)
    emb = VertexEmbeddings(Tensor(r), 1, n)
    bnd = BoundaryMap(Tensor(b)) if b is not None else None
    return emb, bnd, p, z


class TestChannelAttention:
    def test_zero_weights_give_half(self):
        emb, _, p, _ = make_instance(0)
        p.mlp_w1.data[:] = 0.0
        p.mlp_w2.data[:] = 0.0
        out = channel_attention(emb, p)
        assert np.allclose(out.data, 0.5, atol=1e-15)

    def test_monotone_in_positive_scaling(self):
        # positive features scaled up move the pooled max, shifting attention
        rng = np.random.default_rng(1)
        r = rng.uniform(0.1, 1.0, (8, 3))
        p = BiGConvParams.init(3, rng)
        p.mlp_w1.data = np.abs(p.mlp_w1.data)
        p.mlp_w2.data = np.abs(p.mlp_w2.data)
        small = channel_attention(VertexEmbeddings(Tensor(r), 1, 8), p).data
        large = channel_attention(VertexEmbeddings(Tensor(3.0 * r), 1, 8), p).data
        assert np.all(large >= small)

    def test_matches_straight_line_reimplementation(self):
        emb, _, p, _ = make_instance(2, n=4, c=2)
        out = channel_attention(emb, p).data
        pooled = emb.map.data.max(axis=0)
        expect = _sigmoid(np.maximum(pooled @ p.mlp_w1.data, 0.0) @ p.mlp_w2.data)
        assert np.allclose(out, expect.reshape(1, -1), atol=1e-15)


class TestSpatialAttention:
    def test_zero_conv_gives_half(self):
        emb, _, p, _ = make_instance(3)
        p.conv_s_w.data[:] = 0.0
        p.conv_s_b.data[:] = 0.0
        assert np.allclose(spatial_attention(emb, p).data, 0.5, atol=1e-15)

    def test_single_vertex(self):
        rng = np.random.default_rng(4)
        r = rng.uniform(-1, 1, (1, 3))
        p = BiGConvParams.init(3, rng)
        out = spatial_attention(VertexEmbeddings(Tensor(r), 1, 1), p).data
        expect = _sigmoid(p.conv_s_w.item() * r.max() + p.conv_s_b.item())
        assert out.reshape(()) == pytest.approx(expect, abs=1e-12)

    def test_matches_straight_line_reimplementation(self):
        emb, _, p, _ = make_instance(5)
        out = spatial_attention(emb, p).data
        expect = _sigmoid(emb.map.data.max(axis=1) * p.conv_s_w.item()
                          + p.conv_s_b.item()).reshape(-1, 1)
        assert np.allclose(out, expect, atol=1e-12)


class TestBoundaryFactors:
    def test_zero_mask(self):
        emb, _, p, _ = make_instance(6)
        n = emb.n_vertices
        bnd = BoundaryMap(Tensor(np.zeros((n, 1))))
        _, v = boundary_spatial_factors(emb, bnd, p)
        # masked features are all zero, so v is constant sigmoid(bias)
        assert np.allclose(v.data, _sigmoid(p.conv_v_b.item()), atol=1e-15)

    def test_all_ones_mask_matches_u_when_convs_shared(self):
        emb, _, p, _ = make_instance(7)
        n = emb.n_vertices
        p.conv_v_w.data = p.conv_u_w.data.copy()
        p.conv_v_b.data = p.conv_u_b.data.copy()
        u, v = boundary_spatial_factors(emb, BoundaryMap(Tensor(np.ones((n, 1)))), p)
        assert np.array_equal(u.data, v.data)

    def test_outer_product_matches_dense_oracle(self):
        emb, bnd, p, _ = make_instance(8)
        u, v = boundary_spatial_factors(emb, bnd, p)
        _, _, _, u_o, v_o = oracle.dense_factor_arrays(
            emb.map.data, bnd.map.data, p, "boundary")
        fast = u.data @ v.data.T
        assert np.allclose(fast, np.outer(u_o, v_o), atol=1e-12)

    def test_vertex_count_mismatch(self):
        emb, _, p, _ = make_instance(9)
        with pytest.raises(en.ShapeError):
            boundary_spatial_factors(emb, BoundaryMap(Tensor(np.zeros((3, 1)))), p)


class TestBuildFactors:
    def test_channel_variant_disables_spatial(self):
        emb, _, p, _ = make_instance(10)
        f = build_adjacency_factors(emb, None, p, "channel")
        assert np.all(f.row_scale.data == 1.0) and f.col_scale is f.row_scale
        adj = oracle.dense_from_factor_arrays(
            f.channel_embed.data, f.spatial_embed.data, f.channel_weights.data,
            np.ones(emb.n_vertices), np.ones(emb.n_vertices))
        expect = oracle.dense_adjacency(emb.map.data, None, p, "channel")
        assert np.allclose(adj, expect, atol=1e-12)

    def test_zero_features_zero_embeddings(self):
        rng = np.random.default_rng(11)
        p = BiGConvParams.init(3, rng)
        emb = VertexEmbeddings(Tensor(np.zeros((6, 3))), 1, 6)
        f = build_adjacency_factors(emb, None, p, "channel_spatial")
        assert np.all(f.channel_embed.data == 0.0)
        assert np.all(f.spatial_embed.data == 0.0)

    def test_boundary_variant_matches_dense(self):
        emb, bnd, p, _ = make_instance(12)
        f = build_adjacency_factors(emb, bnd, p, "boundary")
        dense = oracle.dense_adjacency(emb.map.data, bnd.map.data, p, "boundary")
        implied = (f.channel_embed.data @ np.diag(f.channel_weights.data[0])
                   @ f.channel_embed.data.T
                   + (f.spatial_embed.data @ f.spatial_embed.data.T)
                   * (f.row_scale.data @ f.col_scale.data.T))
        assert np.abs(implied - dense).max() < 1e-10

    def test_boundary_requires_map(self):
        emb, _, p, _ = make_instance(13)
        with pytest.raises(ValueError, match="boundary"):
            build_adjacency_factors(emb, None, p, "boundary")

    def test_classic_has_no_factored_form(self):
        emb, _, p, _ = make_instance(14)
        with pytest.raises(ValueError):
            build_adjacency_factors(emb, None, p, "classic")


class TestFactoredApplication:
    def test_zero_probe(self):
        emb, bnd, p, _ = make_instance(15)
        f = build_adjacency_factors(emb, bnd, p, "boundary")
        out = adjacency_apply(f, Tensor(np.zeros((emb.n_vertices, 2))))
        assert np.all(out.data == 0.0)

    def test_small_instance_against_dense(self):
        emb, bnd, p, z = make_instance(16, n=3, c=2)
        f = build_adjacency_factors(emb, bnd, p, "boundary")
        dense = oracle.dense_adjacency(emb.map.data, bnd.map.data, p, "boundary")
        assert np.abs(adjacency_apply(f, Tensor(z)).data - dense @ z).max() < 1e-10

    def test_attention_off_reduces_to_gram_sum(self):
        emb, _, p, z = make_instance(17)
        f = build_adjacency_factors(emb, None, p, "channel")
        f = graph.AdjacencyFactors(f.channel_embed, f.spatial_embed,
                                   Tensor(np.ones((1, emb.channels))),
                                   f.row_scale, f.col_scale, "channel")
        psi, second = f.channel_embed.data, f.spatial_embed.data
        expect = (psi @ psi.T + second @ second.T) @ z
        assert np.abs(adjacency_apply(f, Tensor(z)).data - expect).max() < 1e-10

    def test_degree_equals_dense_row_sums(self):
        emb, bnd, p, _ = make_instance(18)
        f = build_adjacency_factors(emb, bnd, p, "boundary")
        raw = adjacency_apply(f, Tensor(np.ones((emb.n_vertices, 1)))).data
        dense = oracle.dense_adjacency(emb.map.data, bnd.map.data, p, "boundary")
        assert np.abs(raw.reshape(-1) - dense.sum(axis=1)).max() < 1e-10

    def test_degree_clamp_path(self):
        rng = np.random.default_rng(19)
        p = BiGConvParams.init(3, rng)
        emb = VertexEmbeddings(Tensor(np.zeros((5, 3))), 1, 5)
        f = build_adjacency_factors(emb, None, p, "channel_spatial")
        deg, clamped = degree(f)
        assert clamped == 5
        assert np.all(deg.data == p.degree_epsilon)

    def test_degree_single_vertex_self_degree(self):
        emb, bnd, p, _ = make_instance(20, n=1, c=3)
        f = build_adjacency_factors(emb, bnd, p, "boundary")
        deg, _ = degree(f)
        dense = oracle.dense_adjacency(emb.map.data, bnd.map.data, p, "boundary")
        assert deg.data.reshape(()) == pytest.approx(dense[0, 0], abs=1e-12)

    def test_laplacian_zero_probe(self):
        emb, bnd, p, _ = make_instance(21)
        f = build_adjacency_factors(emb, bnd, p, "boundary")
        out = laplacian_apply(f, Tensor(np.zeros((emb.n_vertices, 2))))
        assert np.all(out.data == 0.0)

    def test_laplacian_against_dense(self):
        emb, bnd, p, z = make_instance(22)
        f = build_adjacency_factors(emb, bnd, p, "boundary")
        adj = oracle.dense_adjacency(emb.map.data, bnd.map.data, p, "boundary")
        dense = oracle.dense_degree_laplacian(adj, epsilon=p.degree_epsilon)
        fast = laplacian_apply(f, Tensor(z)).data
        assert np.abs(fast - dense.laplacian @ z).max() < 1e-9

    def test_laplacian_nullspace_on_clampfree_instances(self):
        for seed in range(20):
            rng = np.random.default_rng([seed, 77])
            r, b, p, _ = oracle.clampfree_instance(rng, 64, 3, "boundary")
            emb = VertexEmbeddings(Tensor(r), 8, 8)
            f = build_adjacency_factors(emb, BoundaryMap(Tensor(b)), p, "boundary")
            deg, clamped = degree(f)
            assert clamped == 0
            droot = en.sqrt(deg)
            cols = Tensor(np.tile(droot.data, (1, 3)))
            out = laplacian_apply(f, cols, deg)
            assert np.abs(out.data).max() <= 1e-8 * np.abs(droot.data).max()


class TestEquivalenceSuite:
    @pytest.mark.parametrize("variant", graph.VARIANTS)
    def test_factored_matches_dense_across_sizes(self, variant):
        reports = oracle.run_equivalence_suite(
            seeds=range(5), sizes=(4, 16, 64), variants=(variant,))
        assert all(r.passed for r in reports), [str(r) for r in reports if not r.passed]


class TestBigconvLayer:
    def test_zero_projection_is_residual_identity(self):
        emb, bnd, p, _ = make_instance(23)
        p.w_g.data[:] = 0.0
        out = bigconv_layer(emb, bnd, p, "boundary")
        assert np.array_equal(out.map.data, emb.map.data)

    def test_zero_features_stay_zero(self):
        rng = np.random.default_rng(24)
        p = BiGConvParams.init(2, rng)
        emb = VertexEmbeddings(Tensor(np.zeros((9, 2))), 3, 3)
        out = bigconv_layer(emb, BoundaryMap(Tensor(np.zeros((9, 1)))), p, "boundary")
        assert np.all(out.map.data == 0.0)

    def test_layer_against_dense_composition(self):
        emb, bnd, p, _ = make_instance(25, n=9, c=2)
        emb = VertexEmbeddings(emb.map, 3, 3)
        out = bigconv_layer(emb, bnd, p, "boundary").map.data
        adj = oracle.dense_adjacency(emb.map.data, bnd.map.data, p, "boundary")
        dense = oracle.dense_degree_laplacian(adj, epsilon=p.degree_epsilon)
        expect = np.maximum(dense.laplacian @ (emb.map.data @ p.w_g.data), 0.0) + emb.map.data
        assert np.abs(out - expect).max() < 1e-9

    def test_variant_degeneracy_all_ones_boundary(self):
        # boundary fusion with an all-ones map and shared convs reduces to
        # the channel_spatial factors exactly
        emb, _, p, _ = make_instance(26)
        n = emb.n_vertices
        for t_ in (p.conv_u_w, p.conv_v_w):
            t_.data = p.conv_s_w.data.copy()
        for t_ in (p.conv_u_b, p.conv_v_b):
            t_.data = p.conv_s_b.data.copy()
        ones = BoundaryMap(Tensor(np.ones((n, 1))))
        fb = build_adjacency_factors(emb, ones, p, "boundary")
        fc = build_adjacency_factors(emb, None, p, "channel_spatial")
        assert np.array_equal(fb.channel_weights.data, fc.channel_weights.data)
        assert np.array_equal(fb.row_scale.data, fc.row_scale.data)
        assert np.array_equal(fb.col_scale.data, fc.col_scale.data)

    def test_gradients_match_finite_differences(self):
        for seed in range(10):
            rng = np.random.default_rng([seed, 5])
            r, b, p, _ = oracle.random_instance(rng, 16, 4, "boundary")
            r_t = Tensor(r)
            cot = Tensor(rng.uniform(-1, 1, (16, 4)))
            params = [t for _, t in p.named_tensors()] + [r_t]

            def layer_sum():
                out = bigconv_layer(VertexEmbeddings(r_t, 4, 4),
                                    BoundaryMap(Tensor(b)), p, "boundary")
                return en.tsum(out.map * cot)

            rep = oracle.grad_check(layer_sum, params, eps=1e-5, threshold=1e-4)
            assert rep.passed, f"seed {seed}: {rep} {rep.failures[:3]}"


class TestClassicGcn:
    def test_single_vertex_grid(self):
        x = Tensor(np.array([[2.0, -1.0]]))
        theta = Tensor(np.array([[1.0, 0.5], [0.0, 1.0]]))
        out = classic_gcn_layer(x, theta, 1, 1)
        assert np.allclose(out.data, x.data @ theta.data, atol=1e-15)

    def test_two_vertex_hand_expansion(self):
        x = Tensor(np.array([[1.0], [0.0]]))
        out = classic_gcn_layer(x, Tensor(np.array([[1.0]])), 1, 2)
        assert np.allclose(out.data, [[0.5], [0.5]], atol=1e-15)

    def test_constant_rows_preserved_on_3x3(self):
        # symmetric normalized propagation of a constant field, dense-checked
        x_row = np.array([0.7, -0.2])
        x = Tensor(np.tile(x_row, (9, 1)))
        out = classic_gcn_layer(x, Tensor(np.eye(2)), 3, 3).data
        dense = oracle.dense_degree_laplacian(oracle.dense_grid_matrix(3, 3))
        s = 1.0 / np.sqrt(dense.degree)
        expect = (s[:, None] * dense.adjacency * s[None, :]) @ x.data
        assert np.allclose(out, expect, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(en.ShapeError):
            classic_gcn_layer(Tensor(np.zeros((5, 2))), Tensor(np.eye(2)), 2, 2)
