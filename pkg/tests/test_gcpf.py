import pytest
import torch

from fgiqa.model.gcpf import (
    GatLayerConfig,
    GraphAttentionLayer,
    N_NODES,
    NODE_NAMES,
    ParameterGraphFusion,
    adjacency,
    build_edges,
)

IDX = {name: i for i, name in enumerate(NODE_NAMES)}


class TestGraphStructure:
    def test_exactly_fourteen_edges(self):
        assert len(build_edges()) == 14

    def test_visual_hub_degree_seven(self):
        visual = IDX["visual"]
        degree = sum(1 for i, j in build_edges() if visual in (i, j))
        assert degree == 7

    def test_iso_neighborhood(self):
        iso = IDX["iso"]
        neighbors = {
            (j if i == iso else i) for i, j in build_edges() if iso in (i, j)
        }
        assert neighbors == {IDX["visual"], IDX["aperture"], IDX["shutter"]}

    def test_post_processing_clique(self):
        edges = build_edges()
        trio = [IDX["contrast"], IDX["saturation"], IDX["sharpness"]]
        for a in trio:
            for b in trio:
                if a < b:
                    assert (a, b) in edges

    def test_white_balance_saturation_link(self):
        a, b = sorted((IDX["white_balance"], IDX["saturation"]))
        assert (a, b) in build_edges()

    def test_edges_canonicalized(self):
        for i, j in build_edges():
            assert 0 <= i < j < N_NODES

    def test_adjacency_symmetric_with_self_loops(self):
        adj = adjacency(self_loops=True)
        assert torch.equal(adj, adj.T)
        assert adj.diagonal().all()
        assert adj.sum().item() == 2 * 14 + N_NODES

    def test_adjacency_without_self_loops(self):
        adj = adjacency(self_loops=False)
        assert not adj.diagonal().any()
        assert adj.sum().item() == 2 * 14


class TestGraphAttentionLayer:
    def test_attention_rows_sum_to_one_over_neighborhood(self):
        torch.manual_seed(0)
        layer = GraphAttentionLayer(GatLayerConfig(in_dim=16, out_dim_per_head=4, heads=4))
        adj = adjacency()
        x = torch.randn(3, N_NODES, 16)
        attn = layer.attention(x, adj)
        assert attn.shape == (3, 4, N_NODES, N_NODES)
        assert torch.allclose(attn.sum(dim=-1), torch.ones(3, 4, N_NODES), atol=1e-6)
        # non-neighbors receive exactly zero attention
        assert (attn[..., ~adj] == 0).all()

    def test_concat_output_width(self):
        layer = GraphAttentionLayer(GatLayerConfig(in_dim=16, out_dim_per_head=4, heads=4))
        out = layer(torch.randn(2, N_NODES, 16), adjacency())
        assert out.shape == (2, N_NODES, 16)

    def test_mean_aggregation_output_width(self):
        layer = GraphAttentionLayer(
            GatLayerConfig(in_dim=16, out_dim_per_head=16, heads=3, concat=False)
        )
        out = layer(torch.randn(2, N_NODES, 16), adjacency())
        assert out.shape == (2, N_NODES, 16)

    def test_isolated_updates_ignore_non_neighbors(self):
        """Perturbing a node outside i's neighborhood leaves i's update unchanged."""
        torch.manual_seed(0)
        layer = GraphAttentionLayer(GatLayerConfig(in_dim=8, out_dim_per_head=8))
        adj = adjacency()
        x = torch.randn(1, N_NODES, 8)
        iso = IDX["iso"]
        contrast = IDX["contrast"]  # not adjacent to iso
        assert not adj[iso, contrast]
        out_a = layer(x, adj)[0, iso]
        x2 = x.clone()
        x2[0, contrast] += 5.0
        out_b = layer(x2, adj)[0, iso]
        assert torch.allclose(out_a, out_b, atol=1e-6)

    def test_invalid_head_count_rejected(self):
        with pytest.raises(ValueError):
            GatLayerConfig(in_dim=8, out_dim_per_head=4, heads=0)


class TestParameterGraphFusion:
    def test_node_matrix_layout(self):
        fusion = ParameterGraphFusion(feature_dim=16, node_dim=32)
        nodes = fusion.encode_nodes(torch.randn(2, 16), torch.rand(2, 7))
        assert nodes.shape == (2, N_NODES, 32)

    def test_output_matches_feature_width(self):
        fusion = ParameterGraphFusion(feature_dim=16, node_dim=32)
        out = fusion(torch.randn(3, 16), torch.rand(3, 7))
        assert out.shape == (3, 16)

    def test_fresh_fusion_starts_on_the_visual_path(self):
        """The read-out is residual and zero-initialized, so an untrained
        fusion layer is an exact identity on the visual feature."""
        fusion = ParameterGraphFusion(feature_dim=16, node_dim=32)
        f_q = torch.randn(4, 16)
        out = fusion(f_q, torch.rand(4, 7))
        assert torch.equal(out, f_q)

    def test_parameters_change_output_after_training_signal(self):
        fusion = ParameterGraphFusion(feature_dim=16, node_dim=32)
        with torch.no_grad():
            fusion.out_proj.weight.normal_(0.0, 0.1)
        f_q = torch.randn(1, 16)
        out_a = fusion(f_q, torch.full((1, 7), 0.2))
        out_b = fusion(f_q, torch.full((1, 7), 0.8))
        assert not torch.allclose(out_a, out_b)

    def test_missing_parameters_rejected(self):
        fusion = ParameterGraphFusion(feature_dim=16, node_dim=32)
        with pytest.raises(ValueError):
            fusion(torch.randn(1, 16), None)

    def test_attention_maps_shapes(self):
        fusion = ParameterGraphFusion(feature_dim=16, node_dim=32, heads=4)
        a1, a2 = fusion.attention_maps(torch.randn(2, 16), torch.rand(2, 7))
        assert a1.shape == (2, 4, N_NODES, N_NODES)
        assert a2.shape == (2, 1, N_NODES, N_NODES)

    def test_indivisible_node_dim_rejected(self):
        with pytest.raises(ValueError):
            ParameterGraphFusion(feature_dim=16, node_dim=30, heads=4)
