import numpy as np
import pytest
import torch

from helpers import central_difference, check_param_grads
from motiongan.discriminator import (
    Discriminator,
    GraphConvStage,
    StageConfig,
    adjacency_partitions,
    build_st_graph,
    discriminator_config,
    to_graph,
)
from motiongan.motion import MotionSequence, flatten, ntu_like_topology, permute_persons, star_topology


def random_seq(rng, P, T, J, D=3):
    return MotionSequence(rng.normal(size=(P, T, 3)), rng.normal(size=(P, T, J, D)))


def star_disc(persons=2, seed=0, **kw):
    torch.manual_seed(seed)
    cfg = discriminator_config(star_topology(), 3, persons, widths=(4, 6, 6, 8), **kw)
    return Discriminator(cfg, star_topology()).double()


# -- graph layout ------------------------------------------------------------------------------


def test_st_graph_shape_ntu_two_person():
    seq = random_seq(np.random.default_rng(0), 2, 7, 24)
    assert build_st_graph(seq, ntu_like_topology()).shape == (7, 25, 6)


def test_st_graph_node_contents():
    seq = random_seq(np.random.default_rng(1), 2, 3, 5)
    g = build_st_graph(seq, star_topology())
    np.testing.assert_allclose(g[:, 0, :3], seq.root_translation[0])
    np.testing.assert_allclose(g[:, 0, 3:], seq.root_translation[1])
    np.testing.assert_allclose(g[:, 3, 3:], seq.local_pose[1, :, 2])


def test_st_graph_person_permutation_swaps_blocks():
    seq = random_seq(np.random.default_rng(2), 2, 3, 5)
    g, h = build_st_graph(seq, star_topology()), build_st_graph(permute_persons(seq, [1, 0]), star_topology())
    np.testing.assert_array_equal(h[..., :3], g[..., 3:])
    np.testing.assert_array_equal(h[..., 3:], g[..., :3])


def test_st_graph_single_person():
    seq = random_seq(np.random.default_rng(3), 1, 4, 5)
    g = build_st_graph(seq, star_topology())
    assert g.shape == (4, 6, 3)
    np.testing.assert_allclose(g.reshape(4, -1), flatten(seq)[0])


def test_st_graph_topology_mismatch():
    with pytest.raises(ValueError):
        build_st_graph(random_seq(np.random.default_rng(0), 1, 2, 4), star_topology())


def test_to_graph_pads_root_for_wide_nodes():
    flat = torch.arange(1 * 1 * 2 * 15, dtype=torch.float64).view(1, 1, 2, 15)  # J=2, D=6
    g = to_graph(flat, 6)
    assert g.shape == (1, 2, 3, 6)
    assert g[0, 0, 0].tolist() == [0, 1, 2, 0, 0, 0]


# -- stages ------------------------------------------------------------------------------------------


def test_partitions():
    A = star_topology().node_adjacency()
    np.testing.assert_array_equal(adjacency_partitions(A, 1)[0], A + np.eye(6))
    two = adjacency_partitions(A, 2)
    np.testing.assert_array_equal(two[0], np.eye(6))
    np.testing.assert_array_equal(two[1], A)
    five = adjacency_partitions(A, 5)
    np.testing.assert_array_equal(five.sum(0), A + np.eye(6))
    assert five[0].trace() == 6


def test_identity_stage():
    stage = GraphConvStage(StageConfig(3, 3, 1, 1, 1, 1, 0, temporal_stride=1), np.zeros((1, 1))).double()
    with torch.no_grad():
        stage.spatial.weight.copy_(torch.eye(3))
        stage.temporal.weight.copy_(torch.eye(3))
        stage.spatial.bias.zero_()
        stage.temporal.bias.zero_()
    x = torch.rand(2, 5, 1, 3, dtype=torch.float64)
    assert torch.equal(stage(x), x)


def test_all_ones_weights_sum_over_persons_and_neighbors():
    A = star_topology().node_adjacency()
    stage = GraphConvStage(StageConfig(6, 1, 1, 1, 6, 6, 0), A).double()
    with torch.no_grad():
        stage.spatial.weight.fill_(1.0)
        stage.spatial.bias.zero_()
    x = torch.randn(1, 2, 6, 6, dtype=torch.float64)  # P=2, D=3 per node
    out = stage.spatial_aggregate(x)[..., 0]
    expected = torch.zeros(1, 2, 6, dtype=torch.float64)
    for n in range(6):
        for m in range(6):
            if m == n or A[n, m]:
                expected[:, :, n] += sum(x[:, :, m, p * 3 + d] for p in range(2) for d in range(3))
    assert torch.allclose(out, expected, atol=1e-12)


def test_temporal_stride_halves_frames():
    stage = GraphConvStage(StageConfig(3, 4, 2, 4, 6, 6, 0), star_topology().node_adjacency())
    for T, expected in [(16, 8), (8, 4), (5, 3), (1, 1)]:
        assert stage(torch.randn(1, T, 6, 3)).shape == (1, expected, 6, 4)


def test_temporal_conv_matches_reference():
    torch.manual_seed(0)
    stage = GraphConvStage(StageConfig(2, 2, 1, 4, 1, 1, 0), np.zeros((1, 1))).double()
    x = torch.randn(1, 7, 1, 2, dtype=torch.float64)
    W = stage.temporal.weight.view(2, 4, 2)  # (out, tap, in)
    padded = torch.nn.functional.pad(x[0, :, 0], (0, 0, 1, 2))
    ref = torch.stack([
        torch.einsum("okc,kc->o", W, padded[2 * t : 2 * t + 4]) + stage.temporal.bias for t in range(4)
    ])
    assert torch.allclose(stage.temporal_conv(x)[0, :, 0], ref, atol=1e-12)


def test_coarsening_mean_pools():
    topo = star_topology()
    stage = GraphConvStage(StageConfig(3, 3, 1, 1, 6, 3, 0, temporal_stride=1), topo.node_adjacency(),
                           topo.coarsen_maps[0]).double()
    x = torch.rand(1, 1, 6, 3, dtype=torch.float64)
    assert torch.allclose(stage.pool.sum(1), torch.ones(3, dtype=torch.float64))
    y = torch.einsum("btmc,nm->btnc", x, stage.pool)
    assert torch.allclose(y[0, 0, 1], (x[0, 0, 2] + x[0, 0, 3]) / 2)


def test_person_two_sensitivity():
    disc = star_disc()
    x = torch.randn(1, 2, 8, 18, dtype=torch.float64)
    labels = torch.tensor([1])
    with torch.no_grad():
        grad = central_difference(lambda: disc(x, labels).sum(), x)
    assert grad[0, 1].abs().max() > 1e-6
    zeroed = x.clone()
    zeroed[:, 1] = 0
    assert disc(zeroed, labels).item() != disc(x, labels).item()


# -- score -------------------------------------------------------------------------------------------


def test_zero_parameters_zero_score():
    disc = star_disc()
    with torch.no_grad():
        for p in disc.parameters():
            p.zero_()
    scores = disc(torch.randn(4, 2, 8, 18, dtype=torch.float64), torch.tensor([0, 1, 2, 0]))
    assert torch.equal(scores, torch.zeros(4, dtype=torch.float64))


def test_projection_difference():
    disc = star_disc()
    phi = torch.randn(1, disc.cfg.feature_width, dtype=torch.float64)
    diff = disc.project(phi, torch.tensor([0])) - disc.project(phi, torch.tensor([2]))
    e = disc.class_embedding.weight
    assert torch.allclose(diff, ((e[0] - e[2]) * phi).sum(-1), atol=1e-14)


def test_score_not_invariant_to_person_swap():
    x = torch.randn(1, 2, 8, 18, dtype=torch.float64)
    for seed in range(10):
        disc = star_disc(seed=seed)
        if disc(x, torch.tensor([0])).item() != disc(x[:, [1, 0]], torch.tensor([0])).item():
            return
    pytest.fail("no random state distinguishes person order")


@pytest.mark.parametrize("mode", ["avgpool", "maxpool"])
def test_pooled_person_modes_are_invariant(mode):
    disc = star_disc(person_mode=mode)
    x = torch.randn(2, 2, 8, 18, dtype=torch.float64)
    labels = torch.tensor([0, 1])
    assert torch.allclose(disc(x, labels), disc(x[:, [1, 0]], labels), atol=1e-12)


def test_automorphism_invariance():
    # swapping the two hands (joints 1 and 2) is an automorphism of the star graph and its coarsening
    disc = star_disc(persons=1)
    x = torch.randn(3, 1, 8, 18, dtype=torch.float64)
    cols = list(range(18))
    cols[6:9], cols[9:12] = cols[9:12], cols[6:9]
    labels = torch.tensor([0, 1, 2])
    assert torch.allclose(disc(x, labels), disc(x[..., cols], labels), atol=1e-12)


def test_ntu_shape_chain():
    topo = ntu_like_topology()
    cfg = discriminator_config(topo, 26, 2)
    assert [(s.nodes_in, s.nodes_out) for s in cfg.stages] == [(25, 25), (25, 11), (11, 5), (5, 5), (5, 1)]
    assert [s.in_channels for s in cfg.stages] + [cfg.stages[-1].out_channels] == [6, 32, 64, 128, 256, 512]
    assert [s.spatial_kernel for s in cfg.stages] == [2, 2, 2, 2, 5]
    disc = Discriminator(cfg, topo)
    shapes = []
    for st in disc.backbone.stages:
        st.register_forward_hook(lambda m, i, o: shapes.append(tuple(o.shape)))
    phi = disc.features(torch.randn(2, 2, 16, 75))
    assert shapes == [(2, 8, 25, 32), (2, 4, 11, 64), (2, 2, 5, 128), (2, 1, 5, 256), (2, 1, 1, 512)]
    assert phi.shape == (2, 512)


def test_config_round_trip():
    cfg = discriminator_config(star_topology(), 3, 2, widths=(4, 6, 6, 8))
    assert type(cfg).from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        discriminator_config(star_topology(), 3, 2, widths=(4, 6))


# -- gradients ---------------------------------------------------------------------------------------


def test_graph_conv_stage_gradients():
    torch.manual_seed(1)
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    stage = GraphConvStage(StageConfig(2, 3, 2, 2, 3, 2, 0), A, (0, 0, 1)).double()
    x = torch.randn(1, 2, 3, 2, dtype=torch.float64)
    w = torch.randn_like(stage(x))
    check_param_grads(stage, lambda: (stage(x) * w).sum())


def test_projection_head_gradients():
    disc = star_disc(seed=2)
    phi = torch.randn(3, disc.cfg.feature_width, dtype=torch.float64)
    labels = torch.tensor([0, 2, 2])
    head = torch.nn.ModuleDict({"e": disc.class_embedding, "w": disc.output_projection})
    check_param_grads(head, lambda: (disc.project(phi, labels) ** 2).sum())


def test_discriminator_gradients():
    disc = star_disc(seed=3)
    x = torch.randn(1, 2, 2, 18, dtype=torch.float64)
    check_param_grads(disc, lambda: disc(x, torch.tensor([1])).sum())
