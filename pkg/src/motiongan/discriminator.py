"""Spatio-temporal graph-convolutional critic with projection conditioning.

A (B, P, T, C) flat motion batch becomes a (B, T, K, P*D) graph tensor: node 0
is the root translation (zero-padded to D channels), node ``j + 1`` joint ``j``,
and the persons' channels are concatenated per node in person order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .motion.sequence import MotionSequence, flatten
from .motion.topology import SkeletonTopology, pooling_matrix

NEGATIVE_SLOPE = 0.2


@dataclass(frozen=True)
class StageConfig:
    in_channels: int
    out_channels: int
    spatial_kernel: int
    temporal_kernel: int
    nodes_in: int
    nodes_out: int
    level: int  # pooling level of the input graph
    temporal_stride: int = 2


@dataclass(frozen=True)
class DiscriminatorConfig:
    stages: tuple
    class_count: int
    persons: int
    node_channels: int = 3
    person_mode: str = "concat"  # concat | avgpool | maxpool

    @property
    def feature_width(self) -> int:
        return self.stages[-1].out_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        d["stages"] = tuple(StageConfig(**s) for s in d["stages"])
        return cls(**d)


def default_stages(
    topo: SkeletonTopology, in_channels: int, widths: Sequence[int] = (32, 64, 128, 256, 512),
    temporal_kernel: int = 4,
) -> tuple:
    """Stage chain N0->N0, then one stage per coarsening, with an extra same-size stage before the last.

    For the 25-node graph this yields 25-25, 25-11, 11-5, 5-5, 5-1.
    """
    sizes = topo.level_sizes()
    pairs = [(0, 0)]
    for level in range(len(sizes) - 1):
        if level == len(sizes) - 2 and level > 0:
            pairs.append((level, level))
        pairs.append((level, level + 1))
    if len(widths) != len(pairs):
        raise ValueError(f"topology {topo.name} needs {len(pairs)} stage widths, got {len(widths)}")
    stages = []
    c_in = in_channels
    for i, ((a, b), w) in enumerate(zip(pairs, widths)):
        last = i == len(pairs) - 1
        stages.append(StageConfig(c_in, w, 5 if last else 2, temporal_kernel, sizes[a], sizes[b], a))
        c_in = w
    return tuple(stages)


def adjacency_partitions(A: np.ndarray, spatial_kernel: int) -> np.ndarray:
    """(K_s, N, N) weight-bank partitions of an unnormalized adjacency.

    K_s = 1: self and neighbors together; K_s = 2: {self, neighbors};
    K_s > 2: self plus neighbors dealt round-robin by index into K_s - 1 subsets.
    """
    N = A.shape[0]
    eye = np.eye(N)
    if spatial_kernel == 1:
        return (A + eye)[None]
    if spatial_kernel == 2:
        return np.stack([eye, A])
    parts = np.zeros((spatial_kernel, N, N))
    parts[0] = eye
    for n in range(N):
        for rank, m in enumerate(np.flatnonzero(A[n])):
            parts[1 + rank % (spatial_kernel - 1), n, m] = 1.0
    return parts


def to_graph(flat: torch.Tensor, node_channels: int) -> torch.Tensor:
    """(B, P, T, 3 + J*D) -> (B, T, J + 1, P*D)."""
    B, P, T, C = flat.shape
    D = node_channels
    root = flat[..., :3]
    if D > 3:
        root = F.pad(root, (0, D - 3))
    joints = flat[..., 3:].reshape(B, P, T, -1, D)
    nodes = torch.cat([root[:, :, :, None], joints], dim=3)  # (B, P, T, K, D)
    return nodes.permute(0, 2, 3, 1, 4).reshape(B, T, nodes.shape[3], P * D)


def build_st_graph(seq: MotionSequence, topo: SkeletonTopology) -> np.ndarray:
    """(T, K, P*D) graph array of one sequence."""
    if seq.joints != topo.joint_count:
        raise ValueError("sequence joint count does not match topology")
    flat = torch.from_numpy(flatten(seq)[None].astype(np.float64))
    return to_graph(flat, seq.channels)[0].numpy()


class GraphConvStage(nn.Module):
    """Partitioned spatial aggregation, strided temporal conv, node mean-pooling, LeakyReLU.

    Works channels-last on (B, T, N, C) tensors.
    """

    def __init__(self, cfg: StageConfig, adjacency: np.ndarray, coarsen: Optional[Sequence[int]] = None,
                 batch_norm: bool = False):
        super().__init__()
        self.cfg = cfg
        parts = adjacency_partitions(adjacency, cfg.spatial_kernel)
        self.register_buffer("partitions", torch.tensor(parts, dtype=torch.float32))
        if cfg.nodes_out != cfg.nodes_in:
            pool = pooling_matrix(coarsen)
        else:
            pool = np.eye(cfg.nodes_in)
        self.register_buffer("pool", torch.tensor(pool, dtype=torch.float32))
        # weight[:, s*C_in:(s+1)*C_in] is the bank of partition s
        self.spatial = nn.Linear(cfg.spatial_kernel * cfg.in_channels, cfg.out_channels)
        k = cfg.temporal_kernel
        self.pad = ((k - 1) // 2, k // 2)
        # weight[:, j*C:(j+1)*C] mixes the frame at tap j of the window
        self.temporal = nn.Linear(k * cfg.out_channels, cfg.out_channels)
        if batch_norm:
            self.norm = nn.BatchNorm1d(cfg.out_channels)
        else:
            # variance-preserving under LeakyReLU; the torch default shrinks the signal ~3x per map,
            # which leaves a fresh 8-map critic nearly constant in its input. Normalized stages are
            # scale-invariant, where a larger init would only slow SGD down.
            self.norm = None
            for lin in (self.spatial, self.temporal):
                nn.init.kaiming_uniform_(lin.weight, a=NEGATIVE_SLOPE, nonlinearity="leaky_relu")

    def spatial_aggregate(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, N, C_in) -> (B, T, N, C_out): sum_s sum_m A_s[n, m] W_s x[..., m, :]."""
        B, T, N, C = x.shape
        S = self.cfg.spatial_kernel
        # neighborhoods first (cheap at small C_in), then one matmul over the stacked partitions
        agg = (self.partitions.view(S * N, N) @ x).view(B, T, S, N, C)
        return self.spatial(agg.transpose(2, 3).reshape(B, T, N, S * C))

    def temporal_conv(self, x: torch.Tensor) -> torch.Tensor:
        """Width-k convolution along frames with the configured stride (output ceil(T / stride) frames)."""
        B, T, N, C = x.shape
        k, stride = self.cfg.temporal_kernel, self.cfg.temporal_stride
        t_out = (T + sum(self.pad) - k) // stride + 1
        taps = (torch.arange(t_out)[:, None] * stride + torch.arange(k)[None]).reshape(-1)
        x = F.pad(x, (0, 0, 0, 0) + self.pad).index_select(1, taps)
        win = x.view(B, t_out, k, N, C).permute(0, 1, 3, 2, 4).reshape(B, t_out, N, k * C)
        return self.temporal(win)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.spatial_aggregate(x), NEGATIVE_SLOPE)
        x = self.temporal_conv(x)
        if self.norm is not None:
            B, T, N, C = x.shape
            x = self.norm(x.reshape(-1, C)).view(B, T, N, C)
        x = torch.einsum("btmc,nm->btnc", x, self.pool)
        return F.leaky_relu(x, NEGATIVE_SLOPE)


class GraphBackbone(nn.Module):
    """Graph-conv stages ending in a single node; returns temporal-mean features (B, F)."""

    def __init__(self, stages: Sequence[StageConfig], topo: SkeletonTopology, batch_norm: bool = False):
        super().__init__()
        mods = []
        for st in stages:
            A = topo.level_adjacency(st.level)
            if A.shape[0] != st.nodes_in:
                raise ValueError(f"stage expects {st.nodes_in} nodes, topology level {st.level} has {A.shape[0]}")
            coarsen = topo.coarsen_maps[st.level] if st.nodes_out != st.nodes_in else None
            mods.append(GraphConvStage(st, A, coarsen, batch_norm))
        if stages[-1].nodes_out != 1:
            raise ValueError("last stage must pool to a single node")
        self.stages = nn.ModuleList(mods)

    def forward(self, graph: torch.Tensor) -> torch.Tensor:
        x = graph
        for stage in self.stages:
            x = stage(x)
        return x.mean(dim=(1, 2))


class Discriminator(nn.Module):
    """score = w . phi + b + <class_embedding[a], phi>, an unbounded Wasserstein critic."""

    def __init__(self, cfg: DiscriminatorConfig, topo: SkeletonTopology):
        super().__init__()
        if cfg.person_mode not in ("concat", "avgpool", "maxpool"):
            raise ValueError(f"unknown person_mode {cfg.person_mode!r}")
        self.cfg = cfg
        self.topology = topo
        self.backbone = GraphBackbone(cfg.stages, topo)
        Fw = cfg.feature_width
        self.class_embedding = nn.Embedding(cfg.class_count, Fw)
        nn.init.normal_(self.class_embedding.weight, std=0.02)
        self.output_projection = nn.Linear(Fw, 1)

    def features(self, flat: torch.Tensor) -> torch.Tensor:
        D = self.cfg.node_channels
        if self.cfg.person_mode == "concat":
            return self.backbone(to_graph(flat, D))
        B, P = flat.shape[:2]
        per = self.backbone(to_graph(flat.reshape(B * P, 1, *flat.shape[2:]), D)).view(B, P, -1)
        return per.mean(1) if self.cfg.person_mode == "avgpool" else per.max(1).values

    def project(self, phi: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return self.output_projection(phi)[:, 0] + (self.class_embedding(labels) * phi).sum(-1)

    def forward(self, flat: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return self.project(self.features(flat), labels)


def discriminator_config(topo: SkeletonTopology, class_count: int, persons: int, node_channels: int = 3,
                         widths: Sequence[int] = (32, 64, 128, 256, 512), temporal_kernel: int = 4,
                         person_mode: str = "concat") -> DiscriminatorConfig:
    in_ch = node_channels * (persons if person_mode == "concat" else 1)
    return DiscriminatorConfig(
        default_stages(topo, in_ch, widths, temporal_kernel), class_count, persons, node_channels, person_mode
    )
