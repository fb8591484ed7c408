"""Skeleton graphs, the root-translation node, and node coarsening for graph pooling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

PARTS = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint tree over the J pose entries.

    Graph node 0 is the root translation; node ``j + 1`` is joint ``j``.
    ``coarsen_maps`` act on those K = J + 1 graph nodes: ``coarsen_maps[i][n]``
    is the coarse node that fine node ``n`` falls into at level ``i + 1``.
    """

    joint_count: int
    edges: tuple  # (parent, child) joint pairs
    root_index: int
    coarsen_maps: tuple = ()
    node_labels: Optional[tuple] = None
    name: str = "custom"
    # synthesis metadata (optional)
    parts: Optional[tuple] = None
    rest_offsets: Optional[tuple] = None

    def __post_init__(self):
        J = self.joint_count
        if not 0 <= self.root_index < J:
            raise ValueError("root_index out of range")
        for a, b in self.edges:
            if not (0 <= a < J and 0 <= b < J) or a == b:
                raise ValueError(f"bad edge ({a}, {b})")
        if not _connected(J, self.edges):
            raise ValueError("skeleton graph is not connected")
        n = self.node_count
        for level, cmap in enumerate(self.coarsen_maps):
            if len(cmap) != n:
                raise ValueError(f"coarsen map {level} expects {n} inputs, got {len(cmap)}")
            m = max(cmap) + 1
            if sorted(set(cmap)) != list(range(m)):
                raise ValueError(f"coarsen map {level} is not surjective onto 0..{m - 1}")
            n = m
        if self.coarsen_maps and n != 1:
            raise ValueError("coarsen maps must end in a single node")

    @property
    def node_count(self) -> int:
        return self.joint_count + 1

    def parents(self) -> list:
        """Parent joint per joint in the tree rooted at ``root_index`` (-1 for the root)."""
        adj = {j: [] for j in range(self.joint_count)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        parent = [-1] * self.joint_count
        seen = {self.root_index}
        order = [self.root_index]
        for j in order:
            for k in sorted(adj[j]):
                if k not in seen:
                    seen.add(k)
                    parent[k] = j
                    order.append(k)
        return parent

    def traversal_order(self) -> list:
        parent = self.parents()
        order = [self.root_index]
        for j in order:
            order.extend(k for k in range(self.joint_count) if parent[k] == j)
        return order

    def node_adjacency(self) -> np.ndarray:
        """(K, K) 0/1 adjacency of the graph with the root-translation node attached to the root joint."""
        K = self.node_count
        A = np.zeros((K, K))
        for a, b in self.edges:
            A[a + 1, b + 1] = A[b + 1, a + 1] = 1.0
        A[0, self.root_index + 1] = A[self.root_index + 1, 0] = 1.0
        return A

    def level_sizes(self) -> list:
        sizes = [self.node_count]
        for cmap in self.coarsen_maps:
            sizes.append(max(cmap) + 1)
        return sizes

    def level_adjacency(self, level: int) -> np.ndarray:
        """Adjacency at a pooling level: coarse nodes touch if any of their members do."""
        A = self.node_adjacency()
        for cmap in self.coarsen_maps[:level]:
            M = pooling_matrix(cmap, normalize=False)
            A = (M @ A @ M.T > 0).astype(float)
            np.fill_diagonal(A, 0.0)
        return A

    def joint_depths(self) -> list:
        """Depth of each joint inside its body part chain (0 for the bone leaving another part)."""
        parent = self.parents()
        parts = self.parts or ("torso",) * self.joint_count
        depth = [0] * self.joint_count
        for j in self.traversal_order():
            p = parent[j]
            if p >= 0 and parts[p] == parts[j]:
                depth[j] = depth[p] + 1
        return depth


def pooling_matrix(cmap: Sequence[int], normalize: bool = True) -> np.ndarray:
    """(n_coarse, n_fine) matrix; rows average (or sum) the members of each coarse node."""
    m = max(cmap) + 1
    M = np.zeros((m, len(cmap)))
    for fine, coarse in enumerate(cmap):
        M[coarse, fine] = 1.0
    if normalize:
        M /= M.sum(axis=1, keepdims=True)
    return M


def _connected(n: int, edges) -> bool:
    adj = {j: set() for j in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {0}
    stack = [0]
    while stack:
        for k in adj[stack.pop()]:
            if k not in seen:
                seen.add(k)
                stack.append(k)
    return len(seen) == n


def star_topology() -> SkeletonTopology:
    """Pelvis plus four limb endpoints; graph nodes (root, pelvis, hands, feet) pool 6 -> 3 -> 1."""
    labels = ("pelvis", "left_hand", "right_hand", "left_foot", "right_foot")
    return SkeletonTopology(
        joint_count=5,
        edges=((0, 1), (0, 2), (0, 3), (0, 4)),
        root_index=0,
        # nodes: root, pelvis, l_hand, r_hand, l_foot, r_foot
        coarsen_maps=((0, 0, 1, 1, 2, 2), (0, 0, 0)),
        node_labels=labels,
        name="star5",
        parts=("torso", "left_arm", "right_arm", "left_leg", "right_leg"),
        rest_offsets=(
            (0.0, 0.0, 0.0),
            (-0.25, 0.05, 0.0),
            (0.25, 0.05, 0.0),
            (-0.15, -0.9, 0.0),
            (0.15, -0.9, 0.0),
        ),
    )


_NTU_JOINTS = (
    # label, parent, part, offset from parent (m)
    ("pelvis", -1, "torso", (0.0, 0.0, 0.0)),
    ("spine", 0, "torso", (0.0, 0.2, 0.0)),
    ("chest", 1, "torso", (0.0, 0.2, 0.0)),
    ("neck", 2, "torso", (0.0, 0.15, 0.0)),
    ("head", 3, "torso", (0.0, 0.1, 0.0)),
    ("head_top", 4, "torso", (0.0, 0.12, 0.0)),
    ("left_shoulder", 2, "left_arm", (-0.18, 0.1, 0.0)),
    ("left_elbow", 6, "left_arm", (0.0, -0.28, 0.0)),
    ("left_wrist", 7, "left_arm", (0.0, -0.25, 0.0)),
    ("left_hand", 8, "left_arm", (0.0, -0.08, 0.0)),
    ("left_hand_tip", 9, "left_arm", (0.0, -0.06, 0.0)),
    ("right_shoulder", 2, "right_arm", (0.18, 0.1, 0.0)),
    ("right_elbow", 11, "right_arm", (0.0, -0.28, 0.0)),
    ("right_wrist", 12, "right_arm", (0.0, -0.25, 0.0)),
    ("right_hand", 13, "right_arm", (0.0, -0.08, 0.0)),
    ("right_hand_tip", 14, "right_arm", (0.0, -0.06, 0.0)),
    ("left_hip", 0, "left_leg", (-0.1, -0.05, 0.0)),
    ("left_knee", 16, "left_leg", (0.0, -0.42, 0.0)),
    ("left_ankle", 17, "left_leg", (0.0, -0.42, 0.0)),
    ("left_foot", 18, "left_leg", (0.0, -0.05, 0.12)),
    ("right_hip", 0, "right_leg", (0.1, -0.05, 0.0)),
    ("right_knee", 20, "right_leg", (0.0, -0.42, 0.0)),
    ("right_ankle", 21, "right_leg", (0.0, -0.42, 0.0)),
    ("right_foot", 22, "right_leg", (0.0, -0.05, 0.12)),
)

# 25 graph nodes -> 11 groups: head, torso, pelvis+root, 2x upper arm, 2x forearm+hand, 2x thigh, 2x shin+foot
_NTU_GROUP_25_11 = {
    "root": 2, "pelvis": 2, "spine": 1, "chest": 1, "neck": 0, "head": 0, "head_top": 0,
    "left_shoulder": 3, "left_elbow": 3, "left_wrist": 5, "left_hand": 5, "left_hand_tip": 5,
    "right_shoulder": 4, "right_elbow": 4, "right_wrist": 6, "right_hand": 6, "right_hand_tip": 6,
    "left_hip": 7, "left_knee": 7, "left_ankle": 9, "left_foot": 9,
    "right_hip": 8, "right_knee": 8, "right_ankle": 10, "right_foot": 10,
}
# 11 -> 5: head+torso, pelvis, left arm, right arm, legs
_NTU_GROUP_11_5 = (0, 0, 1, 2, 3, 2, 3, 4, 4, 4, 4)


def ntu_like_topology() -> SkeletonTopology:
    """24-joint tree; with the root-translation node it forms a 25-node graph pooled 25 -> 11 -> 5 -> 1."""
    labels = tuple(j[0] for j in _NTU_JOINTS)
    edges = tuple((p, i) for i, (_, p, _, _) in enumerate(_NTU_JOINTS) if p >= 0)
    cmap0 = tuple(_NTU_GROUP_25_11[n] for n in ("root",) + labels)
    return SkeletonTopology(
        joint_count=len(_NTU_JOINTS),
        edges=edges,
        root_index=0,
        coarsen_maps=(cmap0, _NTU_GROUP_11_5, (0,) * 5),
        node_labels=labels,
        name="ntu24",
        parts=tuple(j[2] for j in _NTU_JOINTS),
        rest_offsets=tuple(j[3] for j in _NTU_JOINTS),
    )


_REGISTRY = {"star5": star_topology, "ntu24": ntu_like_topology}


def get_topology(name: str) -> SkeletonTopology:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown topology {name!r}; known: {sorted(_REGISTRY)}") from None


def topology_for_joints(J: int) -> SkeletonTopology:
    for build in _REGISTRY.values():
        topo = build()
        if topo.joint_count == J:
            return topo
    raise KeyError(f"no registered topology with {J} joints")
