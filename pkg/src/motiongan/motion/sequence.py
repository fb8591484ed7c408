"""Motion containers, flat layouts and pose-representation conversions."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .topology import SkeletonTopology

LIMB_NORM_TOL = 1e-5
DEGENERATE_LIMB = 1e-9


class Representation(enum.IntEnum):
    joint_coordinates = 0
    normalized_limb_vectors = 1
    rotation_6d = 2

    @property
    def width(self) -> int:
        return 6 if self is Representation.rotation_6d else 3


def _frozen(a, dtype=np.float32) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MotionSequence:
    root_translation: np.ndarray  # (P, T, 3), meters
    local_pose: np.ndarray  # (P, T, J, D)
    representation: Representation = Representation.joint_coordinates

    def __post_init__(self):
        root = _frozen(self.root_translation, self._dtype())
        pose = _frozen(self.local_pose, self._dtype())
        object.__setattr__(self, "root_translation", root)
        object.__setattr__(self, "local_pose", pose)
        object.__setattr__(self, "representation", Representation(self.representation))
        if root.ndim != 3 or root.shape[2] != 3:
            raise ValueError(f"root_translation must be (P, T, 3), got {root.shape}")
        if pose.ndim != 4 or pose.shape[:2] != root.shape[:2]:
            raise ValueError(f"local_pose must be (P, T, J, D) matching root, got {pose.shape}")
        if pose.shape[3] != self.representation.width:
            raise ValueError(f"{self.representation.name} needs D={self.representation.width}")
        if not (np.all(np.isfinite(root)) and np.all(np.isfinite(pose))):
            raise ValueError("motion values must be finite")
        if self.representation is Representation.normalized_limb_vectors:
            norms = np.linalg.norm(pose.astype(np.float64), axis=-1)
            if np.any(np.abs(norms - 1.0) > LIMB_NORM_TOL):
                raise ValueError("limb vectors must have unit norm")

    def _dtype(self):
        a = np.asarray(self.local_pose)
        return np.float64 if a.dtype == np.float64 else np.float32

    persons = property(lambda self: self.root_translation.shape[0])
    frames = property(lambda self: self.root_translation.shape[1])
    joints = property(lambda self: self.local_pose.shape[2])
    channels = property(lambda self: self.local_pose.shape[3])

    @property
    def width(self) -> int:
        return 3 + self.joints * self.channels

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (
            self.representation == other.representation
            and np.array_equal(self.root_translation, other.root_translation)
            and np.array_equal(self.local_pose, other.local_pose)
        )


def flatten(seq: MotionSequence) -> np.ndarray:
    """(P, T, 3 + J*D) with per-token layout [root(3), joint_0(D), ..., joint_{J-1}(D)]."""
    P, T = seq.persons, seq.frames
    return np.concatenate([seq.root_translation, seq.local_pose.reshape(P, T, -1)], axis=-1)


def unflatten(flat: np.ndarray, joints: int, representation=Representation.joint_coordinates) -> MotionSequence:
    representation = Representation(representation)
    D = representation.width
    flat = np.asarray(flat)
    if flat.shape[-1] != 3 + joints * D:
        raise ValueError(f"width {flat.shape[-1]} != 3 + {joints}*{D}")
    P, T = flat.shape[:2]
    return MotionSequence(flat[..., :3], flat[..., 3:].reshape(P, T, joints, D), representation)


def permute_persons(seq: MotionSequence, perm: Sequence[int]) -> MotionSequence:
    """Person ``p`` of the result is person ``perm[p]`` of ``seq``."""
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(seq.persons)):
        raise ValueError(f"{perm.tolist()} is not a permutation of {seq.persons} persons")
    return MotionSequence(seq.root_translation[perm], seq.local_pose[perm], seq.representation)


def _oriented_edges(topo: SkeletonTopology) -> list:
    parent = topo.parents()
    return [(parent[c], c) for c in topo.traversal_order() if parent[c] >= 0]


def to_limb_vectors(seq: MotionSequence, topo: SkeletonTopology) -> MotionSequence:
    """Unit parent->child vectors, one per bone in skeleton traversal order (J - 1 entries)."""
    if seq.representation is not Representation.joint_coordinates:
        raise ValueError("to_limb_vectors expects joint coordinates")
    if seq.joints != topo.joint_count:
        raise ValueError("sequence and topology joint counts differ")
    pose = seq.local_pose.astype(np.float64)
    edges = _oriented_edges(topo)
    parents = [p for p, _ in edges]
    children = [c for _, c in edges]
    limbs = pose[:, :, children] - pose[:, :, parents]
    norms = np.linalg.norm(limbs, axis=-1, keepdims=True)
    if np.any(norms < DEGENERATE_LIMB):
        raise ValueError("zero-length limb in input")
    return MotionSequence(seq.root_translation, limbs / norms, Representation.normalized_limb_vectors)


def bone_lengths(seq: MotionSequence, topo: SkeletonTopology) -> np.ndarray:
    """Per-bone lengths averaged over persons and frames, in traversal order."""
    pose = seq.local_pose.astype(np.float64)
    edges = _oriented_edges(topo)
    d = pose[:, :, [c for _, c in edges]] - pose[:, :, [p for p, _ in edges]]
    return np.linalg.norm(d, axis=-1).mean(axis=(0, 1))


def from_limb_vectors(
    seq: MotionSequence,
    topo: SkeletonTopology,
    lengths: np.ndarray,
    root_joint: Optional[np.ndarray] = None,
) -> MotionSequence:
    """Rebuild joint coordinates by chaining scaled limb vectors from the root joint."""
    if seq.representation is not Representation.normalized_limb_vectors:
        raise ValueError("from_limb_vectors expects normalized limb vectors")
    P, T = seq.persons, seq.frames
    out = np.zeros((P, T, topo.joint_count, 3))
    if root_joint is not None:
        out[:, :, topo.root_index] = root_joint
    limbs = seq.local_pose.astype(np.float64)
    for i, (p, c) in enumerate(_oriented_edges(topo)):
        out[:, :, c] = out[:, :, p] + lengths[i] * limbs[:, :, i]
    return MotionSequence(seq.root_translation, out, Representation.joint_coordinates)


def limb_topology(topo: SkeletonTopology) -> SkeletonTopology:
    """Graph over bones (bones sharing a joint are adjacent), pooled like their child joints."""
    edges = _oriented_edges(topo)
    n = len(edges)
    adj = []
    for i in range(n):
        for k in range(i + 1, n):
            if set(edges[i]) & set(edges[k]):
                adj.append((i, k))
    root_limb = next(i for i, (p, _) in enumerate(edges) if p == topo.root_index)
    # node 0 is the translation node, node i+1 is bone i (assigned its child joint's group)
    assign = [0] + [c + 1 for _, c in edges]
    maps = []
    for cmap in topo.coarsen_maps:
        assign = [cmap[a] for a in assign]
        maps.append(assign)
    # compact each level and re-express as level-to-level maps
    chain = []
    prev = list(range(n + 1))
    for level in maps:
        labels = {g: i for i, g in enumerate(sorted(set(level)))}
        compact = [labels[g] for g in level]
        step = [0] * (max(prev) + 1)
        for node, coarse in zip(prev, compact):
            step[node] = coarse
        chain.append(tuple(step))
        prev = compact
    labels = None
    if topo.node_labels:
        labels = tuple(f"{topo.node_labels[p]}->{topo.node_labels[c]}" for p, c in edges)
    return SkeletonTopology(
        joint_count=n,
        edges=tuple(adj),
        root_index=root_limb,
        coarsen_maps=tuple(chain),
        node_labels=labels,
        name=f"{topo.name}-limbs",
    )


def fit_length(seq: MotionSequence, T: int, mode: str = "crop") -> MotionSequence:
    """Crop to the first ``T`` frames, or pad by holding the last frame."""
    if seq.frames >= T:
        idx = np.arange(T)
    elif mode == "pad":
        idx = np.minimum(np.arange(T), seq.frames - 1)
    else:
        raise ValueError(f"sequence has {seq.frames} frames < {T}; use mode='pad'")
    return MotionSequence(seq.root_translation[:, idx], seq.local_pose[:, idx], seq.representation)


def remap_joints(seq: MotionSequence, joint_map: Sequence[int]) -> MotionSequence:
    """Target joint ``j`` takes source joint ``joint_map[j]``; used to unify skeletons."""
    return MotionSequence(seq.root_translation, seq.local_pose[:, :, list(joint_map)], seq.representation)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Fixed-length labeled motions stored as stacked arrays."""

    root_translation: np.ndarray  # (N, P, T, 3)
    local_pose: np.ndarray  # (N, P, T, J, D)
    labels: np.ndarray  # (N,)
    class_count: int
    topology: Optional[SkeletonTopology] = None
    representation: Representation = Representation.joint_coordinates
    class_names: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "root_translation", _frozen(self.root_translation))
        object.__setattr__(self, "local_pose", _frozen(self.local_pose))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "representation", Representation(self.representation))
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("action ids must lie in [0, class_count)")
        if self.root_translation.shape[:1] != self.labels.shape or self.local_pose.shape[:4] != (
            self.root_translation.shape[:3] + (self.local_pose.shape[3],)
        ):
            raise ValueError("inconsistent dataset array shapes")
        if self.topology is not None and self.local_pose.shape[3] != self.topology.joint_count:
            raise ValueError("dataset joint count does not match topology")

    @classmethod
    def from_samples(cls, samples, class_count, topology=None, class_names=None) -> "LabeledDataset":
        seqs = [s for s, _ in samples]
        if len({(s.persons, s.frames, s.joints, s.channels) for s in seqs}) > 1:
            raise ValueError("samples must share P, T, J and D")
        return cls(
            np.stack([s.root_translation for s in seqs]),
            np.stack([s.local_pose for s in seqs]),
            np.array([a for _, a in samples]),
            class_count,
            topology,
            seqs[0].representation,
            class_names,
        )

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> MotionSequence:
        return MotionSequence(self.root_translation[i], self.local_pose[i], self.representation)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.representation == other.representation
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.root_translation, other.root_translation)
            and np.array_equal(self.local_pose, other.local_pose)
        )

    @property
    def samples(self) -> Iterator:
        for i in range(len(self)):
            yield self[i], int(self.labels[i])

    persons = property(lambda self: self.root_translation.shape[1])
    frames = property(lambda self: self.root_translation.shape[2])
    joints = property(lambda self: self.local_pose.shape[3])
    channels = property(lambda self: self.local_pose.shape[4])

    @property
    def width(self) -> int:
        return 3 + self.joints * self.channels

    def flat(self) -> np.ndarray:
        """(N, P, T, C) float32."""
        N, P, T = self.root_translation.shape[:3]
        return np.concatenate([self.root_translation, self.local_pose.reshape(N, P, T, -1)], axis=-1)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            self.root_translation[idx], self.local_pose[idx], self.labels[idx],
            self.class_count, self.topology, self.representation, self.class_names,
        )

    def split(self, val_fraction: float, rng: np.random.Generator):
        """Per-class stratified (train, validation) split."""
        train, val = [], []
        for c in range(self.class_count):
            idx = np.flatnonzero(self.labels == c)
            idx = idx[rng.permutation(len(idx))]
            k = int(round(len(idx) * val_fraction))
            val.extend(idx[:k])
            train.extend(idx[k:])
        return self.subset(np.sort(train)), self.subset(np.sort(val))


def dataset_from_flat(flat, labels, class_count, topology=None,
                      representation=Representation.joint_coordinates, class_names=None) -> LabeledDataset:
    flat = np.asarray(flat)
    N, P, T, C = flat.shape
    D = Representation(representation).width
    J = (C - 3) // D
    if 3 + J * D != C:
        raise ValueError(f"width {C} incompatible with D={D}")
    return LabeledDataset(flat[..., :3], flat[..., 3:].reshape(N, P, T, J, D), labels,
                          class_count, topology, representation, class_names)


def resolve_topology(name: str) -> SkeletonTopology:
    """Registered topology by name; a ``-limbs`` suffix selects its bone graph."""
    from .topology import get_topology

    if name.endswith("-limbs"):
        return limb_topology(get_topology(name[: -len("-limbs")]))
    return get_topology(name)
