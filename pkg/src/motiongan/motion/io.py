"""MSEQ1 binary motion files and their JSON mirror.

Layout (little-endian): magic ``b"MSEQ1"``, seven u32 header fields
``P, T, J, D, representation, class_count, sample_count``, then per sample a u32
action id, ``P*T*3`` f32 root translations and ``P*T*J*D`` f32 poses.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .sequence import LabeledDataset, MotionSequence, Representation
from .topology import SkeletonTopology, topology_for_joints

MAGIC = b"MSEQ1"
HEADER = struct.Struct("<7I")
HEADER_SIZE = len(MAGIC) + HEADER.size


class MotionFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MalformedHeaderError(MotionFormatError):
    pass


class DimensionMismatchError(MotionFormatError):
    pass


class TruncatedPayloadError(MotionFormatError):
    pass


def _as_dataset(obj) -> LabeledDataset:
    if isinstance(obj, LabeledDataset):
        return obj
    if isinstance(obj, MotionSequence):
        return LabeledDataset.from_samples([(obj, 0)], class_count=1)
    raise TypeError(f"cannot save {type(obj).__name__}")


def encode(obj: Union[LabeledDataset, MotionSequence]) -> bytes:
    ds = _as_dataset(obj)
    N, P, T, J, D = ds.local_pose.shape
    parts = [MAGIC, HEADER.pack(P, T, J, D, int(ds.representation), ds.class_count, N)]
    root = ds.root_translation.astype("<f4")
    pose = ds.local_pose.astype("<f4")
    for i in range(N):
        parts.append(struct.pack("<I", int(ds.labels[i])))
        parts.append(root[i].tobytes())
        parts.append(pose[i].tobytes())
    return b"".join(parts)


def decode(buf: bytes, topology: Optional[SkeletonTopology] = None) -> LabeledDataset:
    if len(buf) < HEADER_SIZE or buf[: len(MAGIC)] != MAGIC:
        raise MalformedHeaderError("missing MSEQ1 magic or short header", 0)
    P, T, J, D, rep, A, N = HEADER.unpack_from(buf, len(MAGIC))
    try:
        rep = Representation(rep)
    except ValueError:
        raise MalformedHeaderError(f"unknown representation enum {rep}", len(MAGIC) + 16) from None
    if min(P, T, J, A) == 0:
        raise MalformedHeaderError("zero dimension in header", len(MAGIC))
    if D != rep.width:
        raise DimensionMismatchError(f"D={D} does not match {rep.name}", len(MAGIC) + 12)
    n_root, n_pose = P * T * 3, P * T * J * D
    record = 4 + 4 * (n_root + n_pose)
    expected = HEADER_SIZE + N * record
    if len(buf) < expected:
        complete = (len(buf) - HEADER_SIZE) // record
        raise TruncatedPayloadError(
            f"payload holds {complete} complete of {N} samples ({len(buf)} < {expected} bytes)",
            HEADER_SIZE + complete * record,
        )
    if len(buf) > expected:
        raise DimensionMismatchError(f"{len(buf) - expected} trailing bytes after {N} samples", expected)
    labels = np.empty(N, dtype=np.int64)
    root = np.empty((N, P, T, 3), dtype=np.float32)
    pose = np.empty((N, P, T, J, D), dtype=np.float32)
    off = HEADER_SIZE
    for i in range(N):
        (labels[i],) = struct.unpack_from("<I", buf, off)
        if labels[i] >= A:
            raise DimensionMismatchError(f"action id {labels[i]} >= class count {A}", off)
        off += 4
        root[i] = np.frombuffer(buf, "<f4", n_root, off).reshape(P, T, 3)
        off += 4 * n_root
        pose[i] = np.frombuffer(buf, "<f4", n_pose, off).reshape(P, T, J, D)
        off += 4 * n_pose
    if topology is None and rep is Representation.joint_coordinates:
        try:
            topology = topology_for_joints(J)
        except KeyError:
            topology = None
    if topology is not None and topology.joint_count != J:
        raise DimensionMismatchError(f"file has J={J}, topology expects {topology.joint_count}", len(MAGIC) + 8)
    return LabeledDataset(root, pose, labels, A, topology, rep)


def save(obj, path) -> None:
    Path(path).write_bytes(encode(obj))


def load(path, topology: Optional[SkeletonTopology] = None) -> LabeledDataset:
    return decode(Path(path).read_bytes(), topology)


def to_json_dict(obj) -> dict:
    ds = _as_dataset(obj)
    N, P, T, J, D = ds.local_pose.shape
    return {
        "format": "MSEQ1",
        "persons": P,
        "frames": T,
        "joints": J,
        "channels": D,
        "representation": ds.representation.name,
        "class_count": ds.class_count,
        "sample_count": N,
        "class_names": list(ds.class_names) if ds.class_names else None,
        "samples": [
            {
                "action_id": int(ds.labels[i]),
                "root_translation": ds.root_translation[i].tolist(),
                "local_pose": ds.local_pose[i].tolist(),
            }
            for i in range(N)
        ],
    }


def from_json_dict(doc: dict, topology: Optional[SkeletonTopology] = None) -> LabeledDataset:
    P, T, J, D = doc["persons"], doc["frames"], doc["joints"], doc["channels"]
    samples = doc["samples"]
    root = np.array([s["root_translation"] for s in samples], dtype=np.float32).reshape(-1, P, T, 3)
    pose = np.array([s["local_pose"] for s in samples], dtype=np.float32).reshape(-1, P, T, J, D)
    labels = np.array([s["action_id"] for s in samples], dtype=np.int64)
    names = tuple(doc["class_names"]) if doc.get("class_names") else None
    return LabeledDataset(root, pose, labels, doc["class_count"], topology,
                          Representation[doc["representation"]], names)


def export_json(obj, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(obj)))


def import_json(path, topology: Optional[SkeletonTopology] = None) -> LabeledDataset:
    return from_json_dict(json.loads(Path(path).read_text()), topology)
