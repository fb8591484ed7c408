"""Procedural labeled motion data.

Single-person classes are parametric kinematic motions driven through forward
kinematics on the skeleton's rest offsets. Interaction classes place two to five
persons on a ring and synchronize them. Every sample gets a random phase, an
amplitude factor in [0.8, 1.2], a random placement and white pose noise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .sequence import LabeledDataset, MotionSequence, Representation, to_limb_vectors
from .topology import SkeletonTopology, get_topology

SINGLE_PERSON_CLASSES = ("wave", "walk", "squat", "punch", "kick", "jump")
INTERACTION_CLASSES = ("approach", "mirrored_wave", "push", "circle")

PELVIS_HEIGHT = 0.95
CONTACT_TIME = 0.7  # fraction of the clip at which "approach" closes the gap
APPROACH_END_RADIUS = 0.2
WALK_DISTANCE = 1.2
TAU = 2 * np.pi


@dataclass(frozen=True)
class SynthSpec:
    classes: Union[int, Sequence[str]] = 4  # int -> first n classes for the person mode
    per_class: int = 50
    frames: int = 16
    persons: int = 1
    topology: str = "star5"
    noise: float = 0.01
    amplitude_jitter: float = 0.2
    placement: float = 0.5
    representation: str = "joint_coordinates"

    def class_names(self) -> tuple:
        pool = SINGLE_PERSON_CLASSES if self.persons == 1 else INTERACTION_CLASSES
        if isinstance(self.classes, int):
            if not 2 <= self.classes <= len(pool):
                raise ValueError(f"need 2..{len(pool)} classes for persons={self.persons}")
            return pool[: self.classes]
        names = tuple(self.classes)
        for n in names:
            if n not in pool:
                raise ValueError(f"unknown class {n!r} for persons={self.persons}; choose from {pool}")
        if len(names) < 2:
            raise ValueError("need at least two classes")
        return names

    def validate(self):
        if not 1 <= self.persons <= 5:
            raise ValueError("persons must be in [1, 5]")
        if self.per_class < 1 or self.frames < 2:
            raise ValueError("per_class >= 1 and frames >= 2 required")
        if self.representation not in ("joint_coordinates", "normalized_limb_vectors"):
            raise ValueError(f"synthetic data has no {self.representation!r} representation")
        self.class_names()


def _euler(angles: np.ndarray) -> np.ndarray:
    """(..., 3) pitch/yaw/roll -> (..., 3, 3) rotation Rz @ Ry @ Rx."""
    a, b, c = np.moveaxis(angles, -1, 0)
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    one, zero = np.ones_like(a), np.zeros_like(a)
    Rx = np.stack([one, zero, zero, zero, ca, -sa, zero, sa, ca], -1).reshape(a.shape + (3, 3))
    Ry = np.stack([cb, zero, sb, zero, one, zero, -sb, zero, cb], -1).reshape(a.shape + (3, 3))
    Rz = np.stack([cc, -sc, zero, sc, cc, zero, zero, zero, one], -1).reshape(a.shape + (3, 3))
    return Rz @ Ry @ Rx


def _yaw(psi) -> np.ndarray:
    return _euler(np.array([0.0, psi, 0.0]))


class _Body:
    """Forward kinematics on one topology with per-part swing/bend controls."""

    def __init__(self, topo: SkeletonTopology):
        if topo.rest_offsets is None or topo.parts is None:
            raise ValueError(f"topology {topo.name!r} carries no synthesis metadata")
        self.topo = topo
        self.parent = topo.parents()
        self.order = topo.traversal_order()
        self.offsets = np.asarray(topo.rest_offsets, dtype=np.float64)
        depth = topo.joint_depths()
        self.role = {}
        for part in set(topo.parts):
            members = [j for j in range(topo.joint_count) if topo.parts[j] == part]
            swing_depth = 1 if max(depth[j] for j in members) >= 1 else 0
            for j in members:
                if depth[j] == swing_depth:
                    self.role[j] = (part, "swing")
                elif depth[j] == swing_depth + 1:
                    self.role[j] = (part, "bend")

    def pose(self, T: int, controls: dict) -> np.ndarray:
        """controls[(part, 'swing'|'bend')] -> (T, 3) euler angles; returns (T, J, 3) root-relative joints."""
        J = self.topo.joint_count
        pos = np.zeros((T, J, 3))
        rot = np.zeros((T, J, 3, 3))
        zero = np.zeros((T, 3))
        for j in self.order:
            p = self.parent[j]
            local = _euler(controls.get(self.role.get(j), zero))
            if p < 0:
                rot[:, j] = local
                continue
            rot[:, j] = rot[:, p] @ local
            pos[:, j] = pos[:, p] + rot[:, j] @ self.offsets[j]
        return pos


def _ctrl(T):
    return np.zeros((T, 3))


def _single_motion(name: str, s: np.ndarray, amp: float, phase: float):
    """Returns (controls, root offset (T, 3)) in the person's own heading frame (+z forward)."""
    T = len(s)
    c = {}
    root = np.zeros((T, 3))

    def set_(part, kind, axis, values):
        c.setdefault((part, kind), _ctrl(T))[:, axis] += values

    if name == "wave":
        osc = np.sin(TAU * 3 * s + phase)
        set_("right_arm", "swing", 2, 2.4 + 0.5 * amp * osc)
        set_("right_arm", "bend", 2, 0.4 * amp * osc)
    elif name == "walk":
        g = np.sin(TAU * 2 * s + phase)
        set_("left_leg", "swing", 0, 0.5 * amp * g)
        set_("right_leg", "swing", 0, -0.5 * amp * g)
        set_("left_arm", "swing", 0, -0.4 * amp * g)
        set_("right_arm", "swing", 0, 0.4 * amp * g)
        set_("left_leg", "bend", 0, 0.5 * amp * np.maximum(0, g))
        set_("right_leg", "bend", 0, 0.5 * amp * np.maximum(0, -g))
        root[:, 2] = WALK_DISTANCE * amp * s
        root[:, 1] = 0.02 * np.sin(2 * (TAU * 2 * s + phase))
    elif name == "squat":
        q = amp * (1 - np.cos(TAU * 2 * s + phase)) / 2
        for side in ("left", "right"):
            set_(f"{side}_leg", "swing", 0, -0.9 * q)
            set_(f"{side}_leg", "bend", 0, 1.6 * q)
            set_(f"{side}_arm", "swing", 0, -1.2 * q)
        root[:, 1] = -0.3 * q
    elif name == "punch":
        pulse = np.maximum(0, np.sin(TAU * 2 * s + phase)) ** 2
        set_("right_arm", "swing", 0, -1.5 * amp * pulse)
        set_("right_arm", "bend", 0, -0.6 * amp * (1 - pulse))
        set_("left_arm", "swing", 0, -0.3 * np.ones(T))
    elif name == "kick":
        pulse = np.maximum(0, np.sin(TAU * 2 * s + phase)) ** 2
        set_("right_leg", "swing", 0, -1.0 * amp * pulse)
        set_("left_arm", "swing", 2, -0.3 * np.ones(T))
        set_("right_arm", "swing", 2, 0.3 * np.ones(T))
    elif name == "jump":
        h = amp * np.abs(np.sin(TAU * 1.5 * s + phase))
        root[:, 1] = 0.3 * h
        set_("left_arm", "swing", 2, -1.2 * h)
        set_("right_arm", "swing", 2, 1.2 * h)
        for side in ("left", "right"):
            set_(f"{side}_leg", "bend", 0, 0.5 * (amp - h))
    else:
        raise ValueError(f"unknown single-person class {name!r}")
    return c, root


def _walk_legs(c, s, amp, phase, T, strength=1.0):
    g = np.sin(TAU * 2 * s + phase) * strength
    for side, sign in (("left", 1), ("right", -1)):
        c.setdefault((f"{side}_leg", "swing"), _ctrl(T))[:, 0] += sign * 0.5 * amp * g


def approach_radius(s: np.ndarray, start_radius: float) -> np.ndarray:
    """Distance of each person from the group center along an approach clip."""
    return start_radius - (start_radius - APPROACH_END_RADIUS) * np.minimum(1.0, s / CONTACT_TIME)


def _interaction(name: str, P: int, s: np.ndarray, amp: float, phase: float):
    """Per person: (controls, world-frame offset from group center (T, 3), heading yaw (T,))."""
    T = len(s)
    out = []
    base = TAU * np.arange(P) / P
    for p in range(P):
        c = {}
        yaw = np.full(T, base[p] + np.pi)  # facing the center
        if name == "approach":
            r = approach_radius(s, 1.5 * amp)
            moving = (s < CONTACT_TIME).astype(float)
            _walk_legs(c, s, amp, phase, T, strength=moving)
            if p == 0:
                reach = np.clip((s - CONTACT_TIME) / (1 - CONTACT_TIME), 0, 1)
                c.setdefault(("right_arm", "swing"), _ctrl(T))[:, 0] -= 1.5 * reach
            pos = np.stack([r * np.sin(base[p]), np.zeros(T), r * np.cos(base[p])], -1)
        elif name == "mirrored_wave":
            r = 0.9 * amp
            side, sign = ("right", 1) if p % 2 == 0 else ("left", -1)
            osc = np.sin(TAU * 3 * s + phase)
            c[(f"{side}_arm", "swing")] = _ctrl(T)
            c[(f"{side}_arm", "swing")][:, 2] = sign * (2.4 + 0.5 * amp * osc)
            pos = np.tile([r * np.sin(base[p]), 0.0, r * np.cos(base[p])], (T, 1))
        elif name == "push":
            r = np.full(T, 0.4)
            if p == 0:
                thrust = np.clip((s - 0.3) / 0.2, 0, 1) * (s < 0.75)
                for side in ("left", "right"):
                    c[(f"{side}_arm", "swing")] = _ctrl(T)
                    c[(f"{side}_arm", "swing")][:, 0] = -1.4 * amp * thrust
            else:
                shove = np.clip((s - 0.45) / 0.3, 0, 1)
                shove = shove * shove * (3 - 2 * shove)
                r = r + 0.8 * amp * shove
                for side, sign in (("left", -1), ("right", 1)):
                    c[(f"{side}_arm", "swing")] = _ctrl(T)
                    c[(f"{side}_arm", "swing")][:, 2] = sign * 0.8 * shove
            pos = np.stack([r * np.sin(base[p]), np.zeros(T), r * np.cos(base[p])], -1)
        elif name == "circle":
            theta = base[p] + 0.8 * np.pi * amp * s + 0.1 * np.sin(phase)
            _walk_legs(c, s, amp, phase, T)
            pos = np.stack([np.sin(theta), np.zeros(T), np.cos(theta)], -1)
            yaw = theta + np.pi / 2
        else:
            raise ValueError(f"unknown interaction class {name!r}")
        out.append((c, pos, yaw))
    return out


def synth_sequence(
    name: str, spec: SynthSpec, rng: np.random.Generator, body: Optional[_Body] = None
) -> MotionSequence:
    topo = get_topology(spec.topology)
    body = body or _Body(topo)
    T, P = spec.frames, spec.persons
    s = np.arange(T) / T
    phase = rng.uniform(0, TAU)
    amp = rng.uniform(1 - spec.amplitude_jitter, 1 + spec.amplitude_jitter)
    center = np.array([rng.uniform(-spec.placement, spec.placement), PELVIS_HEIGHT,
                       rng.uniform(-spec.placement, spec.placement)])
    heading = rng.uniform(-0.15, 0.15)
    R_group = _yaw(heading)
    root = np.zeros((P, T, 3))
    pose = np.zeros((P, T, topo.joint_count, 3))
    if P == 1:
        controls, offset = _single_motion(name, s, amp, phase)
        root[0] = center + offset @ R_group.T
        pose[0] = body.pose(T, controls) @ R_group.T
    else:
        for p, (controls, offset, yaw) in enumerate(_interaction(name, P, s, amp, phase)):
            root[p] = center + offset @ R_group.T
            local = body.pose(T, controls)
            R = _euler(np.stack([np.zeros(T), yaw + heading, np.zeros(T)], -1))  # (T, 3, 3)
            pose[p] = np.einsum("tij,tkj->tki", R, local)
    pose += rng.normal(0.0, spec.noise, pose.shape)
    seq = MotionSequence(root, pose, Representation.joint_coordinates)
    if spec.representation == "normalized_limb_vectors":
        seq = to_limb_vectors(seq, topo)
    return seq


def synth_dataset(spec: SynthSpec, rng: Union[np.random.Generator, int]) -> LabeledDataset:
    """Class-balanced dataset; deterministic given the seed or generator state."""
    spec.validate()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    names = spec.class_names()
    topo = get_topology(spec.topology)
    body = _Body(topo)
    samples = []
    for label, name in enumerate(names):
        for _ in range(spec.per_class):
            samples.append((synth_sequence(name, spec, rng, body), label))
    if spec.representation == "normalized_limb_vectors":
        from .sequence import limb_topology
        topo = limb_topology(topo)
    return LabeledDataset.from_samples(samples, len(names), topo, names)
