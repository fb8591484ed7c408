"""Transformer generator: GP latent + action label -> multi-person motion.

Tokens live on a (batch, P, T + 1, d) grid; index ``T`` along the time axis is
the class token. Interaction layers attend across persons within each frame,
temporal layers across frames within each person.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .motion.sequence import MotionSequence, Representation, unflatten

PERSON_AXIS = 1
TIME_AXIS = 2


@dataclass(frozen=True)
class GeneratorConfig:
    latent_channels: int = 120
    model_width: int = 200
    heads: int = 8
    layer_pairs: int = 2
    class_count: int = 26
    persons: int = 2
    frames: int = 60
    output_width: int = 75
    mlp_ratio: int = 4
    pe_mode: str = "learned"  # learned | fixed | independent
    shared_latent: bool = True

    def __post_init__(self):
        if self.model_width % self.heads:
            raise ValueError("model_width must be divisible by heads")
        if self.persons > 1 and self.model_width % 2:
            raise ValueError("model_width must be even when persons > 1")
        if self.pe_mode not in ("learned", "fixed", "independent"):
            raise ValueError(f"unknown pe_mode {self.pe_mode!r}")
        if min(self.latent_channels, self.class_count, self.persons, self.frames, self.output_width) < 1:
            raise ValueError("generator dimensions must be positive")

    @property
    def pe_split(self) -> tuple:
        """(temporal width, person width) of the concatenated positional encoding."""
        if self.persons == 1:
            return self.model_width, 0
        return self.model_width // 2, self.model_width // 2

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_table(n: int, width: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(width, dtype=torch.float64)[None, :]
    angle = pos / torch.pow(10000.0, (2 * (i // 2)) / max(width, 1))
    table = torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle))
    return table.float()


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product attention restricted to one token axis of the grid."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_width = width // heads
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, axis: int) -> torch.Tensor:
        x = x.movedim(axis, -2)  # (..., n, d)
        *lead, n, d = x.shape
        split = lambda t: t.reshape(*lead, n, self.heads, self.head_width).transpose(-3, -2)
        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_width)
        attn = torch.softmax(logits, dim=-1)
        y = (attn @ v).transpose(-3, -2).reshape(*lead, n, d)
        return self.out(y).movedim(-2, axis)


class EncoderBlock(nn.Module):
    """Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, width: int, heads: int, mlp_ratio: int, axis: int):
        super().__init__()
        self.axis = axis
        self.norm1 = nn.LayerNorm(width)
        self.attn = MultiHeadSelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width), nn.GELU(), nn.Linear(mlp_ratio * width, width)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), self.axis)
        return x + self.mlp(self.norm2(x))


def iformer_layer(width, heads, mlp_ratio=4) -> EncoderBlock:
    return EncoderBlock(width, heads, mlp_ratio, PERSON_AXIS)


def tformer_layer(width, heads, mlp_ratio=4) -> EncoderBlock:
    return EncoderBlock(width, heads, mlp_ratio, TIME_AXIS)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_width
        d_t, d_p = cfg.pe_split
        self.input_projection = nn.Linear(cfg.latent_channels, d)
        self.class_embedding = nn.Embedding(cfg.class_count, d)
        nn.init.normal_(self.class_embedding.weight, std=0.02)
        T1, P = cfg.frames + 1, cfg.persons
        if cfg.pe_mode == "independent":
            self.pe = nn.Parameter(torch.randn(P, T1, d) * 0.02)
        elif cfg.pe_mode == "fixed":
            self.register_buffer("tpe", sinusoidal_table(T1, d_t))
            self.register_buffer("ppe", sinusoidal_table(P, d_p) if P > 1 else torch.zeros(1, 0))
        else:
            self.tpe = nn.Parameter(torch.randn(T1, d_t) * 0.02)
            self.ppe = nn.Parameter(torch.randn(P, d_p) * 0.02 if P > 1 else torch.zeros(1, 0))
        layers = []
        for _ in range(cfg.layer_pairs):
            if P > 1:
                layers.append(iformer_layer(d, cfg.heads, cfg.mlp_ratio))
            layers.append(tformer_layer(d, cfg.heads, cfg.mlp_ratio))
        self.layers = nn.ModuleList(layers)
        self.output_projection = nn.Linear(d, cfg.output_width)

    def positional_encoding(self) -> torch.Tensor:
        """(P, T + 1, d) table with PE(t, p) = concat(TPE(t), PPE(p))."""
        if self.cfg.pe_mode == "independent":
            return self.pe
        P, T1 = self.cfg.persons, self.cfg.frames + 1
        tpe = self.tpe[None].expand(P, T1, -1)
        ppe = self.ppe[:, None].expand(P, T1, -1)
        return torch.cat([tpe, ppe], dim=-1)

    def embed(self, z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """z: (B, T, C0), or (B, P, T, C0) for per-person latents. Returns (B, P, T + 1, d)."""
        cfg = self.cfg
        if z.dim() == 3:
            z = z[:, None].expand(-1, cfg.persons, -1, -1)
        B = z.shape[0]
        if z.shape[1:] != (cfg.persons, cfg.frames, cfg.latent_channels):
            raise ValueError(f"latent shape {tuple(z.shape)} does not match config")
        if labels.shape != (B,):
            raise ValueError("need one label per latent")
        frames = self.input_projection(z)
        cls = self.class_embedding(labels)[:, None, None, :].expand(-1, cfg.persons, 1, -1)
        return torch.cat([frames, cls], dim=2) + self.positional_encoding()

    def forward(self, z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """Returns flat motion (B, P, T, C)."""
        x = self.embed(z, labels)
        for layer in self.layers:
            x = layer(x)
        return self.output_projection(x[:, :, :-1])

    @torch.no_grad()
    def generate(self, z, label: int, joints: int, representation=Representation.joint_coordinates) -> MotionSequence:
        dtype = next(self.parameters()).dtype
        z = torch.as_tensor(np.asarray(z), dtype=dtype)[None]
        flat = self(z, torch.tensor([label]))[0].cpu().numpy()
        return unflatten(flat, joints, representation)
