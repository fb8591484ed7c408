"""Temporally correlated latent sequences drawn from per-channel Gaussian processes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MAX_JITTER_DOUBLINGS = 3


class GPSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GPConfig:
    channels: int = 120
    length: int = 60
    length_scale_min: float = 2.0
    length_scale_max: Optional[float] = None  # None -> length
    jitter: float = 1e-6

    def __post_init__(self):
        if self.channels < 1 or self.length < 1:
            raise ValueError("channels and length must be >= 1")
        if not 0 < self.length_scale_min <= self.scale_max:
            raise ValueError("need 0 < length_scale_min <= length_scale_max")
        if self.jitter <= 0:
            raise ValueError("jitter must be positive")

    @property
    def scale_max(self) -> float:
        return float(self.length if self.length_scale_max is None else self.length_scale_max)


@dataclass(frozen=True)
class LatentSequence:
    values: np.ndarray  # (T, C0)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent values must be finite")


def channel_length_scales(cfg: GPConfig) -> np.ndarray:
    return np.geomspace(cfg.length_scale_min, cfg.scale_max, cfg.channels)


def kernel_matrix(T: int, length_scale: float) -> np.ndarray:
    t = np.arange(T, dtype=np.float64)
    lag = t[:, None] - t[None, :]
    return np.exp(-lag ** 2 / (2.0 * length_scale ** 2))


def cholesky_factor(T: int, length_scale: float, jitter: float) -> np.ndarray:
    K = kernel_matrix(T, length_scale)
    eye = np.eye(T)
    for _ in range(MAX_JITTER_DOUBLINGS + 1):
        try:
            return np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise GPSamplingError(
        f"kernel (T={T}, l={length_scale}) not positive definite after "
        f"{MAX_JITTER_DOUBLINGS} jitter doublings"
    )


class GPPrior:
    """Caches one Cholesky factor per channel and draws batches of latent sequences.

    Channel ``c`` of every draw is ``L_c @ eps`` with ``eps`` i.i.d. standard normal,
    so channels are independent and each follows an RBF-kernel GP.
    """

    def __init__(self, cfg: GPConfig):
        self.cfg = cfg
        self.length_scales = channel_length_scales(cfg)
        # (C0, T, T)
        self.factors = np.stack(
            [cholesky_factor(cfg.length, l, cfg.jitter) for l in self.length_scales]
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Returns an (n, T, C0) float64 array."""
        eps = rng.standard_normal((n, self.cfg.length, self.cfg.channels))
        return np.einsum("cts,nsc->ntc", self.factors, eps)


def sample_latent(cfg: GPConfig, rng: np.random.Generator) -> LatentSequence:
    return LatentSequence(GPPrior(cfg).sample(1, rng)[0])


def sample_iid(cfg: GPConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Frame-independent standard normal latents, shape (n, T, C0); the no-GP ablation."""
    return rng.standard_normal((n, cfg.length, cfg.channels))
