"""Conditional Wasserstein GAN training with gradient penalty."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import torch

from .discriminator import Discriminator, DiscriminatorConfig
from .generator import Generator, GeneratorConfig
from .gp_prior import GPConfig, GPPrior, sample_iid
from .motion.sampling import SquareRootSampler, permute_batch, random_person_permutations
from .motion.sequence import LabeledDataset

log = logging.getLogger(__name__)

CSV_HEADER = ["iter", "d_loss", "g_loss", "penalty", "gap", "epoch"]


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.999
    batch_size: int = 64
    d_steps_per_g: int = 4
    epochs: int = 1
    iterations: Optional[int] = None  # generator steps; overrides epochs
    gradient_penalty_weight: float = 10.0
    weight_clip: Optional[float] = None
    seed: int = 0
    prior: str = "gaussian_process"  # gaussian_process | iid_gaussian
    permute_persons: bool = True
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.d_steps_per_g < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("d_steps_per_g, batch_size and learning_rate must be positive")
        if self.prior not in ("gaussian_process", "iid_gaussian"):
            raise ValueError(f"unknown prior {self.prior!r}")


@dataclass
class TrainLog:
    iter: List[int] = field(default_factory=list)
    d_loss: List[float] = field(default_factory=list)
    g_loss: List[float] = field(default_factory=list)
    penalty: List[float] = field(default_factory=list)
    gap: List[float] = field(default_factory=list)
    epoch: List[int] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)

    def append(self, it, d, g, pen, gap, epoch):
        for name, v in zip(CSV_HEADER, (it, d, g, pen, gap, epoch)):
            getattr(self, name).append(v)

    def __len__(self):
        return len(self.iter)

    def rows(self):
        return list(zip(*(getattr(self, n) for n in CSV_HEADER)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:5]] + [row[5]])

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        out = cls()
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
            for row in reader:
                out.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]), int(row[5]))
        return out


# -- losses --------------------------------------------------------------------

Critic = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def gradient_penalty(D: Critic, real, fake, labels, u: Optional[torch.Tensor] = None) -> torch.Tensor:
    """mean_i (||grad_x D(x_i, a_i)|| - 1)^2 at x = u*real + (1-u)*fake."""
    if u is None:
        u = torch.rand(real.shape[0], dtype=real.dtype)
    u = u.reshape((-1,) + (1,) * (real.dim() - 1))
    x = (u * real + (1 - u) * fake).detach().requires_grad_(True)
    scores = D(x, labels)
    grad = None
    if scores.requires_grad:
        (grad,) = torch.autograd.grad(scores.sum(), x, create_graph=True, allow_unused=True)
    if grad is None:  # critic ignores its input
        grad = torch.zeros_like(x)
    norms = grad.reshape(grad.shape[0], -1).norm(dim=1)
    return ((norms - 1) ** 2).mean()


@dataclass
class CriticTerms:
    loss: torch.Tensor
    penalty: torch.Tensor
    real_score: torch.Tensor  # mean D(real, a)
    fake_score: torch.Tensor  # mean D(fake, a)

    @property
    def gap(self) -> float:
        return (self.real_score - self.fake_score).item()


def critic_loss(D: Critic, real, fake, labels, penalty_weight: float = 10.0, u=None) -> CriticTerms:
    """mean D(fake, a) - mean D(real, a) + lambda * penalty."""
    real_score = D(real, labels).mean()
    fake_score = D(fake, labels).mean()
    if penalty_weight:
        pen = gradient_penalty(D, real, fake, labels, u)
    else:
        pen = torch.zeros((), dtype=real_score.dtype)
    return CriticTerms(fake_score - real_score + penalty_weight * pen, pen, real_score, fake_score)


def d_loss(G, D: Critic, real, labels, z, penalty_weight: float = 10.0, u=None) -> CriticTerms:
    """Critic objective; the generator runs without gradient tracking."""
    with torch.no_grad():
        fake = G(z, labels)
    return critic_loss(D, real, fake, labels, penalty_weight, u)


def g_loss(G, D: Critic, labels, z) -> torch.Tensor:
    return -D(G(z, labels), labels).mean()


# -- training loop ---------------------------------------------------------------


def build_models(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, topology, seed: int):
    torch.manual_seed(seed)
    G = Generator(gen_cfg)
    D = Discriminator(disc_cfg, topology)
    return G, D


def check_compatible(dataset: LabeledDataset, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, gp_cfg: Optional[GPConfig] = None):
    problems = []
    if dataset.persons != gen_cfg.persons or dataset.persons != disc_cfg.persons:
        problems.append(f"persons: dataset {dataset.persons}, generator {gen_cfg.persons}, discriminator {disc_cfg.persons}")
    if dataset.frames != gen_cfg.frames:
        problems.append(f"frames: dataset {dataset.frames}, generator {gen_cfg.frames}")
    if dataset.width != gen_cfg.output_width:
        problems.append(f"width: dataset {dataset.width}, generator {gen_cfg.output_width}")
    if dataset.class_count != gen_cfg.class_count or dataset.class_count != disc_cfg.class_count:
        problems.append("class counts disagree")
    if dataset.channels != disc_cfg.node_channels:
        problems.append("per-node channels disagree")
    if gp_cfg is not None and (gp_cfg.length != gen_cfg.frames or gp_cfg.channels != gen_cfg.latent_channels):
        problems.append("latent prior shape disagrees with generator")
    if problems:
        raise ValueError("inconsistent configuration: " + "; ".join(problems))


class GANTrainer:
    """Owns the models, optimizers and all randomness of one training run."""

    def __init__(self, dataset: LabeledDataset, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
                 train_cfg: TrainConfig, gp_cfg: Optional[GPConfig] = None):
        gp_cfg = gp_cfg or GPConfig(channels=gen_cfg.latent_channels, length=gen_cfg.frames)
        check_compatible(dataset, gen_cfg, disc_cfg, gp_cfg)
        if dataset.topology is None:
            raise ValueError("dataset carries no skeleton topology")
        self.dataset = dataset
        self.cfg = train_cfg
        self.gp_cfg = gp_cfg
        self.G, self.D = build_models(gen_cfg, disc_cfg, dataset.topology, train_cfg.seed)
        betas = (train_cfg.adam_beta1, train_cfg.adam_beta2)
        self.opt_g = torch.optim.Adam(self.G.parameters(), lr=train_cfg.learning_rate, betas=betas)
        self.opt_d = torch.optim.Adam(self.D.parameters(), lr=train_cfg.learning_rate, betas=betas)
        self.rng = np.random.default_rng(train_cfg.seed)
        self.prior = GPPrior(gp_cfg) if train_cfg.prior == "gaussian_process" else None
        self.real = dataset.flat()
        self.by_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.class_count)]
        present = [c for c in range(dataset.class_count) if len(self.by_class[c])]
        self.present = np.array(present)
        self.sampler = SquareRootSampler([len(self.by_class[c]) for c in present], self.rng)
        self.iteration = 0
        self.log = TrainLog()
        self.steps_per_epoch = max(1, math.ceil(len(dataset) / train_cfg.batch_size))

    # batch assembly
    def sample_labels(self, n: int) -> np.ndarray:
        return self.present[self.sampler.draw(n)]

    def sample_real(self, labels: np.ndarray) -> torch.Tensor:
        idx = np.array([self.by_class[c][self.rng.integers(len(self.by_class[c]))] for c in labels])
        batch = self.real[idx]
        P = batch.shape[1]
        if P > 1 and self.cfg.permute_persons:
            batch = permute_batch(batch, random_person_permutations(len(idx), P, self.rng))
        return torch.from_numpy(np.ascontiguousarray(batch))

    def sample_latent(self, n: int) -> torch.Tensor:
        P = self.G.cfg.persons
        m = n if self.G.cfg.shared_latent else n * P
        if self.prior is not None:
            z = self.prior.sample(m, self.rng)
        else:
            z = sample_iid(self.gp_cfg, m, self.rng)
        z = torch.from_numpy(z.astype(np.float32))
        if not self.G.cfg.shared_latent:
            z = z.view(n, P, *z.shape[1:])
        return z

    def _check(self, value: float, what: str):
        if not math.isfinite(value) or abs(value) > self.cfg.divergence_threshold:
            log.error("iteration %d: %s = %r, aborting", self.iteration, what, value)
            raise DivergenceError(f"{what} = {value!r} at iteration {self.iteration}")

    def d_step(self) -> CriticTerms:
        B = self.cfg.batch_size
        labels_np = self.sample_labels(B)
        real = self.sample_real(labels_np)
        labels = torch.from_numpy(labels_np)
        z = self.sample_latent(B)
        u = torch.from_numpy(self.rng.random(B).astype(np.float32))
        self.opt_d.zero_grad(set_to_none=True)
        terms = d_loss(self.G, self.D, real, labels, z, self.cfg.gradient_penalty_weight, u)
        self._check(terms.loss.item(), "d_loss")
        terms.loss.backward()
        self.opt_d.step()
        if self.cfg.weight_clip:
            with torch.no_grad():
                for p in self.D.parameters():
                    p.clamp_(-self.cfg.weight_clip, self.cfg.weight_clip)
        return terms

    def g_step(self) -> torch.Tensor:
        B = self.cfg.batch_size
        labels = torch.from_numpy(self.sample_labels(B))
        z = self.sample_latent(B)
        self.D.requires_grad_(False)
        try:
            self.opt_g.zero_grad(set_to_none=True)
            loss = g_loss(self.G, self.D, labels, z)
            self._check(loss.item(), "g_loss")
            loss.backward()
            self.opt_g.step()
        finally:
            self.D.requires_grad_(True)
        return loss

    def step(self) -> None:
        for _ in range(self.cfg.d_steps_per_g):
            terms = self.d_step()
        gl = self.g_step()
        epoch = self.iteration // self.steps_per_epoch
        self.log.append(self.iteration, terms.loss.item(), gl.item(), terms.penalty.item(), terms.gap, epoch)
        self.iteration += 1

    def total_iterations(self) -> int:
        if self.cfg.iterations is not None:
            return self.cfg.iterations
        return self.cfg.epochs * self.steps_per_epoch

    def run(self, iterations: Optional[int] = None, on_epoch: Optional[Callable] = None) -> TrainLog:
        end = self.total_iterations() if iterations is None else self.iteration + iterations
        self.G.train()
        self.D.train()
        t0 = time.perf_counter()
        while self.iteration < end:
            self.step()
            if self.iteration % self.steps_per_epoch == 0:
                self.log.epoch_seconds.append(time.perf_counter() - t0)
                t0 = time.perf_counter()
                if on_epoch is not None:
                    on_epoch(self, self.iteration // self.steps_per_epoch)
        return self.log

    # checkpointing
    def state_tensors(self) -> dict:
        from . import checkpoint

        out = {}
        out.update(checkpoint.module_tensors(self.G, "generator"))
        out.update(checkpoint.module_tensors(self.D, "discriminator"))
        out.update(checkpoint.optimizer_tensors(self.opt_g, self.G, "adam_g"))
        out.update(checkpoint.optimizer_tensors(self.opt_d, self.D, "adam_d"))
        return out

    def load_state(self, tensors: dict, iteration: int) -> None:
        from . import checkpoint

        checkpoint.load_module(self.G, tensors, "generator")
        checkpoint.load_module(self.D, tensors, "discriminator")
        checkpoint.load_optimizer(self.opt_g, self.G, tensors, "adam_g")
        checkpoint.load_optimizer(self.opt_d, self.D, tensors, "adam_d")
        self.iteration = iteration
        # fresh, reproducible stream for the resumed segment
        self.rng = np.random.default_rng([self.cfg.seed, iteration])
        self.sampler.rng = self.rng


def train(dataset: LabeledDataset, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
          train_cfg: TrainConfig, gp_cfg: Optional[GPConfig] = None):
    """Returns (generator, discriminator, log)."""
    trainer = GANTrainer(dataset, gen_cfg, disc_cfg, train_cfg, gp_cfg)
    trainer.run()
    return trainer.G, trainer.D, trainer.log
