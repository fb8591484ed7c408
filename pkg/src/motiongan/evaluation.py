"""Action recognizer, feature extraction and Frechet-distance metrics.

Metric names follow the usual table header: ``Acc.``, ``FID_m`` (per-class
distances averaged), ``FID_w`` (one Gaussian over all samples) and, for groups,
``FID^a_m`` / ``FID^a_w`` computed on per-person features max-pooled over persons.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .discriminator import GraphBackbone, StageConfig, default_stages, to_graph
from .motion.sampling import SquareRootSampler, permute_batch, random_person_permutations
from .motion.sequence import LabeledDataset, MotionSequence, flatten
from .motion.topology import SkeletonTopology
from .training import DivergenceError

log = logging.getLogger(__name__)

WHOLE_GROUP = "whole_group"
PER_PERSON = "per_person"
SYMMETRY_TOL = 1e-6


class ModeMismatchError(ValueError):
    pass


class RankWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RecognizerConfig:
    stages: tuple
    class_count: int
    persons: int
    node_channels: int = 3
    epochs: int = 80
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    permute_persons: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RecognizerConfig":
        d = dict(d)
        d["stages"] = tuple(StageConfig(**s) for s in d["stages"])
        return cls(**d)


def recognizer_config(topo: SkeletonTopology, class_count: int, persons: int, node_channels: int = 3,
                      widths: Sequence[int] = (32, 64, 128, 256, 512), **kw) -> RecognizerConfig:
    return RecognizerConfig(default_stages(topo, persons * node_channels, widths), class_count, persons,
                            node_channels, **kw)


class Recognizer(nn.Module):
    """ST-GCN classifier; ``features`` is the pooled penultimate activation."""

    def __init__(self, cfg: RecognizerConfig, topo: SkeletonTopology):
        super().__init__()
        self.cfg = cfg
        self.topology = topo
        self.persons = cfg.persons
        K = topo.node_count
        self.data_norm = nn.BatchNorm1d(K * cfg.persons * cfg.node_channels)
        self.backbone = GraphBackbone(cfg.stages, topo, batch_norm=True)
        self.head = nn.Linear(cfg.stages[-1].out_channels, cfg.class_count)
        # untrained recognizers predict a constant class
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def feature_width(self) -> int:
        return self.cfg.stages[-1].out_channels

    def features(self, flat: torch.Tensor) -> torch.Tensor:
        g = to_graph(flat, self.cfg.node_channels)
        B, T, K, C = g.shape
        g = self.data_norm(g.reshape(B * T, K * C)).view(B, T, K, C)
        return self.backbone(g)

    def forward(self, flat: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(flat))

    @torch.no_grad()
    def predict(self, flat) -> np.ndarray:
        return batched(self, flat).argmax(-1).numpy()


def batched(fn, flat, batch_size: int = 256) -> torch.Tensor:
    was_training = getattr(fn, "training", False)
    if was_training:
        fn.eval()
    try:
        flat = torch.from_numpy(np.ascontiguousarray(flat, dtype=np.float32))
        with torch.no_grad():
            return torch.cat([fn(flat[i : i + batch_size]) for i in range(0, len(flat), batch_size)])
    finally:
        if was_training:
            fn.train()


@dataclass
class RecognizerHistory:
    train_loss: list
    val_accuracy: list

    @property
    def final_val_accuracy(self) -> float:
        return self.val_accuracy[-1] if self.val_accuracy else float("nan")


def train_recognizer(train: LabeledDataset, cfg: RecognizerConfig, val: Optional[LabeledDataset] = None,
                     topology: Optional[SkeletonTopology] = None):
    """SGD with step decay (x0.1 at 1/8 and 5/8 of the epochs). Returns (recognizer, history)."""
    topo = topology or train.topology
    if train.persons != cfg.persons:
        raise ModeMismatchError(f"dataset has {train.persons} persons, recognizer expects {cfg.persons}")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = Recognizer(cfg, topo)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
    milestones = sorted({max(1, round(cfg.epochs / 8)), max(1, round(5 * cfg.epochs / 8))})
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones, gamma=0.1)
    flat = train.flat()
    by_class = [np.flatnonzero(train.labels == c) for c in range(cfg.class_count)]
    present = np.array([c for c in range(cfg.class_count) if len(by_class[c])])
    sampler = SquareRootSampler([len(by_class[c]) for c in present], rng)
    steps = max(1, math.ceil(len(train) / cfg.batch_size))
    history = RecognizerHistory([], [])
    for _ in range(cfg.epochs):
        model.train()
        total = 0.0
        for _ in range(steps):
            labels = present[sampler.draw(cfg.batch_size)]
            idx = np.array([by_class[c][rng.integers(len(by_class[c]))] for c in labels])
            x = flat[idx]
            if cfg.persons > 1 and cfg.permute_persons:
                x = permute_batch(x, random_person_permutations(len(idx), cfg.persons, rng))
            logits = model(torch.from_numpy(np.ascontiguousarray(x)))
            loss = F.cross_entropy(logits, torch.from_numpy(labels))
            if not torch.isfinite(loss) or loss.item() > 1e6:
                raise DivergenceError(f"recognizer loss {loss.item()!r}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item()
        sched.step()
        history.train_loss.append(total / steps)
        if val is not None:
            history.val_accuracy.append(accuracy(val.flat(), val.labels, model))
    model.eval()
    if val is not None and not history.val_accuracy:
        history.val_accuracy.append(accuracy(val.flat(), val.labels, model))
    return model, history


# -- features ------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray  # (N, F) float64
    labels: np.ndarray  # (N,)
    person_mode: str = WHOLE_GROUP


def _as_flat(x) -> tuple:
    if isinstance(x, MotionSequence):
        return flatten(x)[None], True
    if isinstance(x, LabeledDataset):
        return x.flat(), False
    x = np.asarray(x)
    return (x[None], True) if x.ndim == 3 else (x, False)


def extract_features(x, recognizer: Recognizer, mode: str = WHOLE_GROUP) -> np.ndarray:
    """Penultimate features; (F,) for one sequence, (N, F) for a batch."""
    flat, single = _as_flat(x)
    P = flat.shape[1]
    if mode == WHOLE_GROUP and recognizer.persons != P:
        raise ModeMismatchError(f"whole-group recognizer for {recognizer.persons} persons got {P}")
    if mode == PER_PERSON and (recognizer.persons != 1 or P != 1):
        raise ModeMismatchError("per-person features need a single-person recognizer and input")
    if mode not in (WHOLE_GROUP, PER_PERSON):
        raise ValueError(f"unknown mode {mode!r}")
    out = batched(recognizer.features, flat).double().numpy()
    if getattr(recognizer, "training", False):
        recognizer.eval()
    return out[0] if single else out


def person_dataset(ds: LabeledDataset) -> LabeledDataset:
    """Every person of every group as its own single-person sample, keeping the group label."""
    N, P = ds.root_translation.shape[:2]
    return LabeledDataset(
        ds.root_translation.reshape(N * P, 1, *ds.root_translation.shape[2:]),
        ds.local_pose.reshape(N * P, 1, *ds.local_pose.shape[2:]),
        np.repeat(ds.labels, P), ds.class_count, ds.topology, ds.representation, ds.class_names,
    )


def aggregate_person_features(x, recognizer: Recognizer) -> np.ndarray:
    """Channel-wise max over per-person features from a single-person recognizer."""
    if recognizer.persons != 1:
        raise ModeMismatchError("aggregation needs a single-person recognizer")
    flat, single = _as_flat(x)
    N, P = flat.shape[:2]
    per = extract_features(flat.reshape(N * P, 1, *flat.shape[2:]), recognizer, PER_PERSON)
    out = per.reshape(N, P, -1).max(axis=1)
    return out[0] if single else out


# -- Frechet distance ---------------------------------------------------------------


def gaussian_stats(features: np.ndarray) -> tuple:
    """Sample mean and unbiased covariance."""
    features = np.asarray(features, dtype=np.float64)
    N, Fw = features.shape
    if N < 2:
        raise ValueError("need at least two samples for a covariance")
    if N < Fw:
        warnings.warn(f"covariance from {N} samples in {Fw} dimensions is rank deficient", RankWarning)
    return features.mean(axis=0), np.atleast_2d(np.cov(features, rowvar=False))


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)) via eigendecompositions with clamped eigenvalues."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, np.float64)), np.atleast_1d(np.asarray(mu2, np.float64))
    s1, s2 = np.atleast_2d(np.asarray(sigma1, np.float64)), np.atleast_2d(np.asarray(sigma2, np.float64))
    if mu1.shape != mu2.shape or s1.shape != s2.shape or s1.shape != (len(mu1), len(mu1)):
        raise ValueError("dimension mismatch")
    for S in (s1, s2):
        if np.max(np.abs(S - S.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError("covariance is not symmetric")
    if np.array_equal(mu1, mu2) and np.array_equal(s1, s2):
        return 0.0
    s1, s2 = (s1 + s1.T) / 2, (s2 + s2.T) / 2
    r1 = _psd_sqrt(s1)
    M = r1 @ s2 @ r1
    w = np.linalg.eigvalsh((M + M.T) / 2)
    tr_sqrt = np.sqrt(np.clip(w, 0, None)).sum()
    d = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2 * tr_sqrt)
    if d < -1e-6:
        log.warning("Frechet distance %.3g below zero; clamped", d)
    return max(d, 0.0)


def fid_whole(real: FeatureSet, gen: FeatureSet) -> float:
    if np.array_equal(real.features, gen.features):
        return 0.0
    return frechet_distance(*gaussian_stats(real.features), *gaussian_stats(gen.features))


def per_class_fid(real: FeatureSet, gen: FeatureSet) -> dict:
    out = {}
    for c in np.unique(real.labels):
        r, g = real.features[real.labels == c], gen.features[gen.labels == c]
        if len(r) < 2 or len(g) < 2:
            raise ValueError(f"class {c} has fewer than two samples on one side")
        out[int(c)] = 0.0 if np.array_equal(r, g) else frechet_distance(*gaussian_stats(r), *gaussian_stats(g))
    return out


def fid_mean(real: FeatureSet, gen: FeatureSet) -> float:
    """Unweighted mean of per-class distances over the real set's classes."""
    per = per_class_fid(real, gen)
    return float(sum(per.values()) / len(per))


def accuracy(flat, intended_labels, recognizer) -> float:
    """Fraction of samples classified as the label they were generated for."""
    pred = np.asarray(recognizer.predict(flat))
    return float(np.mean(pred == np.asarray(intended_labels)))


# -- evaluation protocol ---------------------------------------------------------------

METRIC_NAMES = ("Acc.", "FID_m", "FID_w", "FID^a_m", "FID^a_w")


@dataclass(frozen=True)
class EvalProtocol:
    n_per_class: int = 100
    seed: int = 0
    prior: str = "gaussian_process"


def evaluate_samples(real_flat, real_labels, gen_flat, gen_labels, recognizer: Recognizer,
                     person_recognizer: Optional[Recognizer] = None) -> dict:
    real_flat, gen_flat = np.asarray(real_flat), np.asarray(gen_flat)
    P = real_flat.shape[1]
    if P > 1 and person_recognizer is None:
        raise ValueError("multi-person evaluation needs a single-person recognizer for FID^a")
    real = FeatureSet(extract_features(real_flat, recognizer), np.asarray(real_labels))
    gen = FeatureSet(extract_features(gen_flat, recognizer), np.asarray(gen_labels))
    metrics = {
        "Acc.": accuracy(gen_flat, gen_labels, recognizer),
        "FID_m": fid_mean(real, gen),
        "FID_w": fid_whole(real, gen),
    }
    if P > 1:
        real_a = FeatureSet(aggregate_person_features(real_flat, person_recognizer), real.labels, PER_PERSON)
        gen_a = FeatureSet(aggregate_person_features(gen_flat, person_recognizer), gen.labels, PER_PERSON)
        metrics["FID^a_m"] = fid_mean(real_a, gen_a)
        metrics["FID^a_w"] = fid_whole(real_a, gen_a)
    return metrics


def generate_samples(generator, class_count: int, protocol: EvalProtocol, gp_cfg=None, classes=None) -> tuple:
    """``n_per_class`` samples for each of ``classes`` (default all); returns (flat (N, P, T, C), labels)."""
    from .gp_prior import GPConfig, GPPrior, sample_iid

    cfg = generator.cfg
    gp_cfg = gp_cfg or GPConfig(channels=cfg.latent_channels, length=cfg.frames)
    rng = np.random.default_rng(protocol.seed)
    prior = GPPrior(gp_cfg) if protocol.prior == "gaussian_process" else None
    classes = np.arange(class_count) if classes is None else np.asarray(classes, dtype=np.int64)
    labels = np.repeat(classes, protocol.n_per_class)
    m = len(labels) * (1 if cfg.shared_latent else cfg.persons)
    z = prior.sample(m, rng) if prior is not None else sample_iid(gp_cfg, m, rng)
    z = torch.from_numpy(z.astype(np.float32))
    if not cfg.shared_latent:
        z = z.view(len(labels), cfg.persons, *z.shape[1:])
    generator.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(labels), 256):
            out.append(generator(z[i : i + 256], torch.from_numpy(labels[i : i + 256])))
    return torch.cat(out).numpy(), labels


def evaluate(generator, recognizer: Recognizer, dataset: LabeledDataset, protocol: EvalProtocol = EvalProtocol(),
             person_recognizer: Optional[Recognizer] = None, gp_cfg=None) -> dict:
    """Generate ``n_per_class`` samples per class and compute all metrics against ``dataset``."""
    gen_flat, gen_labels = generate_samples(generator, dataset.class_count, protocol, gp_cfg)
    return evaluate_samples(dataset.flat(), dataset.labels, gen_flat, gen_labels, recognizer, person_recognizer)


def metrics_report(metrics: dict, run_id: str, config_hash: str, sample_counts: dict,
                   recognizer_hashes: dict) -> dict:
    return {
        "run_id": run_id,
        "config_hash": config_hash,
        "metrics": {k: float(v) for k, v in metrics.items()},
        "sample_counts": sample_counts,
        "recognizer_hashes": recognizer_hashes,
    }
