import hashlib

import numpy as np
import pytest
import torch
from scipy import stats

from helpers import central_difference, relative_error
from motiongan import checkpoint
from motiongan.discriminator import discriminator_config
from motiongan.generator import GeneratorConfig
from motiongan.motion import SynthSpec, synth_dataset
from motiongan.training import (
    DivergenceError,
    GANTrainer,
    TrainConfig,
    TrainLog,
    critic_loss,
    d_loss,
    g_loss,
    gradient_penalty,
    train,
)


class StubCritic:
    """Scores looked up by batch identity: fake and real tensors are tagged by their first value."""

    def __init__(self, fake_scores, real_scores):
        self.table = {0.0: torch.tensor(fake_scores, dtype=torch.float64), 1.0: torch.tensor(real_scores, dtype=torch.float64)}

    def __call__(self, x, labels):
        return self.table[float(x.reshape(-1)[0])]


def linear_critic(w):
    return lambda x, labels: (x.reshape(x.shape[0], -1) * w).sum(-1)


def tiny_setup(persons=1, classes=2, per_class=20, seed=0, **train_kw):
    spec = SynthSpec(classes=classes, per_class=per_class, frames=16, persons=persons)
    ds = synth_dataset(spec, seed)
    gen = GeneratorConfig(latent_channels=8, model_width=16, heads=2, layer_pairs=1, class_count=ds.class_count,
                          persons=persons, frames=16, output_width=ds.width)
    disc = discriminator_config(ds.topology, ds.class_count, persons, widths=(8, 8, 16, 16))
    cfg = TrainConfig(batch_size=8, seed=seed, **train_kw)
    return ds, gen, disc, cfg


def param_hash(module):
    h = hashlib.sha256()
    for p in module.parameters():
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


# -- losses -------------------------------------------------------------------------------------


def test_stub_critic_arithmetic():
    D = StubCritic([1.0, 3.0], [2.0, 2.0])
    fake, real = torch.zeros(2, 1, dtype=torch.float64), torch.ones(2, 1, dtype=torch.float64)
    terms = critic_loss(D, real, fake, None, penalty_weight=0)
    assert terms.loss.item() == 0.0
    assert terms.gap == 0.0


def test_constant_critic_loss_is_penalty_only():
    D = lambda x, labels: torch.full((x.shape[0],), 3.0, dtype=x.dtype) + 0 * x.sum()
    real, fake = torch.randn(4, 3, dtype=torch.float64), torch.randn(4, 3, dtype=torch.float64)
    terms = critic_loss(D, real, fake, None, penalty_weight=10)
    assert terms.penalty.item() == 1.0
    assert terms.loss.item() == 10.0


def test_constant_generator_loss():
    G = lambda z, labels: z
    D = lambda x, labels: torch.full((x.shape[0],), 5.0)
    assert g_loss(G, D, None, torch.zeros(3, 2)).item() == -5.0


@pytest.mark.parametrize(
    "critic,expected",
    [
        (lambda x, a: (x * torch.tensor([0.6, 0.8], dtype=x.dtype)).sum(-1), 0.0),
        (lambda x, a: 0 * x.sum(-1), 1.0),
        (lambda x, a: 2 * x[:, 0], 1.0),
    ],
)
def test_gradient_penalty_analytic_cases(critic, expected):
    real, fake = torch.randn(5, 2, dtype=torch.float64), torch.randn(5, 2, dtype=torch.float64)
    assert gradient_penalty(critic, real, fake, None).item() == expected


def test_gradient_penalty_constant_without_graph():
    # a critic that ignores its input entirely still yields penalty 1
    D = lambda x, labels: torch.ones(x.shape[0], dtype=x.dtype)
    assert gradient_penalty(D, torch.zeros(2, 3), torch.ones(2, 3), None).item() == 1.0


def test_gradient_penalty_interpolates():
    seen = {}

    def D(x, labels):
        seen["x"] = x.detach().clone()
        return x.sum(-1)

    real, fake = torch.ones(2, 3, dtype=torch.float64), torch.zeros(2, 3, dtype=torch.float64)
    gradient_penalty(D, real, fake, None, u=torch.tensor([0.25, 1.0], dtype=torch.float64))
    assert seen["x"][:, 0].tolist() == [0.25, 1.0]


def test_loss_identity_shared_batches():
    ds, gen, disc, _ = tiny_setup()
    trainer = GANTrainer(ds, gen, disc, TrainConfig(seed=3))
    G, D = trainer.G.double(), trainer.D.double()
    labels = torch.tensor([0, 1, 1, 0])
    real = torch.from_numpy(ds.flat()[:4].astype(np.float64))
    z = torch.randn(4, 16, 8, dtype=torch.float64)
    dl = d_loss(G, D, real, labels, z, penalty_weight=0).loss
    gl = g_loss(G, D, labels, z)
    assert abs((dl + gl).item() + D(real, labels).mean().item()) < 1e-12
    fake = G(z, labels)
    assert (gl + D(fake, labels).mean()).item() == 0.0


def test_linear_critic_loss_gradient():
    torch.manual_seed(0)
    w = torch.randn(6, dtype=torch.float64, requires_grad=True)
    real, fake = torch.randn(4, 6, dtype=torch.float64), torch.randn(4, 6, dtype=torch.float64)
    loss = lambda: critic_loss(linear_critic(w), real, fake, None, penalty_weight=0).loss
    (analytic,) = torch.autograd.grad(loss(), w)
    with torch.no_grad():
        numeric = central_difference(loss, w)
    assert relative_error(analytic, numeric) < 1e-6
    assert torch.allclose(analytic, fake.mean(0) - real.mean(0))


def test_generator_loss_gradient_single_weight():
    ds, gen, disc, _ = tiny_setup()
    trainer = GANTrainer(ds, gen, disc, TrainConfig(seed=4))
    G, D = trainer.G.double(), trainer.D.double()
    labels = torch.tensor([0, 1])
    z = torch.randn(2, 16, 8, dtype=torch.float64)
    weight = G.output_projection.weight
    loss = lambda: g_loss(G, D, labels, z)
    (analytic,) = torch.autograd.grad(loss(), weight)
    i, j = 2, 5
    eps = 1e-6
    with torch.no_grad():
        orig = weight[i, j].item()
        weight[i, j] = orig + eps
        hi = loss().item()
        weight[i, j] = orig - eps
        lo = loss().item()
        weight[i, j] = orig
    numeric = (hi - lo) / (2 * eps)
    assert abs(analytic[i, j].item() - numeric) / max(abs(numeric), 1e-5) < 1e-4


# -- trainer ---------------------------------------------------------------------------------------


def test_freezing_contract():
    trainer = GANTrainer(*tiny_setup())
    g0, d0 = param_hash(trainer.G), param_hash(trainer.D)
    trainer.d_step()
    assert param_hash(trainer.G) == g0 and param_hash(trainer.D) != d0
    d1 = param_hash(trainer.D)
    trainer.g_step()
    assert param_hash(trainer.D) == d1 and param_hash(trainer.G) != g0
    assert all(p.requires_grad for p in trainer.D.parameters())


def test_zero_gradient_step_keeps_parameters():
    trainer = GANTrainer(*tiny_setup())
    before = param_hash(trainer.G)
    for p in trainer.G.parameters():
        p.grad = torch.zeros_like(p)
    trainer.opt_g.step()
    assert param_hash(trainer.G) == before


def test_person_permutation_uniform():
    ds, gen, disc, cfg = tiny_setup(persons=3, classes=2, per_class=1)
    trainer = GANTrainer(ds, gen, disc, cfg)
    original = ds.flat()[0]
    counts = {}
    for _ in range(1000):
        batch = trainer.sample_real(np.array([0]))[0].numpy()
        order = tuple(int(np.flatnonzero([np.array_equal(batch[p], original[q]) for q in range(3)])[0]) for p in range(3))
        counts[order] = counts.get(order, 0) + 1
    assert len(counts) == 6
    assert stats.chisquare(list(counts.values())).pvalue > 0.01


def test_real_samples_match_label():
    ds, gen, disc, cfg = tiny_setup(classes=3, per_class=5)
    trainer = GANTrainer(ds, gen, disc, cfg)
    labels = trainer.sample_labels(50)
    batch = trainer.sample_real(labels).numpy()
    flat = ds.flat()
    for x, a in zip(batch, labels):
        match = [i for i in range(len(ds)) if np.array_equal(flat[i], x)]
        assert ds.labels[match[0]] == a


def test_zero_epochs_leave_models_unchanged():
    ds, gen, disc, _ = tiny_setup()
    cfg = TrainConfig(batch_size=8, epochs=0)
    fresh = GANTrainer(ds, gen, disc, cfg)
    G, D, log = train(ds, gen, disc, cfg)
    assert len(log) == 0
    assert param_hash(G) == param_hash(fresh.G) and param_hash(D) == param_hash(fresh.D)


def test_same_seed_same_log():
    logs = []
    for _ in range(2):
        trainer = GANTrainer(*tiny_setup(persons=2))
        logs.append(trainer.run(10).rows())
    assert logs[0] == logs[1] and len(logs[0]) == 10


def test_different_seed_different_log():
    a = GANTrainer(*tiny_setup(seed=0)).run(3).rows()
    b = GANTrainer(*tiny_setup(seed=1)).run(3).rows()
    assert a != b


def test_epoch_accounting():
    ds, gen, disc, _ = tiny_setup()
    trainer = GANTrainer(ds, gen, disc, TrainConfig(batch_size=8, epochs=2))
    seen = []
    trainer.run(on_epoch=lambda t, e: seen.append(e))
    assert trainer.iteration == 10 and seen == [1, 2]
    assert trainer.log.epoch == [0] * 5 + [1] * 5
    assert len(trainer.log.epoch_seconds) == 2


def test_divergence_guard():
    trainer = GANTrainer(*tiny_setup(divergence_threshold=1e-9))
    with pytest.raises(DivergenceError):
        trainer.step()


def test_incompatible_configs_rejected():
    ds, gen, disc, cfg = tiny_setup()
    bad = GeneratorConfig(latent_channels=8, model_width=16, heads=2, class_count=2, persons=1, frames=12,
                          output_width=ds.width)
    with pytest.raises(ValueError, match="inconsistent configuration"):
        GANTrainer(ds, bad, disc, cfg)


def test_iid_prior_and_independent_latents():
    ds, gen, disc, _ = tiny_setup(persons=2)
    gen = GeneratorConfig(**{**gen.to_dict(), "shared_latent": False})
    trainer = GANTrainer(ds, gen, disc, TrainConfig(batch_size=4, prior="iid_gaussian"))
    assert trainer.sample_latent(4).shape == (4, 2, 16, 8)
    trainer.run(1)


def test_weight_clipping():
    trainer = GANTrainer(*tiny_setup(weight_clip=0.01, gradient_penalty_weight=0))
    trainer.d_step()
    assert max(p.abs().max().item() for p in trainer.D.parameters()) <= 0.01


def test_log_csv_round_trip(tmp_path):
    log = GANTrainer(*tiny_setup()).run(3)
    log.to_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "iter,d_loss,g_loss,penalty,gap,epoch"
    assert TrainLog.from_csv(tmp_path / "log.csv").rows() == log.rows()


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    ds, gen, disc, cfg = tiny_setup()
    straight = GANTrainer(ds, gen, disc, cfg)
    straight.run(2)
    checkpoint.save(tmp_path / "c.ckpt", straight.state_tensors(), {"iteration": 2})
    straight.load_state(straight.state_tensors(), 2)
    straight.run(2)

    resumed = GANTrainer(ds, gen, disc, cfg)
    tensors, meta = checkpoint.load(tmp_path / "c.ckpt")
    resumed.load_state(tensors, meta["iteration"])
    resumed.run(2)
    assert param_hash(resumed.G) == param_hash(straight.G)
    assert param_hash(resumed.D) == param_hash(straight.D)


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    ds, gen, disc, cfg = tiny_setup()
    trainer = GANTrainer(ds, gen, disc, cfg)
    checkpoint.save(tmp_path / "c.ckpt", trainer.state_tensors(), {})
    wider = GeneratorConfig(**{**gen.to_dict(), "model_width": 32})
    other = GANTrainer(ds, wider, disc, cfg)
    tensors, _ = checkpoint.load(tmp_path / "c.ckpt")
    with pytest.raises(checkpoint.CheckpointError, match=r"shape mismatch for generator\."):
        other.load_state(tensors, 0)


def test_critic_gap_shrinks():
    trainer = GANTrainer(*tiny_setup(per_class=20))
    log = trainer.run(2000)
    gap = np.abs(np.array(log.gap))
    assert np.median(gap[-100:]) < np.median(gap[:100])
