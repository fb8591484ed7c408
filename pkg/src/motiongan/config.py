"""Run configuration: one INI document drives every command.

Sections map onto the library's config objects; the derived sizes (persons,
frames, class count, output width) come from ``[data]`` so the sections cannot
disagree with each other.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .discriminator import DiscriminatorConfig, discriminator_config
from .evaluation import EvalProtocol, RecognizerConfig, recognizer_config
from .generator import GeneratorConfig
from .gp_prior import GPConfig
from .motion.sequence import LabeledDataset, Representation, resolve_topology
from .motion.synth import SynthSpec
from .training import TrainConfig

OUTPUT_DIR_ENV = "MOTIONGAN_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "run": {"seed": "0", "output_dir": "runs/default", "run_id": "default"},
    "data": {
        "classes": "4",
        "per_class": "50",
        "frames": "16",
        "persons": "1",
        "topology": "star5",
        "noise": "0.01",
        "amplitude_jitter": "0.2",
        "placement": "0.5",
        "representation": "joint_coordinates",
        "val_fraction": "0.25",
    },
    "prior": {"channels": "32", "length_scale_min": "2.0", "length_scale_max": "", "jitter": "1e-6"},
    "generator": {
        "model_width": "64",
        "heads": "4",
        "layer_pairs": "2",
        "mlp_ratio": "4",
        "pe_mode": "learned",
        "shared_latent": "true",
    },
    "discriminator": {"widths": "16,32,64,64", "temporal_kernel": "4", "person_mode": "concat"},
    "train": {
        "learning_rate": "2e-4",
        "adam_beta1": "0.0",
        "adam_beta2": "0.999",
        "batch_size": "32",
        "d_steps_per_g": "4",
        "iterations": "5000",
        "gradient_penalty_weight": "10.0",
        "weight_clip": "",
        "prior": "gaussian_process",
        "permute_persons": "true",
        "checkpoint_every": "1000",
        "divergence_threshold": "1e6",
    },
    "recognizer": {
        "widths": "32,64,128,512",
        "epochs": "20",
        "batch_size": "64",
        "learning_rate": "0.1",
        "momentum": "0.9",
        "weight_decay": "1e-4",
    },
    "eval": {"n_per_class": "100", "seed": "0", "prior": "gaussian_process"},
}


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


@dataclass
class RunConfig:
    parser: configparser.ConfigParser

    # -- loading -------------------------------------------------------------
    @classmethod
    def load(cls, path=None, overrides: Iterable[str] = ()) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file {path} not found")
            try:
                cp.read_string(path.read_text(), source=str(path))
            except configparser.Error as e:
                raise ConfigError(str(e)) from e
        cfg = cls(cp)
        for item in overrides:
            cfg.set_item(item)
        cfg.validate()
        return cfg

    def set_item(self, item: str) -> None:
        """Applies ``section.key=value``."""
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        self.set(section, name, value.strip())

    def set(self, section: str, key: str, value) -> None:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.parser.set(section, key, "" if value is None else str(value))

    def validate(self) -> None:
        for section in self.parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key in self.parser[section]:
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
        try:
            spec = self.synth_spec()
            spec.validate()
            gen = self.generator_config()
            self.prior_config()
            self.train_config()
            self.discriminator_config()
            self.recognizer_config(spec.persons)
            self.eval_protocol()
        except ConfigError:
            raise
        except (ValueError, KeyError) as e:
            raise ConfigError(str(e)) from e
        if gen.persons != spec.persons:
            raise ConfigError("generator and data disagree on persons")

    # -- typed access --------------------------------------------------------
    def get(self, section, key) -> str:
        return self.parser.get(section, key)

    def getint(self, section, key) -> int:
        try:
            return self.parser.getint(section, key)
        except ValueError as e:
            raise ConfigError(f"{section}.{key}: {e}") from e

    def getfloat(self, section, key) -> float:
        try:
            return self.parser.getfloat(section, key)
        except ValueError as e:
            raise ConfigError(f"{section}.{key}: {e}") from e

    def getbool(self, section, key) -> bool:
        try:
            return self.parser.getboolean(section, key)
        except ValueError as e:
            raise ConfigError(f"{section}.{key}: {e}") from e

    def optional_float(self, section, key) -> Optional[float]:
        return self.getfloat(section, key) if self.get(section, key) else None

    @property
    def seed(self) -> int:
        return self.getint("run", "seed")

    def output_dir(self, flag: Optional[str] = None) -> Path:
        """Flag, then environment, then config."""
        return Path(flag or os.environ.get(OUTPUT_DIR_ENV) or self.get("run", "output_dir"))

    def text(self) -> str:
        buf = io.StringIO()
        self.parser.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]

    # -- library configs -----------------------------------------------------
    def synth_spec(self) -> SynthSpec:
        raw = self.get("data", "classes")
        classes = int(raw) if raw.strip().isdigit() else tuple(c.strip() for c in raw.split(",") if c.strip())
        return SynthSpec(
            classes=classes,
            per_class=self.getint("data", "per_class"),
            frames=self.getint("data", "frames"),
            persons=self.getint("data", "persons"),
            topology=self.get("data", "topology"),
            noise=self.getfloat("data", "noise"),
            amplitude_jitter=self.getfloat("data", "amplitude_jitter"),
            placement=self.getfloat("data", "placement"),
            representation=self.get("data", "representation"),
        )

    def class_count(self) -> int:
        return len(self.synth_spec().class_names())

    def node_channels(self) -> int:
        return Representation[self.get("data", "representation")].width

    def output_width(self) -> int:
        topo = resolve_topology(self.get("data", "topology") + self._limb_suffix())
        return 3 + topo.joint_count * self.node_channels()

    def _limb_suffix(self) -> str:
        rep = self.get("data", "representation")
        return "-limbs" if rep == "normalized_limb_vectors" else ""

    def topology(self):
        return resolve_topology(self.get("data", "topology") + self._limb_suffix())

    def prior_config(self) -> GPConfig:
        return GPConfig(
            channels=self.getint("prior", "channels"),
            length=self.getint("data", "frames"),
            length_scale_min=self.getfloat("prior", "length_scale_min"),
            length_scale_max=self.optional_float("prior", "length_scale_max"),
            jitter=self.getfloat("prior", "jitter"),
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            latent_channels=self.getint("prior", "channels"),
            model_width=self.getint("generator", "model_width"),
            heads=self.getint("generator", "heads"),
            layer_pairs=self.getint("generator", "layer_pairs"),
            class_count=self.class_count(),
            persons=self.getint("data", "persons"),
            frames=self.getint("data", "frames"),
            output_width=self.output_width(),
            mlp_ratio=self.getint("generator", "mlp_ratio"),
            pe_mode=self.get("generator", "pe_mode"),
            shared_latent=self.getbool("generator", "shared_latent"),
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return discriminator_config(
            self.topology(),
            self.class_count(),
            self.getint("data", "persons"),
            self.node_channels(),
            widths=_ints(self.get("discriminator", "widths")),
            temporal_kernel=self.getint("discriminator", "temporal_kernel"),
            person_mode=self.get("discriminator", "person_mode"),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.getfloat("train", "learning_rate"),
            adam_beta1=self.getfloat("train", "adam_beta1"),
            adam_beta2=self.getfloat("train", "adam_beta2"),
            batch_size=self.getint("train", "batch_size"),
            d_steps_per_g=self.getint("train", "d_steps_per_g"),
            iterations=self.getint("train", "iterations"),
            gradient_penalty_weight=self.getfloat("train", "gradient_penalty_weight"),
            weight_clip=self.optional_float("train", "weight_clip"),
            seed=self.seed,
            prior=self.get("train", "prior"),
            permute_persons=self.getbool("train", "permute_persons"),
            divergence_threshold=self.getfloat("train", "divergence_threshold"),
        )

    def recognizer_config(self, persons: int) -> RecognizerConfig:
        return recognizer_config(
            self.topology(),
            self.class_count(),
            persons,
            self.node_channels(),
            widths=_ints(self.get("recognizer", "widths")),
            epochs=self.getint("recognizer", "epochs"),
            batch_size=self.getint("recognizer", "batch_size"),
            learning_rate=self.getfloat("recognizer", "learning_rate"),
            momentum=self.getfloat("recognizer", "momentum"),
            weight_decay=self.getfloat("recognizer", "weight_decay"),
            seed=self.seed,
        )

    def eval_protocol(self) -> EvalProtocol:
        prior = self.get("eval", "prior")
        if prior not in ("gaussian_process", "iid_gaussian"):
            raise ConfigError(f"unknown eval.prior {prior!r}")
        return EvalProtocol(self.getint("eval", "n_per_class"), self.getint("eval", "seed"), prior)

    def check_dataset(self, ds: LabeledDataset) -> None:
        """Raises ConfigError when a dataset file does not fit this config."""
        want = {
            "persons": self.getint("data", "persons"),
            "frames": self.getint("data", "frames"),
            "classes": self.class_count(),
            "width": self.output_width(),
        }
        have = {"persons": ds.persons, "frames": ds.frames, "classes": ds.class_count, "width": ds.width}
        bad = [f"{k}: config {want[k]}, data {have[k]}" for k in want if want[k] != have[k]]
        if bad:
            raise ConfigError("dataset does not match config (" + "; ".join(bad) + ")")
