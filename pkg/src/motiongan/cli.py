"""``motiongan`` command line: synth-data, train-gan, train-recognizer, generate, evaluate, plot, export-json.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, RunConfig
from .evaluation import (
    EvalProtocol,
    Recognizer,
    RecognizerConfig,
    RankWarning,
    evaluate_samples,
    generate_samples,
    metrics_report,
    person_dataset,
    train_recognizer,
)
from .generator import Generator, GeneratorConfig
from .gp_prior import GPConfig
from .motion import io as motion_io
from .motion.sequence import LabeledDataset, Representation, dataset_from_flat, resolve_topology
from .motion.synth import synth_dataset
from .training import DivergenceError, GANTrainer, TrainLog

log = logging.getLogger("motiongan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


# flag dest -> config key; a flag left at None defers to the config file
FLAG_KEYS = {
    "seed": "run.seed",
    "persons": "data.persons",
    "classes": "data.classes",
    "per_class": "data.per_class",
    "frames": "data.frames",
    "topology": "data.topology",
    "iterations": "train.iterations",
    "batch_size": "train.batch_size",
    "checkpoint_every": "train.checkpoint_every",
    "epochs": "recognizer.epochs",
    "n_per_class": "eval.n_per_class",
}


def _write_csv(rows, out=None):
    csv.writer(out or sys.stdout, lineterminator="\n").writerows(rows)


def _load_config(args) -> RunConfig:
    overrides = list(args.set or [])
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return RunConfig.load(args.config, overrides)


def _output_dir(cfg: RunConfig, args) -> Path:
    out = cfg.output_dir(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(path, cfg: RunConfig) -> LabeledDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset {path} not found")
    ds = motion_io.load(path)
    cfg.check_dataset(ds)
    return dataclasses.replace(ds, topology=cfg.topology())


# -- checkpoints ---------------------------------------------------------------------------


def _gan_meta(cfg: RunConfig, trainer: GANTrainer) -> dict:
    return {
        "kind": "gan",
        "config_hash": cfg.hash(),
        "config": cfg.text(),
        "iteration": trainer.iteration,
        "generator": trainer.G.cfg.to_dict(),
        "discriminator": trainer.D.cfg.to_dict(),
        "prior": dataclasses.asdict(trainer.gp_cfg),
        "topology": trainer.dataset.topology.name,
        "representation": int(trainer.dataset.representation),
    }


def load_generator(path):
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "gan":
        raise checkpoint.CheckpointError(f"{path} is not a generator checkpoint")
    G = Generator(GeneratorConfig(**meta["generator"]))
    checkpoint.load_module(G, tensors, "generator")
    return G.eval(), meta


def save_recognizer(path, model: Recognizer, meta: dict) -> None:
    meta = dict(meta, kind="recognizer", recognizer=model.cfg.to_dict(), topology=model.topology.name)
    checkpoint.save(path, checkpoint.module_tensors(model, "recognizer"), meta)


def load_recognizer(path) -> Recognizer:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "recognizer":
        raise checkpoint.CheckpointError(f"{path} is not a recognizer checkpoint")
    model = Recognizer(RecognizerConfig.from_dict(meta["recognizer"]), resolve_topology(meta["topology"]))
    checkpoint.load_module(model, tensors, "recognizer")
    return model.eval()


# -- commands --------------------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    cfg = _load_config(args)
    ds = synth_dataset(cfg.synth_spec(), cfg.seed)
    out = Path(args.out) if args.out else _output_dir(cfg, args) / "dataset.mseq"
    out.parent.mkdir(parents=True, exist_ok=True)
    motion_io.save(ds, out)
    rows = [("class", "name", "count")]
    rows += [(c, name, int(n)) for c, (name, n) in enumerate(zip(ds.class_names, ds.class_counts()))]
    _write_csv(rows)
    log.info("wrote %d sequences to %s", len(ds), out)
    return EXIT_OK


def cmd_train_gan(args) -> int:
    cfg = _load_config(args)
    ds = _load_data(args.data, cfg)
    out = _output_dir(cfg, args)
    trainer = GANTrainer(ds, cfg.generator_config(), cfg.discriminator_config(), cfg.train_config(),
                         cfg.prior_config())
    log_path = out / "train_log.csv"
    if args.resume:
        tensors, meta = checkpoint.load(args.resume)
        trainer.load_state(tensors, int(meta["iteration"]))
        if log_path.is_file():
            previous = TrainLog.from_csv(log_path)
            for row in previous.rows():
                if row[0] < trainer.iteration:
                    trainer.log.append(*row)
        log.info("resumed at iteration %d", trainer.iteration)
    every = cfg.getint("train", "checkpoint_every")

    def save_ckpt(name):
        checkpoint.save(out / name, trainer.state_tensors(), _gan_meta(cfg, trainer))

    total = trainer.total_iterations()
    try:
        while trainer.iteration < total:
            chunk = total - trainer.iteration
            if every > 0:
                chunk = min(chunk, every - trainer.iteration % every)
            trainer.run(chunk)
            if every > 0 and trainer.iteration % every == 0:
                save_ckpt(f"gan_iter{trainer.iteration}.ckpt")
            log.info("iteration %d/%d", trainer.iteration, total)
    except DivergenceError as e:
        trainer.log.to_csv(log_path)
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    trainer.log.to_csv(log_path)
    save_ckpt("gan.ckpt")
    _write_csv([("iteration", "checkpoint", "log", "config_hash"),
                (trainer.iteration, out / "gan.ckpt", log_path, cfg.hash())])
    return EXIT_OK


def cmd_train_recognizer(args) -> int:
    cfg = _load_config(args)
    ds = _load_data(args.data, cfg)
    rng = np.random.default_rng(cfg.seed)
    train, val = ds.split(cfg.getfloat("data", "val_fraction"), rng)
    if args.mode == "per_person":
        train, val = person_dataset(train), person_dataset(val)
    rec_cfg = cfg.recognizer_config(train.persons)
    model, history = train_recognizer(train, rec_cfg, val if len(val) else None)
    default = "recognizer_person.ckpt" if args.mode == "per_person" else "recognizer.ckpt"
    out = Path(args.out) if args.out else _output_dir(cfg, args) / default
    out.parent.mkdir(parents=True, exist_ok=True)
    save_recognizer(out, model, {"config_hash": cfg.hash(), "mode": args.mode,
                                 "val_accuracy": history.final_val_accuracy})
    rows = [("epoch", "train_loss", "val_accuracy")]
    for e, loss in enumerate(history.train_loss):
        acc = history.val_accuracy[e] if e < len(history.val_accuracy) else ""
        rows.append((e + 1, repr(loss), repr(acc) if acc != "" else ""))
    _write_csv(rows)
    return EXIT_OK


def _label_id(label: str, class_count: int, names) -> int:
    if label.isdigit():
        a = int(label)
    elif names and label in names:
        a = list(names).index(label)
    else:
        raise ConfigError(f"unknown label {label!r}")
    if a >= class_count:
        raise ConfigError(f"label id {a} out of range for {class_count} classes")
    return a


def cmd_generate(args) -> int:
    G, meta = load_generator(args.checkpoint)
    cfg = RunConfig.load(None, [])
    cfg.parser.read_string(meta["config"])
    names = cfg.synth_spec().class_names()
    a = _label_id(args.label, G.cfg.class_count, names)
    if args.count < 1:
        raise ConfigError("count must be positive")
    gp = GPConfig(**meta["prior"])
    seed = args.seed if args.seed is not None else cfg.getint("eval", "seed")
    protocol = EvalProtocol(n_per_class=args.count, seed=seed, prior=cfg.get("eval", "prior"))
    flat, _ = generate_samples(G, G.cfg.class_count, protocol, gp, classes=[a])
    rep = Representation(meta["representation"])
    topo = resolve_topology(meta["topology"])
    ds = dataset_from_flat(flat, np.full(args.count, a), G.cfg.class_count, topo, rep, names)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    motion_io.save(ds, out)
    if args.json:
        motion_io.export_json(ds, args.json)
    _write_csv([("label", "name", "count", "path"), (a, names[a], args.count, out)])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    real = _load_data(args.data, cfg)
    recognizer = load_recognizer(args.recognizer)
    person_rec = load_recognizer(args.person_recognizer) if args.person_recognizer else None
    if real.persons > 1 and person_rec is None:
        raise ConfigError("multi-person evaluation needs --person-recognizer (single-person recognizer for FID^a)")
    if bool(args.checkpoint) == bool(args.generated):
        raise ConfigError("give exactly one of --checkpoint or --generated")
    if args.checkpoint:
        G, meta = load_generator(args.checkpoint)
        gen_flat, gen_labels = generate_samples(G, real.class_count, cfg.eval_protocol(), GPConfig(**meta["prior"]))
        source = meta["config_hash"]
    else:
        gen = _load_data(args.generated, cfg)
        gen_flat, gen_labels = gen.flat(), gen.labels
        source = checkpoint.file_hash(args.generated)[:16]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankWarning)
        metrics = evaluate_samples(real.flat(), real.labels, gen_flat, gen_labels, recognizer, person_rec)
    if caught:
        log.warning("%d rank-deficient covariance estimates (fewer samples than feature width)", len(caught))
    hashes = {"whole_group": checkpoint.file_hash(args.recognizer)}
    if args.person_recognizer:
        hashes["per_person"] = checkpoint.file_hash(args.person_recognizer)
    report = metrics_report(metrics, cfg.get("run", "run_id"), cfg.hash(),
                            {"real": len(real), "generated": int(len(gen_labels))}, hashes)
    report["generated_from"] = source
    out = Path(args.out) if args.out else _output_dir(cfg, args) / "metrics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_csv([("metric", "value")] + [(k, repr(v)) for k, v in report["metrics"].items()])
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_metrics, plot_training_log

    written = []
    if not args.log and not args.metrics:
        raise ConfigError("give --log and/or --metrics")
    if args.log:
        path = Path(args.log)
        if not path.is_file():
            raise DataError(f"log {path} not found")
        train_log = TrainLog.from_csv(path)
        if len(train_log) == 0:
            raise DataError(f"log {path} has no rows")
        written.append(plot_training_log(train_log, _plot_path(args, path, "loss_curves.png")))
    if args.metrics:
        path = Path(args.metrics)
        if not path.is_file():
            raise DataError(f"metrics {path} not found")
        report = json.loads(path.read_text())
        metrics = report.get("metrics", report)
        written.append(plot_metrics(metrics, _plot_path(args, path, "metrics.png"), report.get("run_id", "")))
    _write_csv([("figure",)] + [(str(p),) for p in written])
    return EXIT_OK


def _plot_path(args, source: Path, name: str) -> Path:
    return Path(args.out_dir) / name if args.out_dir else source.with_name(name)


def cmd_export_json(args) -> int:
    src = Path(args.data)
    if not src.is_file():
        raise DataError(f"dataset {src} not found")
    ds = motion_io.load(src)
    out = Path(args.out) if args.out else src.with_suffix(".json")
    motion_io.export_json(ds, out)
    _write_csv([("sequences", "path"), (len(ds), out)])
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motiongan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help, configured=True):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--seed", type=int)
        sp.set_defaults(fn=fn)
        if configured:
            sp.add_argument("--config", help="INI run configuration")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config entry")
            sp.add_argument("--output-dir", help="overrides MOTIONGAN_OUTPUT_DIR and run.output_dir")
            data = sp.add_argument_group("data shape (data.* config keys)")
            data.add_argument("--persons", type=int)
            data.add_argument("--classes", help="class count or comma-separated class names")
            data.add_argument("--per-class", type=int)
            data.add_argument("--frames", type=int)
            data.add_argument("--topology")
        return sp

    sp = command("synth-data", cmd_synth_data, "write a procedural labeled dataset (MSEQ1)")
    sp.add_argument("--out")

    sp = command("train-gan", cmd_train_gan, "train generator and critic")
    sp.add_argument("--data", required=True)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--resume", help="checkpoint to continue from")

    sp = command("train-recognizer", cmd_train_recognizer, "train the evaluation recognizer")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=["whole_group", "per_person"], default="whole_group")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out")

    sp = command("generate", cmd_generate, "sample sequences of one class from a checkpoint", configured=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--label", required=True, help="class id or name")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--json", help="also write a JSON mirror")

    sp = command("evaluate", cmd_evaluate, "accuracy and Frechet distances against real data")
    sp.add_argument("--data", required=True, help="real dataset")
    sp.add_argument("--checkpoint", help="generator checkpoint to sample from")
    sp.add_argument("--generated", help="MSEQ1 file of already generated samples")
    sp.add_argument("--recognizer", required=True)
    sp.add_argument("--person-recognizer", help="single-person recognizer for FID^a")
    sp.add_argument("--n-per-class", type=int)
    sp.add_argument("--out")

    sp = command("plot", cmd_plot, "render loss curves and metric charts to PNG", configured=False)
    sp.add_argument("--log", help="train_log.csv")
    sp.add_argument("--metrics", help="metrics.json")
    sp.add_argument("--out-dir")

    sp = command("export-json", cmd_export_json, "mirror an MSEQ1 file as JSON", configured=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, motion_io.MotionFormatError, checkpoint.CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
