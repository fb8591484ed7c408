import json
import time

import pytest

from motiongan import checkpoint
from motiongan.cli import main
from motiongan.config import OUTPUT_DIR_ENV, ConfigError, RunConfig
from motiongan.motion import io as motion_io
from motiongan.training import TrainLog

TINY = [
    "--set", "generator.model_width=16",
    "--set", "prior.channels=8",
    "--set", "discriminator.widths=8,8,16,16",
    "--set", "train.batch_size=8",
    "--set", "recognizer.widths=8,16,16,32",
    "--set", "recognizer.epochs=2",
]
PAIR = ["--persons", "2", "--classes", "2", "--per-class", "10"] + TINY


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "out"))
    return tmp_path


@pytest.fixture
def trained(workdir):
    assert main(["synth-data", *PAIR, "--out", "data.mseq"]) == 0
    assert main(["train-gan", "--data", "data.mseq", *PAIR, "--iterations", "4", "--checkpoint-every", "2"]) == 0
    assert main(["train-recognizer", "--data", "data.mseq", *PAIR]) == 0
    assert main(["train-recognizer", "--data", "data.mseq", *PAIR, "--mode", "per_person"]) == 0
    return workdir


# -- config -------------------------------------------------------------------------------------------


def test_default_config_consistent():
    cfg = RunConfig.load()
    assert cfg.generator_config().output_width == 18
    assert cfg.discriminator_config().persons == cfg.generator_config().persons
    assert len(cfg.hash()) == 16


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseed = 7\noutput_dir = from_file\n[data]\npersons = 3\n")
    cfg = RunConfig.load(path, ["data.persons=2"])
    assert cfg.seed == 7 and cfg.getint("data", "persons") == 2
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert cfg.output_dir().name == "from_file"
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert cfg.output_dir().name == "env"
    assert cfg.output_dir(str(tmp_path / "flag")).name == "flag"


def test_config_hash_tracks_content():
    assert RunConfig.load().hash() == RunConfig.load().hash()
    assert RunConfig.load(overrides=["run.seed=1"]).hash() != RunConfig.load().hash()


@pytest.mark.parametrize("override", ["data.nope=1", "bogus", "generator.heads=3", "data.persons=9", "train.prior=flat"])
def test_config_errors(override):
    with pytest.raises(ConfigError):
        RunConfig.load(overrides=[override])


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[extras]\nx = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.load(path)


# -- synth-data ----------------------------------------------------------------------------------------


def test_synth_default_round_trip(workdir, capsys):
    assert main(["synth-data"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "class,name,count" and out[1] == "0,wave,50"
    ds = motion_io.load(workdir / "out" / "dataset.mseq")
    RunConfig.load().check_dataset(ds)


def test_synth_deterministic_bytes(workdir):
    main(["synth-data", "--seed", "3", "--out", "a.mseq"])
    main(["synth-data", "--seed", "3", "--out", "b.mseq"])
    assert (workdir / "a.mseq").read_bytes() == (workdir / "b.mseq").read_bytes()


def test_synth_five_persons(workdir):
    assert main(["synth-data", "--persons", "5", "--classes", "2", "--per-class", "2", "--out", "p5.mseq"]) == 0
    assert motion_io.HEADER.unpack_from((workdir / "p5.mseq").read_bytes(), 5)[0] == 5


def test_synth_bad_config_exit_code(workdir):
    assert main(["synth-data", "--persons", "9"]) == 2


# -- train ---------------------------------------------------------------------------------------------


def test_train_smoke_is_fast(workdir):
    main(["synth-data", *PAIR, "--out", "data.mseq"])
    t0 = time.perf_counter()
    assert main(["train-gan", "--data", "data.mseq", *PAIR, "--iterations", "10"]) == 0
    assert time.perf_counter() - t0 < 60
    log = TrainLog.from_csv(workdir / "out" / "train_log.csv")
    assert log.iter == list(range(10))


def test_resume_continues_numbering(trained):
    out = trained / "out"
    assert sorted(p.name for p in out.glob("gan_iter*.ckpt")) == ["gan_iter2.ckpt", "gan_iter4.ckpt"]
    assert main(["train-gan", "--data", "data.mseq", *PAIR, "--iterations", "6", "--resume", str(out / "gan_iter4.ckpt")]) == 0
    assert TrainLog.from_csv(out / "train_log.csv").iter == list(range(6))
    assert checkpoint.load(out / "gan.ckpt")[1]["iteration"] == 6


def test_mismatched_persons_rejected_before_training(workdir, capsys):
    main(["synth-data", *PAIR, "--out", "data.mseq"])
    assert main(["train-gan", "--data", "data.mseq", *TINY, "--classes", "2", "--per-class", "10"]) == 2
    assert "persons" in capsys.readouterr().err
    assert not (workdir / "out" / "train_log.csv").exists()


def test_divergence_exit_code(workdir):
    main(["synth-data", *PAIR, "--out", "data.mseq"])
    code = main(["train-gan", "--data", "data.mseq", *PAIR, "--iterations", "3", "--set", "train.divergence_threshold=1e-12"])
    assert code == 4


def test_missing_data_exit_code(workdir):
    assert main(["train-gan", "--data", "nowhere.mseq"]) == 3


def test_corrupt_data_exit_code(workdir):
    (workdir / "bad.mseq").write_bytes(b"NOTMSEQ")
    assert main(["export-json", "--data", "bad.mseq"]) == 3


# -- generate --------------------------------------------------------------------------------------------


def test_generate_count_and_determinism(trained):
    ckpt = str(trained / "out" / "gan.ckpt")
    assert main(["generate", "--checkpoint", ckpt, "--label", "1", "--count", "3", "--seed", "5", "--out", "a.mseq", "--json", "a.json"]) == 0
    main(["generate", "--checkpoint", ckpt, "--label", "mirrored_wave", "--count", "3", "--seed", "5", "--out", "b.mseq"])
    a = motion_io.load(trained / "a.mseq")
    assert len(a) == 3 and set(a.labels) == {1}
    assert (trained / "a.mseq").read_bytes() == (trained / "b.mseq").read_bytes()
    assert json.loads((trained / "a.json").read_text())["persons"] == 2


@pytest.mark.parametrize("label", ["9", "dance"])
def test_generate_unknown_label(trained, label):
    assert main(["generate", "--checkpoint", str(trained / "out" / "gan.ckpt"), "--label", label, "--out", "x.mseq"]) == 2


# -- evaluate ------------------------------------------------------------------------------------------------


def test_evaluate_real_against_real(trained):
    out = trained / "out"
    code = main(["evaluate", "--data", "data.mseq", *PAIR, "--generated", "data.mseq",
                 "--recognizer", str(out / "recognizer.ckpt"), "--person-recognizer", str(out / "recognizer_person.ckpt")])
    assert code == 0
    report = json.loads((out / "metrics.json").read_text())
    assert all(report["metrics"][k] == 0.0 for k in ("FID_m", "FID_w", "FID^a_m", "FID^a_w"))
    assert report["config_hash"] == RunConfig.load(overrides=[
        "data.persons=2", "data.classes=2", "data.per_class=10", *[TINY[i + 1] for i in range(0, len(TINY), 2)]
    ]).hash()
    assert set(report["recognizer_hashes"]) == {"whole_group", "per_person"}


def test_evaluate_checkpoint(trained, capsys):
    out = trained / "out"
    code = main(["evaluate", "--data", "data.mseq", *PAIR, "--checkpoint", str(out / "gan.ckpt"), "--n-per-class", "4",
                 "--recognizer", str(out / "recognizer.ckpt"), "--person-recognizer", str(out / "recognizer_person.ckpt")])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "metric,value" and [l.split(",")[0] for l in lines[1:]] == ["Acc.", "FID_m", "FID_w", "FID^a_m", "FID^a_w"]


def test_evaluate_names_missing_flag(trained, capsys):
    out = trained / "out"
    code = main(["evaluate", "--data", "data.mseq", *PAIR, "--generated", "data.mseq", "--recognizer", str(out / "recognizer.ckpt")])
    assert code == 2
    assert "--person-recognizer" in capsys.readouterr().err


# -- plot / export ----------------------------------------------------------------------------------------------


def test_plot_outputs_deterministic(trained):
    out = trained / "out"
    main(["evaluate", "--data", "data.mseq", *PAIR, "--generated", "data.mseq", "--recognizer", str(out / "recognizer.ckpt"),
          "--person-recognizer", str(out / "recognizer_person.ckpt")])
    assert main(["plot", "--log", str(out / "train_log.csv"), "--metrics", str(out / "metrics.json"), "--out-dir", "p1"]) == 0
    assert main(["plot", "--log", str(out / "train_log.csv"), "--metrics", str(out / "metrics.json"), "--out-dir", "p2"]) == 0
    for name in ("loss_curves.png", "metrics.png"):
        data = (trained / "p1" / name).read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert data == (trained / "p2" / name).read_bytes()


def test_plot_empty_log(workdir):
    TrainLog().to_csv(workdir / "empty.csv")
    assert main(["plot", "--log", "empty.csv"]) == 3


def test_export_json(trained):
    assert main(["export-json", "--data", "data.mseq", "--out", "d.json"]) == 0
    assert motion_io.import_json(trained / "d.json") == motion_io.load(trained / "data.mseq")
