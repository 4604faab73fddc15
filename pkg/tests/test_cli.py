import json
import os

import numpy as np
import pytest

from ecgfuse.cli import DEFAULTS, env_key, main, resolve_config
from ecgfuse.data_io import read_bundle
from ecgfuse.dsp import segment
from ecgfuse.encoder import EncoderState
from ecgfuse.errors import ConfigError
from ecgfuse.fusion import ClassifierHeads, predict
from ecgfuse.cli import load_paired_trials
from ecgfuse.metrics import f1_score, roc_auc

FAST_PRETRAIN = ["--set", "pretrain.steps=3", "--set", "pretrain.batch_size=4",
                 "--set", "pretrain.checkpoint_every=2"]


def run(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def ecg_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("ecg")
    assert run("synth", "--out", root / "raw", "--set", "synth.n_records=3") == 0
    assert run("preprocess", "--input", root / "raw", "--out", root / "pre") == 0
    return root


@pytest.fixture(scope="module")
def paired(tmp_path_factory):
    """Five subjects, four trials each, fine-tuned to fit the training subjects."""
    root = tmp_path_factory.mktemp("paired")
    assert run("synth", "--out", root / "raw", "--set", "synth.kind=\"paired\"",
               "--set", "synth.n_subjects=5", "--set", "synth.trials_per_subject=4") == 0
    assert run("preprocess", "--input", root / "raw", "--out", root / "pre") == 0
    assert run("finetune", "--data", root / "pre", "--out", root / "model",
               "--set", "finetune.epochs=40", "--set", "finetune.step_size=50") == 0
    return root


# --- configuration ---------------------------------------------------------------

def test_precedence_defaults_file_env_flags():
    cfg = resolve_config("pretrain")
    assert cfg["pretrain.steps"] == 200
    cfg = resolve_config("pretrain", {"pretrain.steps": 5, "pretrain.batch_size": 2}, env={})
    assert (cfg["pretrain.steps"], cfg["pretrain.batch_size"]) == (5, 2)
    env = {env_key("pretrain.steps"): "7"}
    assert env_key("pretrain.steps") == "ECGFUSE_PRETRAIN__STEPS"
    cfg = resolve_config("pretrain", {"pretrain.steps": 5}, env=env)
    assert cfg["pretrain.steps"] == 7
    cfg = resolve_config("pretrain", {"pretrain.steps": 5}, env=env, flags={"pretrain.steps": 9})
    assert cfg["pretrain.steps"] == 9


def test_unknown_key_and_bad_type():
    with pytest.raises(ConfigError):
        resolve_config("pretrain", {"pretrain.stepz": 1}, env={})
    with pytest.raises(ConfigError):
        resolve_config("pretrain", {"pretrain.steps": "many"}, env={})


def test_finetune_defaults_match_published_table():
    d = DEFAULTS["finetune"]
    assert (d["finetune.epochs"], d["finetune.batch_size"], d["finetune.learning_rate"]) == (10, 8, 1e-3)
    assert (d["finetune.dropout"], d["finetune.gamma"], d["finetune.step_size"]) == (0.2, 0.1, 4)


def test_bad_flag_and_bad_config_exit_2(tmp_path, capsys):
    assert run("pretrain", "--data", tmp_path, "--out", tmp_path / "o",
               "--set", "nope=1") == 2
    (tmp_path / "c.json").write_text('{"pretrain": {"steps": 1}}')
    assert run("pretrain", "--data", tmp_path, "--out", tmp_path / "o",
               "--config", tmp_path / "c.json") == 2
    with pytest.raises(SystemExit) as info:
        run("pretrain", "--out", tmp_path)
    assert info.value.code == 2


# --- preprocess ---------------------------------------------------------------------

def test_preprocess_output_segments_to_expected_grid(ecg_data):
    pre = ecg_data / "pre"
    summary = read_json(pre / "summary.json")
    assert summary["n_input"] == summary["n_written"] == 3 and summary["n_failed"] == 0
    record, _ = read_bundle(pre / "R_000.bundle")
    assert record.fs == 200 and segment(record).shape == (12, 10, 200)
    run_doc = read_json(pre / "run.json")
    assert run_doc["command"] == "preprocess" and run_doc["config"]["preprocess.fs_out"] == 200


def test_preprocess_empty_dir(tmp_path):
    (tmp_path / "in").mkdir()
    assert run("preprocess", "--input", tmp_path / "in", "--out", tmp_path / "out") == 0
    summary = read_json(tmp_path / "out" / "summary.json")
    assert summary["n_input"] == summary["n_written"] == 0


def test_preprocess_rejects_regional_notch(ecg_data, tmp_path):
    assert run("preprocess", "--input", ecg_data / "raw", "--out", tmp_path,
               "--notch-hz", 55) == 2


def test_preprocess_all_corrupt_exit_4(tmp_path):
    (tmp_path / "in").mkdir()
    (tmp_path / "in" / "x.bundle").write_bytes(b"junk\n")
    assert run("preprocess", "--input", tmp_path / "in", "--out", tmp_path / "out") == 4
    assert read_json(tmp_path / "out" / "summary.json")["n_failed"] == 1


# --- pretrain -------------------------------------------------------------------

def test_pretrain_zero_steps_header_only(ecg_data, tmp_path):
    assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path,
               "--set", "pretrain.steps=0") == 0
    assert (tmp_path / "loss.csv").read_text() == "step,l_patch,l_channel,l_total\n"


def test_pretrain_same_seed_byte_identical(ecg_data, tmp_path):
    for name in ("a", "b"):
        assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path / name,
                   "--seed", 3, *FAST_PRETRAIN) == 0
    a, b = (tmp_path / "a" / "loss.csv").read_bytes(), (tmp_path / "b" / "loss.csv").read_bytes()
    assert a == b and len(a.splitlines()) == 4
    assert (tmp_path / "a" / "encoder.ckpt").read_bytes() == (tmp_path / "b" / "encoder.ckpt").read_bytes()
    assert sorted(os.listdir(tmp_path / "a" / "checkpoints")) == ["step_000002.ckpt"]
    assert b"<polyline" in (tmp_path / "a" / "loss.svg").read_bytes()


def test_run_json_reproduces_run(ecg_data, tmp_path):
    assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path / "a",
               "--seed", 5, *FAST_PRETRAIN) == 0
    assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path / "b",
               "--config", tmp_path / "a" / "run.json") == 0
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()


def test_resume_continues_the_curve(ecg_data, tmp_path):
    full = ["--set", "pretrain.batch_size=2", "--set", "pretrain.checkpoint_every=2"]
    assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path / "full",
               "--set", "pretrain.steps=4", *full) == 0
    assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path / "resumed",
               "--set", "pretrain.steps=4", *full,
               "--resume", tmp_path / "full" / "checkpoints" / "step_000002.ckpt") == 0
    tail = (tmp_path / "full" / "loss.csv").read_text().splitlines()[3:]
    assert (tmp_path / "resumed" / "loss.csv").read_text().splitlines()[1:] == tail


def test_pretrain_divergence_exit_3(ecg_data, tmp_path, capsys):
    assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path,
               "--set", "pretrain.divergence_limit=1e-9", *FAST_PRETRAIN) == 3
    assert "last checkpoint: none" in capsys.readouterr().err


def test_embed_writes_one_vector_per_grid(ecg_data, tmp_path):
    assert run("pretrain", "--data", ecg_data / "pre", "--out", tmp_path / "p",
               "--set", "pretrain.steps=0") == 0
    assert run("embed", "--ckpt", tmp_path / "p" / "encoder.ckpt", "--data", ecg_data / "pre",
               "--out", tmp_path / "e") == 0
    from ecgfuse.checkpoint import load_tensors
    header, arrays = load_tensors(tmp_path / "e" / "embeddings.ckpt")
    assert len(arrays) == 3 and all(v.shape == (320,) for v in arrays.values())


# --- finetune / evaluate -------------------------------------------------------

def test_finetune_artifacts(paired):
    model = paired / "model"
    for name in ("heads.ckpt", "ecg_encoder.ckpt", "eeg_encoder.ckpt", "split.json",
                 "loss.csv", "loss.svg", "run.json"):
        assert (model / name).exists(), name
    lines = (model / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 41
    split = read_json(model / "split.json")
    assert (len(split["train"]), len(split["val"]), len(split["test"])) == (3, 1, 1)


def test_evaluate_separable_training_subjects(paired, tmp_path):
    assert run("evaluate", "--heads", paired / "model" / "heads.ckpt", "--data", paired / "pre",
               "--out", tmp_path, "--grouping", "pooled", "--set", "evaluate.split=\"train\"") == 0
    metrics = read_json(tmp_path / "metrics.json")
    for dim in ("valence", "arousal", "dominance"):
        assert metrics[dim]["acc"] == 1.0, (dim, metrics[dim])


def test_evaluate_per_subject_mean_matches_hand_average(paired, tmp_path):
    assert run("evaluate", "--heads", paired / "model" / "heads.ckpt", "--data", paired / "pre",
               "--out", tmp_path, "--set", "evaluate.split=\"all\"") == 0
    metrics = read_json(tmp_path / "metrics.json")
    model = paired / "model"
    heads, _ = ClassifierHeads.load(model / "heads.ckpt")
    ecg, _, _ = EncoderState.load(model / "ecg_encoder.ckpt")
    eeg, _, _ = EncoderState.load(model / "eeg_encoder.ckpt")
    trials, _ = load_paired_trials(paired / "pre", 10)
    p = predict(trials, ecg, eeg, heads)
    y = np.stack([t.label.binary() for t in trials]).astype(bool)
    ids = np.array([t.subject_id for t in trials])
    subjects = sorted(set(ids))
    assert len(subjects) == 5
    for k, dim in enumerate(("valence", "arousal", "dominance")):
        accs = [np.mean((p[ids == s, k] >= 0.5) == y[ids == s, k]) for s in subjects]
        aucs = [roc_auc(p[ids == s, k], y[ids == s, k]) for s in subjects]
        f1s = [f1_score(p[ids == s, k], y[ids == s, k]) for s in subjects]
        assert metrics[dim]["acc"] == pytest.approx(np.mean(accs), abs=1e-12)
        defined = [a for a in aucs if a is not None]
        assert metrics[dim]["n_skipped_auc"] == len(aucs) - len(defined)
        if defined:
            assert metrics[dim]["auc"] == pytest.approx(np.mean(defined), abs=1e-12)
        defined = [f for f in f1s if f is not None]
        if defined:
            assert metrics[dim]["f1"] == pytest.approx(np.mean(defined), abs=1e-12)
        assert metrics[dim]["n_subjects"] == 5


def test_missing_modality_trial_is_skipped(paired, tmp_path):
    import shutil
    from ecgfuse.data_io import write_index
    data = tmp_path / "data"
    shutil.copytree(paired / "pre", data)
    names = sorted(n for n in os.listdir(data / "eeg") if n.endswith(".bundle"))
    os.remove(data / "eeg" / names[0])
    write_index(data / "eeg", [(n, None) for n in names[1:]])
    assert run("finetune", "--data", data, "--out", tmp_path / "m",
               "--set", "finetune.epochs=1") == 0
    skipped = read_json(tmp_path / "m" / "split.json")["skipped"]
    assert skipped == [{"trial": names[0], "reason": "missing modality EEG"}]
