"""CLI contract: exit codes, artifacts, determinism, and idempotence."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from sincalign.cli import main


def checksum(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Small synthetic dataset, raw and preprocessed."""
    root = tmp_path_factory.mktemp("cliData")
    raw = root / "raw"
    prep = root / "prep"
    assert main(["synth", "--out", str(raw), "--trials", "8",
                 "--trial-s", "4", "--seed", "5"]) == 0
    assert main(["preprocess", "--manifest", str(raw / "manifest.json"),
                 "--out", str(prep)]) == 0
    return {"raw": raw, "prep": prep}


def test_synth_writes_manifest_and_config(dataset):
    raw = dataset["raw"]
    manifest = json.loads((raw / "manifest.json").read_text())
    assert len(manifest["trials"]) == 8
    cfg = json.loads((raw / "synth_config.json").read_text())
    assert cfg["seed"] == 5
    assert cfg["n_trials"] == 8


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["synth", "--out", str(out), "--trials", "2",
                     "--trial-s", "2", "--seed", "9"]) == 0
    assert checksum(a / "t" "rial01_eeg.f32") == checksum(b / "trial01_eeg.f32")


def test_preprocess_idempotent_by_content_hash(dataset, capsys):
    prep = dataset["prep"]
    stamp_before = (prep / "preprocess_hash.json").read_text()
    assert main(["preprocess", "--manifest", str(dataset["raw"] / "manifest.json"),
                 "--out", str(prep)]) == 0
    assert "up to date" in capsys.readouterr().out
    assert (prep / "preprocess_hash.json").read_text() == stamp_before


def test_train_eval_analyze_roundtrip(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    rc = main(["train", "--manifest", str(dataset["prep"] / "manifest.json"),
               "--protocol", "kul", "--epochs", "1", "--window-s", "1.0",
               "--out", str(run)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mean±std" in out
    report = json.loads((run / "report.json").read_text())
    assert set(report["per_fold"]) == {"fold1", "fold2", "fold3", "fold4"}
    assert report["config"]["epochs"] == 1
    assert (run / "fold1.ckpt").exists()

    rc = main(["eval", "--manifest", str(dataset["prep"] / "manifest.json"),
               "--checkpoint", str(run / "fold1.ckpt"), "--out", str(tmp_path / "ev")])
    assert rc == 0
    ev = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert 0.0 <= ev["accuracy"] <= 100.0

    rc = main(["analyze", "--checkpoint", str(run / "fold1.ckpt"),
               "--baseline", str(run / "fold1.ckpt"),
               "--out", str(tmp_path / "an")])
    assert rc == 0
    an = json.loads((tmp_path / "an" / "analysis.json").read_text())
    assert 270_000 <= an["params_total"] <= 410_000
    # identical checkpoints -> all response deltas are exactly zero
    assert all(row["delta"] == 0.0 for row in an["response_delta"])


def test_train_config_overlay(dataset, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"epochs": 1, "batch_size": 4}))
    run = tmp_path / "run"
    rc = main(["train", "--manifest", str(dataset["prep"] / "manifest.json"),
               "--protocol", "kul", "--config", str(cfg_path), "--out", str(run)])
    assert rc == 0
    report = json.loads((run / "report.json").read_text())
    assert report["config"]["batch_size"] == 4


def test_unknown_config_key_fails_cleanly(dataset, tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"not_a_knob": 1}))
    rc = main(["train", "--manifest", str(dataset["prep"] / "manifest.json"),
               "--protocol", "kul", "--config", str(cfg_path)])
    assert rc == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_missing_manifest_exit_code_1(capsys):
    rc = main(["train", "--manifest", "/nonexistent/manifest.json",
               "--protocol", "kul"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_usage_error_exit_code_2():
    with pytest.raises(SystemExit) as e:
        main(["train"])  # missing --manifest
    assert e.value.code == 2


def test_unknown_subcommand_exit_code_2():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
