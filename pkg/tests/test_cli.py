"""End-to-end CLI pipelines on a tiny configuration."""

import json
import os

import pytest

from graphmark.cli import load_config, main

TINY_CONFIG = """\
seed = 3

[dataset]
path = "{path}"
name = "MUTAG"
train_counts = [42, 83]

[model]
S = 2
conv_type = "GIN"

[federated]
T = 5
T_w = 2
rounds = 3
local_epochs = 1

[attack]
attack_epochs = 1
shadow_epochs = 1

[evaluation]
r_list = [0, 1, 2]
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory, corpus_dir):
    """One trained tiny run shared by the checkpoint-consuming commands."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.toml"
    cfg_path.write_text(TINY_CONFIG.format(path=corpus_dir))
    out = root / "train"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return root, cfg_path, out


def test_synth_and_ingest(tmp_path, corpus_dir):
    cfg = tmp_path / "c.toml"
    cfg.write_text(TINY_CONFIG.format(path=corpus_dir))
    out = tmp_path / "ingest"
    assert main(["ingest", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "ingest.json").read_text())
    assert summary["num_graphs"] == 188
    assert summary["num_classes"] == 2
    assert summary["train_graphs"] == 125 and summary["test_graphs"] == 63
    assert abs(summary["avg_nodes"] - 17.93) < 0.01
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schema_version"] == 1
    assert "config_hash" in manifest and "dataset_hash" in manifest


def test_synth_command(tmp_path):
    out = tmp_path / "corpus"
    assert main(["synth", "--out", str(out), "--seed", "1"]) == 0
    assert (out / "MUTAG" / "MUTAG_A.txt").exists()


def test_unknown_config_key(tmp_path, corpus_dir):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(f'[dataset]\npath = "{corpus_dir}"\nbogus = 1\n')
    assert main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_unknown_section(tmp_path, corpus_dir):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(f'[dataset]\npath = "{corpus_dir}"\n[nonsense]\nx = 1\n')
    assert main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_dataset_path(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[model]\nS = 2\n")
    assert main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_checkpoint_is_io_error(tmp_path, corpus_dir):
    cfg = tmp_path / "c.toml"
    cfg.write_text(TINY_CONFIG.format(path=corpus_dir))
    code = main(["certify", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--checkpoint", str(tmp_path / "absent.ckpt")])
    assert code == 3


def test_mutag_profile_halves_s_and_tw(tmp_path, corpus_dir):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'[dataset]\npath = "{corpus_dir}"\nprofile = "MUTAG"\n')
    loaded = load_config(cfg)
    assert loaded["model"]["S"] == 2
    assert loaded["federated"]["T_w"] == 5


def test_scale_presets(tmp_path, corpus_dir):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'[dataset]\npath = "{corpus_dir}"\n')
    ci = load_config(cfg, scale="ci")
    assert ci["federated"]["T"] == 10 and ci["federated"]["rounds"] == 40
    with pytest.raises(Exception):
        load_config(cfg, scale="huge")


def test_manifest_config_round_trips(tiny_run):
    root, cfg_path, out = tiny_run
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"] == load_config(cfg_path)


def test_train_outputs(tiny_run):
    _, _, out = tiny_run
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["MA"] <= 1.0 and 0.0 <= metrics["WA"] <= 1.0
    assert metrics["S"] == 2 and metrics["rounds"] == 3
    assert (out / "model.ckpt").exists()
    assert (out / "metrics.txt").read_text().startswith("dataset")


def test_train_rerun_byte_identical(tiny_run, tmp_path):
    root, cfg_path, out = tiny_run
    out2 = tmp_path / "train2"
    assert main(["train", "--config", str(cfg_path), "--out", str(out2)]) == 0
    for fname in ("model.ckpt", "metrics.json", "manifest.json"):
        assert (out / fname).read_bytes() == (out2 / fname).read_bytes(), fname


def test_certify_monotone_curve(tiny_run, tmp_path):
    _, cfg_path, out = tiny_run
    cout = tmp_path / "certify"
    assert main(["certify", "--config", str(cfg_path), "--out", str(cout),
                 "--checkpoint", str(out / "model.ckpt")]) == 0
    report = json.loads((cout / "certify.json").read_text())
    curve = [report["cwa"][str(r)] for r in (0, 1, 2)]
    assert curve == sorted(curve, reverse=True)
    assert report["certificates"]
    row = report["certificates"][0]
    assert {"graph_id", "prediction", "N_A", "N_B", "r_star"} <= set(row)


def test_attack_report(tiny_run, tmp_path):
    _, cfg_path, out = tiny_run
    aout = tmp_path / "attack"
    assert main(["attack", "--config", str(cfg_path), "--out", str(aout),
                 "--checkpoint", str(out / "model.ckpt")]) == 0
    report = json.loads((aout / "attack.json").read_text())
    assert report["attack"] == "LayerPerturbation"
    assert len(report["trace"]) == 1
    assert (aout / "attacked.ckpt").exists()


def test_verify_report(tiny_run, tmp_path):
    _, cfg_path, out = tiny_run
    vout = tmp_path / "verify"
    assert main(["verify", "--config", str(cfg_path), "--out", str(vout),
                 "--checkpoint", str(out / "model.ckpt")]) == 0
    report = json.loads((vout / "verify.json").read_text())
    assert report["participating"] == 2
    assert isinstance(report["decision"], bool)


def test_report_consolidation(tiny_run, tmp_path):
    root, cfg_path, out = tiny_run
    run_dir = tmp_path / "rundir"
    os.makedirs(run_dir / "train")
    for fname in ("metrics.json",):
        (run_dir / "train" / fname).write_bytes((out / fname).read_bytes())
    assert main(["report", str(run_dir)]) == 0
    rows = json.loads((run_dir / "report.json").read_text())["rows"]
    assert rows and rows[0]["attack"] == "None"
    assert (run_dir / "report.txt").exists()


def test_report_empty_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == 1
