import json
from pathlib import Path

import numpy as np
import pytest

from crstc import __version__, featio
from crstc.cli import main
from crstc.dsp import AudioClip, write_wav

SMALL = {
    "synth": {"n_sequences": 4, "T": 60, "n": 2, "obs_dim": 2, "min_dwell": 10,
              "mean_dwell": 20, "seed": 3},
    "model": {"latent_dim": 2, "hidden": [8, 8], "lstm_hidden": 4, "epochs": 2,
              "batch_size": 2},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture
def pipeline_dirs(tmp_path, small_cfg, capsys):
    data, model, seg = tmp_path / "data", tmp_path / "model", tmp_path / "seg"
    assert run(capsys, "synth", "--config", small_cfg, "--out", data)[0] == 0
    assert run(capsys, "train", data, "--config", small_cfg, "--out", model)[0] == 0
    code, _, err = run(capsys, "segment", data, "--config", small_cfg, "--checkpoint",
                       model / "checkpoint.bin", "--out", seg, "--reference", data)
    assert code == 0, err
    return data, model, seg


def test_version_is_json(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0
    assert json.loads(out) == {"name": "crstc", "version": __version__}


def test_config_dump_round_trips(capsys, small_cfg):
    code, out, _ = run(capsys, "--config-dump", "--config", small_cfg)
    assert code == 0
    d = json.loads(out)
    assert d["synth"]["seed"] == 3 and d["model"]["seed"] == 0
    assert d["clustering"]["seed"] == 0 and d["split"]["seed"] == 0


def test_unknown_config_key_rejected(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"model": {"learning_rate": 0.1}}))
    code, out, err = run(capsys, "synth", "--config", p, "--out", tmp_path / "x")
    assert code == 1 and out == ""
    assert "learning_rate" in err


def test_features_empty_dir(capsys, tmp_path):
    src = tmp_path / "wavs"
    src.mkdir()
    code, _, _ = run(capsys, "features", src, "--out", tmp_path / "f")
    assert code == 0
    assert json.loads((tmp_path / "f" / "manifest.json").read_text())["files"] == []


def test_features_shapes_and_determinism(capsys, tmp_path):
    src = tmp_path / "wavs"
    src.mkdir()
    rng = np.random.default_rng(0)
    for i, sr in enumerate((16000, 8000, 22050)):
        samples = 0.1 * rng.standard_normal(int(sr * (5 + 2 * i)))
        write_wav(src / f"c{i}.wav", AudioClip(samples, sr), "float32" if i == 1 else "pcm16")
    hashes = []
    for out in ("f1", "f2"):
        code, stdout, err = run(capsys, "features", src, "--out", tmp_path / out)
        assert code == 0, err
        hashes.append(json.loads(stdout)["manifest_hash"])
    assert hashes[0] == hashes[1]
    m = json.loads((tmp_path / "f1" / "manifest.json").read_text())
    assert [f["rows"] for f in m["files"]] == [160] * 3
    assert featio.read_matrix(tmp_path / "f1" / "c0.bin").shape == (160, 40)


def test_features_unreadable_file_named(capsys, tmp_path):
    src = tmp_path / "wavs"
    src.mkdir()
    (src / "broken.wav").write_bytes(b"RIFF0000junk")
    code, out, err = run(capsys, "features", src, "--out", tmp_path / "f")
    assert code == 1
    assert "broken.wav" in err and out == ""


def test_synth_byte_identical(capsys, tmp_path, small_cfg):
    for out in ("a", "b"):
        assert run(capsys, "synth", "--config", small_cfg, "--out", tmp_path / out)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_long_sequence_has_both_domains(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_sequences": 1, "T": 2000}}))
    assert run(capsys, "synth", "--config", cfg, "--out", tmp_path / "d")[0] == 0
    lines = (tmp_path / "d" / "seq_0000.labels.csv").read_text().splitlines()
    assert lines[0] == "frame,u"
    u = [int(l.split(",")[1]) for l in lines[1:]]
    assert len(u) == 2000 and set(u) == {0, 1}


def test_segment_and_eval_schema(capsys, pipeline_dirs, small_cfg):
    data, model, seg = pipeline_dirs
    assert (model / "loss.csv").exists()
    assert json.loads((model / "manifest.json").read_text())["config_hash"]
    assert sorted(p.name for p in seg.glob("seq_0000.*")) == [
        "seq_0000.events.csv", "seq_0000.events.json", "seq_0000.labels.csv"]
    code, out, err = run(capsys, "eval", seg, data, "--config", small_cfg)
    assert code == 0, err
    rep = json.loads((seg / "report.json").read_text())
    for key in ("frame_f1", "frame_accuracy", "event_f1", "event_iou"):
        assert 0.0 <= rep[key] <= 1.0
    assert "config" in rep and rep["config_hash"]
    assert (seg / "summary.csv").read_text().startswith("config_hash,n_files,frame_f1")


def test_eval_pred_equals_truth(capsys, pipeline_dirs, small_cfg):
    _, _, seg = pipeline_dirs
    code, out, err = run(capsys, "eval", seg, seg, "--config", small_cfg)
    assert code == 0, err
    rep = json.loads(out)
    assert rep["frame_f1"] == 1.0 and rep["frame_accuracy"] == 1.0


def test_eval_refuses_hash_mismatch(capsys, pipeline_dirs, small_cfg, tmp_path):
    data, _, seg = pipeline_dirs
    m = json.loads((data / "manifest.json").read_text())
    m["config_hash"] = "0" * 16
    (data / "manifest.json").write_text(json.dumps(m))
    code, _, err = run(capsys, "eval", seg, data, "--config", small_cfg)
    assert code == 1 and "hash mismatch" in err
    code, _, err = run(capsys, "eval", seg, data, "--config", small_cfg, "--force")
    assert code == 0, err


def test_segment_dimension_mismatch(capsys, pipeline_dirs, small_cfg, tmp_path):
    _, model, _ = pipeline_dirs
    other = tmp_path / "other"
    other.mkdir()
    featio.write_matrix(other / "x.bin", np.zeros((60, 7), dtype=np.float32))
    code, _, err = run(capsys, "segment", other, "--config", small_cfg, "--checkpoint",
                       model / "checkpoint.bin", "--out", tmp_path / "s", "--mapping", "heuristic")
    assert code == 1 and "dim" in err


def test_eval_missing_truth(capsys, pipeline_dirs, small_cfg, tmp_path):
    _, _, seg = pipeline_dirs
    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, err = run(capsys, "eval", seg, empty, "--config", small_cfg)
    assert code == 1 and "missing ground truth" in err


def test_aggregate_votes(capsys, tmp_path):
    head = "file,onset_s,offset_s,label\n"
    paths = []
    for i, body in enumerate(["a,0.0,1.0,1\n", "a,0.0,1.0,1\nb,2.0,3.0,1\n", "b,2.0,3.0,1\n"]):
        p = tmp_path / f"ann{i}.csv"
        p.write_text(head + body)
        paths.append(p)
    code, _, err = run(capsys, "aggregate", *paths, "--out", tmp_path / "v")
    assert code == 0, err
    voted = (tmp_path / "v" / "voted.csv").read_text().splitlines()
    assert voted == [head.strip(), "a,0.0,1.0,1", "b,2.0,3.0,1"]
    assert "config_hash" in json.loads((tmp_path / "v" / "manifest.json").read_text())


def test_split_from_id_list(capsys, tmp_path):
    ids = tmp_path / "ids.txt"
    ids.write_text("\n".join(f"clip{i}" for i in range(10)) + "\n")
    code, out, _ = run(capsys, "split", ids, "--seed", 4)
    assert code == 0
    m = json.loads(out)
    assert len(m["train"]) == 8 and len(m["test"]) == 2
    assert run(capsys, "split", ids, "--seed", 4)[1] == out


def test_jobs_matches_serial(capsys, pipeline_dirs, small_cfg, tmp_path):
    data, model, seg = pipeline_dirs
    par = tmp_path / "par"
    code, _, err = run(capsys, "segment", data, "--config", small_cfg, "--checkpoint",
                       model / "checkpoint.bin", "--out", par, "--reference", data, "--jobs", 2)
    assert code == 0, err
    for p in seg.glob("*.labels.csv"):
        assert (par / p.name).read_text() == p.read_text()
