import csv
import json

import numpy as np
import pytest

from clearrec import matrixio
from clearrec.cli import main

TINY = ["--users", "40", "--items", "60", "--dim-v", "12", "--dim-t", "10", "--shared-rank", "2",
        "--specific-rank", "3", "--interactions-per-user", "8"]
FAST = ["--epochs", "3", "--d", "8", "--layers", "1", "--lr", "0.01", "--batch-size", "64"]


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--seed", "7", *TINY]) == 0
    return out


def write_config(path, data_dir, out_dir, **sections):
    doc = {"schema_version": 1, "data": {"dir": str(data_dir)}, "output_dir": str(out_dir),
           "train": {"d": 8, "layers": 1, "lr": 0.01, "batch_size": 64, "max_epochs": 2, "knn_k": 3}}
    for k, v in sections.items():
        doc[k] = {**doc.get(k, {}), **v} if isinstance(v, dict) else v
    path.write_text(json.dumps(doc))
    return path


def test_synth_is_reproducible(tmp_path, synth_dir):
    again = tmp_path / "again"
    assert main(["synth", "--out", str(again), "--seed", "7", *TINY]) == 0
    for name in ("raw_v.clrf", "raw_t.clrf", "interactions.tsv", "manifest.json"):
        assert matrixio.sha256_file(synth_dir / name) == matrixio.sha256_file(again / name)
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    assert manifest["counts"]["interactions"] == 320
    assert manifest["checksums"]["raw_v.clrf"] == matrixio.sha256_file(synth_dir / "raw_v.clrf")


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["synth"]) == 2
    assert "--out" in capsys.readouterr().err
    assert main(["project", "--visual", "a"]) == 2
    assert main([]) == 2


def test_train_uses_synth_output_by_default(synth_dir, monkeypatch):
    monkeypatch.chdir(synth_dir)
    assert main(["train", "--epochs", "1", "--d", "8"]) == 0
    assert (synth_dir / "run" / "checkpoint.clrz").exists()


def test_train_then_eval(tmp_path, synth_dir, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(synth_dir), "--out", str(run), *FAST]) == 0
    lines = [json.loads(x) for x in (run / "log.jsonl").read_text().splitlines()]
    header, epochs = lines[0], lines[1:]
    assert header["record"] == "header" and len(header["input_hash"]) == 64
    assert header["config"]["train"]["max_epochs"] == 3
    assert header["config"]["redundancy"]["rank_k"] == 4
    assert [e["epoch"] for e in epochs] == [1, 2, 3]
    assert {"loss", "val_recall@20", "k", "lambda", "refreshed"} <= set(epochs[0])
    saved = json.loads((run / "eval_test.json").read_text())

    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "checkpoint.clrz")]) == 0
    printed = json.loads(capsys.readouterr().out)
    for k in ("@10", "@20"):
        for m in ("recall", "ndcg"):
            assert abs(printed["metrics"][k][m] - saved["metrics"][k][m]) <= 1e-12


def test_train_is_bitwise_deterministic(tmp_path, synth_dir):
    run = tmp_path / "run"
    first = {}
    for _ in range(2):
        assert main(["train", "--data", str(synth_dir), "--out", str(run), *FAST]) == 0
        outputs = {f: (run / f).read_bytes() for f in ("checkpoint.clrz", "log.jsonl", "eval_test.json")}
        first = first or outputs
    assert outputs == first


def test_flags_override_config(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", synth_dir, tmp_path / "run", redundancy={"rank_k": 2})
    assert main(["train", "--config", str(cfg), "--rank", "3", "--epochs", "1"]) == 0
    header = json.loads((tmp_path / "run" / "log.jsonl").read_text().splitlines()[0])
    assert header["config"]["redundancy"]["rank_k"] == 3
    assert header["config"]["train"]["max_epochs"] == 1


def test_project(tmp_path, rng):
    v, t = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
    t[:, :2] += 2 * v[:, :2]
    matrixio.save_matrix(tmp_path / "v.clrf", v)
    matrixio.save_matrix(tmp_path / "t.clrf", t)
    out = tmp_path / "proj"
    assert main(["project", "--visual", str(tmp_path / "v.clrf"), "--textual", str(tmp_path / "t.clrf"),
                 "-k", "2", "--lam", "1.0", "--out", str(out)]) == 0
    pv = matrixio.load_matrix(out / "projected_v.clrf")
    pt = matrixio.load_matrix(out / "projected_t.clrf")
    c = (pv - pv.mean(0)).T @ (pt - pt.mean(0)) / 50
    spectrum = json.loads((out / "spectrum.json").read_text())["spectrum"]
    assert len(spectrum) == 6
    assert np.linalg.svd(c, compute_uv=False)[0] <= spectrum[2] * (1 + 1e-9)
    p = matrixio.load_matrix(out / "projector_v.clrf")
    assert np.max(np.abs(p @ p - p)) <= 1e-10


def test_project_rank_too_large_is_usage_error(tmp_path, rng):
    matrixio.save_matrix(tmp_path / "v.clrf", rng.normal(size=(10, 3)))
    assert main(["project", "--visual", str(tmp_path / "v.clrf"), "--textual", str(tmp_path / "v.clrf"),
                 "-k", "5", "--lam", "0.5", "--out", str(tmp_path / "o")]) == 2


def test_diagnose_from_features_and_checkpoint(tmp_path, synth_dir):
    out = tmp_path / "diag"
    assert main(["diagnose", "--visual", str(synth_dir / "raw_v.clrf"),
                 "--textual", str(synth_dir / "raw_v.clrf"), "--ks", "5", "10",
                 "--directions", "16", "--out", str(out)]) == 0
    doc = json.loads((out / "diagnostics.json").read_text())
    assert doc["overlap_curve"]["5"]["mean_overlap_ratio"] == 1.0
    assert doc["swd_before"] == 0.0
    assert (out / "embedding_2d.csv").exists()

    run = tmp_path / "run"
    assert main(["train", "--data", str(synth_dir), "--out", str(run), *FAST]) == 0
    assert main(["diagnose", "--checkpoint", str(run / "checkpoint.clrz"), "--directions", "16",
                 "--out", str(tmp_path / "diag2")]) == 0
    doc = json.loads((tmp_path / "diag2" / "diagnostics.json").read_text())
    assert 0.0 <= doc["frobenius_ratio"] < 1.0
    assert main(["diagnose", "--out", str(tmp_path / "x")]) == 2


def test_sweep_grid(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", synth_dir, tmp_path / "sweep", train={"max_epochs": 1, "d": 20})
    assert main(["sweep", "--config", str(cfg)]) == 0
    first = (tmp_path / "sweep" / "sweep.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "sweep" / "sweep.csv")))
    assert len(rows) == 20
    assert {(float(r["lambda"]), int(r["k"])) for r in rows} == {
        (lam, k) for lam in (0.3, 0.5, 0.7, 0.9) for k in (2, 4, 8, 16, 20)}
    assert main(["sweep", "--config", str(cfg)]) == 0
    assert (tmp_path / "sweep" / "sweep.csv").read_bytes() == first


def test_single_cell_sweep_equals_train(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", synth_dir, tmp_path / "s")
    assert main(["sweep", "--config", str(cfg), "--lambdas", "0.7", "--ranks", "2"]) == 0
    row = next(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
    assert main(["train", "--config", str(cfg), "--lam", "0.7", "--rank", "2",
                 "--out", str(tmp_path / "t")]) == 0
    report = json.loads((tmp_path / "t" / "eval_test.json").read_text())
    assert float(row["test_recall@20"]) == report["metrics"]["@20"]["recall"]
    assert float(row["test_ndcg@10"]) == report["metrics"]["@10"]["ndcg"]


def test_unknown_config_key_rejected(tmp_path, synth_dir, capsys):
    cfg = write_config(tmp_path / "c.json", synth_dir, tmp_path / "r", train={"learning_rate": 0.1})
    assert main(["train", "--config", str(cfg)]) == 2
    assert "learning_rate" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == 2


def test_data_errors_exit_3(tmp_path, synth_dir):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 3
    (synth_dir / "raw_t.clrf").write_bytes((synth_dir / "raw_t.clrf").read_bytes()[:-8])
    assert main(["train", "--data", str(synth_dir), "--out", str(tmp_path / "r"), *FAST]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_abort_exits_4(tmp_path, synth_dir):
    out = tmp_path / "r"
    assert main(["train", "--data", str(synth_dir), "--out", str(out), "--epochs", "2", "--d", "8",
                 "--batch-size", "64", "--lr", "1e300"]) == 4
    dump = json.loads((out / "abort.json").read_text())
    assert dump["epoch"] == 1 and "param_norms" in dump
