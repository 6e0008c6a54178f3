import csv
import json

import pytest

from perfembed.cli import SUMMARY_FORMAT, main, parse_limits
from perfembed.model import load_model
from perfembed.transform import SpaceLimits
from perfembed.tuning import Database, db_save

TINY_MODEL = ["--epochs", "2", "--embed-dim", "8", "--layers", "1", "--heads", "2", "--mlp-hidden", "8"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    c, m = str(root / "c"), str(root / "m")
    assert main(["gen", "--out", c, "--train", "12", "--val", "4", "--test", "8", "--seed", "3"]) == 0
    assert main(["profile", "--corpus", c]) == 0
    assert main(["train", "--corpus", c, "--out", m, *TINY_MODEL]) == 0
    assert main(["dbbuild", "--corpus", c, "--model", f"{m}/model.npz", "--out", str(root / "db"),
                 "--limits", "schedule"]) == 0
    return root


def _summary(path):
    d = json.loads(path.read_text())
    assert d["format"] == SUMMARY_FORMAT
    return d


def test_gen_to_tune(pipeline):
    r = pipeline
    assert main(["tune", "--corpus", str(r / "c"), "--model", str(r / "m/model.npz"), "--db", str(r / "db/db.npz"),
                 "--out", str(r / "tune")]) == 0
    s = _summary(r / "tune/tune_summary.json")
    assert len(s["nests"]) == 8
    assert len(list((r / "tune/tune").glob("*.json"))) == 8
    assert s["regressions"] == 0
    for row in s["nests"]:
        assert row["space_size"] >= 1 and 1 <= row["evaluations"] <= 6


def test_dbbuild_report_has_space_sizes(pipeline):
    s = _summary(pipeline / "db/dbbuild_summary.json")
    assert s["total_space_size"] == sum(n["space_size"] for n in s["nests"])
    assert s["fingerprint"] == load_model(pipeline / "m/model.npz").fingerprint()


def test_tune_empty_database(pipeline, tmp_path, capsys):
    model = load_model(pipeline / "m/model.npz")
    db_save(Database(model.fingerprint(), 8), tmp_path / "empty.npz")
    code = main(["tune", "--corpus", str(pipeline / "c"), "--model", str(pipeline / "m/model.npz"),
                 "--db", str(tmp_path / "empty.npz"), "--out", str(tmp_path / "t")])
    assert code != 0
    assert "empty database" in capsys.readouterr().err


def test_eval_outputs(pipeline):
    out = pipeline / "ev"
    assert main(["eval", "--corpus", str(pipeline / "c"), "--model", str(pipeline / "m/model.npz"),
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "similarity.csv").open()))
    assert [r["metric"] for r in rows] == ["mem_bandwidth", "l3_bandwidth", "l2_bandwidth", "data_locality"]
    assert {"model_cov", "baseline_cov"} <= set(rows[0])
    emb = list(csv.reader((out / "embeddings.csv").open()))
    assert len(emb) == 9 and emb[0][:2] == ["id", "kind"] and len(emb[0]) == 2 + 8


def test_idempotent(pipeline, tmp_path):
    args = ["--corpus", str(pipeline / "c"), "--model", str(pipeline / "m/model.npz"), "--limits", "schedule"]
    assert main(["dbbuild", *args, "--out", str(tmp_path / "a")]) == 0
    assert main(["dbbuild", *args, "--out", str(tmp_path / "b")]) == 0
    for name in ("db.npz", "bruteforce.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["train", "--corpus", str(pipeline / "c"), "--out", str(tmp_path / "m2"), *TINY_MODEL]) == 0
    assert (tmp_path / "m2/model.npz").read_bytes() == (pipeline / "m/model.npz").read_bytes()


def test_spmm_small(pipeline):
    out = pipeline / "sp"
    assert main(["spmm", "--model", str(pipeline / "m/model.npz"), "--out", str(out), "--dense-cols", "4",
                 "--train-uniform", "2", "--train-powerlaw", "2", "--test-uniform", "1", "--test-powerlaw", "1"]) == 0
    s = _summary(out / "spmm_summary.json")
    assert s["total"] == 2 and 0 <= s["correct"] <= 2


def test_missing_artifacts(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path)]) != 0
    assert "corpus not found" in capsys.readouterr().err


def test_model_db_fingerprint_mismatch(pipeline, tmp_path, capsys):
    db_save(Database("0" * 16, 8), tmp_path / "other.npz")
    code = main(["tune", "--corpus", str(pipeline / "c"), "--model", str(pipeline / "m/model.npz"),
                 "--db", str(tmp_path / "other.npz"), "--out", str(tmp_path / "t")])
    assert code != 0 and "0000000000000000" in capsys.readouterr().err


def test_parse_limits():
    lim = parse_limits("tile_sizes = 4, 8\ninterchange = false  # no swaps\nmax_length = 2\n")
    assert lim == SpaceLimits(tile_sizes=(4, 8), interchange=False, max_length=2)
    with pytest.raises(Exception, match="bad limits line"):
        parse_limits("unknown = 3")
