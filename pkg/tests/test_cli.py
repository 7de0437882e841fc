import json

import numpy as np
import pytest

from mmselect.cli import dispatch
from mmselect.rng import Xoshiro256StarStar
from mmselect.store import (
    EmbeddingMatrix,
    InstanceManifest,
    InstanceRecord,
    load_embeddings,
    write_embeddings,
    write_manifest,
)


def write_pair(tmp_path, rows, labels, stem="train"):
    emb_path = tmp_path / f"{stem}.emb"
    man_path = tmp_path / f"{stem}.jsonl"
    write_embeddings(EmbeddingMatrix(np.array(rows, dtype=np.float32)), emb_path)
    write_manifest(
        InstanceManifest(
            records=tuple(
                InstanceRecord(id=f"{stem}{i}", label=lab) for i, lab in enumerate(labels)
            )
        ),
        man_path,
    )
    return emb_path, man_path


@pytest.fixture
def pool(tmp_path):
    rng = Xoshiro256StarStar(77)
    rows = rng.normals(60 * 4).reshape(60, 4)
    rows[:20, 0] += 2.0
    rows[20:40, 1] += 2.0
    rows[40:, 2] += 2.0
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    labels = [i % 2 for i in range(60)]
    train = write_pair(tmp_path, rows, labels, "train")
    val_rows = rng.normals(8 * 4).reshape(8, 4)
    val_rows[:, 0] += 2.0
    val_rows /= np.linalg.norm(val_rows, axis=1, keepdims=True)
    val_emb = tmp_path / "val.emb"
    write_embeddings(EmbeddingMatrix(val_rows.astype(np.float32)), val_emb)
    return train, val_emb


def test_usage_errors_exit_1():
    assert dispatch(["select", "--method", "bogus"]) == 1
    assert dispatch(["no-such-command"]) == 1
    assert dispatch([]) == 1


def test_help_and_version_exit_0(capsys):
    assert dispatch(["--help"]) == 0
    assert dispatch(["--version"]) == 0
    out = capsys.readouterr().out
    assert "xoshiro256**" in out


def test_validate_ok_and_mismatch(tmp_path, capsys):
    (emb_path, man_path), _ = write_pair(tmp_path, [[1.0, 0.0], [0.0, 1.0]], [0, 1]), None
    assert dispatch(["validate", "--emb", str(emb_path), "--manifest", str(man_path)]) == 0

    short = tmp_path / "short.jsonl"
    short.write_text('{"id":"only","label":0}\n')
    code = dispatch(["validate", "--emb", str(emb_path), "--manifest", str(short)])
    assert code == 2
    assert "count_mismatch" in capsys.readouterr().err


def test_validate_missing_file_exit_2(tmp_path):
    assert dispatch(["validate", "--emb", str(tmp_path / "no.emb"), "--manifest", str(tmp_path / "no.jsonl")]) == 2


def test_fuse_writes_unit_rows(tmp_path):
    img, _ = write_pair(tmp_path, [[1.0, 0.0], [0.0, 2.0]], [0, 1], "img")
    txt, _ = write_pair(tmp_path, [[0.0, 1.0], [0.0, 1.0]], [0, 1], "txt")
    out = tmp_path / "fused.emb"
    assert dispatch(["fuse", "--image-emb", str(img), "--text-emb", str(txt), "--out", str(out)]) == 0
    fused = load_embeddings(out)
    norms = np.linalg.norm(fused.as_float64(), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-6)


def test_select_deterministic_bytes(tmp_path, pool):
    (train_emb, train_man), val_emb = pool
    out1 = tmp_path / "sel1.jsonl"
    out2 = tmp_path / "sel2.jsonl"
    args = [
        "select", "--method", "semsim",
        "--train-emb", str(train_emb), "--train-manifest", str(train_man),
        "--val-emb", str(val_emb), "--k", "10", "--seed", "3",
    ]
    assert dispatch(args + ["--out", str(out1)]) == 0
    assert dispatch(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()

    lines = out1.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["method"] == "semsim"
    assert len(lines) == 11
    ranks = [json.loads(l)["rank"] for l in lines[1:]]
    assert ranks == list(range(1, 11))


@pytest.mark.parametrize("method", ["semsim", "dissim", "random"])
def test_select_all_methods_exit_0(tmp_path, pool, method):
    (train_emb, train_man), val_emb = pool
    out = tmp_path / f"{method}.jsonl"
    code = dispatch([
        "select", "--method", method,
        "--train-emb", str(train_emb), "--train-manifest", str(train_man),
        "--val-emb", str(val_emb), "--k", "8", "--out", str(out),
    ])
    assert code == 0
    header = json.loads(out.read_text().splitlines()[0])
    assert abs(header["balance"]["count0"] - header["balance"]["count1"]) <= 1


def test_select_k_larger_than_pool_exit_2(tmp_path, pool):
    (train_emb, train_man), val_emb = pool
    code = dispatch([
        "select", "--method", "semsim",
        "--train-emb", str(train_emb), "--train-manifest", str(train_man),
        "--val-emb", str(val_emb), "--k", "100", "--out", str(tmp_path / "x.jsonl"),
    ])
    assert code == 2


def test_score_emits_full_csv(tmp_path, pool):
    (train_emb, train_man), val_emb = pool
    out = tmp_path / "scores.csv"
    code = dispatch([
        "score", "--method", "dissim",
        "--train-emb", str(train_emb), "--train-manifest", str(train_man),
        "--val-emb", str(val_emb), "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "id,score,label"
    assert len(lines) == 61  # header + every instance, no truncation to k
    first = lines[1].split(",")
    assert first[0] == "train0"
    float(first[1])
    assert first[2] in ("0", "1")


def test_project_writes_csv(tmp_path, pool):
    (train_emb, train_man), _ = pool
    out = tmp_path / "proj.csv"
    code = dispatch([
        "project", "--emb", str(train_emb), "--manifest", str(train_man),
        "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "id,pc1,pc2,label"
    assert len(lines) == 61


def test_project_joint_fit(tmp_path, pool):
    (train_emb, train_man), _ = pool
    out = tmp_path / "proj2.csv"
    code = dispatch([
        "project", "--emb", str(train_emb), "--manifest", str(train_man),
        "--emb2", str(train_emb), "--manifest2", str(train_man),
        "--fit-on", "joint", "--out", str(out),
    ])
    assert code == 0
    assert len(out.read_text().splitlines()) == 121


def test_inputs_never_mutated(tmp_path, pool):
    (train_emb, train_man), val_emb = pool
    before = (train_emb.read_bytes(), train_man.read_bytes(), val_emb.read_bytes())
    dispatch([
        "select", "--method", "dissim",
        "--train-emb", str(train_emb), "--train-manifest", str(train_man),
        "--val-emb", str(val_emb), "--k", "6", "--out", str(tmp_path / "o.jsonl"),
    ])
    after = (train_emb.read_bytes(), train_man.read_bytes(), val_emb.read_bytes())
    assert before == after


def test_bench_config_roundtrip(tmp_path):
    config_text = """
# tiny bench setup
dim = 4
pool_size = 120
validation_size = 10
test_size = 40
k = 30
seeds = 0,1
methods = semsim,random
knn_neighbors = 1
cluster.0.mean = 1.0
cluster.0.stddev = 0.3
cluster.1.mean = 0,1.0
cluster.1.stddev = 0.3
cluster.2.mean = 0,0,1.0
cluster.2.stddev = 0.3
"""
    cfg_path = tmp_path / "bench.cfg"
    cfg_path.write_text(config_text)
    out_json = tmp_path / "report.json"
    out_csv = tmp_path / "report.csv"
    code = dispatch([
        "bench", "--config", str(cfg_path),
        "--out-json", str(out_json), "--out-csv", str(out_csv),
    ])
    assert code == 0
    doc = json.loads(out_json.read_text())
    assert len(doc["runs"]) == 4  # 2 methods x 2 seeds
    assert set(doc["aggregates"]) == {"semsim", "random"}
    csv_lines = out_csv.read_text().splitlines()
    assert csv_lines[0] == "method,mean_f1,std_f1,mean_purity"
    assert len(csv_lines) == 3
