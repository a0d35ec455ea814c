import json
import subprocess
import sys

import numpy as np
import pytest

from sqnet.harness.cli import main
from sqnet.serialize import deserialize_sketch


@pytest.fixture
def data_csv(tmp_path, rng):
    p = tmp_path / "d.csv"
    np.savetxt(p, rng.random((120, 3)), delimiter=",", header="a,b,c", comments="")
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_sketch_compute_merge_remove(tmp_path, data_csv, capsys):
    a = tmp_path / "a.json"
    assert run(["sketch", "compute", data_csv, "--m", 8, "--seed", 1, "--out", a], capsys)[0] == 0
    s = deserialize_sketch(a.read_bytes())
    assert s.m == 8 and s.count == 120
    merged = tmp_path / "m.json"
    assert run(["sketch", "merge", a, a, "--out", merged], capsys)[0] == 0
    assert deserialize_sketch(merged.read_bytes()).count == 240
    code, out = run(["sketch", "remove", merged, a], capsys)
    assert code == 0
    np.testing.assert_allclose(deserialize_sketch(out.out).values, s.values, atol=1e-12)


def test_sketch_privatize(data_csv, capsys):
    code, out = run(["sketch", "privatize", data_csv, "--m", 8, "--epsilon", 2.0], capsys)
    assert code == 0
    assert deserialize_sketch(out.out).dp.epsilon == pytest.approx(2.0)


def test_single_tasks(data_csv, capsys):
    code, out = run(["pca", data_csv], capsys)
    assert code == 0 and len(json.loads(out.out)["eigenvalues"]) == 3
    code, out = run(["ridge", data_csv, "--format", "csv"], capsys)
    assert code == 0 and out.out.startswith("label,feature,weight")
    code, out = run(["kmeans", data_csv, "--k", 2], capsys)
    assert code == 0 and len(json.loads(out.out)["centroids"]) == 2
    code, out = run(["member", data_csv, "--m", 6], capsys)
    assert code == 0 and json.loads(out.out)["kind"] == "bloom"


def test_bench_config_echo(tmp_path, capsys):
    cfg = {"task": "pca", "seed": 3, "seeds": [0], "sweep": {"m_frac": [1.0]}}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code, out = run(["bench", "--config", p], capsys)
    assert code == 0
    assert json.loads(out.out)["config"] == cfg
    code, out = run(["pca", "--config", p, "--format", "csv"], capsys)
    assert code == 0 and out.out.startswith("task,dataset")


def test_meta_train(capsys):
    code, out = run(["meta-train", "cov", "--steps", 2], capsys)
    assert code == 0 and json.loads(out.out)["target"] == "cov"


def test_exit_codes(tmp_path, data_csv, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"task": "pca", "sweep": {"m": []}}')
    assert run(["bench", "--config", bad], capsys)[0] == 2
    assert run(["bench"], capsys)[0] == 2
    assert run(["sketch", "compute", tmp_path / "missing.csv", "--m", 3], capsys)[0] == 3
    ragged = tmp_path / "r.csv"
    ragged.write_text("a,b\n1,2\n3\n")
    assert run(["pca", ragged], capsys)[0] == 3
    assert run(["nonsense"], capsys)[0] == 2
    assert run(["sketch", "compute", data_csv], capsys)[0] == 2  # --m missing


def test_module_entry_point(data_csv):
    res = subprocess.run([sys.executable, "-m", "sqnet", "sketch", "compute", str(data_csv), "--m", "4"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["m"] == 4
