import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from freedim.cli import main
from freedim.matio import raw_bytes
from freedim.randmat import SampleConfig, ginibre


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def rows(path):
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if not r[next(iter(r))].startswith("#")]


def trailer(path):
    return path.read_text().splitlines()[-1]


def test_kernel_examples(in_tmp, capsys):
    assert main(["kernel", "--builder", "upper-triangle", "--n", "4", "--out-dir", "a"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["bounds"]["lower"] == "2" and doc["bounds"]["upper"] == "2"
    assert main(["kernel", "--builder", "diag-triangles", "--r", "3", "--out-dir", "b"]) == 0
    doc = json.loads((in_tmp / "b" / "bounds.json").read_text())
    assert doc["bounds"]["lower"] == "4/3"
    assert json.loads((in_tmp / "b" / "kernel.json").read_text())["n"] == 3


def test_kernel_spec_file_canonicalised(in_tmp, capsys):
    spec = {"n": 2, "cells": [{"i": 1, "j": 1, "fill": "tri", "value": 1},
                              {"i": 0, "j": 1, "fill": "full", "value": 0.5},
                              {"i": 0, "j": 0, "fill": "tri", "value": 1}]}
    (in_tmp / "k.json").write_text(json.dumps(spec))
    assert main(["kernel", "--spec", "k.json", "--out-dir", "a"]) == 0
    canon = json.loads((in_tmp / "a" / "kernel.json").read_text())
    assert [(c["i"], c["j"]) for c in canon["cells"]] == [(0, 0), (0, 1), (1, 1)]
    manifest = json.loads((in_tmp / "a" / "manifest.json").read_text())
    assert "k.json" in manifest["inputs"]


def test_malformed_json_exit_2_no_output(in_tmp, capsys):
    (in_tmp / "bad.json").write_text('{"n": 2, "cells": [')
    assert main(["kernel", "--spec", "bad.json", "--out-dir", "out"]) == 2
    assert not (in_tmp / "out").exists()
    assert "line" in capsys.readouterr().err
    (in_tmp / "bad2.json").write_text('{"n": 2, "cells": [{"i": 5, "j": 0, "fill": "tri", "value": 1}]}')
    assert main(["kernel", "--spec", "bad2.json", "--out-dir", "out"]) == 2
    assert not (in_tmp / "out").exists()


def test_usage_errors(in_tmp):
    assert main(["brown-disk", "--k", "8", "--trials", "0", "--out-dir", "o"]) == 2
    assert main(["covariance", "--builder", "constant", "--n", "2", "--k", "7", "--trials", "5",
                 "--out-dir", "o"]) == 2
    assert main(["kernel", "--out-dir", "o"]) == 2
    assert main(["kernel", "--builder", "band", "--n", "4", "--out-dir", "o"]) == 2
    assert main(["sample", "--generator", "dt", "--k", "4", "--workers", "0", "--out-dir", "o"]) == 2
    assert not (in_tmp / "o").exists()
    with pytest.raises(SystemExit) as info:
        main(["prop1", "--f", "1,x", "--eps", "0.1"])
    assert info.value.code == 2


def test_brown_disk_small(in_tmp):
    assert main(["brown-disk", "--k", "40", "--eps", "1", "--trials", "2", "--out-dir", "o",
                 "--figures"]) == 0
    out = in_tmp / "o"
    r = rows(out / "brown_disk.csv")
    assert len(r) == 2
    assert all(float(x["r_theory"]) == pytest.approx(1.201122, abs=1e-6) for x in r)
    assert trailer(out / "brown_disk.csv").startswith("# manifest ")
    assert len(rows(out / "eigenvalues_eps1.csv")) == 40
    assert (out / "spectrum_eps1.png").read_bytes()[:4] == b"\x89PNG"


def test_covariance_constant(in_tmp):
    assert main(["covariance", "--builder", "constant", "--n", "2", "--k", "64", "--trials", "40",
                 "--out-dir", "o"]) == 0
    r = rows(in_tmp / "o" / "covariance.csv")
    assert len(r) == 4
    assert all(abs(float(x["z"])) <= 4 for x in r)


def test_covariance_lifted_targets(in_tmp):
    assert main(["covariance", "--builder", "lifted", "--N", "2", "--p", "2", "--cij", "1,2,1.5",
                 "--k", "96", "--trials", "20", "--out-dir", "o"]) == 0
    r = rows(in_tmp / "o" / "covariance.csv")
    targets = {(int(x["i"]), int(x["j"])): float(x["target"]) for x in r}
    assert targets[(0, 2)] == pytest.approx(2.25) and targets[(1, 3)] == pytest.approx(2.25)
    assert targets[(0, 1)] == 1  # inside a diagonal block: the triangle with value 1


def test_prop1_example(in_tmp):
    assert main(["prop1", "--f", "1,0", "--eps", "1e-2,1e-4,1e-8", "--out-dir", "o"]) == 0
    assert [float(x["ratio"]) for x in rows(in_tmp / "o" / "prop1.csv")] == [-0.5] * 3


def test_dyson_example(in_tmp):
    assert main(["dyson", "check", "--k", "2", "--trials", "1", "--seed", "7", "--out-dir", "o"]) == 0
    r = rows(in_tmp / "o" / "dyson.csv")
    assert float(r[0]["log_c"]) == pytest.approx(3 * math.log(math.pi) - math.log(2), rel=1e-15)


def test_packing_generator_example(in_tmp):
    assert main(["packing", "--generator", "ginibre", "--k", "16", "--m", "12", "--eps", "auto",
                 "--out-dir", "o"]) == 0
    sand = rows(in_tmp / "o" / "sandwich.csv")
    assert sand and all(x["holds"] == "true" and x["mode"] == "exact" for x in sand)
    pk = rows(in_tmp / "o" / "packing.csv")
    assert list(pk[0]) == ["eps", "p_hat", "k_hat"]


def test_packing_cloud_file(in_tmp):
    data = b"".join(raw_bytes(ginibre(SampleConfig(4, 0, t))) for t in range(10))
    (in_tmp / "cloud.bin").write_bytes(data)
    assert main(["packing", "--cloud", "cloud.bin", "--eps", "0.2,0.4", "--out-dir", "o"]) == 0
    assert json.loads((in_tmp / "o" / "packing.json").read_text())["m"] == 10


def test_sample_formats(in_tmp):
    assert main(["sample", "--generator", "dt", "--k", "5", "--trials", "3", "--format", "raw",
                 "--out-dir", "r"]) == 0
    from freedim.matio import read_raw_all
    mats = read_raw_all(in_tmp / "r" / "samples.bin")
    assert len(mats) == 3 and all(np.all(np.tril(m) == 0) for m in mats)
    assert main(["sample", "--generator", "ginibre", "--k", "3", "--trial", "4", "--out-dir", "c"]) == 0
    assert (in_tmp / "c" / "sample_0004.csv").exists()


def test_nonfinite_is_numerical_failure(in_tmp, capsys):
    with np.errstate(over="ignore"):
        code = main(["sample", "--generator", "perturbed", "--k", "4", "--scale", "1e308",
                     "--eps", "1e308", "--out-dir", "o"])
    assert code == 3
    assert "non-finite" in capsys.readouterr().err
    assert not (in_tmp / "o").exists()


def test_experiment(in_tmp):
    cfg = {"kernel": {"builder": "band", "n": 4, "w": 2}, "k_list": [8, 16], "trials": 24,
           "eps_grid": [0.4, 0.5, 0.6], "seed": 3}
    (in_tmp / "cfg.json").write_text(json.dumps(cfg))
    assert main(["experiment", "--config", "cfg.json", "--out-dir", "o", "--figures"]) == 0
    out = in_tmp / "o"
    rep = json.loads((out / "experiment.json").read_text())
    assert rep["k_list"] == [8, 16]
    assert len(rows(out / "slopes.csv")) == 2
    assert (out / "packing_k8.png").exists()


def test_experiment_config_errors(in_tmp):
    (in_tmp / "a.json").write_text('{"kernel": {"builder": "constant", "n": 1}, "k_list": [4]}')
    assert main(["experiment", "--config", "a.json", "--out-dir", "o"]) == 2
    (in_tmp / "b.json").write_text('{"kernel": {"builder": "constant", "n": 1}, "k_list": [4], '
                                   '"trials": 4, "eps_grid": [0.1], "colour": 1}')
    assert main(["experiment", "--config", "b.json", "--out-dir", "o"]) == 2
    (in_tmp / "c.json").write_text('{"kernel": {"builder": "upper-triangle", "n": 3}, "k_list": [10], '
                                   '"trials": 4, "eps_grid": [0.1]}')
    assert main(["experiment", "--config", "c.json", "--out-dir", "o"]) == 2


def test_manifest_contents(in_tmp):
    assert main(["prop1", "--f", "2,0.5,0", "--eps", "1e-3,1e-6", "--out-dir", "o"]) == 0
    m = json.loads((in_tmp / "o" / "manifest.json").read_text())
    assert m["subcommand"] == "prop1" and m["seed"] == 0 and m["status"] == 0
    assert set(m["outputs"]) == {"prop1.csv", "prop1.json"}
    assert {"started", "finished", "version", "params", "params_digest"} <= set(m)
    assert trailer(in_tmp / "o" / "prop1.csv") == f"# manifest {m['params_digest']}"


@pytest.mark.parametrize("argv", [
    ["dyson", "check", "--k", "12", "--trials", "4"],
    ["packing", "--generator", "dt", "--k", "8", "--m", "10", "--eps", "auto", "--figures"],
    ["covariance", "--builder", "band", "--n", "4", "--w", "2", "--k", "16", "--trials", "6"],
])
def test_replay_independent_of_workers(in_tmp, argv, capsys):
    assert main(argv + ["--out-dir", "o", "--workers", "1", "--seed", "5"]) == 0
    assert main(["replay", "o/manifest.json", "--workers", "4"]) == 0
    out = capsys.readouterr().out
    assert "MISMATCH" not in out and "OK" in out


def test_replay_detects_tampering(in_tmp, capsys):
    assert main(["prop1", "--f", "1,0", "--eps", "0.1", "--out-dir", "o"]) == 0
    (in_tmp / "o" / "prop1.csv").write_text("eps,ratio,limit\n")
    assert main(["replay", "o/manifest.json"]) == 1
    assert "MODIFIED prop1.csv" in capsys.readouterr().out
    m = json.loads((in_tmp / "o" / "manifest.json").read_text())
    m["outputs"]["prop1.json"] = "0" * 64
    (in_tmp / "o" / "manifest.json").write_text(json.dumps(m))
    assert main(["replay", "o/manifest.json"]) == 1


def test_replay_detects_changed_input(in_tmp):
    (in_tmp / "cloud.bin").write_bytes(raw_bytes(np.eye(3)) + raw_bytes(np.zeros((3, 3))))
    assert main(["packing", "--cloud", "cloud.bin", "--eps", "0.1,0.2", "--out-dir", "o"]) == 0
    assert main(["replay", "o/manifest.json"]) == 0
    (in_tmp / "cloud.bin").write_bytes(raw_bytes(np.eye(3)) + raw_bytes(2 * np.eye(3)))
    assert main(["replay", "o/manifest.json"]) == 1


def test_replay_bad_manifest(in_tmp):
    (in_tmp / "m.json").write_text("{}")
    assert main(["replay", "m.json"]) == 2


def test_module_entry_point(in_tmp):
    proc = subprocess.run([sys.executable, "-m", "freedim", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("freedim ")
