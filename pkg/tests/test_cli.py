import csv
import io
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from adicflow import cli
from adicflow.spectral import SeriesDiverges

QA_GRAPH = {"matrix": [[3, 1], [1, 3]]}
OBS = [{"name": "ind3", "indicator": [3], "mean_zero": True}, {"name": "one", "constant": 1}]


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if isinstance(obj, dict) else obj)
    return str(p)


def run(argv):
    out = io.StringIO()
    code = cli.main(argv, stdout=out)
    return code, out.getvalue()


@pytest.fixture
def qa_cfg(tmp_path):
    return write(tmp_path, "qa.json", {
        "graph": QA_GRAPH, "seed": 7, "observables": OBS,
        "deviation": {"T_min": 16, "T_max": 4.0 ** 12, "points": 16, "samples": 24, "n_boot": 50},
        "limit": {"n_list": [4, 6], "samples": 800, "observable": "ind3"},
    })


def test_spectral_json(tmp_path, qa_cfg):
    code, text = run(["spectral", "--config", qa_cfg, "--format", "json"])
    assert code == 0
    rep = json.loads(text)
    assert rep["expanding_thetas"][0] == pytest.approx(math.log(4))
    assert rep["expanding_thetas"][1] == pytest.approx(math.log(2))
    assert rep["dim_plus"] == 2 and rep["validation"]["ok"]


def test_spectral_csv_from_toml(tmp_path):
    cfg = write(tmp_path, "b.toml", 'graph = { matrix = [[6,2,1],[2,5,2],[1,2,4]] }\n')
    code, text = run(["spectral", "--config", cfg])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert float(rows[0]["modulus"]) == pytest.approx(8.5046643535880477, rel=1e-12)


def test_deviation_csv_deterministic(tmp_path, qa_cfg):
    a = run(["deviation", "--config", qa_cfg])
    b = run(["deviation", "--config", qa_cfg])
    assert a[0] == 0 and a[1] == b[1]
    rows = list(csv.DictReader(io.StringIO(a[1])))
    slopes = {r["observable"]: float(r["slope[log/log]"]) for r in rows}
    assert slopes["ind3"] == pytest.approx(0.5, abs=0.07)
    assert slopes["one"] == pytest.approx(1.0, abs=1e-9)
    c = run(["deviation", "--config", qa_cfg, "--seed", "8"])
    assert c[1] != a[1]


def test_out_directory_and_svg(tmp_path):
    cfg = write(tmp_path, "c.json", {"graph": QA_GRAPH, "observables": OBS[:1],
                                     "deviation": {"T_min": 16, "T_max": 4.0 ** 8, "points": 8, "samples": 8,
                                                   "n_boot": 20, "svg": True}})
    out = tmp_path / "o"
    code, text = run(["deviation", "--config", cfg, "--out", str(out), "--format", "json"])
    assert code == 0 and text == ""
    assert json.loads((out / "deviation.json").read_text())["ind3"]["slope"] > 0
    assert (out / "deviation.svg").read_text().startswith("<svg")


def test_limit_outputs(tmp_path, qa_cfg):
    out = tmp_path / "lim"
    code, _ = run(["limit", "--config", qa_cfg, "--out", str(out)])
    assert code == 0
    ks = list(csv.reader(io.StringIO((out / "limit_ks.csv").read_text())))
    assert len(ks) == 1 + 2 * 4
    assert (out / "limit_moments.csv").exists()


def test_constant_sequence_limit_matches_periodic(tmp_path):
    lim = {"n_list": [4, 6], "samples": 600}
    per = write(tmp_path, "p.json", {"graph": QA_GRAPH, "observables": OBS[:1], "limit": lim, "seed": 2})
    seq = write(tmp_path, "s.json", {"sequence": {"graphs": [QA_GRAPH], "probs": [1.0]},
                                     "observables": OBS[:1], "limit": lim, "seed": 2,
                                     "sequence_model": {"lyapunov_steps": 2000}})
    a = json.loads(run(["limit", "--config", per, "--format", "json"])[1])
    out = tmp_path / "seq"
    code, _ = run(["limit", "--config", seq, "--format", "json", "--out", str(out)])
    assert code == 0
    b = json.loads((out / "limit.json").read_text())
    assert np.allclose(a["ks"], b["ks"], atol=1e-12)
    rows = list(csv.DictReader(io.StringIO((out / "exponents.csv").read_text())))
    assert float(rows[0]["exponent[log growth per level]"]) == pytest.approx(math.log(4), abs=1e-9)


@pytest.mark.parametrize("argv", [[], ["bogus"], ["spectral"], ["spectral", "--format", "xml", "--config", "x"]])
def test_usage_errors(argv):
    assert run(argv)[0] == 1


def test_malformed_config(tmp_path):
    assert run(["spectral", "--config", write(tmp_path, "bad.json", '{"graph": ')])[0] == 1


@pytest.mark.parametrize("cfg", [
    {"graph": {"matrix": [[1, 0], [0, 1]]}},                  # not primitive
    {"observables": []},                                       # no graph
    {"graph": QA_GRAPH, "observables": [{"indicator": [0, 3]}]},   # inadmissible word
])
def test_domain_errors(tmp_path, cfg):
    cmd = "deviation" if "observables" in cfg and "graph" in cfg else "spectral"
    assert run([cmd, "--config", write(tmp_path, "d.json", cfg)])[0] == 2


def test_numeric_failure_exit(monkeypatch, tmp_path, qa_cfg):
    def boom(*a, **k):
        raise SeriesDiverges("forced")
    monkeypatch.setattr(cli, "cmd_spectral", boom)
    assert run(["spectral", "--config", qa_cfg])[0] == 3


def test_selftest_only_and_tol():
    code, text = run(["selftest", "--only", "graph_core,compactum"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert {r["suite"] for r in rows} == {"graph_core", "compactum"}
    assert all(r["status"] == "PASS" for r in rows)
    code, text = run(["selftest", "--only", "graph_core", "--tol", "0", "--format", "json"])
    assert code == 3
    assert not any(c["passed"] for c in json.loads(text))
    assert run(["selftest", "--only", "nonsense"])[0] == 1


def test_console_script(tmp_path, qa_cfg):
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "adicflow.cli", "spectral", "--config", qa_cfg, "--format", "json"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0
    assert json.loads(res.stdout)["dim_plus"] == 2
