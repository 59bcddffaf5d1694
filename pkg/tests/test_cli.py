import json

import numpy as np
import pytest

from ksparse.cli import main
from ksparse.data import save_dataset
from ksparse.vma import VmaConfig, generate_synthetic


@pytest.fixture
def data_file(tmp_path):
    d, _ = generate_synthetic(VmaConfig(n=14, p=40, seed=3))
    path = tmp_path / "toy.csv"
    save_dataset(d, path)
    return path


def run(*args):
    return main([str(a) for a in args])


def test_es_k_outputs_and_jobs_independence(tmp_path, data_file):
    assert run("es-k", "--data", data_file, "--k", 3, "--seed", 0, "--out", tmp_path / "a", "--jobs", 1) == 0
    assert run("es-k", "--data", data_file, "--k", 3, "--seed", 0, "--out", tmp_path / "b", "--jobs", 4) == 0
    for name in ("ranked_fe.jsonl", "ranked_cve.jsonl", "dos_fe.csv", "dos_cve.csv", "dos2d.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    top = json.loads((tmp_path / "a" / "ranked_fe.jsonl").read_text().splitlines()[0])
    assert top["rank"] == 1 and len(top["support"]) == 3
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["command"] == "es-k" and man["dataset_fingerprint"]


def test_usage_and_error_codes(tmp_path, data_file, capsys):
    assert run("es-k", "--data", data_file, "--k", 0, "--seed", 0, "--out", tmp_path) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2
    assert run("es-k", "--data", data_file, "--k", 2, "--out", tmp_path) == 2  # no seed
    assert run("es-k", "--data", data_file, "--k", 3, "--seed", 0, "--out", tmp_path, "--budget", 5) == 5
    bad = tmp_path / "bad.csv"
    bad.write_text("y,sigma,a,b\n1,1,2,0\n2,1,2,1\n3,1,2,5\n")
    assert run("dataset-check", "--data", bad, "--out", tmp_path / "dc") == 3
    assert run("es-k", "--data", tmp_path / "missing.csv", "--k", 1, "--seed", 0, "--out", tmp_path) == 3


def test_config_file_and_override(tmp_path, data_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {data_file}\nk = 2\nseed = 1\ncriterion = fe  # comment\n")
    assert run("es-k", "--config", cfg, "--out", tmp_path / "o", "--seed", 5) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["seed"] == 5 and man["config"]["k"] == 2
    assert not (tmp_path / "o" / "ranked_cve.jsonl").exists()
    cfg.write_text("nonsense = 3\n")
    assert run("es-k", "--config", cfg, "--out", tmp_path / "o2") == 2


def test_aes_compare_and_rerun(tmp_path, data_file):
    assert run("es-k", "--data", data_file, "--k", 2, "--seed", 0, "--out", tmp_path / "es", "--bins", 30) == 0
    assert run("aes-k", "--data", data_file, "--k", 2, "--seed", 0, "--out", tmp_path / "aes",
               "--sweeps", 4000, "--match-bins", tmp_path / "es" / "dos_fe.csv") == 0
    best = json.loads((tmp_path / "aes" / "best.json").read_text())
    top = json.loads((tmp_path / "es" / "ranked_fe.jsonl").read_text().splitlines()[0])
    assert best["support"] == top["support"]
    assert run("compare-dos", tmp_path / "es" / "dos_fe.csv", tmp_path / "es" / "dos_fe.csv",
               "--out", tmp_path / "self", "--min-count", 1) == 0
    self_cmp = json.loads((tmp_path / "self" / "comparison.json").read_text())
    assert self_cmp["max_abs_deviation"] == 0.0
    assert run("compare-dos", tmp_path / "es" / "dos_fe.csv", tmp_path / "aes" / "dos.csv",
               "--out", tmp_path / "cmp", "--min-count", 5) == 0
    assert run("rerun", tmp_path / "aes" / "manifest.json", "--out", tmp_path / "aes2") == 0
    for name in ("dos.csv", "histograms.csv", "best.json", "diagnostics.json"):
        assert (tmp_path / "aes" / name).read_bytes() == (tmp_path / "aes2" / name).read_bytes()


def test_single_temperature_aes(tmp_path, data_file):
    assert run("aes-k", "--data", data_file, "--k", 2, "--seed", 1, "--out", tmp_path / "o",
               "--betas", "0.5", "--sweeps", 500) == 0
    rows = (tmp_path / "o" / "dos.csv").read_text().splitlines()
    assert rows[0] == "bin_lo,bin_hi,E_bin_center,g,log10_g" and len(rows) == 401


def test_lasso_and_vma_commands(tmp_path, data_file):
    assert run("lasso", "--data", data_file, "--seed", 0, "--out", tmp_path / "l", "--n-lambdas", 20) == 0
    head = (tmp_path / "l" / "path.csv").read_text().splitlines()[0]
    assert head == "lambda,n_nonzero,support,cve_lambda,cve_support,fe_support"
    assert run("lasso", "--data", data_file, "--seed", 0, "--out", tmp_path / "s", "--n-lambdas", 20,
               "--mode", "scan") == 0
    assert (tmp_path / "s" / "scan_minima.jsonl").exists()
    assert not (tmp_path / "s" / "lambda_choice.json").exists()
    rows = (tmp_path / "s" / "path.csv").read_text().splitlines()[1:]
    assert all(r.split(",")[3] == "" for r in rows)
    assert run("vma", "--p", 30, "--n", 12, "--k-max", 3, "--seed", 0, "--seeds", 2,
               "--out", tmp_path / "v", "--sweeps", 500) == 0
    lines = (tmp_path / "v" / "summary.jsonl").read_text().splitlines()
    assert [json.loads(x)["seed"] for x in lines] == [0, 1]
