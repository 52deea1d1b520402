"""CLI tests: exit codes, end-to-end pipelines, byte-deterministic artifacts."""

import json

import numpy as np
import pytest

from irnet.cli import run_cli


def tree_bytes(root):
    return {
        p.relative_to(root): p.read_bytes()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def simulate_noiseless(out, p=10, K=2, n=16, seed=7):
    return run_cli([
        "simulate", "--p", str(p), "--K", str(K), "--n", str(n),
        "--seed", str(seed), "--out", str(out),
        "--miss-frac", "0", "--false-pos-frac", "0",
        "--noise-mult-range", "1", "1", "--balance-columns",
    ])


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_unknown_flag_exits_one(capsys):
    assert run_cli(["simulate", "--bogus", "1"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exits_one():
    assert run_cli(["transmogrify"]) == 1


def test_missing_required_flag_exits_one():
    assert run_cli(["fit", "--data", "somewhere"]) == 1


def test_help_exits_zero():
    assert run_cli(["--help"]) == 0


def test_fit_without_topics_exits_two(tmp_path, capsys):
    out = tmp_path / "sim"
    assert simulate_noiseless(out) == 0
    topics = out / "dataset" / "topics.txt"
    manifest_path = out / "dataset" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["topics_known"] = False
    manifest["topics_file"] = None
    manifest_path.write_text(json.dumps(manifest))
    topics.unlink()
    code = run_cli([
        "fit", "--data", str(out / "dataset"), "--out", str(tmp_path / "m.json"),
    ])
    assert code == 2
    assert "fit-joint" in capsys.readouterr().err


def test_divergent_fit_exits_three(tmp_path, capsys):
    out = tmp_path / "sim"
    assert simulate_noiseless(out) == 0
    with np.errstate(all="ignore"):
        code = run_cli([
            "fit", "--data", str(out / "dataset"), "--eta", "1e6",
            "--out", str(tmp_path / "m.json"),
        ])
    assert code == 3
    assert "numeric failure" in capsys.readouterr().err


def test_bad_thread_env_exits_one(tmp_path, monkeypatch, capsys):
    out = tmp_path / "sim"
    assert simulate_noiseless(out) == 0
    monkeypatch.setenv("IRNET_THREADS", "many")
    code = run_cli([
        "fit", "--data", str(out / "dataset"), "--out", str(tmp_path / "m.json"),
    ])
    assert code == 1
    assert "IRNET_THREADS" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# simulate determinism
# ---------------------------------------------------------------------------

def test_simulate_twice_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["simulate", "--p", "10", "--K", "2", "--n", "5",
                    "--seed", "7", "--out", str(a)]) == 0
    assert run_cli(["simulate", "--p", "10", "--K", "2", "--n", "5",
                    "--seed", "7", "--out", str(b)]) == 0
    assert tree_bytes(a) == tree_bytes(b)
    assert (a / "dataset" / "manifest.json").exists()
    assert (a / "truth" / "model.json").exists()


# ---------------------------------------------------------------------------
# end-to-end pipelines
# ---------------------------------------------------------------------------

def test_fit_then_evaluate_recovers_truth(tmp_path, capsys):
    out = tmp_path / "sim"
    assert simulate_noiseless(out) == 0
    model = tmp_path / "model.json"
    assert run_cli([
        "fit", "--data", str(out / "dataset"), "--out", str(model),
        "--iters", "800",
    ]) == 0
    capsys.readouterr()
    assert run_cli([
        "evaluate", "--model", str(model), "--data", str(out / "dataset"),
        "--truth", str(out / "truth"), "--out", str(tmp_path / "report.json"),
    ]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["d2_factors"] <= 1e-8
    assert report["prediction_error"] <= 1e-8
    assert report["topics"] == "stored"
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert on_disk["d2_factors"] == report["d2_factors"]


def test_fit_joint_writes_model_and_topics(tmp_path):
    out = tmp_path / "sim"
    assert run_cli(["simulate", "--p", "8", "--K", "2", "--n", "10",
                    "--seed", "9", "--out", str(out)]) == 0
    model = tmp_path / "joint.json"
    topics = tmp_path / "topics_hat.txt"
    assert run_cli([
        "fit-joint", "--data", str(out / "dataset"), "--out", str(model),
        "--topics-out", str(topics), "--outer-iters", "5", "--iters", "40",
    ]) == 0
    meta = json.loads(model.read_text())["meta"]
    assert meta["fit"] == "joint"
    rows = [
        [float(v) for v in line.split(",")]
        for line in topics.read_text().splitlines()
    ]
    M = np.asarray(rows)
    assert M.shape == (10, 2)
    assert np.all(M >= 0)
    assert np.allclose(M.sum(axis=1), 1.0, atol=1e-9)


def test_baseline_commands_and_evaluate(tmp_path, capsys):
    out = tmp_path / "sim"
    assert run_cli(["simulate", "--p", "8", "--K", "2", "--n", "6",
                    "--seed", "11", "--out", str(out)]) == 0
    for method, name in (("one-matrix", "one.json"), ("k-matrices", "km.json")):
        path = tmp_path / name
        assert run_cli([
            "baseline", "--data", str(out / "dataset"),
            "--method", method, "--out", str(path),
        ]) == 0
        capsys.readouterr()
        assert run_cli([
            "evaluate", "--model", str(path), "--data", str(out / "dataset"),
        ]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["prediction_error"] >= 0
        assert report["variant"] in ("one_matrix", "k_matrices")


def test_evaluate_estimates_missing_topics(tmp_path, capsys):
    out = tmp_path / "sim"
    assert simulate_noiseless(out, p=8, K=2, n=8, seed=13) == 0
    model = tmp_path / "model.json"
    assert run_cli([
        "fit", "--data", str(out / "dataset"), "--out", str(model),
        "--iters", "300",
    ]) == 0
    ds_dir = out / "dataset"
    manifest = json.loads((ds_dir / "manifest.json").read_text())
    manifest["topics_known"] = False
    manifest["topics_file"] = None
    (ds_dir / "manifest.json").write_text(json.dumps(manifest))
    (ds_dir / "topics.txt").unlink()
    capsys.readouterr()
    assert run_cli(["evaluate", "--model", str(model), "--data", str(ds_dir)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["topics"] == "estimated"
    assert report["prediction_error"] <= 1e-6


def test_check_conditions_reports_diagnostics(tmp_path, capsys):
    out = tmp_path / "sim"
    assert simulate_noiseless(out) == 0
    capsys.readouterr()
    assert run_cli([
        "check-conditions", "--truth", str(out / "truth"),
        "--out", str(tmp_path / "cc.json"),
    ]) == 0
    report = json.loads(capsys.readouterr().out)
    for key in ("rho0", "eta_oc", "mu_theta", "L_theta", "sigma_max"):
        assert key in report
    assert json.loads((tmp_path / "cc.json").read_text()) == report


# ---------------------------------------------------------------------------
# report commands render figures beside the tables
# ---------------------------------------------------------------------------

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_sweep_writes_tables_and_figure(tmp_path):
    out = tmp_path / "sweep"
    assert run_cli([
        "sweep", "--p", "8", "--K", "2", "--seed", "3",
        "--n-values", "4,6", "--replicates", "2", "--n-test", "8",
        "--fit-iters", "60", "--out", str(out),
    ]) == 0
    data = json.loads((out / "sweep.json").read_text())
    assert len(data["cells"]) == 2 * 2 * 3
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + len(data["cells"])
    assert (out / "error_vs_n.png").read_bytes()[:8] == PNG_MAGIC


def test_bench_writes_tables_and_figure(tmp_path):
    out = tmp_path / "bench"
    assert run_cli([
        "bench", "--p-values", "10", "--K-values", "2", "--n", "10",
        "--T", "3", "--repeats", "1", "--out", str(out),
    ]) == 0
    data = json.loads((out / "runtime.json").read_text())
    assert data["cells"][0]["seconds_per_iter"] > 0
    assert (out / "runtime.csv").exists()
    assert (out / "runtime.png").read_bytes()[:8] == PNG_MAGIC


def test_trace_writes_tables_and_figure(tmp_path):
    out = tmp_path / "trace"
    assert run_cli([
        "trace", "--p", "10", "--K", "2", "--n", "12", "--seed", "5",
        "--relax-iters", "2", "--iters", "400", "--out", str(out),
    ]) == 0
    summary = json.loads((out / "trace.json").read_text())
    for key in ("slope", "r2", "plateau", "stat_surrogate"):
        assert key in summary
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,dist_sq,objective"
    assert len(lines) == 1 + 400
    assert (out / "trace.png").read_bytes()[:8] == PNG_MAGIC
