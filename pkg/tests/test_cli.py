import json

import pytest

from alulab.cli import main

TINY = {
    "data": {"n_classes": 3, "n_features": 8, "n_train": 240, "n_test": 120},
    "vae": {"latent_dim": 4, "hidden": 16},
    "classifier_train": {"epochs": 10},
    "vae_train": {"epochs": 15, "kl_weight": 1e-6},
    "purify": {"iterations": 20},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_proof(tmp_path, capsys):
    code, out, _ = run(capsys, "verify-proof", "--instances", "100", "--seed", "7", "--out", str(tmp_path))
    assert code == 0
    report = json.loads(out)
    assert report["mse"]["max_post_update_loss"] < 1e-10
    assert json.loads((tmp_path / "verify-proof.json").read_text()) == report


def test_missing_config_names_path(tmp_path, capsys):
    missing = str(tmp_path / "nope" / "c.json")
    code, _, err = run(capsys, "evaluate", "--config", missing, "--out", str(tmp_path))
    assert code == 1 and missing in err


@pytest.mark.parametrize("argv", [["frobnicate"], ["evaluate", "--bogus"], [], ["verify-proof", "--seed", "-3"]])
def test_usage_errors_exit_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1 and "usage" in err


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0


def test_runtime_failure_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.alud"
    bad.write_bytes(b"ALUD\x01\x00garbage")
    code, _, err = run(capsys, "train-vae", "--data", str(bad), "--out", str(tmp_path))
    assert code == 2 and "FormatError" in err


def test_full_workflow(tmp_path, cfg_path, capsys):
    out = str(tmp_path / "run")
    base = ["--config", cfg_path, "--out", out, "--seed", "5"]
    assert run(capsys, "gen-data", *base)[0] == 0
    train, test = f"{out}/train.alud", f"{out}/test.alud"
    assert run(capsys, "train-classifier", "--data", train, *base)[0] == 0
    assert run(capsys, "train-vae", "--data", train, *base)[0] == 0
    clf, vae = f"{out}/classifier.alu1", f"{out}/vae.alu1"
    assert run(capsys, "train-unified", "--data", train, "--vae", vae, *base)[0] == 0

    code, stdout, _ = run(capsys, "attack", "--classifier", clf, "--data", test, *base)
    summary = json.loads(stdout)
    assert code == 0 and summary["max_perturbation"] <= summary["epsilon"] + 1e-6

    code, stdout, _ = run(capsys, "analyze-patterns", "--dump", f"{out}/attack_dump.csv", *base)
    stats = json.loads(stdout)
    assert code == 0
    assert sum(stats[k] for k in ("case1", "case2", "case3", "unsuccessful")) == pytest.approx(1.0)

    trace = str(tmp_path / "trace.csv")
    code, stdout, _ = run(capsys, "purify", "--vae", vae, "--data", f"{out}/adversarial.alud", "--trace", trace, *base)
    assert code == 0 and len(open(trace).read().splitlines()) == 21

    code, stdout, _ = run(capsys, "calibrate", "--vae", vae, "--classifier", clf, "--data", train, *base)
    assert code == 0 and json.loads(stdout)["calibration_size"] == 240


def test_evaluate_and_sweep(tmp_path, cfg_path, capsys):
    out = str(tmp_path)
    code, stdout, _ = run(capsys, "evaluate", "--config", cfg_path, "--out", out)
    assert code == 0
    result = json.loads(stdout)
    assert result["config_hash"] == json.loads((tmp_path / "evaluate.json").read_text())["config_hash"]
    assert (tmp_path / "result.json").exists() and (tmp_path / "decisions_adversarial.csv").exists()

    code, stdout, _ = run(capsys, "sweep", "--parameter", "iterations", "--values", "0", "10", "--config", cfg_path, "--out", out)
    assert code == 0
    rows = json.loads(stdout)["rows"]
    assert [r[0] for r in rows] == [0, 10]
    assert (tmp_path / "sweep_iterations.csv").read_text().startswith("value,clean_acc,adv_acc")


def test_missing_input_file_is_config_error(tmp_path, capsys):
    code, _, err = run(capsys, "train-vae", "--data", str(tmp_path / "x.alud"), "--out", str(tmp_path))
    assert code == 1 and "x.alud" in err
