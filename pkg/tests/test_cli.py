"""Command-line surface: subcommands, exit codes, artifact layout."""

from __future__ import annotations

import json

import numpy as np
import pytest

from hintsr.cli import cli_dispatch

GEN_CONFIG = {
    "max_depth": 3,
    "max_prefix_len": 10,
    "max_vars": 2,
    "n_points": [16, 24],
    "operator_weights": {"add": 1.0, "mul": 1.0, "sin": 1.0},
    "leaf_const_prob": 0.15,
    "p_leaf": 0.55,
    "support_bound": 4.0,
    "min_support_width": 6.0,
}

TRAIN_CONFIG = {
    "model": {"hidden": 16, "heads": 2, "latent_slots": 2, "enc_layers": 1,
              "dec_layers": 1, "ff_mult": 2, "max_vars": 2,
              "max_target_len": 14, "max_cond_len": 72},
    # just enough steps that beam decodes start parsing
    "train": {"steps": 150, "batch_size": 16, "base_lr": 2e-3, "warmup": 20,
              "log_every": 75, "heldout_fraction": 0.1, "heldout_max": 8,
              "max_points": 8, "seed": 0},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "gen.json").write_text(json.dumps(GEN_CONFIG))
    (root / "train.json").write_text(json.dumps(TRAIN_CONFIG))
    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, 40)
    (root / "data.csv").write_text(
        "x1,y\n" + "\n".join(f"{a:.6f},{np.sin(a):.6f}" for a in x)
    )
    (root / "hyp.txt").write_text("Complexity=2\n")
    return root


def run(capsys, *argv) -> tuple[int, str, str]:
    code = cli_dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# Exit codes and help
# ---------------------------------------------------------------------------


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    for name in ("generate", "train", "infer", "evaluate", "serve"):
        assert name in out


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1 and "frobnicate" in err


def test_missing_required_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "generate", "--out", "/tmp/x")
    assert code == 1 and "--config" in err


def test_runtime_failure_is_exit_two(capsys, workdir):
    code, _, err = run(capsys, "infer", "--model", str(workdir / "missing.ckpt"),
                       "--data", str(workdir / "data.csv"))
    assert code == 2 and "error:" in err


# ---------------------------------------------------------------------------
# End-to-end pipeline on a miniature corpus
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("stage", ["pipeline"])
def test_generate_train_infer_evaluate(capsys, workdir, stage):
    corpus = workdir / "corpus"
    code, out, err = run(capsys, "generate", "--config", str(workdir / "gen.json"),
                         "--out", str(corpus), "--shards", "2",
                         "--samples-per-shard", "30", "--seed", "7")
    assert code == 0
    assert json.loads(out.splitlines()[-1])["shards"] == 2
    assert "shard 2/2" in err
    assert (corpus / "index.json").exists()

    run_dir = workdir / "run"
    code, out, _ = run(capsys, "train", "--config", str(workdir / "train.json"),
                       "--corpus", str(corpus), "--out", str(run_dir))
    assert code == 0
    lines = [json.loads(l) for l in out.splitlines()]
    assert lines[0]["step"] == 75  # line-delimited metrics stream
    assert "checkpoint" in lines[-1]
    ckpt = run_dir / "model.ckpt"
    assert ckpt.exists() and (run_dir / "metrics.jsonl").exists()

    code, out, err = run(capsys, "infer", "--model", str(ckpt),
                         "--data", str(workdir / "data.csv"),
                         "--hypotheses", str(workdir / "hyp.txt"),
                         "--beam", "5", "--restarts", "2")
    assert code == 0
    assert out.strip(), "at least one candidate line expected"
    for line in out.splitlines():
        record = json.loads(line)
        assert "prefix" in record and "log_prob" in record
    assert "candidates" in err

    spec = {
        "dataset": str(corpus), "out_dir": str(workdir / "eval"),
        "presets": ["vanilla"], "beam_sizes": [2], "seeds": [0],
        "max_equations": 3, "fit_restarts": 2,
    }
    (workdir / "spec.json").write_text(json.dumps(spec))
    code, out, err = run(capsys, "evaluate", "--spec", str(workdir / "spec.json"),
                         "--model", str(ckpt))
    assert code == 0
    summary = json.loads(out.splitlines()[-1])
    assert summary["rows"] > 0
    results = workdir / "eval" / "results.csv"
    assert results.exists()
    pngs = list((workdir / "eval").glob("*.png"))
    assert pngs, "report figures must land next to results.csv"
    assert "figure" in err


def test_train_baseline_flag(capsys, workdir):
    corpus = workdir / "corpus"
    run_dir = workdir / "run_baseline"
    code, out, _ = run(capsys, "train", "--config", str(workdir / "train.json"),
                       "--corpus", str(corpus), "--out", str(run_dir),
                       "--baseline")
    assert code == 0
    from hintsr.train import load_checkpoint

    model = load_checkpoint(run_dir / "model.ckpt")
    assert model.cfg.use_symbolic is False


def test_evaluate_rejects_bad_spec(capsys, workdir, tmp_path):
    bad = tmp_path / "spec.json"
    bad.write_text(json.dumps({"dataset": "x", "out_dir": str(tmp_path),
                               "presets": ["nope"]}))
    code, _, err = run(capsys, "evaluate", "--spec", str(bad),
                       "--model", str(workdir / "run" / "model.ckpt"))
    assert code == 2 and "error:" in err
