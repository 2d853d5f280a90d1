"""Metrics and the sweep harness."""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from hintsr import hints
from hintsr.evaluation import (
    RESULT_HEADER,
    DegenerateVariance,
    ExperimentSpec,
    InsufficientValidPoints,
    inject_noise,
    is_correct,
    is_satisfied_rate,
    r2,
    r2_above,
    r2_mean,
    run_experiment,
)
from hintsr.expr import parse_prefix
from hintsr.infer import BeamCandidate


# ---------------------------------------------------------------------------
# Coefficient of determination
# ---------------------------------------------------------------------------


def test_r2_hand_case():
    assert abs(r2(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 5.0])) - (-1.0)) < 1e-10


def test_r2_perfect_and_mean_predictor():
    y = np.array([2.0, 4.0, 6.0, 8.0])
    assert r2(y, y) == 1.0
    assert abs(r2(y, np.full(4, y.mean()))) < 1e-12


def test_r2_agrees_with_streaming_accumulation():
    """Second route: single-pass Welford for SS_tot, direct SS_res."""
    rng = np.random.default_rng(0)
    y = rng.normal(3.0, 10.0, 1000)
    p = y + rng.normal(0.0, 2.0, 1000)

    mean = 0.0
    m2 = 0.0
    ss_res = 0.0
    for i, (yi, pi) in enumerate(zip(y, p), start=1):
        delta = yi - mean
        mean += delta / i
        m2 += delta * (yi - mean)
        ss_res += (yi - pi) ** 2
    want = 1.0 - ss_res / m2
    assert abs(r2(y, p) - want) < 1e-10


def test_r2_input_validation():
    with pytest.raises(ValueError):
        r2(np.ones(3), np.ones(4))
    with pytest.raises(DegenerateVariance):
        r2(np.array([1.0]), np.array([1.0]))
    with pytest.raises(DegenerateVariance):
        r2(np.array([2.0, 2.0, 2.0]), np.array([1.0, 2.0, 3.0]))


def test_r2_aggregates():
    scores = [1.0, 0.995, float("-inf"), float("nan"), 0.5]
    assert abs(r2_mean(scores) - (1.0 + 0.995 + 0.0 + 0.0 + 0.5) / 5) < 1e-12
    assert abs(r2_above(scores) - 2 / 5) < 1e-12
    assert abs(r2_above(scores, cut=0.4) - 3 / 5) < 1e-12
    assert math.isnan(r2_mean([]))
    assert math.isnan(r2_above([]))


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------


def test_inject_noise_scale():
    rng = np.random.default_rng(1)
    y = np.full(1_000_000, 5.0)
    noisy = inject_noise(y, 0.01, rng)
    sd = float(np.std(noisy - y))
    assert abs(sd - 0.05) / 0.05 < 0.01


def test_inject_noise_zero_rho_bit_exact():
    rng = np.random.default_rng(2)
    y = np.array([1.5, -2.25, 1e-3], dtype=np.float32)
    out = inject_noise(y, 0.0, rng)
    assert out is not y
    assert np.array_equal(out, y) and out.dtype == y.dtype


def test_inject_noise_proportional_to_magnitude():
    rng = np.random.default_rng(3)
    y = np.full(200_000, 50.0)
    sd = float(np.std(inject_noise(y, 0.01, rng) - y))
    assert abs(sd - 0.5) / 0.5 < 0.02
    with pytest.raises(ValueError):
        inject_noise(y, -0.1, rng)


# ---------------------------------------------------------------------------
# Symbolic-equivalence verdict
# ---------------------------------------------------------------------------


def test_is_correct_identity(quick_corpus):
    rng = np.random.default_rng(4)
    for s in quick_corpus[:25]:
        assert is_correct(s.skeleton, s.skeleton, rng,
                          pred_constants=s.constants,
                          truth_constants=s.constants) == 1


def test_is_correct_rejects_wrong_constant():
    rng = np.random.default_rng(5)
    truth = parse_prefix("mul c sin x1".split())
    assert is_correct(truth, truth, rng,
                      pred_constants=[2.0], truth_constants=[2.5]) == 0


def test_is_correct_tolerance_edges():
    rng = np.random.default_rng(6)
    pred = parse_prefix("mul c x1".split())
    truth = parse_prefix("x1".split())
    # uniform relative offset of 2e-5 straddles the rtol=1e-5 default
    assert is_correct(pred, truth, rng, pred_constants=[1.0 + 2e-5]) == 0
    assert is_correct(pred, truth, rng, pred_constants=[1.0 + 2e-5], rtol=1e-4) == 1
    assert is_correct(pred, truth, rng, pred_constants=[5.0], atol=1e9) == 1


def test_is_correct_resamples_partial_domains():
    rng = np.random.default_rng(7)
    truth = parse_prefix("log x1".split())  # valid on half the support
    assert is_correct(truth, truth, rng) == 1
    nowhere = parse_prefix("log sub x1 x1".split())
    with pytest.raises(InsufficientValidPoints):
        is_correct(nowhere, nowhere, rng)


def test_is_satisfied_rate():
    pi = hints.make_pi(complexity=3)
    cands = [
        BeamCandidate(tokens=("add", "x1", "x1"), log_prob=-1.0),
        BeamCandidate(tokens=("sin", "x1"), log_prob=-2.0),
        BeamCandidate(tokens=("mul", "x1", "x2"), log_prob=-3.0),
        BeamCandidate(tokens=("x1",), log_prob=-4.0),
    ]
    assert is_satisfied_rate(cands, pi, "complexity") == 0.5
    with pytest.raises(ValueError):
        is_satisfied_rate([], pi, "complexity")


# ---------------------------------------------------------------------------
# Sweep harness
# ---------------------------------------------------------------------------


def test_experiment_spec_validation(tmp_path):
    with pytest.raises(KeyError):
        ExperimentSpec(dataset="d", out_dir=str(tmp_path), presets=("nope",))
    with pytest.raises(ValueError):
        ExperimentSpec(dataset="d", out_dir=str(tmp_path), noise_levels=(-1.0,))
    with pytest.raises(ValueError):
        ExperimentSpec(dataset="d", out_dir=str(tmp_path), beam_sizes=(0,))
    spec = ExperimentSpec(dataset="d", out_dir=str(tmp_path))
    assert spec.config_hash == ExperimentSpec(dataset="d", out_dir=str(tmp_path)).config_hash


def test_run_experiment_table(vocab, quick_model, quick_corpus, quick_pool, tmp_path):
    spec = ExperimentSpec(
        dataset="toy", out_dir=str(tmp_path / "a"),
        presets=("vanilla", "complexity"), beam_sizes=(2,),
        noise_levels=(0.0,), point_counts=(0,), seeds=(0, 1),
        max_equations=4, fit_restarts=2,
    )
    rows, manifest = run_experiment(spec, quick_model, vocab, quick_corpus[:4],
                                    global_pool=quick_pool)
    with open(tmp_path / "a" / "results.csv") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == RESULT_HEADER
    assert len(table) == len(rows) + 1
    assert manifest["n_equations"] == 4
    assert set(manifest["failures"]) == {"no_candidate", "degenerate"}

    names = {r.metric for r in rows}
    assert "r2_mean.conditioned" in names and "is_correct.conditioned" in names
    assert any(n.startswith("is_satisfied_complexity.") for n in names)
    seeds = {r.seed for r in rows}
    assert seeds == {0, 1}

    # identical spec -> identical bytes
    spec2 = ExperimentSpec(**{**spec.to_dict(), "out_dir": str(tmp_path / "b")})
    run_experiment(spec2, quick_model, vocab, quick_corpus[:4], global_pool=quick_pool)
    assert (tmp_path / "a" / "results.csv").read_text() == \
        (tmp_path / "b" / "results.csv").read_text()


def test_run_experiment_with_baseline_and_explore(vocab, quick_model, quick_corpus,
                                                  quick_pool, tmp_path):
    from hintsr.nn import ConditionedRegressor, ModelConfig

    base_cfg = ModelConfig(**{**quick_model.cfg.to_dict(), "use_symbolic": False})
    baseline = ConditionedRegressor(base_cfg, vocab, seed=0)
    spec = ExperimentSpec(
        dataset="toy", out_dir=str(tmp_path), presets=("vanilla",),
        beam_sizes=(2,), seeds=(0,), max_equations=3, fit_restarts=2,
        explore=(2, 2),
    )
    rows, _ = run_experiment(spec, quick_model, vocab, quick_corpus[:3],
                             baseline=baseline, global_pool=quick_pool)
    names = {r.metric for r in rows}
    assert "r2_mean.baseline" in names
    assert "r2_mean.explore" in names and "r2_mean.single_beam" in names
    explore_rows = [r for r in rows if r.metric.endswith(".explore")]
    assert all(r.beam == 4 for r in explore_rows)  # budget = N * k
