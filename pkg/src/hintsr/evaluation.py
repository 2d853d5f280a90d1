"""Metrics and the reproducible experiment harness.

Per-equation metrics: coefficient of determination, the out-of-distribution
symbolic-match predicate, and per-channel satisfaction rates across a beam.
``run_experiment`` sweeps presets, noise levels, point counts, and beam
sizes over a test corpus for a conditioned model and an optional baseline,
writing a long-format CSV (one metric per row) and a manifest with a config
hash.  Within the fixed header, the model kind and search strategy are
encoded in the metric name ("is_correct.conditioned",
"r2_mean.baseline", "r2_selected.explore").
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import hints
from .datagen import Observations, TrainingSample
from .expr import Expression, evaluate, variables
from .infer import (
    BeamCandidate,
    NoValidCandidate,
    explore_random_hypotheses,
    run_inference,
)
from .vocab import Vocabulary


class EvalError(Exception):
    """Base class for metric and harness failures."""


class DegenerateVariance(EvalError):
    """R^2 is undefined when the true values have no variance."""


class InsufficientValidPoints(EvalError):
    """The truth expression rejected too much of the OOD support."""


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------


def inject_noise(values: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """y_i + rho * eps_i with eps_i ~ N(0, std=|y_i|); rho=0 is bit-exact."""
    if rho < 0:
        raise ValueError("noise level must be >= 0")
    values = np.asarray(values)
    if rho == 0.0:
        return values.copy()
    eps = rng.normal(0.0, np.abs(values.astype(np.float64)))
    return (values.astype(np.float64) + rho * eps).astype(values.dtype)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


def r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """1 - SS_res / SS_tot, computed two-pass in float64."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.size != p.size:
        raise ValueError("prediction and truth lengths differ")
    if y.size < 2:
        raise DegenerateVariance("need at least 2 values")
    centered = y - y.mean()
    ss_tot = float(np.dot(centered, centered))
    if ss_tot == 0.0:
        raise DegenerateVariance("true values are all equal")
    resid = y - p
    return 1.0 - float(np.dot(resid, resid)) / ss_tot


def r2_mean(scores: Sequence[float]) -> float:
    """Dataset-level average; non-finite per-equation scores clip to 0."""
    vals = [s if np.isfinite(s) else 0.0 for s in scores]
    return float(np.mean(vals)) if vals else float("nan")


def r2_above(scores: Sequence[float], cut: float = 0.99) -> float:
    """Fraction of equations whose score is above the cut."""
    if not scores:
        return float("nan")
    return float(np.mean([1.0 if np.isfinite(s) and s > cut else 0.0 for s in scores]))


def is_correct(
    pred: Expression,
    truth: Expression,
    rng: np.random.Generator,
    *,
    pred_constants: Sequence[float] = (),
    pred_pointers: Mapping[int, float] | None = None,
    truth_constants: Sequence[float] = (),
    truth_pointers: Mapping[int, float] | None = None,
    n_points: int = 500,
    low: float = -25.0,
    high: float = 25.0,
    rtol: float = 1e-5,
    atol: float = 1e-8,
    threshold: float = 0.99,
    resample_factor: int = 20,
) -> int:
    """Numeric-equivalence verdict on an out-of-distribution support.

    Draws ``n_points`` per-variable uniform points on [low, high]; points the
    truth cannot evaluate are discarded and resampled, up to
    ``resample_factor * n_points`` total draws.  Per point the closeness
    predicate is |pred - truth| <= atol + rtol * |truth|; the verdict is 1
    iff the predicate holds on at least ``threshold`` of the points.
    """
    d = max(variables(pred) | variables(truth) | {1})
    kept_x: list[np.ndarray] = []
    kept_y: list[np.ndarray] = []
    total = 0
    budget = resample_factor * n_points
    need = n_points
    while need > 0:
        batch = min(max(need * 2, 64), budget - total)
        if batch <= 0:
            raise InsufficientValidPoints(
                f"only {n_points - need}/{n_points} valid points in {total} draws"
            )
        x = rng.uniform(low, high, size=(batch, d))
        y = evaluate(truth, x, constants=truth_constants, pointers=truth_pointers)
        ok = np.isfinite(y)
        total += batch
        if ok.any():
            take = min(int(ok.sum()), need)
            rows = np.flatnonzero(ok)[:take]
            kept_x.append(x[rows])
            kept_y.append(y[rows])
            need -= take
    x = np.concatenate(kept_x)
    y = np.concatenate(kept_y)
    p = evaluate(pred, x, constants=pred_constants, pointers=pred_pointers)
    with np.errstate(invalid="ignore"):
        close = np.abs(p - y) <= atol + rtol * np.abs(y)
    close = np.where(np.isfinite(p), close, False)
    return int(np.mean(close) >= threshold)


def is_satisfied_rate(
    candidates: Sequence[BeamCandidate],
    pi: hints.PrivilegedInfo,
    channel: str,
    probe_seed: int = 0,
) -> float:
    """Fraction of the beam honoring one conditioning channel.

    Dataset-level numbers are the mean of this over equations.
    """
    if not candidates:
        raise ValueError("beam must be non-empty")
    hits = 0
    for cand in candidates:
        values = [cand.constants[i] for i in sorted(cand.constants)]
        pinned = dict(pi.constants) if pi.constants else None
        hits += hints.satisfies(
            cand.expression, pi, channel,
            constants=values, pointers=pinned, probe_seed=probe_seed,
        )
    return hits / len(candidates)


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------

RESULT_HEADER = ("dataset", "preset", "beam", "rho", "n_points", "metric", "value", "seed")


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep definition; every combination of the lists below runs."""

    dataset: str
    out_dir: str
    presets: tuple[str, ...] = ("vanilla",)
    beam_sizes: tuple[int, ...] = (5,)
    noise_levels: tuple[float, ...] = (0.0,)
    point_counts: tuple[int, ...] = (0,)  # 0 = use every available point
    seeds: tuple[int, ...] = (0,)
    selection: str = "fit-loss"
    explore: tuple[int, int] | None = None  # (N, k): exploration vs one beam of N*k
    custom_masks: tuple[tuple[float, float], ...] | None = None  # (p_positive, p_constants) grid
    max_equations: int | None = None
    fit_restarts: int = 4

    def __post_init__(self) -> None:
        if any(r < 0 for r in self.noise_levels):
            raise ValueError("noise levels must be >= 0")
        if any(b < 1 for b in self.beam_sizes):
            raise ValueError("beam sizes must be >= 1")
        for name in self.presets:
            hints.preset(name.lower())

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Row:
    dataset: str
    preset: str
    beam: int
    rho: float
    n_points: int
    metric: str
    value: float
    seed: int

    def as_csv(self) -> list[str]:
        return [
            self.dataset, self.preset, str(self.beam), f"{self.rho:.10g}",
            str(self.n_points), self.metric, f"{self.value:.10g}", str(self.seed),
        ]


def _subsample(obs: Observations, n: int, rng: np.random.Generator) -> Observations:
    if n <= 0 or n >= obs.n:
        return obs
    rows = np.sort(rng.choice(obs.n, size=n, replace=False))
    return Observations(points=obs.points[rows], values=obs.values[rows])


def _equation_rng(seed: int, tag: str, index: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{tag}:{index}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _selected_metrics(
    best: BeamCandidate,
    sample: TrainingSample,
    obs: Observations,
    pinned: dict[int, float],
    rng: np.random.Generator,
) -> dict[str, float]:
    values = [best.constants[i] for i in sorted(best.constants)]
    pred_y = evaluate(best.expression, obs.points, constants=values, pointers=pinned)
    try:
        score = r2(obs.values, pred_y) if np.all(np.isfinite(pred_y)) else float("-inf")
    except DegenerateVariance:
        score = float("nan")
    try:
        correct = is_correct(
            best.expression,
            sample.skeleton,
            rng,
            pred_constants=values,
            pred_pointers=pinned,
            truth_constants=sample.constants,
        )
    except InsufficientValidPoints:
        correct = 0
    return {"r2_selected": score, "is_correct": float(correct)}


def run_experiment(
    spec: ExperimentSpec,
    model,
    vocab: Vocabulary,
    samples: Sequence[TrainingSample],
    baseline=None,
    global_pool: Sequence[hints.Branch] | None = None,
    progress=None,
) -> tuple[list[Row], dict]:
    """Execute the sweep and write results.csv + manifest.json.

    Equation-level failures (no valid candidate, degenerate metrics) are
    recorded in the failure counters of the manifest and never abort the
    sweep.  Identical spec and seeds give identical tables.
    """
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    eqs = list(samples[: spec.max_equations] if spec.max_equations else samples)
    models = [("conditioned", model)] + ([("baseline", baseline)] if baseline else [])
    rows: list[Row] = []
    failures = {"no_candidate": 0, "degenerate": 0}
    t0 = time.monotonic()

    mask_grid: list[tuple[str, hints.MaskDraw]] = [
        (name.lower(), hints.preset(name.lower())) for name in spec.presets
    ]
    if spec.custom_masks:
        mask_grid += [
            (f"pp{pp:g}_pc{pc:g}", hints.MaskDraw(p_positive=pp, p_constants=pc))
            for pp, pc in spec.custom_masks
        ]

    for seed in spec.seeds:
        for preset_name, mask in mask_grid:
            for rho in spec.noise_levels:
                for n_points in spec.point_counts:
                    for beam in spec.beam_sizes:
                        tag = f"{preset_name}:{rho:g}:{n_points}:{beam}"
                        _sweep_cell(
                            spec, models, vocab, eqs, global_pool, rows, failures,
                            seed, preset_name, mask, rho, n_points, beam, tag,
                        )
                        if progress:
                            progress(f"seed {seed} {tag}: {len(rows)} rows")
    if spec.explore:
        _explore_cells(spec, model, vocab, eqs, global_pool, rows, failures, progress)

    manifest = {
        "spec": spec.to_dict(),
        "config_hash": spec.config_hash,
        "n_equations": len(eqs),
        "failures": failures,
        "elapsed_s": round(time.monotonic() - t0, 3),
        "versions": _versions(),
        "header": list(RESULT_HEADER),
    }
    with (out_dir / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_HEADER)
        writer.writerows(r.as_csv() for r in rows)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return rows, manifest


def _versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {"hintsr": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _sweep_cell(
    spec, models, vocab, eqs, global_pool, rows, failures,
    seed, preset_name, mask, rho, n_points, beam, tag,
) -> None:
    per_model: dict[str, dict[str, list[float]]] = {kind: {} for kind, _ in models}
    channel_rates: dict[str, dict[str, list[float]]] = {kind: {} for kind, _ in models}
    for idx, sample in enumerate(eqs):
        rng = _equation_rng(seed, tag, idx)
        try:
            pi, _, _ = hints.build_pi(
                sample.skeleton, sample.constants, mask, rng,
                global_pool=global_pool, intervals=sample.intervals,
            )
        except hints.HintError:
            failures["degenerate"] += 1
            continue
        pinned = dict(pi.constants) if pi.constants else {}
        noisy = inject_noise(sample.observations.values, rho, rng)
        obs = _subsample(
            Observations(points=sample.observations.points, values=noisy),
            n_points, rng,
        )
        for kind, mdl in models:
            try:
                outcome = run_inference(
                    mdl, vocab, obs, conditioning=pi, beam=beam,
                    mode=spec.selection, seed=seed, restarts=spec.fit_restarts,
                )
            except NoValidCandidate:
                failures["no_candidate"] += 1
                continue
            metrics = _selected_metrics(outcome.best, sample, obs, pinned, rng)
            for name, value in metrics.items():
                per_model[kind].setdefault(name, []).append(value)
            for channel, on in pi.mask.items():
                if not on:
                    continue
                rate = is_satisfied_rate(outcome.candidates, pi, channel)
                channel_rates[kind].setdefault(channel, []).append(rate)
    for kind, _ in models:
        collected = per_model[kind]
        summary = {
            f"r2_mean.{kind}": r2_mean(collected.get("r2_selected", [])),
            f"r2_above99.{kind}": r2_above(collected.get("r2_selected", [])),
            f"is_correct.{kind}": (
                float(np.mean(collected["is_correct"]))
                if collected.get("is_correct") else float("nan")
            ),
        }
        for channel, rates in channel_rates[kind].items():
            summary[f"is_satisfied_{channel}.{kind}"] = float(np.mean(rates))
        for metric, value in summary.items():
            rows.append(Row(spec.dataset, preset_name, beam, rho, n_points, metric, value, seed))


def _explore_cells(spec, model, vocab, eqs, global_pool, rows, failures, progress) -> None:
    """Exploration (N narrow beams) vs a single wide beam of the same budget."""
    n, k = spec.explore
    budget = n * k
    pool = tuple(global_pool or ())
    for seed in spec.seeds:
        explore_scores: dict[str, list[float]] = {}
        single_scores: dict[str, list[float]] = {}
        for idx, sample in enumerate(eqs):
            rng = _equation_rng(seed, f"explore:{n}x{k}", idx)
            obs = sample.observations
            try:
                explored = explore_random_hypotheses(
                    model, obs, n, k, pool, rng, vocab,
                    seed=seed, restarts=spec.fit_restarts,
                )
                best_e = explored.best
            except (NoValidCandidate, hints.EmptyGlobalPool):
                failures["no_candidate"] += 1
                continue
            try:
                outcome = run_inference(
                    model, vocab, obs, conditioning=None, beam=budget,
                    mode="holdout-r2", seed=seed, restarts=spec.fit_restarts,
                )
                best_s = outcome.best
            except NoValidCandidate:
                failures["no_candidate"] += 1
                continue
            for scores, best in ((explore_scores, best_e), (single_scores, best_s)):
                metrics = _selected_metrics(best, sample, obs, {}, rng)
                for name, value in metrics.items():
                    scores.setdefault(name, []).append(value)
        for strategy, scores in (("explore", explore_scores), ("single_beam", single_scores)):
            summary = {
                f"r2_mean.{strategy}": r2_mean(scores.get("r2_selected", [])),
                f"r2_above99.{strategy}": r2_above(scores.get("r2_selected", [])),
                f"is_correct.{strategy}": (
                    float(np.mean(scores["is_correct"]))
                    if scores.get("is_correct") else float("nan")
                ),
            }
            for metric, value in summary.items():
                rows.append(
                    Row(spec.dataset, "explore", budget, 0.0, 0, metric, value, seed)
                )
        if progress:
            progress(f"explore seed {seed}: {n}x{k} vs {budget}")
