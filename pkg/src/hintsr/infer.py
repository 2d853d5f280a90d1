"""Decoding and hypothesis testing against a trained model.

Beam search turns observations (plus optional conditioning) into candidate
skeletons, BFGS recovers their constants, and a selection rule picks the
winner.  ``explore_random_hypotheses`` wraps the loop that trades one large
beam for many small beams under randomly drawn positive conditionings.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import hints
from .datagen import Observations
from .expr import (
    Expression,
    ExprError,
    Placeholder,
    Pointer,
    Op,
    bind_constants,
    evaluate,
    iter_nodes,
    parse_prefix,
    to_infix,
    to_prefix,
)
from .nn.model import ConditionedRegressor, points_to_features
from .nn.tensor import Tensor, no_grad
from .train import conditioning_arrays
from .vocab import Vocabulary


class InferError(Exception):
    """Base class for inference failures."""


class NoValidCandidate(InferError):
    """Every completed beam failed to parse; nothing to return."""


class AllRestartsFailed(InferError):
    """Every BFGS restart produced a non-finite loss."""


SELECTION_MODES = ("fit-loss", "holdout-r2")


@dataclass
class BeamCandidate:
    """One decoded expression and everything later stages attach to it."""

    tokens: tuple[str, ...]
    log_prob: float
    constants: dict[int, float] = field(default_factory=dict)
    fit_loss: float | None = None
    satisfied: dict[str, bool] = field(default_factory=dict)
    r2_selection: float | None = None
    fit_failed: bool = False

    @property
    def expression(self) -> Expression:
        return parse_prefix(self.tokens)

    def bound_expression(self, pinned: dict[int, float] | None = None) -> Expression:
        values = [self.constants[i] for i in sorted(self.constants)]
        return bind_constants(self.expression, values, pinned)

    def to_dict(self) -> dict:
        e = self.expression
        return {
            "tokens": list(self.tokens),
            "infix": to_infix(e),
            "log_prob": self.log_prob,
            "constants": {str(k): v for k, v in self.constants.items()},
            "fit_loss": self.fit_loss,
            "satisfied": self.satisfied,
            "r2_selection": self.r2_selection,
            "fit_failed": self.fit_failed,
        }


@dataclass
class BeamSearchResult:
    """Completed parses plus accounting for the ones that fell out."""

    candidates: list[BeamCandidate]
    dropped: int
    steps: int

    def __bool__(self) -> bool:
        return bool(self.candidates)


def _legal_token_ids(vocab: Vocabulary, d: int, pinned: dict[int, float]) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens a decode may emit.

    Variables above the data arity and pointers without a pinned value are
    excluded: they decode to expressions the observations cannot ground.
    """
    legal = np.zeros(len(vocab), dtype=bool)
    for idx in vocab.expression_token_ids:
        token = vocab.token_of(idx)
        if token.startswith("x") and token[1:].isdigit() and int(token[1:]) > d:
            continue
        if token.startswith("pointer_") and int(token.split("_")[1]) not in pinned:
            continue
        legal[idx] = True
    legal[vocab.eos_id] = True
    return legal


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def encode_observations(
    model: ConditionedRegressor,
    vocab: Vocabulary,
    obs: Observations,
    conditioning: hints.PrivilegedInfo | None,
) -> Tensor:
    """Run both encoders once; the result is reused across all beam steps."""
    features = points_to_features(obs.points, obs.values, max_vars=model.cfg.max_vars)
    keep = np.ones((1, features.shape[0]), dtype=bool)
    with no_grad():
        z = model.encode_numeric(features[None, :, :], keep)
        if model.cfg.use_symbolic:
            pi = conditioning if conditioning is not None else hints.PrivilegedInfo()
            ids, positioned = conditioning_arrays(pi, vocab, model.cfg.max_cond_len)
            from .nn.model import BITS, float_to_multihot

            cond_ids = np.asarray([ids], dtype=np.int64)
            payload = np.zeros((1, len(ids), BITS), dtype=np.float32)
            for pos, value in positioned:
                payload[0, pos] = float_to_multihot(float(np.clip(value, -65504, 65504)))
            cond_keep = np.ones((1, len(ids)), dtype=bool)
            zs = model.encode_symbolic(cond_ids, payload, cond_keep)
        else:
            zs = None
        return model.fuse(z, zs)


def beam_search(
    model: ConditionedRegressor,
    obs: Observations,
    conditioning: hints.PrivilegedInfo | None,
    k: int,
    vocab: Vocabulary,
    max_len: int | None = None,
) -> BeamSearchResult:
    """Length-wise beam expansion keeping the k best cumulative log-probs.

    Finished sequences retire into the result set; expansion stops when no
    active beam can overtake the worst finished one (token log-probs are
    non-positive, so scores only fall).  Completed sequences that fail
    ``parse_prefix`` are dropped and counted, never silently discarded.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    t_max = max_len if max_len is not None else model.cfg.max_target_len
    pinned = dict(conditioning.constants) if conditioning and conditioning.constants else {}
    legal = _legal_token_ids(vocab, obs.d, pinned)
    illegal_penalty = np.where(legal, 0.0, -np.inf)

    memory = encode_observations(model, vocab, obs, conditioning)
    mem = memory.data

    active_ids = np.full((1, 1), vocab.sos_id, dtype=np.int64)
    active_scores = np.zeros(1, dtype=np.float64)
    finished: list[tuple[float, tuple[int, ...]]] = []
    steps = 0

    with no_grad():
        while active_ids.shape[0] and active_ids.shape[1] < t_max:
            tiled = Tensor(np.repeat(mem, active_ids.shape[0], axis=0))
            logits = model.decode(tiled, active_ids).data[:, -1, :].astype(np.float64)
            steps += 1
            logp = _log_softmax(logits) + illegal_penalty[None, :]
            total = active_scores[:, None] + logp  # (A, V)
            flat = total.ravel()
            n_take = min(2 * k, int(np.isfinite(flat).sum()))
            if n_take == 0:
                break
            order = np.argpartition(-flat, n_take - 1)[:n_take]
            order = order[np.argsort(-flat[order], kind="stable")]

            next_ids: list[np.ndarray] = []
            next_scores: list[float] = []
            for pos in order:
                beam_i, tok = divmod(int(pos), len(vocab))
                score = float(flat[pos])
                seq = np.concatenate([active_ids[beam_i], [tok]])
                if tok == vocab.eos_id:
                    entry = (score, tuple(int(t) for t in seq))
                    if len(finished) < k:
                        finished.append(entry)
                    else:
                        # a later finish can beat an early retiree
                        worst = min(range(k), key=lambda j: finished[j][0])
                        if score > finished[worst][0]:
                            finished[worst] = entry
                elif len(next_ids) < k:
                    next_ids.append(seq)
                    next_scores.append(score)
            if not next_ids:
                break
            active_ids = np.stack(next_ids)
            active_scores = np.asarray(next_scores, dtype=np.float64)
            if len(finished) >= k and active_scores.max() <= min(s for s, _ in finished):
                break

    finished.sort(key=lambda f: -f[0])
    candidates: list[BeamCandidate] = []
    seen: set[tuple[int, ...]] = set()
    dropped = 0
    for score, seq in finished:
        if seq in seen:
            continue
        seen.add(seq)
        body = [vocab.token_of(t) for t in seq[1:-1]]  # strip <sos>/<eos>
        try:
            parse_prefix(body)
        except ExprError:
            dropped += 1
            continue
        candidates.append(BeamCandidate(tokens=tuple(body), log_prob=score))
    return BeamSearchResult(candidates=candidates, dropped=dropped, steps=steps)


# ---------------------------------------------------------------------------
# Constant fitting
# ---------------------------------------------------------------------------


def _pin_pointers(e: Expression, pinned: dict[int, float]) -> Expression:
    """Replace pinned pointers with literals, unpinned ones with free slots."""
    if isinstance(e, Pointer):
        from .expr import Const

        return Const(pinned[e.index]) if e.index in pinned else Placeholder()
    if isinstance(e, Op):
        return Op(e.symbol, tuple(_pin_pointers(c, pinned) for c in e.children))
    return e


def fit_constants(
    skeleton: Expression,
    obs: Observations,
    pinned: dict[int, float] | None = None,
    restarts: int = 10,
    seed: int = 0,
    max_iter: int = 200,
) -> tuple[dict[int, float], float]:
    """Recover constant values by BFGS on the squared loss.

    Pinned pointer values are substituted before optimization and never
    touched; unpinned pointers are treated as free slots.  Gradients come
    from central finite differences with per-coordinate step
    1e-6 * max(1, |theta_i|).  The best of ``restarts`` runs from
    theta ~ U(-3, 3) wins.  A constant-free skeleton returns the direct
    residual sum.  Raises ``AllRestartsFailed`` when every run ends
    non-finite; callers flag the candidate rather than discard it.
    """
    expr = _pin_pointers(skeleton, pinned or {})
    # free parameters are the unbound slots; pinned values became literals
    c = sum(1 for n in iter_nodes(expr) if isinstance(n, Placeholder))
    points = obs.points.astype(np.float64)
    target = obs.values.astype(np.float64)

    def loss(theta: np.ndarray) -> float:
        pred = evaluate(expr, points, constants=[float(v) for v in theta])
        resid = pred - target
        if not np.all(np.isfinite(resid)):
            return float("inf")
        return float(np.dot(resid, resid))

    if c == 0:
        value = loss(np.empty(0))
        if not np.isfinite(value):
            raise AllRestartsFailed("constant-free skeleton has non-finite loss")
        return {}, value

    def grad(theta: np.ndarray) -> np.ndarray:
        g = np.zeros_like(theta)
        for i in range(theta.size):
            h = 1e-6 * max(1.0, abs(float(theta[i])))
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            g[i] = (loss(up) - loss(down)) / (2.0 * h)
        return g

    rng = np.random.default_rng(seed)
    inits = rng.uniform(-3.0, 3.0, size=(restarts, c))
    best_theta: np.ndarray | None = None
    best_loss = float("inf")
    for r in range(restarts):
        if not np.isfinite(loss(inits[r])):
            continue
        result = optimize.minimize(
            loss, inits[r], jac=grad, method="BFGS", options={"maxiter": max_iter}
        )
        value = float(result.fun)
        if np.isfinite(value) and value < best_loss:
            best_loss = value
            best_theta = np.asarray(result.x, dtype=np.float64)
    if best_theta is None:
        raise AllRestartsFailed("no BFGS restart reached a finite loss")
    return {i: float(v) for i, v in enumerate(best_theta)}, best_loss


# ---------------------------------------------------------------------------
# Candidate selection
# ---------------------------------------------------------------------------


def _fit_candidate(
    cand: BeamCandidate,
    obs: Observations,
    pinned: dict[int, float] | None,
    restarts: int,
    seed: int,
) -> BeamCandidate:
    try:
        constants, loss = fit_constants(
            cand.expression, obs, pinned=pinned, restarts=restarts, seed=seed
        )
        return replace(cand, constants=constants, fit_loss=loss, fit_failed=False)
    except AllRestartsFailed:
        return replace(cand, constants={}, fit_loss=float("inf"), fit_failed=True)


def split_observations(
    obs: Observations, fit_fraction: float, seed: int
) -> tuple[Observations, Observations]:
    """Deterministic fit/selection split (row permutation by seed)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(obs.n)
    n_fit = max(1, int(round(fit_fraction * obs.n)))
    n_fit = min(n_fit, obs.n - 1) if obs.n > 1 else obs.n
    fit_rows, sel_rows = order[:n_fit], order[n_fit:]
    return (
        Observations(points=obs.points[fit_rows], values=obs.values[fit_rows]),
        Observations(points=obs.points[sel_rows], values=obs.values[sel_rows]),
    )


def select_candidate(
    candidates: list[BeamCandidate],
    obs: Observations,
    mode: str = "fit-loss",
    seed: int = 0,
    pinned: dict[int, float] | None = None,
    restarts: int = 10,
) -> tuple[BeamCandidate, list[BeamCandidate]]:
    """Fit every candidate and pick the winner.

    fit-loss mode fits on all points and takes the lowest loss; holdout-r2
    mode fits on a 60% split and takes the best R^2 on the held-out 40%.
    Ties break on higher log-probability, and a finite-loss candidate always
    beats a non-finite one.  Returns (winner, all candidates ordered by the
    same rule).
    """
    if not candidates:
        raise NoValidCandidate("selection over an empty candidate list")
    if mode not in SELECTION_MODES:
        raise ValueError(f"unknown selection mode {mode!r}")

    if mode == "fit-loss":
        fitted = [_fit_candidate(c, obs, pinned, restarts, seed) for c in candidates]
        ordered = sorted(fitted, key=lambda c: (c.fit_loss, -c.log_prob))
        return ordered[0], ordered

    fit_obs, sel_obs = split_observations(obs, 0.6, seed)
    # r2 lives in the evaluation module; imported here to avoid a cycle
    from .evaluation import DegenerateVariance, r2

    fitted = []
    for cand in candidates:
        cand = _fit_candidate(cand, fit_obs, pinned, restarts, seed)
        score = float("-inf")
        if not cand.fit_failed and sel_obs.n:
            values = [cand.constants[i] for i in sorted(cand.constants)]
            pred = evaluate(
                cand.expression, sel_obs.points, constants=values, pointers=pinned
            )
            if np.all(np.isfinite(pred)):
                try:
                    score = r2(sel_obs.values, pred)
                except DegenerateVariance:
                    score = float("-inf")
        fitted.append(replace(cand, r2_selection=score))
    ordered = sorted(fitted, key=lambda c: (-c.r2_selection, -c.log_prob))
    return ordered[0], ordered


# ---------------------------------------------------------------------------
# Random-hypothesis exploration
# ---------------------------------------------------------------------------


@dataclass
class ExplorationRow:
    """One conditioning's slice of the exploration table."""

    conditioning: str
    n_candidates: int
    dropped: int
    best_r2: float | None


@dataclass
class ExplorationResult:
    best: BeamCandidate
    ordered: list[BeamCandidate]
    table: list[ExplorationRow]
    decode_budget: int  # N * k sequence slots
    dropped: int


def draw_positive_conditionings(
    global_pool: tuple[hints.Branch, ...],
    n: int,
    rng: np.random.Generator,
    max_branch_len: int = 3,
) -> list[hints.PrivilegedInfo]:
    """N distinct single-branch positive conditionings, uniform over short
    pool branches.  Deliberately sparse; smarter policies plug in here."""
    short = sorted({b for b in global_pool if len(b) <= max_branch_len})
    if not short:
        if n == 1:
            return [hints.PrivilegedInfo()]
        raise hints.EmptyGlobalPool("no branches of length <= 3 to sample from")
    if n > len(short):
        raise hints.EmptyGlobalPool(
            f"requested {n} distinct conditionings, pool has {len(short)}"
        )
    chosen = rng.choice(len(short), size=n, replace=False)
    return [hints.make_pi(positive=[short[int(i)]]) for i in chosen]


def explore_random_hypotheses(
    model: ConditionedRegressor,
    obs: Observations,
    n: int,
    k: int,
    global_pool: tuple[hints.Branch, ...],
    rng: np.random.Generator,
    vocab: Vocabulary,
    seed: int = 0,
    restarts: int = 10,
) -> ExplorationResult:
    """Trade one wide beam for ``n`` narrow beams under random positive
    conditionings; the union of candidates competes on held-out R^2."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    conditionings = draw_positive_conditionings(global_pool, n, rng)
    union: list[BeamCandidate] = []
    table: list[ExplorationRow] = []
    dropped = 0
    spans: list[tuple[int, int]] = []
    for pi in conditionings:
        result = beam_search(model, obs, pi, k, vocab)
        dropped += result.dropped
        spans.append((len(union), len(union) + len(result.candidates)))
        union.extend(result.candidates)
        table.append(
            ExplorationRow(
                conditioning=hints.hypotheses_string(pi),
                n_candidates=len(result.candidates),
                dropped=result.dropped,
                best_r2=None,
            )
        )
    if not union:
        raise NoValidCandidate("every conditioning produced only unparseable beams")
    # dedupe identical skeletons decoded under different conditionings
    unique: dict[tuple[str, ...], BeamCandidate] = {}
    for cand in union:
        prior = unique.get(cand.tokens)
        if prior is None or cand.log_prob > prior.log_prob:
            unique[cand.tokens] = cand
    best, ordered = select_candidate(
        list(unique.values()), obs, mode="holdout-r2", seed=seed, restarts=restarts
    )
    scored = {c.tokens: c.r2_selection for c in ordered}
    for row, (lo, hi) in zip(table, spans):
        r2s = [scored[c.tokens] for c in union[lo:hi] if scored.get(c.tokens) is not None]
        finite = [v for v in r2s if v is not None and np.isfinite(v)]
        row.best_r2 = max(finite) if finite else None
    return ExplorationResult(
        best=best,
        ordered=ordered,
        table=table,
        decode_budget=n * k,
        dropped=dropped,
    )


# ---------------------------------------------------------------------------
# One entry point shared by the CLI and the service
# ---------------------------------------------------------------------------


@dataclass
class InferenceOutcome:
    candidates: list[BeamCandidate]
    best: BeamCandidate
    dropped: int
    elapsed_s: float
    decode_budget: int
    exploration: list[ExplorationRow] | None = None


def run_inference(
    model: ConditionedRegressor,
    vocab: Vocabulary,
    obs: Observations,
    conditioning: hints.PrivilegedInfo | None = None,
    beam: int = 5,
    explore_n: int = 0,
    mode: str = "fit-loss",
    seed: int = 0,
    global_pool: tuple[hints.Branch, ...] | None = None,
    restarts: int = 10,
) -> InferenceOutcome:
    """Decode, fit, select, and attach per-channel satisfied flags."""
    t0 = time.monotonic()
    pinned = dict(conditioning.constants) if conditioning and conditioning.constants else {}
    if explore_n > 0:
        rng = np.random.default_rng(seed)
        explored = explore_random_hypotheses(
            model, obs, explore_n, beam, global_pool or (), rng, vocab,
            seed=seed, restarts=restarts,
        )
        best, ordered = explored.best, explored.ordered
        dropped, budget = explored.dropped, explored.decode_budget
        rows: list[ExplorationRow] | None = explored.table
    else:
        result = beam_search(model, obs, conditioning, beam, vocab)
        if not result:
            raise NoValidCandidate(
                f"all {result.dropped} completed beams failed to parse"
            )
        best, ordered = select_candidate(
            result.candidates, obs, mode=mode, seed=seed, pinned=pinned,
            restarts=restarts,
        )
        dropped, budget, rows = result.dropped, beam, None

    flagged = []
    check_pi = conditioning if conditioning is not None else hints.PrivilegedInfo()
    for cand in ordered:
        values = [cand.constants[i] for i in sorted(cand.constants)]
        flags = hints.satisfied_flags(
            cand.expression, check_pi, constants=values, pointers=pinned
        )
        flagged.append(replace(cand, satisfied=flags))
    return InferenceOutcome(
        candidates=flagged,
        best=flagged[0],
        dropped=dropped,
        elapsed_s=time.monotonic() - t0,
        decode_budget=budget,
        exploration=rows,
    )
