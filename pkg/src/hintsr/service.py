"""HTTP service for interactive inference, constant fitting, and hypothesis checks.

The service is stateless: every request carries its own data, hypotheses, and
seed, and identical requests produce identical responses. The loaded model is
an immutable snapshot shared across requests. Clients keep their own session
history.

Error contract: malformed grammar or data gives 400 with a position-annotated
message, decoding that yields no parseable candidate gives 422, and every
model-dependent route gives 503 until a checkpoint is loaded.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Annotated

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import hints
from .datagen import Observations, read_table
from .expr import ExprError, parse_prefix, to_infix
from .infer import (
    AllRestartsFailed,
    BeamCandidate,
    NoValidCandidate,
    fit_constants,
    run_inference,
)
from .nn import ConditionedRegressor
from .train import load_checkpoint
from .vocab import Vocabulary

DEFAULT_PORT = 8321
PORT_ENV_VAR = "HINTSR_PORT"


class ServiceError(Exception):
    """Request rejected before reaching the model."""


class ModelNotLoaded(Exception):
    """Model-dependent route hit while no checkpoint is loaded."""


@dataclass(frozen=True)
class ModelBundle:
    """Immutable model snapshot shared by all requests."""

    model: ConditionedRegressor
    vocab: Vocabulary
    model_hash: str
    source: str


def load_bundle(path: Path | str) -> ModelBundle:
    checkpoint = Path(path)
    digest = hashlib.sha256(checkpoint.read_bytes()).hexdigest()
    model = load_checkpoint(checkpoint)
    return ModelBundle(
        model=model, vocab=model.vocab, model_hash=digest, source=str(checkpoint)
    )


# ---------------------------------------------------------------------------
# Request and response bodies
# ---------------------------------------------------------------------------

ConstantPairs = list[tuple[int, float]]


class InferBody(BaseModel):
    """Inference request: observations inline or by dataset reference."""

    observations: list[list[float]] | None = None
    dataset: str | None = None
    hypotheses: str = ""
    constant_values: ConstantPairs = Field(default_factory=list)
    beam: Annotated[int, Field(ge=1)] = 5
    explore: Annotated[int, Field(ge=0)] = 0
    selection: str = "fit-loss"
    restarts: Annotated[int, Field(ge=1)] = 10
    seed: int = 0


class CheckBody(BaseModel):
    expression: str
    hypotheses: str = ""
    constant_values: ConstantPairs = Field(default_factory=list)
    constants: list[float] = Field(default_factory=list)
    seed: int = 0


class FitBody(BaseModel):
    skeleton: str
    observations: list[list[float]] | None = None
    dataset: str | None = None
    pinned: ConstantPairs = Field(default_factory=list)
    restarts: Annotated[int, Field(ge=1)] = 10
    seed: int = 0


def _rows_to_observations(rows: list[list[float]]) -> Observations:
    if not rows:
        raise ServiceError("observations are empty (at row 0)")
    width = len(rows[0])
    if width < 2:
        raise ServiceError("rows need at least one input column and a value (at row 0)")
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ServiceError(f"row has {len(row)} fields, expected {width} (at row {i})")
        if not all(np.isfinite(v) for v in row):
            raise ServiceError(f"non-finite value (at row {i})")
    data = np.asarray(rows, dtype=np.float32)
    return Observations(points=data[:, :-1], values=data[:, -1])


def _resolve_observations(
    rows: list[list[float]] | None, dataset: str | None
) -> Observations:
    if (rows is None) == (dataset is None):
        raise ServiceError(
            "exactly one of observations/dataset must be given (at field observations)"
        )
    if rows is not None:
        return _rows_to_observations(rows)
    path = Path(dataset)
    if not path.exists():
        raise ServiceError(f"dataset not found: {dataset} (at field dataset)")
    obs, _dropped = read_table(path)
    if obs.n == 0:
        raise ServiceError(f"dataset has no usable rows: {dataset} (at row 0)")
    return obs


def _parse_conditioning(text: str, payload: ConstantPairs) -> hints.PrivilegedInfo | None:
    if not text.strip():
        if payload:
            raise ServiceError("constant values without hypotheses (at token 0)")
        return None
    return hints.parse_hypotheses(text, payload)


def _wire_float(value: float | None) -> float | None:
    """Non-finite floats are not valid JSON for strict parsers; send null."""
    if value is None or math.isfinite(value):
        return value
    return None


def _candidate_json(cand: BeamCandidate) -> dict:
    out = cand.to_dict()
    out["prefix"] = " ".join(cand.tokens)
    out["fit_loss"] = _wire_float(out["fit_loss"])
    out["r2_selection"] = _wire_float(out["r2_selection"])
    try:
        out["infix"] = to_infix(cand.bound_expression())
    except ExprError:
        pass  # fit failed: keep the skeleton rendering from to_dict
    return out


# ---------------------------------------------------------------------------
# Application factory
# ---------------------------------------------------------------------------


def create_app(bundle: ModelBundle | None = None, max_beam: int = 64) -> FastAPI:
    """Build the API around one immutable model snapshot (or none, for 503s)."""
    app = FastAPI(title="hintsr service", docs_url=None, redoc_url=None)
    app.state.bundle = bundle
    app.state.max_beam = max_beam

    @app.exception_handler(hints.GrammarError)
    async def grammar_error(_req: Request, exc: hints.GrammarError):
        return JSONResponse(
            status_code=400, content={"detail": str(exc), "position": exc.position}
        )

    @app.exception_handler(ExprError)
    async def expr_error(_req: Request, exc: ExprError):
        text = str(exc)
        if "position" not in text:
            text += " (at token 0)"
        return JSONResponse(status_code=400, content={"detail": text})

    @app.exception_handler(ServiceError)
    async def service_error(_req: Request, exc: ServiceError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(hints.HintError)
    async def hint_error(_req: Request, exc: hints.HintError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(NoValidCandidate)
    async def no_candidate(_req: Request, exc: NoValidCandidate):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ModelNotLoaded)
    async def model_missing(_req: Request, exc: ModelNotLoaded):
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    def require_bundle() -> ModelBundle:
        if app.state.bundle is None:
            raise ModelNotLoaded("no model checkpoint loaded")
        return app.state.bundle

    @app.get("/api/health")
    async def health():
        if app.state.bundle is None:
            return JSONResponse(
                status_code=503, content={"status": "no model loaded"}
            )
        return {"status": "ok", "model_hash": app.state.bundle.model_hash}

    @app.get("/api/model")
    async def model_info():
        b = require_bundle()
        presets = {
            name: {
                "p_positive": m.p_positive,
                "p_negative": m.p_negative,
                "show_complexity": m.show_complexity,
                "show_symmetry": m.show_symmetry,
                "p_constants": m.p_constants,
            }
            for name, m in hints.PRESETS.items()
        }
        return {
            "config": b.model.cfg.to_dict(),
            "vocabulary": list(b.vocab.tokens),
            "presets": presets,
            "baseline": not b.model.cfg.use_symbolic,
            "max_beam": app.state.max_beam,
            "source": b.source,
        }

    @app.post("/api/infer")
    async def infer(body: InferBody):
        b = require_bundle()
        if body.beam > app.state.max_beam:
            raise ServiceError(
                f"beam {body.beam} exceeds service limit {app.state.max_beam} "
                "(at field beam)"
            )
        if body.explore:
            raise ServiceError(
                "hypothesis exploration needs a corpus-wide branch pool, which "
                "the service does not hold; use the command line (at field explore)"
            )
        obs = _resolve_observations(body.observations, body.dataset)
        if obs.d > b.model.cfg.max_vars:
            raise ServiceError(
                f"{obs.d} input columns exceed model limit {b.model.cfg.max_vars} "
                "(at field observations)"
            )
        conditioning = _parse_conditioning(body.hypotheses, body.constant_values)
        outcome = run_inference(
            b.model,
            b.vocab,
            obs,
            conditioning=conditioning,
            beam=body.beam,
            explore_n=body.explore,
            mode=body.selection,
            seed=body.seed,
            restarts=body.restarts,
        )
        # no timing in the body: identical request + seed must give an
        # identical response
        response = {
            "candidates": [_candidate_json(c) for c in outcome.candidates],
            "diagnostics": {
                "dropped": outcome.dropped,
                "decode_budget": outcome.decode_budget,
            },
        }
        if outcome.exploration is not None:
            response["exploration"] = [asdict(row) for row in outcome.exploration]
        return response

    @app.post("/api/check")
    async def check(body: CheckBody):
        expr = parse_prefix(body.expression.split())
        pi = _parse_conditioning(body.hypotheses, body.constant_values)
        if pi is None:
            pi = hints.PrivilegedInfo()
        flags = hints.satisfied_flags(
            expr,
            pi,
            constants=body.constants,
            pointers=dict(body.constant_values),
            probe_seed=body.seed,
        )
        return {"flags": flags, "all": all(flags.values()) if flags else True}

    @app.post("/api/fit")
    async def fit(body: FitBody):
        skeleton = parse_prefix(body.skeleton.split())
        obs = _resolve_observations(body.observations, body.dataset)
        try:
            constants, loss = fit_constants(
                skeleton, obs, dict(body.pinned), restarts=body.restarts, seed=body.seed
            )
        except AllRestartsFailed as exc:
            return {"constants": None, "loss": None, "failed": True, "detail": str(exc)}
        return {
            "constants": {str(i): v for i, v in sorted(constants.items())},
            "loss": loss,
            "failed": False,
        }

    return app


def resolve_port(flag_value: int | None) -> int:
    """CLI flag wins; otherwise the environment override; otherwise default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(PORT_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ServiceError(f"{PORT_ENV_VAR} must be an integer, got {env!r}")
    return DEFAULT_PORT


def run_server(
    model_path: Path | str,
    port: int | None = None,
    max_beam: int = 64,
    host: str = "127.0.0.1",
) -> None:
    import uvicorn

    bundle = load_bundle(model_path)
    app = create_app(bundle, max_beam=max_beam)
    uvicorn.run(app, host=host, port=resolve_port(port), log_level="warning")
