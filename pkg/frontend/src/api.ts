/**
 * Typed client for the inference service.
 *
 * Response bodies are validated structurally before use; every number shown
 * in the workbench comes verbatim from these payloads. The client keeps at
 * most one inference request in flight: submitting again cancels the
 * previous one.
 */

import { HypothesisDraft, serializeDraft } from "./grammar.js";

export interface Candidate {
  tokens: string[];
  prefix: string;
  infix: string;
  log_prob: number;
  constants: Record<string, number>;
  fit_loss: number | null;
  satisfied: Record<string, boolean>;
  r2_selection: number | null;
  fit_failed: boolean;
}

export interface InferResponse {
  candidates: Candidate[];
  diagnostics: { dropped: number; decode_budget: number };
}

export interface CheckResponse {
  flags: Record<string, boolean>;
  all: boolean;
}

export interface FitResponse {
  constants: Record<string, number> | null;
  loss: number | null;
  failed: boolean;
  detail?: string;
}

export interface ModelInfo {
  config: Record<string, unknown>;
  vocabulary: string[];
  presets: Record<string, unknown>;
  baseline: boolean;
  max_beam: number;
  source: string;
}

export interface InferRequest {
  observations: number[][];
  hypotheses: string;
  constant_values: [number, number][];
  beam: number;
  selection: string;
  seed: number;
  restarts: number;
}

export interface InferOptions {
  beam?: number;
  selection?: string;
  seed?: number;
  restarts?: number;
}

export function buildInferRequest(
  draft: HypothesisDraft,
  rows: number[][],
  options: InferOptions = {},
): InferRequest {
  const { hypotheses, constant_values } = serializeDraft(draft);
  return {
    observations: rows,
    hypotheses,
    constant_values,
    beam: options.beam ?? 5,
    selection: options.selection ?? "r2",
    seed: options.seed ?? 0,
    restarts: options.restarts ?? 10,
  };
}

// ---------------------------------------------------------------------------
// Structural validation of responses
// ---------------------------------------------------------------------------

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function isRecordOf<T>(
  v: unknown, item: (x: unknown) => x is T,
): v is Record<string, T> {
  return isRecord(v) && Object.values(v).every(item);
}

const isNumber = (v: unknown): v is number => typeof v === "number";
const isBoolean = (v: unknown): v is boolean => typeof v === "boolean";
const isString = (v: unknown): v is string => typeof v === "string";
const isNullableNumber = (v: unknown): v is number | null =>
  v === null || typeof v === "number";

export function isCandidate(v: unknown): v is Candidate {
  return (
    isRecord(v) &&
    Array.isArray(v.tokens) && v.tokens.every(isString) &&
    isString(v.prefix) &&
    isString(v.infix) &&
    isNumber(v.log_prob) &&
    isRecordOf(v.constants, isNumber) &&
    isNullableNumber(v.fit_loss) &&
    isRecordOf(v.satisfied, isBoolean) &&
    isNullableNumber(v.r2_selection) &&
    isBoolean(v.fit_failed)
  );
}

export function isInferResponse(v: unknown): v is InferResponse {
  return (
    isRecord(v) &&
    Array.isArray(v.candidates) && v.candidates.every(isCandidate) &&
    isRecord(v.diagnostics) &&
    isNumber(v.diagnostics.dropped) &&
    isNumber(v.diagnostics.decode_budget)
  );
}

export function isCheckResponse(v: unknown): v is CheckResponse {
  return isRecord(v) && isRecordOf(v.flags, isBoolean) && isBoolean(v.all);
}

export function isFitResponse(v: unknown): v is FitResponse {
  return (
    isRecord(v) &&
    (v.constants === null || isRecordOf(v.constants, isNumber)) &&
    isNullableNumber(v.loss) &&
    isBoolean(v.failed)
  );
}

export function isModelInfo(v: unknown): v is ModelInfo {
  return (
    isRecord(v) &&
    isRecord(v.config) &&
    Array.isArray(v.vocabulary) && v.vocabulary.every(isString) &&
    isRecord(v.presets) &&
    isBoolean(v.baseline) &&
    isNumber(v.max_beam) &&
    isString(v.source)
  );
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

export class ServiceApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
    /** grammar token position when the service annotated one */
    public position: number | null = null,
  ) {
    super(detail);
    this.name = "ServiceApiError";
  }
}

export class RequestCancelled extends Error {
  constructor() {
    super("request cancelled");
    this.name = "RequestCancelled";
  }
}

export class MalformedResponse extends Error {
  constructor(route: string) {
    super(`response from ${route} does not match the service contract`);
    this.name = "MalformedResponse";
  }
}

async function errorFromResponse(res: Response): Promise<ServiceApiError> {
  let detail = `HTTP ${res.status}`;
  let position: number | null = null;
  try {
    const body: unknown = await res.json();
    if (isRecord(body)) {
      if (isString(body.detail)) detail = body.detail;
      if (isNumber(body.position)) position = body.position;
    }
  } catch {
    // non-JSON error body: keep the status line
  }
  return new ServiceApiError(res.status, detail, position);
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

export type FetchLike = (
  url: string, init?: RequestInit,
) => Promise<Response>;

export class ServiceClient {
  private inflight: AbortController | null = null;

  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async post<T>(
    route: string,
    body: unknown,
    guard: (v: unknown) => v is T,
    signal?: AbortSignal,
  ): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchImpl(this.baseUrl + route, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
        signal,
      });
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") {
        throw new RequestCancelled();
      }
      throw err;
    }
    if (!res.ok) throw await errorFromResponse(res);
    const parsed: unknown = await res.json();
    if (!guard(parsed)) throw new MalformedResponse(route);
    return parsed;
  }

  /** Submit an inference request, cancelling any one already in flight. */
  async infer(body: InferRequest): Promise<InferResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      return await this.post("/api/infer", body, isInferResponse, controller.signal);
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  cancelInference(): void {
    this.inflight?.abort();
    this.inflight = null;
  }

  get inferencePending(): boolean {
    return this.inflight !== null;
  }

  check(body: {
    expression: string;
    hypotheses: string;
    constant_values?: [number, number][];
    constants?: number[];
    seed?: number;
  }): Promise<CheckResponse> {
    return this.post("/api/check", body, isCheckResponse);
  }

  fit(body: {
    skeleton: string;
    observations: number[][];
    pinned?: [number, number][];
    restarts?: number;
    seed?: number;
  }): Promise<FitResponse> {
    return this.post("/api/fit", body, isFitResponse);
  }

  async modelInfo(): Promise<ModelInfo> {
    const res = await this.fetchImpl(this.baseUrl + "/api/model");
    if (!res.ok) throw await errorFromResponse(res);
    const parsed: unknown = await res.json();
    if (!isModelInfo(parsed)) throw new MalformedResponse("/api/model");
    return parsed;
  }

  async health(): Promise<{ status: string; model_hash?: string }> {
    const res = await this.fetchImpl(this.baseUrl + "/api/health");
    const parsed: unknown = await res.json().catch(() => ({}));
    if (isRecord(parsed) && isString(parsed.status)) {
      const out: { status: string; model_hash?: string } = { status: parsed.status };
      if (isString(parsed.model_hash)) out.model_hash = parsed.model_hash;
      return out;
    }
    return { status: `HTTP ${res.status}` };
  }
}
