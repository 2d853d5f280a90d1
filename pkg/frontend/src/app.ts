/**
 * Hypothesis workbench page controller.
 *
 * Wires the draft editor, data loading, submission, candidate tables with
 * satisfaction badges, the overlay plot, and the session history diff. All
 * state is page-local; the service stays stateless.
 */

import {
  Candidate, InferResponse, RequestCancelled, ServiceApiError, ServiceClient,
  buildInferRequest,
} from "./api.js";
import { BADGE_GLYPH, badgeRow } from "./badges.js";
import { ParsedTable, TableError, parseTable } from "./data.js";
import { evaluatePrefix } from "./exprview.js";
import {
  CHANNELS, Channel, HypothesisDraft, MAX_COMPLEXITY, emptyDraft,
  paletteTokens, serializeDraft, subsetKey, symmetrySubsets, validateDraft,
} from "./grammar.js";
import { HistoryEntry, SessionHistory, whatIfDiff } from "./history.js";
import { overlaySvg } from "./plot.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const state = {
  draft: emptyDraft(1) as HypothesisDraft,
  data: null as ParsedTable | null,
  stagedChip: [] as string[],
  lastResponse: null as InferResponse | null,
  lastEntry: null as HistoryEntry | null,
  busy: false,
};

const history = new SessionHistory();
let client = new ServiceClient("");

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

function renderPalette(): void {
  const box = el<HTMLDivElement>("palette");
  box.textContent = "";
  for (const token of paletteTokens(state.draft.variables)) {
    const b = document.createElement("button");
    b.type = "button";
    b.className = "palette-token";
    b.textContent = token;
    b.addEventListener("click", () => {
      state.stagedChip.push(token);
      renderStagedChip();
    });
    box.appendChild(b);
  }
}

function renderStagedChip(): void {
  const box = el<HTMLSpanElement>("staged-chip");
  box.textContent = state.stagedChip.length
    ? state.stagedChip.join(" ")
    : "(empty)";
}

function chipList(channel: "positive" | "negative"): void {
  const box = el<HTMLDivElement>(`chips-${channel}`);
  box.textContent = "";
  state.draft[channel].forEach((chip, idx) => {
    const span = document.createElement("span");
    span.className = "chip";
    span.textContent = chip.join(" ");
    const x = document.createElement("button");
    x.type = "button";
    x.textContent = "×";
    x.title = "remove";
    x.addEventListener("click", () => {
      state.draft[channel].splice(idx, 1);
      refresh();
    });
    span.appendChild(x);
    box.appendChild(span);
  });
}

function renderSymmetryMatrix(): void {
  const box = el<HTMLDivElement>("symmetry-matrix");
  box.textContent = "";
  const subsets = symmetrySubsets(state.draft.variables);
  if (subsets.length === 0) {
    box.textContent = "needs at least three variables";
    return;
  }
  for (const subset of subsets) {
    const key = subsetKey(subset);
    const flag = state.draft.symmetry[key];
    const b = document.createElement("button");
    b.type = "button";
    b.className = flag === undefined ? "sym-unset" : flag ? "sym-true" : "sym-false";
    b.textContent =
      `{${subset.map((i) => `x${i}`).join(",")}}: ` +
      (flag === undefined ? "unset" : flag ? "symmetric" : "asymmetric");
    b.addEventListener("click", () => {
      // cycle unset -> symmetric -> asymmetric -> unset
      if (flag === undefined) state.draft.symmetry[key] = true;
      else if (flag) state.draft.symmetry[key] = false;
      else delete state.draft.symmetry[key];
      refresh();
    });
    box.appendChild(b);
  }
}

function renderConstants(): void {
  const box = el<HTMLDivElement>("constants-list");
  box.textContent = "";
  state.draft.constants.forEach((entry, idx) => {
    const row = document.createElement("div");
    row.className = "const-entry";
    const label = document.createElement("span");
    label.textContent = `${entry.value}`;
    const insert = document.createElement("label");
    const toggle = document.createElement("input");
    toggle.type = "checkbox";
    toggle.checked = entry.insert;
    toggle.addEventListener("change", () => {
      entry.insert = toggle.checked;
      refresh();
    });
    insert.append(toggle, " insert");
    const x = document.createElement("button");
    x.type = "button";
    x.textContent = "×";
    x.addEventListener("click", () => {
      state.draft.constants.splice(idx, 1);
      refresh();
    });
    row.append(label, insert, x);
    box.appendChild(row);
  });
}

function renderPreview(): void {
  const problems = validateDraft(state.draft);
  const problemBox = el<HTMLDivElement>("draft-problems");
  problemBox.textContent = "";
  for (const p of problems) {
    const line = document.createElement("div");
    line.className = "problem";
    line.textContent =
      `${p.channel}` +
      (p.chip !== undefined ? ` chip ${p.chip + 1}` : "") +
      ` token ${p.position}: ${p.message}`;
    problemBox.appendChild(line);
  }
  const preview = el<HTMLElement>("preview-string");
  if (problems.length) {
    preview.textContent = "(draft has problems)";
  } else {
    const { hypotheses } = serializeDraft(state.draft);
    preview.textContent = hypotheses === "" ? "(vanilla request)" : hypotheses;
  }
  el<HTMLButtonElement>("submit-btn").disabled =
    problems.length > 0 || state.data === null || state.busy;
}

function renderCandidates(): void {
  const box = el<HTMLDivElement>("candidates");
  box.textContent = "";
  const response = state.lastResponse;
  if (!response) return;

  const table = document.createElement("table");
  const head = document.createElement("tr");
  for (const h of ["#", "expression", "R²", "fit loss", "log prob",
                   ...CHANNELS, "plot"]) {
    const th = document.createElement("th");
    th.textContent = h;
    head.appendChild(th);
  }
  table.appendChild(head);

  response.candidates.forEach((cand, i) => {
    const tr = document.createElement("tr");
    const cells = [
      String(i + 1),
      cand.infix,
      cand.r2_selection === null ? "–" : cand.r2_selection.toFixed(4),
      cand.fit_loss === null ? "–" : cand.fit_loss.toExponential(2),
      cand.log_prob.toFixed(3),
    ];
    for (const text of cells) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    const badges = badgeRow(cand);
    for (const channel of CHANNELS) {
      const td = document.createElement("td");
      td.className = `badge badge-${badges[channel]}`;
      td.title = `${channel}: ${badges[channel]}`;
      td.textContent = BADGE_GLYPH[badges[channel]];
      tr.appendChild(td);
    }
    const td = document.createElement("td");
    const b = document.createElement("button");
    b.type = "button";
    b.textContent = "plot";
    b.addEventListener("click", () => renderOverlay(cand));
    td.appendChild(b);
    tr.appendChild(td);
    table.appendChild(tr);
  });
  box.appendChild(table);

  const diag = document.createElement("p");
  diag.className = "diagnostics";
  diag.textContent =
    `decode budget ${response.diagnostics.decode_budget}, ` +
    `dropped ${response.diagnostics.dropped}`;
  box.appendChild(diag);
}

function renderOverlay(cand: Candidate): void {
  const data = state.data;
  const entry = state.lastEntry;
  if (!data || !entry) return;
  const axis = Number(el<HTMLSelectElement>("overlay-var").value);
  const pinned = Object.fromEntries(entry.request.constant_values);
  const observed = data.rows.map((row) => ({
    x: row[axis - 1]!,
    y: row[row.length - 1]!,
  }));
  const predicted = data.rows.map((row) => {
    let y: number;
    try {
      y = evaluatePrefix(cand.tokens, cand.constants, pinned, row.slice(0, -1));
    } catch {
      y = NaN;
    }
    return { x: row[axis - 1]!, y };
  });
  el<HTMLDivElement>("overlay").innerHTML = overlaySvg({
    data: observed,
    prediction: predicted,
    xLabel: `x${axis} — ${cand.infix}`,
  });
}

function renderHistory(): void {
  const box = el<HTMLUListElement>("history-list");
  box.textContent = "";
  for (const entry of history.list()) {
    const li = document.createElement("li");
    const top = entry.response.candidates[0];
    li.textContent =
      `#${entry.id} ` +
      (entry.request.hypotheses === "" ? "(vanilla)" : entry.request.hypotheses) +
      (top && top.r2_selection !== null
        ? ` → top R² ${top.r2_selection.toFixed(4)}`
        : "");
    box.appendChild(li);
  }
  for (const id of ["diff-a", "diff-b"]) {
    const select = el<HTMLSelectElement>(id);
    const keep = select.value;
    select.textContent = "";
    for (const entry of history.list()) {
      const opt = document.createElement("option");
      opt.value = String(entry.id);
      opt.textContent = `#${entry.id}`;
      select.appendChild(opt);
    }
    if (keep) select.value = keep;
  }
}

function renderDiff(): void {
  const a = history.get(Number(el<HTMLSelectElement>("diff-a").value));
  const b = history.get(Number(el<HTMLSelectElement>("diff-b").value));
  const box = el<HTMLDivElement>("diff-view");
  box.textContent = "";
  if (!a || !b) return;
  const diff = whatIfDiff(a, b);

  const headline = document.createElement("p");
  headline.textContent = diff.identical
    ? "identical submissions: zero delta"
    : diff.changed.length
      ? "changed channels: " + diff.changed.map((c) => c.channel).join(", ")
      : "same hypotheses, different outcome";
  box.appendChild(headline);

  for (const change of diff.changed) {
    const line = document.createElement("p");
    line.className = "diff-change";
    line.textContent =
      `${change.channel}: "${change.before}" → "${change.after}"`;
    box.appendChild(line);
  }

  if (diff.previousTop) {
    const note = document.createElement("p");
    note.textContent = diff.previousTop.present
      ? diff.previousTop.badgeChanged
        ? `previous top candidate kept, badges changed: ${diff.previousTop.key}`
        : `previous top candidate kept: ${diff.previousTop.key}`
      : `previous top candidate gone: ${diff.previousTop.key}`;
    box.appendChild(note);
  }

  const table = document.createElement("table");
  const head = document.createElement("tr");
  for (const h of ["candidate", "R² before", "R² after", "ΔR²"]) {
    const th = document.createElement("th");
    th.textContent = h;
    head.appendChild(th);
  }
  table.appendChild(head);
  const fmt = (c: Candidate | null) =>
    c === null ? "absent" : c.r2_selection === null ? "–"
      : c.r2_selection.toFixed(4);
  for (const row of diff.rows) {
    const tr = document.createElement("tr");
    for (const text of [
      row.key,
      fmt(row.before),
      fmt(row.after),
      row.r2Delta === null ? "–" : row.r2Delta.toFixed(4),
    ]) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    table.appendChild(tr);
  }
  box.appendChild(table);
}

function renderError(err: unknown): void {
  const box = el<HTMLDivElement>("request-error");
  box.textContent = "";
  if (err === null) return;
  const msg = document.createElement("p");
  if (err instanceof ServiceApiError) {
    msg.textContent = `service rejected the request: ${err.detail}`;
    box.appendChild(msg);
    if (err.position !== null) {
      // highlight the offending token in the serialized string
      const tokens = serializeDraft(state.draft).hypotheses.split(" ");
      const line = document.createElement("p");
      line.className = "grammar-highlight";
      tokens.forEach((token, i) => {
        const span = document.createElement(i === err.position ? "mark" : "span");
        span.textContent = token + " ";
        line.appendChild(span);
      });
      box.appendChild(line);
    }
  } else if (err instanceof RequestCancelled) {
    msg.textContent = "request cancelled";
    box.appendChild(msg);
  } else {
    msg.textContent = String(err);
    box.appendChild(msg);
  }
}

function refresh(): void {
  renderPalette();
  renderStagedChip();
  chipList("positive");
  chipList("negative");
  renderSymmetryMatrix();
  renderConstants();
  renderPreview();
  renderCandidates();
  renderHistory();
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

function loadData(text: string): void {
  const status = el<HTMLParagraphElement>("data-status");
  try {
    const table = parseTable(text);
    state.data = table;
    if (table.variables !== state.draft.variables) {
      // variable count changed: symmetry pairs and chips may be stale
      state.draft = emptyDraft(table.variables);
      state.stagedChip = [];
    }
    status.textContent =
      `${table.rows.length} rows, ${table.variables} variable(s)` +
      (table.dropped ? `, ${table.dropped} dropped` : "");
    const axis = el<HTMLSelectElement>("overlay-var");
    axis.textContent = "";
    for (let i = 1; i <= table.variables; i++) {
      const opt = document.createElement("option");
      opt.value = String(i);
      opt.textContent = `x${i}`;
      axis.appendChild(opt);
    }
  } catch (err) {
    state.data = null;
    status.textContent = err instanceof TableError ? err.message : String(err);
  }
  refresh();
}

async function submit(): Promise<void> {
  if (!state.data || state.busy) return;
  const request = buildInferRequest(state.draft, state.data.rows, {
    beam: Number(el<HTMLInputElement>("beam-input").value) || 5,
    selection: el<HTMLSelectElement>("selection-mode").value,
    seed: Number(el<HTMLInputElement>("seed-input").value) || 0,
  });
  state.busy = true;
  renderError(null);
  el<HTMLButtonElement>("submit-btn").disabled = true;
  el<HTMLButtonElement>("cancel-btn").disabled = false;
  try {
    const response = await client.infer(request);
    state.lastResponse = response;
    state.lastEntry = history.record(state.draft, request, response);
  } catch (err) {
    renderError(err);
  } finally {
    state.busy = false;
    el<HTMLButtonElement>("cancel-btn").disabled = true;
    refresh();
  }
}

function wire(): void {
  client = new ServiceClient(el<HTMLInputElement>("service-url").value);
  el<HTMLInputElement>("service-url").addEventListener("change", (e) => {
    client = new ServiceClient((e.target as HTMLInputElement).value);
  });
  el<HTMLButtonElement>("health-btn").addEventListener("click", async () => {
    const badge = el<HTMLSpanElement>("health-status");
    try {
      const h = await client.health();
      badge.textContent = h.model_hash
        ? `${h.status} (model ${h.model_hash.slice(0, 8)})`
        : h.status;
    } catch (err) {
      badge.textContent = String(err);
    }
  });

  el<HTMLButtonElement>("data-load").addEventListener("click", () => {
    loadData(el<HTMLTextAreaElement>("data-text").value);
  });
  el<HTMLInputElement>("data-file").addEventListener("change", async (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) loadData(await file.text());
  });

  el<HTMLButtonElement>("chip-pop").addEventListener("click", () => {
    state.stagedChip.pop();
    renderStagedChip();
  });
  el<HTMLButtonElement>("chip-clear").addEventListener("click", () => {
    state.stagedChip = [];
    renderStagedChip();
  });
  el<HTMLButtonElement>("add-positive").addEventListener("click", () => {
    if (state.stagedChip.length === 0) return;
    state.draft.positive.push([...state.stagedChip]);
    state.stagedChip = [];
    refresh();
  });
  el<HTMLButtonElement>("add-negative").addEventListener("click", () => {
    if (state.stagedChip.length === 0) return;
    state.draft.negative.push([...state.stagedChip]);
    state.stagedChip = [];
    refresh();
  });

  el<HTMLInputElement>("complexity-input").addEventListener("change", (e) => {
    const raw = (e.target as HTMLInputElement).value;
    state.draft.complexity = raw === "" ? null : Number(raw);
    refresh();
  });
  el<HTMLInputElement>("complexity-input").max = String(MAX_COMPLEXITY);

  el<HTMLButtonElement>("const-add").addEventListener("click", () => {
    const input = el<HTMLInputElement>("const-value");
    const value = Number(input.value);
    if (input.value === "" || Number.isNaN(value)) return;
    state.draft.constants.push({ value, insert: true });
    input.value = "";
    refresh();
  });

  for (const channel of CHANNELS) {
    el<HTMLInputElement>(`switch-${channel}`).addEventListener("change", (e) => {
      state.draft.enabled[channel as Channel] =
        (e.target as HTMLInputElement).checked;
      refresh();
    });
  }

  el<HTMLButtonElement>("submit-btn").addEventListener("click", () => {
    void submit();
  });
  el<HTMLButtonElement>("cancel-btn").addEventListener("click", () => {
    client.cancelInference();
  });
  el<HTMLButtonElement>("diff-btn").addEventListener("click", renderDiff);

  refresh();
}

document.addEventListener("DOMContentLoaded", wire);
