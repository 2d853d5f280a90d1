/**
 * Client-side session history and the what-if diff between two submissions.
 *
 * History lives only in the page; the service is stateless. A diff pairs
 * candidates by their prefix rendering, reports R-squared deltas for pairs
 * present on both sides, and highlights which hypothesis channels changed.
 */

import { Candidate, InferRequest, InferResponse } from "./api.js";
import {
  CHANNELS, Channel, HypothesisDraft, channelFragments,
} from "./grammar.js";

export interface HistoryEntry {
  id: number;
  draft: HypothesisDraft;
  request: InferRequest;
  response: InferResponse;
}

export class SessionHistory {
  private entries: HistoryEntry[] = [];
  private nextId = 1;

  record(
    draft: HypothesisDraft, request: InferRequest, response: InferResponse,
  ): HistoryEntry {
    const entry: HistoryEntry = {
      id: this.nextId++,
      // snapshot: the live draft keeps mutating in the editor
      draft: structuredClone(draft),
      request,
      response,
    };
    this.entries.push(entry);
    return entry;
  }

  list(): readonly HistoryEntry[] {
    return this.entries;
  }

  get(id: number): HistoryEntry | undefined {
    return this.entries.find((e) => e.id === id);
  }

  latest(): HistoryEntry | undefined {
    return this.entries[this.entries.length - 1];
  }
}

export interface DiffRow {
  /** candidate prefix string, the pairing key */
  key: string;
  before: Candidate | null;
  after: Candidate | null;
  /** after minus before R-squared, when both sides carry one */
  r2Delta: number | null;
}

export interface ChannelChange {
  channel: Channel;
  before: string;
  after: string;
}

export interface WhatIfDiff {
  /** channels whose serialized fragment differs between the two drafts */
  changed: ChannelChange[];
  rows: DiffRow[];
  /** fate of the earlier submission's top candidate in the later one */
  previousTop: { key: string; present: boolean; badgeChanged: boolean } | null;
  identical: boolean;
}

export function whatIfDiff(a: HistoryEntry, b: HistoryEntry): WhatIfDiff {
  const fragA = channelFragments(a.draft);
  const fragB = channelFragments(b.draft);
  const changed: ChannelChange[] = [];
  for (const channel of CHANNELS) {
    if (fragA[channel] !== fragB[channel]) {
      changed.push({ channel, before: fragA[channel], after: fragB[channel] });
    }
  }

  const byKeyA = new Map(a.response.candidates.map((c) => [c.prefix, c]));
  const byKeyB = new Map(b.response.candidates.map((c) => [c.prefix, c]));
  const rows: DiffRow[] = [];
  for (const cand of b.response.candidates) {
    const before = byKeyA.get(cand.prefix) ?? null;
    rows.push({
      key: cand.prefix,
      before,
      after: cand,
      r2Delta:
        before && before.r2_selection !== null && cand.r2_selection !== null
          ? cand.r2_selection - before.r2_selection
          : null,
    });
  }
  for (const cand of a.response.candidates) {
    if (!byKeyB.has(cand.prefix)) {
      rows.push({ key: cand.prefix, before: cand, after: null, r2Delta: null });
    }
  }

  const top = a.response.candidates[0];
  let previousTop: WhatIfDiff["previousTop"] = null;
  if (top) {
    const counterpart = byKeyB.get(top.prefix);
    previousTop = {
      key: top.prefix,
      present: counterpart !== undefined,
      badgeChanged:
        counterpart !== undefined &&
        JSON.stringify(counterpart.satisfied) !== JSON.stringify(top.satisfied),
    };
  }

  return {
    changed,
    rows,
    previousTop,
    identical:
      changed.length === 0 &&
      JSON.stringify(a.response) === JSON.stringify(b.response),
  };
}
