/**
 * Per-channel satisfaction badges.
 *
 * A badge mirrors the service's `satisfied` flags exactly: a channel the
 * response does not mention was not conditioned on, so its badge is neutral.
 * Nothing is recomputed client-side.
 */

import { Candidate } from "./api.js";
import { CHANNELS, Channel } from "./grammar.js";

export type BadgeState = "satisfied" | "violated" | "not-conditioned";

export function badgeState(
  flags: Record<string, boolean>, channel: Channel,
): BadgeState {
  if (!(channel in flags)) return "not-conditioned";
  return flags[channel] ? "satisfied" : "violated";
}

export function badgeRow(candidate: Candidate): Record<Channel, BadgeState> {
  const row = {} as Record<Channel, BadgeState>;
  for (const channel of CHANNELS) {
    row[channel] = badgeState(candidate.satisfied, channel);
  }
  return row;
}

export const BADGE_GLYPH: Record<BadgeState, string> = {
  satisfied: "✓",
  violated: "✗",
  "not-conditioned": "–",
};
