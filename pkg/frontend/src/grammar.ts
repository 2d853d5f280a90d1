/**
 * Hypothesis drafts and their serialization to the conditioning grammar.
 *
 * The service parses the `hypotheses` request field with its own grammar;
 * everything emitted here must round-trip through that parser byte for byte.
 * Chips are built from a palette restricted to the operator set plus the
 * active variables, so a draft that validates cannot serialize to a string
 * the service rejects.
 */

export const UNARY_OPERATORS = [
  "sqrt", "pow2", "pow3", "pow4", "inv", "log", "exp", "sin", "cos", "asin",
] as const;
export const BINARY_OPERATORS = ["add", "sub", "mul", "div"] as const;
export const OPERATORS: readonly string[] = [...UNARY_OPERATORS, ...BINARY_OPERATORS];

export const MAX_VARIABLES = 5;
export const MAX_COMPLEXITY = 20;
export const MAX_POINTERS = 10;

export const CHANNELS = [
  "positive", "negative", "complexity", "symmetry", "constants",
] as const;
export type Channel = (typeof CHANNELS)[number];

export type Chip = readonly string[];

export interface ConstantEntry {
  value: number;
  /** include as a pointer hint in the request (off keeps the entry staged) */
  insert: boolean;
}

export interface HypothesisDraft {
  /** active input variables x1..xd, from the loaded data */
  variables: number;
  positive: Chip[];
  negative: Chip[];
  complexity: number | null;
  /** toggled symmetry subsets keyed "1,2"; untoggled pairs are absent */
  symmetry: Record<string, boolean>;
  constants: ConstantEntry[];
  enabled: Record<Channel, boolean>;
}

export function emptyDraft(variables: number): HypothesisDraft {
  return {
    variables,
    positive: [],
    negative: [],
    complexity: null,
    symmetry: {},
    constants: [],
    enabled: {
      positive: true,
      negative: true,
      complexity: true,
      symmetry: true,
      constants: true,
    },
  };
}

/** Tokens a branch chip may contain: every operator plus the active variables. */
export function paletteTokens(variables: number): string[] {
  const vars = [];
  for (let i = 1; i <= variables; i++) vars.push(`x${i}`);
  return [...OPERATORS, ...vars];
}

/**
 * Symmetry subsets eligible for a toggle, in the grammar's canonical order:
 * by size, then by span (max minus min), then lexicographically. Sizes run
 * 2..d-1, so nothing is eligible below three variables.
 */
export function symmetrySubsets(variables: number): number[][] {
  const out: number[][] = [];
  for (let size = 2; size < variables; size++) {
    const group: number[][] = [];
    const pick = (start: number, acc: number[]) => {
      if (acc.length === size) {
        group.push([...acc]);
        return;
      }
      for (let v = start; v <= variables; v++) pick(v + 1, [...acc, v]);
    };
    pick(1, []);
    group.sort((a, b) => {
      const spanA = a[a.length - 1]! - a[0]!;
      const spanB = b[b.length - 1]! - b[0]!;
      if (spanA !== spanB) return spanA - spanB;
      for (let i = 0; i < size; i++) {
        if (a[i]! !== b[i]!) return a[i]! - b[i]!;
      }
      return 0;
    });
    out.push(...group);
  }
  return out;
}

export function subsetKey(subset: number[]): string {
  return subset.join(",");
}

export function symmetryToken(subset: number[], flag: boolean): string {
  const name = subset.map((i) => `X${i}`).join("");
  return (flag ? "True" : "False") + "Symmetry" + name;
}

export function complexityToken(k: number): string {
  return `Complexity=${k}`;
}

export interface DraftProblem {
  channel: Channel;
  /** which chip within the channel, where that applies */
  chip?: number;
  /** token index within the chip (or entry index for constants) */
  position: number;
  message: string;
}

export function validateChip(
  chip: Chip, variables: number,
): DraftProblem | null {
  if (chip.length === 0) {
    return { channel: "positive", position: 0, message: "empty branch" };
  }
  const palette = new Set(paletteTokens(variables));
  for (let i = 0; i < chip.length; i++) {
    if (!palette.has(chip[i]!)) {
      return {
        channel: "positive",
        position: i,
        message: `token "${chip[i]}" is not in the palette`,
      };
    }
  }
  return null;
}

export function validateDraft(draft: HypothesisDraft): DraftProblem[] {
  const problems: DraftProblem[] = [];
  if (
    !Number.isInteger(draft.variables) ||
    draft.variables < 1 ||
    draft.variables > MAX_VARIABLES
  ) {
    problems.push({
      channel: "positive",
      position: 0,
      message: `variables must be 1..${MAX_VARIABLES}`,
    });
    return problems;
  }
  for (const channel of ["positive", "negative"] as const) {
    if (!draft.enabled[channel]) continue;
    draft[channel].forEach((chip, idx) => {
      const problem = validateChip(chip, draft.variables);
      if (problem) problems.push({ ...problem, channel, chip: idx });
    });
  }
  if (draft.enabled.complexity && draft.complexity !== null) {
    if (
      !Number.isInteger(draft.complexity) ||
      draft.complexity < 1 ||
      draft.complexity > MAX_COMPLEXITY
    ) {
      problems.push({
        channel: "complexity",
        position: 0,
        message: `complexity must be an integer in 1..${MAX_COMPLEXITY}`,
      });
    }
  }
  if (draft.enabled.symmetry) {
    const eligible = new Set(symmetrySubsets(draft.variables).map(subsetKey));
    Object.keys(draft.symmetry).forEach((key, idx) => {
      if (!eligible.has(key)) {
        problems.push({
          channel: "symmetry",
          position: idx,
          message: `subset {${key}} is not eligible for ${draft.variables} variables`,
        });
      }
    });
  }
  if (draft.enabled.constants) {
    let inserted = 0;
    draft.constants.forEach((entry, idx) => {
      if (!Number.isFinite(entry.value)) {
        problems.push({
          channel: "constants",
          position: idx,
          message: "constant value must be finite",
        });
      }
      if (entry.insert) inserted++;
    });
    if (inserted > MAX_POINTERS) {
      problems.push({
        channel: "constants",
        position: MAX_POINTERS,
        message: `at most ${MAX_POINTERS} constants can be inserted`,
      });
    }
  }
  return problems;
}

export class DraftError extends Error {
  constructor(public problems: DraftProblem[]) {
    super(problems.map((p) => `${p.channel}: ${p.message}`).join("; "));
    this.name = "DraftError";
  }
}

/**
 * Per-channel token fragments in serialization order. Disabled or empty
 * channels contribute "". Used both to assemble the request string and to
 * highlight which channels changed between two drafts.
 */
export function channelFragments(draft: HypothesisDraft): Record<Channel, string> {
  const fragments: Record<Channel, string> = {
    positive: "", negative: "", complexity: "", symmetry: "", constants: "",
  };
  if (draft.enabled.positive) {
    fragments.positive = draft.positive
      .map((chip) => `<Positive> ${chip.join(" ")} </Positive>`)
      .join(" ");
  }
  if (draft.enabled.negative) {
    fragments.negative = draft.negative
      .map((chip) => `<Negative> ${chip.join(" ")} </Negative>`)
      .join(" ");
  }
  if (draft.enabled.complexity && draft.complexity !== null) {
    fragments.complexity = complexityToken(draft.complexity);
  }
  if (draft.enabled.symmetry) {
    fragments.symmetry = symmetrySubsets(draft.variables)
      .filter((subset) => subsetKey(subset) in draft.symmetry)
      .map((subset) => symmetryToken(subset, draft.symmetry[subsetKey(subset)]!))
      .join(" ");
  }
  if (draft.enabled.constants) {
    fragments.constants = draft.constants
      .filter((entry) => entry.insert)
      .map((_entry, i) => `pointer_${i}`)
      .join(" ");
  }
  return fragments;
}

export interface SerializedDraft {
  hypotheses: string;
  constant_values: [number, number][];
}

export function serializeDraft(draft: HypothesisDraft): SerializedDraft {
  const problems = validateDraft(draft);
  if (problems.length) throw new DraftError(problems);
  const fragments = channelFragments(draft);
  const hypotheses = CHANNELS
    .map((ch) => fragments[ch])
    .filter((part) => part !== "")
    .join(" ");
  const constant_values: [number, number][] = [];
  if (draft.enabled.constants) {
    draft.constants
      .filter((entry) => entry.insert)
      .forEach((entry, i) => constant_values.push([i, entry.value]));
  }
  return { hypotheses, constant_values };
}
