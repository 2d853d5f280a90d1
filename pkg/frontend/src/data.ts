/**
 * Parse pasted or uploaded tabular data into observation rows.
 *
 * Mirrors the service's table contract: each row is x1..xd then y, an
 * optional first line naming those columns is allowed, non-finite rows and
 * rows whose target exceeds the half-precision range are dropped (counted),
 * and a malformed numeric cell is a hard error with its line number.
 */

export interface ParsedTable {
  rows: number[][];
  columns: number;
  /** input variables, columns minus the target */
  variables: number;
  dropped: number;
}

export class TableError extends Error {
  constructor(message: string, public line: number) {
    super(`${message} (line ${line})`);
    this.name = "TableError";
  }
}

const HALF_MAX = 65504.0;

function splitLine(line: string): string[] {
  const sep = line.includes(",") ? "," : line.includes(";") ? ";" : /\s+/;
  return line.split(sep).map((cell) => cell.trim()).filter((c) => c !== "");
}

function isHeader(cells: string[]): boolean {
  const expected = cells.slice(0, -1).every((c, i) => c === `x${i + 1}`);
  return expected && cells[cells.length - 1] === "y";
}

export function parseTable(text: string): ParsedTable {
  const lines = text.split(/\r?\n/);
  const rows: number[][] = [];
  let columns = 0;
  let dropped = 0;
  let sawHeader = false;

  for (let i = 0; i < lines.length; i++) {
    const raw = lines[i]!.trim();
    if (raw === "" || raw.startsWith("#")) continue;
    const cells = splitLine(raw);
    if (rows.length === 0 && !sawHeader && isHeader(cells)) {
      sawHeader = true;
      columns = cells.length;
      continue;
    }
    const values = cells.map(Number);
    const bad = values.findIndex((v) => Number.isNaN(v));
    if (bad >= 0) {
      throw new TableError(`non-numeric value "${cells[bad]}"`, i + 1);
    }
    if (columns === 0) columns = values.length;
    if (values.length !== columns) {
      throw new TableError(
        `row has ${values.length} fields, expected ${columns}`, i + 1,
      );
    }
    const y = values[values.length - 1]!;
    if (!values.every(Number.isFinite) || Math.abs(y) > HALF_MAX) {
      dropped++;
      continue;
    }
    rows.push(values);
  }

  if (columns < 2) {
    throw new TableError("need at least one input column and a target", 1);
  }
  if (rows.length === 0) {
    throw new TableError("no usable data rows", lines.length);
  }
  return { rows, columns, variables: columns - 1, dropped };
}
