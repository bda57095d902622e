/**
 * Minimal CSV reading for the benchmark harness outputs.
 *
 * The producer never quotes fields (plain numbers and identifiers), so a
 * split-based parser is sufficient and keeps rendering dependency-free.
 */

export interface CsvTable {
  header: string[];
  rows: string[][];
}

export class MissingColumnError extends Error {
  constructor(public readonly column: string, public readonly path: string) {
    super(`input ${path} is missing required column "${column}"`);
  }
}

export function parseCsv(text: string): CsvTable {
  const lines = text
    .split(/\r?\n/)
    .filter((l) => l.trim().length > 0);
  if (lines.length === 0) {
    return { header: [], rows: [] };
  }
  const header = lines[0].split(",").map((h) => h.trim());
  const rows = lines.slice(1).map((l) => l.split(",").map((c) => c.trim()));
  return { header, rows };
}

/** Column accessor that validates presence up front. */
export function columns(
  table: CsvTable,
  required: string[],
  path: string
): (row: string[], name: string) => string {
  const index = new Map<string, number>();
  table.header.forEach((h, i) => index.set(h, i));
  for (const col of required) {
    if (!index.has(col)) throw new MissingColumnError(col, path);
  }
  return (row, name) => row[index.get(name)!] ?? "";
}

export function asNumber(value: string): number | null {
  if (value === "") return null;
  const n = Number(value);
  return Number.isFinite(n) ? n : null;
}
