import { readFileSync } from "node:fs";
import Papa from "papaparse";

export type Row = Record<string, string>;

/** Parse a CSV file into string-valued rows, skipping '#' comment lines. */
export function readCsv(path: string): Row[] {
  const raw = readFileSync(path, "utf8");
  const body = raw
    .split("\n")
    .filter((line) => !line.startsWith("#"))
    .join("\n");
  const parsed = Papa.parse<Row>(body, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`${path}: CSV parse error at row ${e.row}: ${e.message}`);
  }
  return parsed.data;
}

/** Assert the named columns exist; error names every missing column. */
export function requireColumns(rows: Row[], columns: string[], path: string): void {
  if (rows.length === 0) {
    throw new Error(`${path}: no data rows`);
  }
  const present = new Set(Object.keys(rows[0]));
  const missing = columns.filter((c) => !present.has(c));
  if (missing.length > 0) {
    throw new Error(`${path}: missing required columns: ${missing.join(", ")}`);
  }
}

export function num(row: Row, column: string): number {
  const v = Number(row[column]);
  if (!Number.isFinite(v)) {
    throw new Error(`non-numeric value '${row[column]}' in column ${column}`);
  }
  return v;
}

/** Column names of the forecast horizon present in a trajectory CSV. */
export function forecastColumns(rows: Row[], prefix: string): string[] {
  const cols: string[] = [];
  for (let l = 1; ; l++) {
    const name = `${prefix}_l${l}`;
    if (!(name in rows[0])) break;
    cols.push(name);
  }
  return cols;
}
