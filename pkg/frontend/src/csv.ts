import { readFileSync } from "fs";
import Papa from "papaparse";

export interface Table {
  path: string;
  columns: string[];
  rows: Record<string, number>[];
}

export class SchemaError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

/** Read a qplab CSV: one leading '#' provenance comment, a header row,
 *  then numeric rows. Empty data is an error. */
export function readTable(path: string): Table {
  const raw = readFileSync(path, "utf8");
  const body = raw
    .split("\n")
    .filter((line) => line.trim() !== "" && !line.startsWith("#"))
    .join("\n");
  const parsed = Papa.parse<Record<string, string>>(body, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaError(`${path}: ${parsed.errors[0].message}`);
  }
  const columns = (parsed.meta.fields ?? []).filter((f) => f.length > 0);
  if (columns.length === 0 || parsed.data.length === 0) {
    throw new SchemaError(`${path}: empty CSV (no rows)`);
  }
  const rows = parsed.data.map((rec) => {
    const out: Record<string, number> = {};
    for (const col of columns) {
      out[col] = Number(rec[col]);
    }
    return out;
  });
  return { path, columns, rows };
}

export function requireColumns(table: Table, needed: string[]): void {
  const missing = needed.filter((c) => !table.columns.includes(c));
  if (missing.length > 0) {
    throw new SchemaError(
      `${table.path}: missing column(s) ${missing.join(", ")} ` +
        `(have: ${table.columns.join(", ")})`
    );
  }
}

export function column(table: Table, name: string): number[] {
  return table.rows.map((r) => r[name]);
}

export function readReport(path: string): Record<string, unknown> {
  const parsed = JSON.parse(readFileSync(path, "utf8"));
  if (typeof parsed !== "object" || parsed === null) {
    throw new SchemaError(`${path}: not a JSON object`);
  }
  return parsed as Record<string, unknown>;
}
