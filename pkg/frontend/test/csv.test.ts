import { describe, expect, it } from "vitest";
import { mkdtempSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { column, readTable, requireColumns, SchemaError } from "../src/csv.js";

function tmpCsv(text: string): string {
  const dir = mkdtempSync(join(tmpdir(), "plotkit-"));
  const path = join(dir, "t.csv");
  writeFileSync(path, text);
  return path;
}

describe("readTable", () => {
  it("skips provenance comments and parses numbers", () => {
    const path = tmpCsv("# qplab 0.3.0 config=abc\nt,l2\n0,1\n0.5,1\n");
    const table = readTable(path);
    expect(table.columns).toEqual(["t", "l2"]);
    expect(column(table, "t")).toEqual([0, 0.5]);
    expect(column(table, "l2")).toEqual([1, 1]);
  });

  it("rejects an empty CSV", () => {
    const path = tmpCsv("# comment only\nt,l2\n");
    expect(() => readTable(path)).toThrow(SchemaError);
  });

  it("names missing columns", () => {
    const path = tmpCsv("t,l2\n0,1\n");
    const table = readTable(path);
    expect(() => requireColumns(table, ["t", "diffusion"])).toThrow(/diffusion/);
  });
});
