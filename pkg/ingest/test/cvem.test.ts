import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { dateToDays, daysToDate, encodeCvem, readCvem, writeCvem } from "../src/cvem.js";
import { truncateVector } from "../src/client.js";

const tmp = () => mkdtempSync(join(tmpdir(), "cvem-"));

describe("date conversion", () => {
  it("round trips ISO dates through day counts", () => {
    for (const d of ["1970-01-01", "2006-10-02", "2011-01-03", "2013-11-29"]) {
      expect(daysToDate(dateToDays(d))).toBe(d);
    }
    expect(dateToDays("1970-01-01")).toBe(0);
  });
});

describe("CVEM writer", () => {
  it("writes an empty store that round trips", () => {
    const path = join(tmp(), "empty.cvem");
    writeCvem(new Map(), 4, path);
    const back = readCvem(path);
    expect(back.dE).toBe(4);
    expect(back.byDate.size).toBe(0);
  });

  it("round trips two dates with three vectors bit-exactly", () => {
    const byDate = new Map([
      ["2011-01-03", [Float64Array.of(0.5, 1 / 3, -1e-300), Float64Array.of(1, 2, 3)]],
      ["2011-01-04", [Float64Array.of(-0.25, 0.125, 99.5)]],
    ]);
    const path = join(tmp(), "rt.cvem");
    writeCvem(byDate, 3, path);
    const back = readCvem(path);
    expect([...back.byDate.keys()].sort()).toEqual(["2011-01-03", "2011-01-04"]);
    expect(back.byDate.get("2011-01-03")![0]).toEqual(Float64Array.of(0.5, 1 / 3, -1e-300));
    expect(back.byDate.get("2011-01-04")![0]).toEqual(Float64Array.of(-0.25, 0.125, 99.5));
    // record count and per-date counts
    expect(back.byDate.get("2011-01-03")!.length).toBe(2);
    expect(back.byDate.get("2011-01-04")!.length).toBe(1);
  });

  it("rejects ragged dimensions", () => {
    const byDate = new Map([["2011-01-03", [Float64Array.of(1, 2)]]]);
    expect(() => encodeCvem(byDate, 3)).toThrow(/ragged/);
  });

  it("reproduces the stored truncation fixture byte for byte", () => {
    // the service returned 8-dim vectors; keep exactly the first 4
    const full = [0, 1, 2].map(
      (k) => Float64Array.from({ length: 8 }, (_, j) => k + j * 0.125),
    );
    const byDate = new Map([
      ["2011-01-03", [truncateVector(full[0], 4), truncateVector(full[1], 4)]],
      ["2011-01-04", [truncateVector(full[2], 4)]],
    ]);
    const encoded = encodeCvem(byDate, 4);
    const fixture = readFileSync(new URL("../fixtures/truncation.cvem", import.meta.url));
    expect(Buffer.compare(encoded, fixture)).toBe(0);
  });
});

describe("cross-component conformance", () => {
  it("files written here load in the primary component with equal values", () => {
    const byDate = new Map([
      ["2011-01-03", [Float64Array.of(0.1, -0.2), Float64Array.of(1e-9, 3.25)]],
      ["2011-01-05", [Float64Array.of(-7.5, 2 / 7)]],
    ]);
    const path = join(tmp(), "cross.cvem");
    writeCvem(byDate, 2, path);

    const script = [
      "import json, sys",
      "from covarlab.data_io import load_embeddings",
      "store = load_embeddings(sys.argv[1])",
      "out = {d: [[repr(x) for x in row] for row in v.tolist()] for d, v in store.by_date.items()}",
      "print(json.dumps({'d_e': store.d_e, 'by_date': out}))",
    ].join("\n");
    const result = JSON.parse(
      execFileSync("python3", ["-c", script, path], { encoding: "utf-8" }),
    );
    expect(result.d_e).toBe(2);
    for (const [date, vectors] of byDate) {
      const loaded = result.by_date[date] as string[][];
      expect(loaded.length).toBe(vectors.length);
      vectors.forEach((v, i) => {
        v.forEach((x, j) => {
          expect(Math.abs(Number(loaded[i][j]) - x)).toBeLessThanOrEqual(1e-12 * Math.max(1, Math.abs(x)));
        });
      });
    }
  });
});
