import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { AddressInfo } from "node:net";

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import type { ArticleRecord } from "../src/articles.js";
import {
  AuthError,
  clipWords,
  DEFAULT_CONFIG,
  EmbeddingClient,
  IngestConfig,
  truncateVector,
} from "../src/client.js";
import { ingestArticles } from "../src/ingest.js";
import { readCvem } from "../src/cvem.js";

interface StubState {
  requests: number;
  failFirst: number;
  status: number;
  dims: number;
}

function startStub(state: StubState): Promise<Server> {
  const server = createServer((req: IncomingMessage, res: ServerResponse) => {
    let body = "";
    req.on("data", (c) => (body += c));
    req.on("end", () => {
      state.requests += 1;
      if (state.status !== 200) {
        res.writeHead(state.status);
        res.end();
        return;
      }
      if (state.requests <= state.failFirst) {
        res.writeHead(500);
        res.end();
        return;
      }
      const texts = JSON.parse(body).texts as string[];
      // deterministic embedding: coordinate j is (text length + j) / 100
      const embeddings = texts.map((t) =>
        Array.from({ length: state.dims }, (_, j) => (t.length + j) / 100),
      );
      res.writeHead(200, { "content-type": "application/json" });
      res.end(JSON.stringify({ embeddings }));
    });
  });
  return new Promise((resolve) => server.listen(0, "127.0.0.1", () => resolve(server)));
}

function endpoint(server: Server): string {
  const addr = server.address() as AddressInfo;
  return `http://127.0.0.1:${addr.port}/embed`;
}

const records: ArticleRecord[] = [
  { id: "a1", date: "2011-01-03", text: "markets tumble on debt fears" },
  { id: "a2", date: "2011-01-03", text: "bank raises emergency funds" },
  { id: "a3", date: "2011-01-04", text: "calm returns to trading floors" },
];

function config(server: Server, extra: Partial<IngestConfig> = {}): IngestConfig {
  return {
    ...DEFAULT_CONFIG,
    endpoint: endpoint(server),
    dE: 4,
    batchSize: 2,
    maxRetries: 2,
    retryDelayMs: 1,
    ...extra,
  };
}

describe("embedding client", () => {
  let state: StubState;
  let server: Server;

  beforeEach(async () => {
    state = { requests: 0, failFirst: 0, status: 200, dims: 8 };
    server = await startStub(state);
    process.env.EMBED_API_KEY = "test-key";
  });

  afterEach(() => new Promise<void>((r) => server.close(() => r())));

  it("embeds and truncates to the leading d_e dimensions", async () => {
    const client = new EmbeddingClient(config(server), () => {});
    const result = await client.embedBatch(records);
    expect(result.skipped).toEqual([]);
    expect(result.vectors.size).toBe(3);
    const v = result.vectors.get("a1")!;
    expect(v.length).toBe(4);
    const len = records[0].text.length;
    expect([...v]).toEqual([len / 100, (len + 1) / 100, (len + 2) / 100, (len + 3) / 100]);
  });

  it("empty input produces empty output without requests", async () => {
    const client = new EmbeddingClient(config(server), () => {});
    const result = await client.embedBatch([]);
    expect(result.vectors.size).toBe(0);
    expect(state.requests).toBe(0);
  });

  it("retries transient failures then succeeds", async () => {
    state.failFirst = 2;
    const client = new EmbeddingClient(config(server), () => {});
    const result = await client.embedBatch(records.slice(0, 2));
    expect(result.vectors.size).toBe(2);
    expect(state.requests).toBeGreaterThan(2);
  });

  it("skips records after retries are exhausted", async () => {
    state.failFirst = 100;
    const logs: string[] = [];
    const client = new EmbeddingClient(config(server), (m) => logs.push(m));
    const result = await client.embedBatch(records.slice(0, 2));
    expect(result.vectors.size).toBe(0);
    expect(result.skipped).toEqual(["a1", "a2"]);
    expect(logs.some((l) => l.includes("skipped"))).toBe(true);
  });

  it("treats credential rejection as fatal", async () => {
    state.status = 401;
    const client = new EmbeddingClient(config(server), () => {});
    await expect(client.embedBatch(records)).rejects.toThrow(AuthError);
  });

  it("fails fast when the credential env var is missing", async () => {
    delete process.env.EMBED_API_KEY;
    const client = new EmbeddingClient(config(server), () => {});
    await expect(client.embedBatch(records)).rejects.toThrow(AuthError);
  });

  it("clips over-length texts at the word level and logs it", async () => {
    const logs: string[] = [];
    const long: ArticleRecord = {
      id: "big",
      date: "2011-01-05",
      text: Array.from({ length: 50 }, (_, i) => `w${i}`).join(" "),
    };
    const client = new EmbeddingClient(config(server, { maxWords: 10 }), (m) => logs.push(m));
    const result = await client.embedBatch([long]);
    expect(result.clipped).toEqual(["big"]);
    expect(logs.some((l) => l.includes("clipped"))).toBe(true);
    expect(result.vectors.get("big")!.length).toBe(4);
  });

  it("cached responses replay to identical CVEM bytes without the service", async () => {
    const cacheDir = mkdtempSync(join(tmpdir(), "cache-"));
    const out1 = join(mkdtempSync(join(tmpdir(), "ing-")), "a.cvem");
    const out2 = join(mkdtempSync(join(tmpdir(), "ing-")), "b.cvem");
    const cfg = config(server, { cacheDir });
    await ingestArticles(records, cfg, out1, () => {});
    const requestsAfterFirst = state.requests;
    expect(requestsAfterFirst).toBeGreaterThan(0);

    // second run: the server goes away entirely; the cache must carry it
    await new Promise<void>((r) => server.close(() => r()));
    await ingestArticles(records, cfg, out2, () => {});
    expect(state.requests).toBe(requestsAfterFirst);
    expect(Buffer.compare(readFileSync(out1), readFileSync(out2))).toBe(0);

    server = await startStub(state); // restore for afterEach
  });
});

describe("pure helpers", () => {
  it("truncation keeps exactly the first coordinates", () => {
    const v = truncateVector([9, 8, 7, 6, 5], 3);
    expect([...v]).toEqual([9, 8, 7]);
    expect(() => truncateVector([1, 2], 3)).toThrow(/d_e/);
  });

  it("word clipping preserves short texts", () => {
    expect(clipWords("one two three", 5)).toEqual({ text: "one two three", clipped: false });
    expect(clipWords("one two three", 2)).toEqual({ text: "one two", clipped: true });
  });
});

describe("grouping", () => {
  it("writes one record per date with source order preserved", async () => {
    const state2: StubState = { requests: 0, failFirst: 0, status: 200, dims: 8 };
    const server2 = await startStub(state2);
    process.env.EMBED_API_KEY = "test-key";
    const out = join(mkdtempSync(join(tmpdir(), "grp-")), "g.cvem");
    await ingestArticles(records, config(server2, { dE: 2 }), out, () => {});
    const back = readCvem(out);
    expect(back.dE).toBe(2);
    expect(back.byDate.get("2011-01-03")!.length).toBe(2);
    expect(back.byDate.get("2011-01-04")!.length).toBe(1);
    // a1 precedes a2 within the date
    const first = back.byDate.get("2011-01-03")![0];
    expect(first[0]).toBeCloseTo(records[0].text.length / 100, 12);
    await new Promise<void>((r) => server2.close(() => r()));
  });
});
