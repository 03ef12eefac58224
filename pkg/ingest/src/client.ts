/**
 * Embedding-service client.
 *
 * Batches texts to the service endpoint, truncates each returned vector
 * to the leading d_e coordinates (no re-normalization), and caches raw
 * responses by content hash so re-runs are free and byte-deterministic.
 * Over-long texts are clipped at the word level before the request.
 * Credentials come from an environment variable, never from flags.
 *
 * Failure policy: authentication errors abort the run; other per-batch
 * errors are retried with backoff, then the batch's records are skipped
 * and logged.
 */

import { createHash } from "node:crypto";
import { existsSync, mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import type { ArticleRecord } from "./articles.js";

export interface IngestConfig {
  endpoint: string;
  apiKeyEnv: string;
  batchSize: number;
  dE: number;
  maxRetries: number;
  retryDelayMs: number;
  maxWords: number;
  minIntervalMs: number;
  cacheDir?: string;
}

export const DEFAULT_CONFIG: Omit<IngestConfig, "endpoint"> = {
  apiKeyEnv: "EMBED_API_KEY",
  batchSize: 16,
  dE: 64,
  maxRetries: 3,
  retryDelayMs: 200,
  maxWords: 1228,
  minIntervalMs: 0,
  cacheDir: undefined,
};

export class AuthError extends Error {}

export interface EmbedResult {
  vectors: Map<string, Float64Array>;
  skipped: string[];
  clipped: string[];
}

export function truncateVector(vector: ArrayLike<number>, dE: number): Float64Array {
  if (vector.length < dE) {
    throw new Error(`service vector length ${vector.length} < requested d_e ${dE}`);
  }
  const out = new Float64Array(dE);
  for (let i = 0; i < dE; i++) out[i] = vector[i];
  return out;
}

export function clipWords(text: string, maxWords: number): { text: string; clipped: boolean } {
  const words = text.split(/\s+/).filter((w) => w.length > 0);
  if (words.length <= maxWords) return { text, clipped: false };
  return { text: words.slice(0, maxWords).join(" "), clipped: true };
}

function contentHash(text: string): string {
  return createHash("sha256").update(text, "utf-8").digest("hex");
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

export class EmbeddingClient {
  private readonly config: IngestConfig;
  private readonly log: (msg: string) => void;
  private lastRequest = 0;

  constructor(config: IngestConfig, log: (msg: string) => void = console.error) {
    this.config = config;
    this.log = log;
    if (config.cacheDir) mkdirSync(config.cacheDir, { recursive: true });
  }

  private cachePath(text: string): string | undefined {
    if (!this.config.cacheDir) return undefined;
    return join(this.config.cacheDir, contentHash(text) + ".json");
  }

  private readCache(text: string): number[] | undefined {
    const path = this.cachePath(text);
    if (!path || !existsSync(path)) return undefined;
    return JSON.parse(readFileSync(path, "utf-8")) as number[];
  }

  private writeCache(text: string, vector: number[]): void {
    const path = this.cachePath(text);
    if (path) writeFileSync(path, JSON.stringify(vector));
  }

  private async request(texts: string[]): Promise<number[][]> {
    const key = process.env[this.config.apiKeyEnv];
    if (!key) throw new AuthError(`credential env var ${this.config.apiKeyEnv} is not set`);
    const now = Date.now();
    const wait = this.lastRequest + this.config.minIntervalMs - now;
    if (wait > 0) await sleep(wait);
    this.lastRequest = Date.now();
    const res = await fetch(this.config.endpoint, {
      method: "POST",
      headers: { "content-type": "application/json", authorization: `Bearer ${key}` },
      body: JSON.stringify({ texts }),
    });
    if (res.status === 401 || res.status === 403) {
      throw new AuthError(`service rejected the credential (${res.status})`);
    }
    if (!res.ok) throw new Error(`service error ${res.status}`);
    const body = (await res.json()) as { embeddings: number[][] };
    if (!Array.isArray(body.embeddings) || body.embeddings.length !== texts.length) {
      throw new Error("malformed service response");
    }
    return body.embeddings;
  }

  /** Embed one batch's worth of records with retries; throws AuthError
   * immediately, returns undefined after exhausted retries. */
  private async requestWithRetry(texts: string[]): Promise<number[][] | undefined> {
    for (let attempt = 0; ; attempt++) {
      try {
        return await this.request(texts);
      } catch (err) {
        if (err instanceof AuthError) throw err;
        if (attempt >= this.config.maxRetries) {
          this.log(`giving up after ${attempt + 1} attempts: ${(err as Error).message}`);
          return undefined;
        }
        await sleep(this.config.retryDelayMs * (attempt + 1));
      }
    }
  }

  async embedBatch(records: ArticleRecord[]): Promise<EmbedResult> {
    const vectors = new Map<string, Float64Array>();
    const skipped: string[] = [];
    const clipped: string[] = [];

    const pending: { record: ArticleRecord; text: string }[] = [];
    for (const record of records) {
      const clip = clipWords(record.text, this.config.maxWords);
      if (clip.clipped) {
        clipped.push(record.id);
        this.log(`clipped over-length article ${record.id} to ${this.config.maxWords} words`);
      }
      const cached = this.readCache(clip.text);
      if (cached) {
        vectors.set(record.id, truncateVector(cached, this.config.dE));
      } else {
        pending.push({ record, text: clip.text });
      }
    }

    for (let start = 0; start < pending.length; start += this.config.batchSize) {
      const chunk = pending.slice(start, start + this.config.batchSize);
      const response = await this.requestWithRetry(chunk.map((c) => c.text));
      if (response === undefined) {
        for (const c of chunk) {
          skipped.push(c.record.id);
          this.log(`skipped article ${c.record.id} after retries`);
        }
        continue;
      }
      chunk.forEach((c, i) => {
        this.writeCache(c.text, response[i]);
        vectors.set(c.record.id, truncateVector(response[i], this.config.dE));
      });
    }
    return { vectors, skipped, clipped };
  }
}
