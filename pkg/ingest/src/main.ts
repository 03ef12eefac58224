#!/usr/bin/env node
/**
 * covarlab-ingest: embed articles and write a CVEM tensor.
 *
 * Usage:
 *   covarlab-ingest --input articles.csv --out embeddings.cvem \
 *       --endpoint http://host/embed [--d-e 64] [--batch-size 16] \
 *       [--cache-dir .cache] [--api-key-env EMBED_API_KEY]
 *
 * The credential is read from the environment variable named by
 * --api-key-env (default EMBED_API_KEY); it is never passed as a flag.
 */

import { readArticles } from "./articles.js";
import { AuthError, DEFAULT_CONFIG, IngestConfig } from "./client.js";
import { ingestArticles } from "./ingest.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`usage error near ${key}`);
    }
    out.set(key.slice(2), argv[i + 1]);
  }
  return out;
}

async function main(): Promise<number> {
  let args: Map<string, string>;
  try {
    args = parseArgs(process.argv.slice(2));
    if (!args.has("input") || !args.has("out") || !args.has("endpoint")) {
      throw new Error("required flags: --input, --out, --endpoint");
    }
  } catch (err) {
    console.error(`usage: ${(err as Error).message}`);
    return 2;
  }
  const config: IngestConfig = {
    ...DEFAULT_CONFIG,
    endpoint: args.get("endpoint")!,
    apiKeyEnv: args.get("api-key-env") ?? DEFAULT_CONFIG.apiKeyEnv,
    batchSize: Number(args.get("batch-size") ?? DEFAULT_CONFIG.batchSize),
    dE: Number(args.get("d-e") ?? DEFAULT_CONFIG.dE),
    maxRetries: Number(args.get("max-retries") ?? DEFAULT_CONFIG.maxRetries),
    minIntervalMs: Number(args.get("min-interval-ms") ?? DEFAULT_CONFIG.minIntervalMs),
    cacheDir: args.get("cache-dir"),
  };
  try {
    const records = readArticles(args.get("input")!);
    const summary = await ingestArticles(records, config, args.get("out")!);
    console.error(
      `embedded ${summary.embedded}/${records.length} articles over ` +
        `${summary.dates} dates (skipped ${summary.skipped.length}, ` +
        `clipped ${summary.clipped.length}) -> ${args.get("out")}`,
    );
    return 0;
  } catch (err) {
    if (err instanceof AuthError) {
      console.error(`fatal: ${err.message}`);
    } else {
      console.error(`error: ${(err as Error).message}`);
    }
    return 1;
  }
}

main().then((code) => process.exit(code));
