/** Orchestration: articles in, CVEM tensor out. */

import type { ArticleRecord } from "./articles.js";
import { EmbeddingClient, EmbedResult, IngestConfig } from "./client.js";
import { EmbeddingsByDate, writeCvem } from "./cvem.js";

export interface IngestSummary {
  embedded: number;
  skipped: string[];
  clipped: string[];
  dates: number;
}

export function groupByDate(
  records: ArticleRecord[],
  vectors: Map<string, Float64Array>,
): EmbeddingsByDate {
  const byDate: EmbeddingsByDate = new Map();
  // preserve source order within each date
  for (const record of records) {
    const v = vectors.get(record.id);
    if (!v) continue;
    const list = byDate.get(record.date) ?? [];
    list.push(v);
    byDate.set(record.date, list);
  }
  return byDate;
}

export async function ingestArticles(
  records: ArticleRecord[],
  config: IngestConfig,
  outPath: string,
  log: (msg: string) => void = console.error,
): Promise<IngestSummary> {
  const client = new EmbeddingClient(config, log);
  const result: EmbedResult = await client.embedBatch(records);
  const byDate = groupByDate(records, result.vectors);
  writeCvem(byDate, config.dE, outPath);
  return {
    embedded: result.vectors.size,
    skipped: result.skipped,
    clipped: result.clipped,
    dates: byDate.size,
  };
}
