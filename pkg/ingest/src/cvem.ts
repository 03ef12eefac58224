/**
 * CVEM embedding tensor format.
 *
 * Layout (all integers little-endian):
 *   magic "CVEM" | u32 version = 1 | u32 d_e |
 *   per date, ascending: i64 days-since-epoch | u32 count | count*d_e f64
 *
 * Bit-exact round trips: vectors are written as raw IEEE-754 doubles.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const CVEM_MAGIC = "CVEM";
export const CVEM_VERSION = 1;

const MS_PER_DAY = 86_400_000;

export function dateToDays(iso: string): number {
  const m = /^(\d{4})-(\d{2})-(\d{2})$/.exec(iso);
  if (!m) throw new Error(`invalid ISO date: ${iso}`);
  return Date.UTC(Number(m[1]), Number(m[2]) - 1, Number(m[3])) / MS_PER_DAY;
}

export function daysToDate(days: number): string {
  return new Date(days * MS_PER_DAY).toISOString().slice(0, 10);
}

export type EmbeddingsByDate = Map<string, Float64Array[]>;

export function encodeCvem(byDate: EmbeddingsByDate, dE: number): Buffer {
  const dates = [...byDate.keys()].sort();
  let total = 12;
  for (const d of dates) {
    const vectors = byDate.get(d)!;
    for (const v of vectors) {
      if (v.length !== dE) {
        throw new Error(`ragged embedding on ${d}: ${v.length} != ${dE}`);
      }
      for (const x of v) {
        if (!Number.isFinite(x)) throw new Error(`non-finite embedding value on ${d}`);
      }
    }
    total += 12 + vectors.length * dE * 8;
  }
  const buf = Buffer.alloc(total);
  buf.write(CVEM_MAGIC, 0, "ascii");
  buf.writeUInt32LE(CVEM_VERSION, 4);
  buf.writeUInt32LE(dE, 8);
  let off = 12;
  for (const d of dates) {
    const vectors = byDate.get(d)!;
    buf.writeBigInt64LE(BigInt(dateToDays(d)), off);
    buf.writeUInt32LE(vectors.length, off + 8);
    off += 12;
    for (const v of vectors) {
      for (const x of v) {
        buf.writeDoubleLE(x, off);
        off += 8;
      }
    }
  }
  return buf;
}

export function writeCvem(byDate: EmbeddingsByDate, dE: number, path: string): void {
  writeFileSync(path, encodeCvem(byDate, dE));
}

/** Reader used for round-trip checks; the production consumer is the
 * Python loader on the other side of the format. */
export function readCvem(path: string): { dE: number; byDate: EmbeddingsByDate } {
  const buf = readFileSync(path);
  if (buf.length < 12 || buf.toString("ascii", 0, 4) !== CVEM_MAGIC) {
    throw new Error("bad CVEM magic");
  }
  const version = buf.readUInt32LE(4);
  if (version !== CVEM_VERSION) throw new Error(`unsupported CVEM version ${version}`);
  const dE = buf.readUInt32LE(8);
  const byDate: EmbeddingsByDate = new Map();
  let off = 12;
  while (off < buf.length) {
    if (off + 12 > buf.length) throw new Error(`truncated CVEM record at offset ${off}`);
    const days = Number(buf.readBigInt64LE(off));
    const count = buf.readUInt32LE(off + 8);
    off += 12;
    const need = count * dE * 8;
    if (off + need > buf.length) throw new Error(`truncated CVEM record at offset ${off}`);
    const vectors: Float64Array[] = [];
    for (let i = 0; i < count; i++) {
      const v = new Float64Array(dE);
      for (let j = 0; j < dE; j++) {
        v[j] = buf.readDoubleLE(off);
        off += 8;
      }
      vectors.push(v);
    }
    byDate.set(daysToDate(days), vectors);
  }
  return { dE, byDate };
}
