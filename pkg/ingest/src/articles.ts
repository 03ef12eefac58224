/** Article inputs: CSV (id, date, text) or JSONL with the same fields. */

import { readFileSync } from "node:fs";

export interface ArticleRecord {
  id: string;
  date: string; // ISO-8601
  text: string;
}

function validate(rec: ArticleRecord, where: string): ArticleRecord {
  if (!rec.id) throw new Error(`${where}: missing article id`);
  const m = /^(\d{4})-(\d{2})-(\d{2})$/.exec(rec.date ?? "");
  if (m) {
    const [y, mo, da] = [Number(m[1]), Number(m[2]), Number(m[3])];
    const dt = new Date(Date.UTC(y, mo - 1, da));
    if (dt.getUTCFullYear() !== y || dt.getUTCMonth() !== mo - 1 || dt.getUTCDate() !== da) {
      throw new Error(`${where}: invalid date ${rec.date}`);
    }
  } else {
    throw new Error(`${where}: invalid date ${rec.date!}`);
  }
  if (!rec.text || rec.text.trim() === "") {
    throw new Error(`${where}: empty article body (id ${rec.id})`);
  }
  return rec;
}

/** Minimal CSV with quoting support for the text column. */
function splitCsvLine(line: string): string[] {
  const out: string[] = [];
  let cur = "";
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const c = line[i];
    if (quoted) {
      if (c === '"') {
        if (line[i + 1] === '"') {
          cur += '"';
          i++;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c === '"') {
      quoted = true;
    } else if (c === ",") {
      out.push(cur);
      cur = "";
    } else {
      cur += c;
    }
  }
  out.push(cur);
  return out;
}

export function readArticlesCsv(path: string): ArticleRecord[] {
  const lines = readFileSync(path, "utf-8").split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) throw new Error("empty article file");
  const header = splitCsvLine(lines[0]);
  const idx = {
    id: header.indexOf("id"),
    date: header.indexOf("date"),
    text: header.indexOf("text"),
  };
  if (idx.id < 0 || idx.date < 0 || idx.text < 0) {
    throw new Error("article CSV needs columns id, date, text");
  }
  return lines.slice(1).map((line, i) => {
    const cells = splitCsvLine(line);
    return validate(
      { id: cells[idx.id], date: cells[idx.date], text: cells[idx.text] },
      `row ${i + 2}`,
    );
  });
}

export function readArticlesJsonl(path: string): ArticleRecord[] {
  const lines = readFileSync(path, "utf-8").split(/\r?\n/).filter((l) => l.trim().length > 0);
  return lines.map((line, i) => {
    const obj = JSON.parse(line);
    return validate({ id: obj.id, date: obj.date, text: obj.text }, `line ${i + 1}`);
  });
}

export function readArticles(path: string): ArticleRecord[] {
  return path.endsWith(".jsonl") ? readArticlesJsonl(path) : readArticlesCsv(path);
}
