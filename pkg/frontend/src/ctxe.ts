/**
 * CTXE v1 writer (little-endian):
 *   magic "CTXE" | u32 version=1 | u32 record count | u32 dim
 *   per record: u32 byte length | UTF-8 normalized prompt | dim * float32
 *
 * Records are sorted by prompt code points so identical inputs produce
 * identical bytes. The file is written atomically (temp file + rename).
 */
import { randomBytes } from "node:crypto";
import { mkdirSync, renameSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";

import { normalizePrompt } from "./normalize.js";

export const CTXE_MAGIC = "CTXE";
export const CTXE_VERSION = 1;

export interface EmbeddingRecord {
  prompt: string;
  vector: Float32Array;
}

function compareCodePoints(a: string, b: string): number {
  return a < b ? -1 : a > b ? 1 : 0;
}

export function encodeCtxe(records: EmbeddingRecord[]): Buffer {
  let dim = 0;
  const normalized: Array<[string, Float32Array]> = [];
  for (const { prompt, vector } of records) {
    const key = normalizePrompt(prompt);
    if (!key) {
      throw new Error("cannot store an empty prompt");
    }
    if (normalized.length === 0) {
      dim = vector.length;
    } else if (vector.length !== dim) {
      throw new Error(`embedding dims disagree: ${vector.length} vs ${dim}`);
    }
    normalized.push([key, vector]);
  }
  const seen = new Set<string>();
  for (const [key] of normalized) {
    if (seen.has(key)) {
      throw new Error(`duplicate prompt after normalization: ${JSON.stringify(key)}`);
    }
    seen.add(key);
  }
  normalized.sort((x, y) => compareCodePoints(x[0], y[0]));

  const chunks: Buffer[] = [];
  const header = Buffer.alloc(16);
  header.write(CTXE_MAGIC, 0, "ascii");
  header.writeUInt32LE(CTXE_VERSION, 4);
  header.writeUInt32LE(normalized.length, 8);
  header.writeUInt32LE(dim, 12);
  chunks.push(header);
  for (const [key, vector] of normalized) {
    const raw = Buffer.from(key, "utf-8");
    const len = Buffer.alloc(4);
    len.writeUInt32LE(raw.length, 0);
    chunks.push(len, raw);
    const payload = Buffer.alloc(4 * dim);
    for (let i = 0; i < dim; i++) {
      payload.writeFloatLE(vector[i], 4 * i);
    }
    chunks.push(payload);
  }
  return Buffer.concat(chunks);
}

export function writeCtxe(path: string, records: EmbeddingRecord[]): void {
  const blob = encodeCtxe(records);
  mkdirSync(dirname(path) || ".", { recursive: true });
  const tmp = join(dirname(path) || ".", `.ctxe-${randomBytes(6).toString("hex")}.tmp`);
  writeFileSync(tmp, blob);
  renameSync(tmp, path);
}

/** Minimal reader used by the re-export comparison and tests. */
export function decodeCtxe(blob: Buffer): { dim: number; records: Map<string, Float32Array> } {
  const need = (offset: number, count: number, what: string) => {
    if (offset + count > blob.length) {
      throw new Error(`truncated CTXE buffer at byte ${offset}: expected ${what}`);
    }
  };
  need(0, 4, "magic");
  if (blob.toString("ascii", 0, 4) !== CTXE_MAGIC) {
    throw new Error(`bad magic at byte 0: ${JSON.stringify(blob.toString("ascii", 0, 4))}`);
  }
  need(4, 12, "header");
  const version = blob.readUInt32LE(4);
  if (version !== CTXE_VERSION) {
    throw new Error(`unsupported CTXE version ${version}`);
  }
  const count = blob.readUInt32LE(8);
  const dim = blob.readUInt32LE(12);
  const records = new Map<string, Float32Array>();
  let pos = 16;
  for (let i = 0; i < count; i++) {
    need(pos, 4, `record ${i} prompt length`);
    const nlen = blob.readUInt32LE(pos);
    pos += 4;
    need(pos, nlen, `record ${i} prompt bytes`);
    const prompt = blob.toString("utf-8", pos, pos + nlen);
    pos += nlen;
    need(pos, 4 * dim, `record ${i} payload`);
    const vec = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      vec[j] = blob.readFloatLE(pos + 4 * j);
    }
    pos += 4 * dim;
    records.set(prompt, vec);
  }
  if (pos !== blob.length) {
    throw new Error(`${blob.length - pos} trailing bytes at byte ${pos}`);
  }
  return { dim, records };
}
