/** The export pipeline: prompt list -> encoder -> CTXE file. */
import { EmbeddingRecord, decodeCtxe, encodeCtxe, writeCtxe } from "./ctxe.js";
import { TextEncoder } from "./encoder.js";

export interface ExportReport {
  count: number;
  dim: number;
  duplicates: string[];
  truncated: string[];
}

export async function exportEmbeddings(
  prompts: string[],
  duplicates: string[],
  encoder: TextEncoder,
  outPath: string,
  warn: (msg: string) => void = console.warn,
): Promise<ExportReport> {
  if (prompts.length === 0) {
    throw new Error("no prompts to export");
  }
  if (duplicates.length > 0) {
    warn(`dropped ${duplicates.length} duplicate prompt(s) after normalization: ` +
      duplicates.slice(0, 5).map((d) => JSON.stringify(d)).join(", "));
  }
  const { vectors, dim, truncated } = await encoder.encode(prompts);
  if (truncated.length > 0) {
    warn(`truncated ${truncated.length} prompt(s) that exceeded the context window: ` +
      truncated.slice(0, 5).map((t) => JSON.stringify(t)).join(", "));
  }
  if (vectors.length !== prompts.length) {
    throw new Error(`encoder returned ${vectors.length} vectors for ${prompts.length} prompts`);
  }
  const records: EmbeddingRecord[] = prompts.map((prompt, i) => ({
    prompt,
    vector: vectors[i],
  }));
  writeCtxe(outPath, records);
  return { count: prompts.length, dim, duplicates, truncated };
}

/** Per-record cosine similarity between two CTXE buffers (re-export check). */
export function reexportCosines(a: Buffer, b: Buffer): Map<string, number> {
  const da = decodeCtxe(a);
  const db = decodeCtxe(b);
  if (da.dim !== db.dim) {
    throw new Error(`dims disagree: ${da.dim} vs ${db.dim}`);
  }
  const out = new Map<string, number>();
  for (const [prompt, va] of da.records) {
    const vb = db.records.get(prompt);
    if (!vb) {
      throw new Error(`prompt missing from re-export: ${JSON.stringify(prompt)}`);
    }
    let dot = 0;
    let na = 0;
    let nb = 0;
    for (let i = 0; i < va.length; i++) {
      dot += va[i] * vb[i];
      na += va[i] * va[i];
      nb += vb[i] * vb[i];
    }
    out.set(prompt, dot / Math.sqrt(na * nb));
  }
  return out;
}

export { encodeCtxe };
