/**
 * Prompt-list loading: either a plain text file (one prompt per line) or a
 * dataset prompts.tsv (filename<TAB>prompt). Duplicates after normalization
 * are dropped with a warning; order is first-seen.
 */
import { readFileSync } from "node:fs";

import { normalizePrompt } from "./normalize.js";

export interface PromptList {
  prompts: string[];
  duplicates: string[];
}

export function parsePromptText(text: string): PromptList {
  const prompts: string[] = [];
  const duplicates: string[] = [];
  const seen = new Set<string>();
  for (const line of text.split(/\r?\n/)) {
    if (!line.trim()) continue;
    const raw = line.includes("\t") ? line.split("\t").slice(1).join("\t") : line;
    const key = normalizePrompt(raw);
    if (!key) continue;
    if (seen.has(key)) {
      duplicates.push(key);
      continue;
    }
    seen.add(key);
    prompts.push(key);
  }
  return { prompts, duplicates };
}

export function loadPrompts(path: string): PromptList {
  return parsePromptText(readFileSync(path, "utf-8"));
}
