/**
 * Prompt normalization, byte-for-byte identical to the segmentation package:
 * trim, lowercase, collapse internal whitespace runs to single spaces.
 */
export function normalizePrompt(prompt: string): string {
  return prompt.split(/\s+/).filter((p) => p.length > 0).join(" ").toLowerCase();
}
