/**
 * Text encoders producing pooled prompt embeddings.
 *
 * The production implementation wraps a pretrained CLIP text tower via
 * transformers.js (ONNX runtime, eval mode, deterministic for a fixed model
 * snapshot). Embeddings are returned raw, not L2-normalized; the consumer
 * decides normalization. Tests inject deterministic fakes through the same
 * interface.
 */

export interface EncodeResult {
  vectors: Float32Array[];
  dim: number;
  /** prompts whose tokenization exceeded the model's context and were truncated */
  truncated: string[];
}

export interface TextEncoder {
  encode(prompts: string[]): Promise<EncodeResult>;
}

export class ClipTextEncoder implements TextEncoder {
  private modelId: string;
  private batchSize: number;

  constructor(modelId = "Xenova/clip-vit-base-patch32", batchSize = 16) {
    this.modelId = modelId;
    this.batchSize = batchSize;
  }

  async encode(prompts: string[]): Promise<EncodeResult> {
    // optional dependency; resolved at call time so the rest of the package
    // works without the model runtime installed
    const moduleName = "@xenova/transformers";
    let transformers: any;
    try {
      transformers = await import(moduleName);
    } catch (err) {
      throw new Error(
        `model runtime unavailable (install the optional dependency ${moduleName}): ` +
        `${(err as Error).message}`,
      );
    }
    const { AutoTokenizer, CLIPTextModelWithProjection } = transformers;
    const tokenizer = await AutoTokenizer.from_pretrained(this.modelId);
    const model = await CLIPTextModelWithProjection.from_pretrained(this.modelId, {
      quantized: false,
    });

    const contextLength: number = (tokenizer as any).model_max_length ?? 77;
    const truncated: string[] = [];
    for (const prompt of prompts) {
      const ids = tokenizer.encode(prompt);
      if (ids.length > contextLength) {
        truncated.push(prompt);
      }
    }

    const vectors: Float32Array[] = [];
    let dim = 0;
    for (let start = 0; start < prompts.length; start += this.batchSize) {
      const batch = prompts.slice(start, start + this.batchSize);
      const inputs = tokenizer(batch, { padding: true, truncation: true });
      const output = await model(inputs);
      const embeds = output.text_embeds; // (batch, dim)
      dim = embeds.dims[embeds.dims.length - 1];
      const data = embeds.data as Float32Array;
      for (let i = 0; i < batch.length; i++) {
        vectors.push(new Float32Array(data.subarray(i * dim, (i + 1) * dim)));
      }
    }
    return { vectors, dim, truncated };
  }
}
