#!/usr/bin/env node
/**
 * clip-ctxe-export --input prompts.txt|prompts.tsv --out file.ctxe
 *                  [--model-id Xenova/clip-vit-base-patch32] [--batch-size 16]
 *
 * Encodes every distinct normalized prompt with a pretrained CLIP text tower
 * and writes a CTXE v1 embedding file. Model or network failures exit 1.
 */
import { ClipTextEncoder } from "./encoder.js";
import { exportEmbeddings } from "./export.js";
import { loadPrompts } from "./prompts.js";

interface Args {
  input: string;
  out: string;
  modelId: string;
  batchSize: number;
}

function parseArgs(argv: string[]): Args {
  const args: Partial<Args> = { modelId: "Xenova/clip-vit-base-patch32", batchSize: 16 };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      if (i + 1 >= argv.length) throw new Error(`missing value for ${flag}`);
      return argv[++i];
    };
    switch (flag) {
      case "--input": args.input = next(); break;
      case "--out": args.out = next(); break;
      case "--model-id": args.modelId = next(); break;
      case "--batch-size": args.batchSize = parseInt(next(), 10); break;
      case "--help":
      case "-h":
        console.log("usage: clip-ctxe-export --input prompts.txt --out file.ctxe " +
          "[--model-id ID] [--batch-size N]");
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.input || !args.out) {
    throw new Error("--input and --out are required (see --help)");
  }
  return args as Args;
}

async function main(): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  try {
    const { prompts, duplicates } = loadPrompts(args.input);
    const encoder = new ClipTextEncoder(args.modelId, args.batchSize);
    const report = await exportEmbeddings(prompts, duplicates, encoder, args.out);
    console.log(`wrote ${report.count} embeddings (dim ${report.dim}) to ${args.out}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

main().then((code) => process.exit(code));
