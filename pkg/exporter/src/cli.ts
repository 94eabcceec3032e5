#!/usr/bin/env node
// Subcommands:
//   init   --out DIR [--seed N --dim --layers --heads --kv-heads --head-dim --hidden-dim]
//   export --model DIR --prompt FILE --out DIR [--window N --layers 0,1 --heads 0,2]

import { pathToFileURL } from "node:url";

import { defaultConfig, synthesizeCheckpoint } from "./checkpoint.js";
import { runExport } from "./export.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new Error(`bad flag pair near ${JSON.stringify(key)}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function need(flags: Map<string, string>, key: string): string {
  const value = flags.get(key);
  if (value === undefined) throw new Error(`missing required flag --${key}`);
  return value;
}

function intFlag(flags: Map<string, string>, key: string, fallback: number): number {
  const raw = flags.get(key);
  if (raw === undefined) return fallback;
  const value = Number.parseInt(raw, 10);
  if (!Number.isFinite(value)) throw new Error(`--${key} expects an integer`);
  return value;
}

function listFlag(flags: Map<string, string>, key: string): number[] | undefined {
  const raw = flags.get(key);
  if (raw === undefined) return undefined;
  return raw.split(",").filter(Boolean).map((s) => Number.parseInt(s, 10));
}

function cmdInit(flags: Map<string, string>): number {
  const out = need(flags, "out");
  const seed = intFlag(flags, "seed", 0);
  const dim = intFlag(flags, "dim", 64);
  const headDim = intFlag(flags, "head-dim", 16);
  const config = defaultConfig({
    dim,
    head_dim: headDim,
    n_heads: intFlag(flags, "heads", Math.floor(dim / headDim)),
    n_kv_heads: intFlag(flags, "kv-heads", Math.max(1, Math.floor(dim / headDim / 2))),
    n_layers: intFlag(flags, "layers", 2),
    hidden_dim: intFlag(flags, "hidden-dim", 2 * dim),
  });
  synthesizeCheckpoint(out, config, seed);
  console.log(`wrote checkpoint (seed ${seed}) under ${out}`);
  return 0;
}

function cmdExport(flags: Map<string, string>): number {
  const result = runExport({
    modelDir: need(flags, "model"),
    promptPath: need(flags, "prompt"),
    outDir: need(flags, "out"),
    window: intFlag(flags, "window", 32),
    layers: listFlag(flags, "layers"),
    heads: listFlag(flags, "heads"),
  });
  console.log(
    `exported ${result.files.length} head dumps from a ${result.tokenCount}-token prompt; ` +
      `max reconstruction residual ${result.maxResidual.toExponential(3)}`,
  );
  return 0;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "init") return cmdInit(parseFlags(rest));
    if (command === "export") return cmdExport(parseFlags(rest));
    console.error("usage: kvtriage-exporter <init|export> [flags]");
    return 1;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    return 2;
  }
}

const entry = process.argv[1];
if (entry && import.meta.url === pathToFileURL(entry).href) {
  process.exit(main(process.argv.slice(2)));
}
