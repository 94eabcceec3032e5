// Checkpoint format: a directory holding config.json plus weights.bin
// (little-endian float32, tensors in the fixed order listed below). The
// `init` command synthesizes a deterministic checkpoint from a seed; any
// checkpoint written in this format loads the same way.

import * as fs from "node:fs";
import * as path from "node:path";

import { SeededGaussian } from "./tensor.js";

export const ARCHITECTURE = "gqa-decoder";

export interface ModelConfig {
  architecture: string;
  vocab_size: number;
  dim: number;
  n_layers: number;
  n_heads: number;
  n_kv_heads: number;
  head_dim: number;
  hidden_dim: number;
  rope_theta: number;
  norm_eps: number;
}

export interface LayerWeights {
  attnNorm: Float64Array;
  wq: Float64Array; // [dim x n_heads*head_dim]
  wk: Float64Array; // [dim x n_kv_heads*head_dim]
  wv: Float64Array; // [dim x n_kv_heads*head_dim]
  wo: Float64Array; // [n_heads*head_dim x dim]
  mlpNorm: Float64Array;
  wGate: Float64Array; // [dim x hidden_dim]
  wUp: Float64Array; // [dim x hidden_dim]
  wDown: Float64Array; // [hidden_dim x dim]
}

export interface Checkpoint {
  config: ModelConfig;
  embedding: Float64Array; // [vocab_size x dim]
  layers: LayerWeights[];
  finalNorm: Float64Array;
}

function tensorSizes(config: ModelConfig): Array<[string, number]> {
  const { vocab_size, dim, n_heads, n_kv_heads, head_dim, hidden_dim, n_layers } = config;
  const sizes: Array<[string, number]> = [["embedding", vocab_size * dim]];
  for (let layer = 0; layer < n_layers; layer++) {
    sizes.push(
      [`layer${layer}.attn_norm`, dim],
      [`layer${layer}.wq`, dim * n_heads * head_dim],
      [`layer${layer}.wk`, dim * n_kv_heads * head_dim],
      [`layer${layer}.wv`, dim * n_kv_heads * head_dim],
      [`layer${layer}.wo`, n_heads * head_dim * dim],
      [`layer${layer}.mlp_norm`, dim],
      [`layer${layer}.w_gate`, dim * hidden_dim],
      [`layer${layer}.w_up`, dim * hidden_dim],
      [`layer${layer}.w_down`, hidden_dim * dim],
    );
  }
  sizes.push(["final_norm", dim]);
  return sizes;
}

export function validateConfig(config: ModelConfig): void {
  if (config.architecture !== ARCHITECTURE) {
    throw new Error(
      `unsupported architecture ${JSON.stringify(config.architecture)}; ` +
        `this exporter handles only "${ARCHITECTURE}" checkpoints`,
    );
  }
  if (config.dim !== config.n_heads * config.head_dim) {
    throw new Error("config: dim must equal n_heads * head_dim");
  }
  if (config.n_heads % config.n_kv_heads !== 0) {
    throw new Error("config: n_heads must be a multiple of n_kv_heads");
  }
  if (config.head_dim % 2 !== 0) {
    throw new Error("config: head_dim must be even for rotary embedding");
  }
}

/** Deterministic desk-scale checkpoint; same seed, same bytes. */
export function synthesizeCheckpoint(
  dir: string,
  config: ModelConfig,
  seed: number,
): void {
  validateConfig(config);
  const rng = new SeededGaussian(seed);
  const chunks: Float64Array[] = [];
  for (const [name, size] of tensorSizes(config)) {
    const t = new Float64Array(size);
    if (name.endsWith("norm")) {
      // norm gains near one so activations stay in range
      for (let i = 0; i < size; i++) t[i] = 1 + 0.02 * rng.nextGaussian();
    } else {
      rng.fill(t, 1 / Math.sqrt(config.dim));
    }
    chunks.push(t);
  }
  const total = chunks.reduce((acc, c) => acc + c.length, 0);
  const payload = Buffer.alloc(4 * total);
  let offset = 0;
  for (const chunk of chunks) {
    for (let i = 0; i < chunk.length; i++) {
      payload.writeFloatLE(Math.fround(chunk[i]), offset);
      offset += 4;
    }
  }
  fs.mkdirSync(dir, { recursive: true });
  fs.writeFileSync(path.join(dir, "config.json"), JSON.stringify(config, null, 2) + "\n");
  fs.writeFileSync(path.join(dir, "weights.bin"), payload);
}

export function defaultConfig(overrides: Partial<ModelConfig> = {}): ModelConfig {
  const base: ModelConfig = {
    architecture: ARCHITECTURE,
    vocab_size: 256,
    dim: 64,
    n_layers: 2,
    n_heads: 4,
    n_kv_heads: 2,
    head_dim: 16,
    hidden_dim: 128,
    rope_theta: 10000,
    norm_eps: 1e-5,
  };
  return { ...base, ...overrides };
}

export function loadCheckpoint(dir: string): Checkpoint {
  const configPath = path.join(dir, "config.json");
  if (!fs.existsSync(configPath)) {
    throw new Error(`${dir}: not a checkpoint directory (missing config.json)`);
  }
  const config = JSON.parse(fs.readFileSync(configPath, "utf-8")) as ModelConfig;
  validateConfig(config);
  const payload = fs.readFileSync(path.join(dir, "weights.bin"));
  const sizes = tensorSizes(config);
  const expected = 4 * sizes.reduce((acc, [, size]) => acc + size, 0);
  if (payload.length !== expected) {
    throw new Error(
      `${dir}: weights.bin holds ${payload.length} bytes, config implies ${expected}`,
    );
  }
  const tensors = new Map<string, Float64Array>();
  let offset = 0;
  for (const [name, size] of sizes) {
    const t = new Float64Array(size);
    for (let i = 0; i < size; i++) {
      t[i] = payload.readFloatLE(offset);
      offset += 4;
    }
    tensors.set(name, t);
  }
  const layers: LayerWeights[] = [];
  for (let layer = 0; layer < config.n_layers; layer++) {
    layers.push({
      attnNorm: tensors.get(`layer${layer}.attn_norm`)!,
      wq: tensors.get(`layer${layer}.wq`)!,
      wk: tensors.get(`layer${layer}.wk`)!,
      wv: tensors.get(`layer${layer}.wv`)!,
      wo: tensors.get(`layer${layer}.wo`)!,
      mlpNorm: tensors.get(`layer${layer}.mlp_norm`)!,
      wGate: tensors.get(`layer${layer}.w_gate`)!,
      wUp: tensors.get(`layer${layer}.w_up`)!,
      wDown: tensors.get(`layer${layer}.w_down`)!,
    });
  }
  return {
    config,
    embedding: tensors.get("embedding")!,
    layers,
    finalNorm: tensors.get("final_norm")!,
  };
}
