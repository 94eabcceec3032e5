// Decoder forward pass with per-head capture.
//
// The forward runs in float64. Captured tensors (post-rotary window
// queries, all post-rotary keys, all values, each head's output-matrix
// slice) are downcast to float32 on the way out — the same states the
// attention actually dots, so a consumer's softmax reproduces the
// model's attention weights without reimplementing position encoding.
// Grouped-KV heads are expanded: every query head gets its group's K/V.

import type { Checkpoint } from "./checkpoint.js";
import { matmul, ropeInPlace, rmsnorm, row, silu, softmaxInPlace, toFloat32, zeros, type Matrix } from "./tensor.js";

export interface HeadCapture {
  layer: number;
  head: number;
  n: number;
  window: number;
  headDim: number;
  modelDim: number;
  qWindow: Float32Array; // [window x headDim]
  keys: Float32Array; // [n x headDim]
  values: Float32Array; // [n x headDim]
  woSlice: Float32Array; // [headDim x modelDim]
}

export interface ForwardCapture {
  heads: HeadCapture[];
  /** Per layer: the attention block's output (pre-residual) for the last token. */
  attnBlockOutput: Float64Array[];
  tokens: number[];
}

function sliceHead(states: Matrix, head: number, headDim: number, pos: number): Float64Array {
  return row(states, pos).subarray(head * headDim, (head + 1) * headDim);
}

function packHead(states: Matrix, head: number, headDim: number): Float32Array {
  const n = states.rows;
  const out = new Float32Array(n * headDim);
  for (let pos = 0; pos < n; pos++) {
    out.set(toFloat32(sliceHead(states, head, headDim, pos)), pos * headDim);
  }
  return out;
}

export function forwardWithCapture(
  ckpt: Checkpoint,
  tokens: number[],
  window: number,
): ForwardCapture {
  const { config } = ckpt;
  const { dim, n_heads, n_kv_heads, head_dim, hidden_dim, rope_theta, norm_eps } = config;
  const n = tokens.length;
  if (window < 1 || window > n) {
    throw new Error(`window ${window} out of range for a ${n}-token prompt`);
  }
  const groupSize = n_heads / n_kv_heads;
  const scale = 1 / Math.sqrt(head_dim);

  const x = zeros(n, dim);
  for (let pos = 0; pos < n; pos++) {
    const token = tokens[pos];
    if (token < 0 || token >= config.vocab_size) {
      throw new Error(`token ${token} outside vocabulary of ${config.vocab_size}`);
    }
    row(x, pos).set(ckpt.embedding.subarray(token * dim, (token + 1) * dim));
  }

  const heads: HeadCapture[] = [];
  const attnBlockOutput: Float64Array[] = [];

  for (let layerIdx = 0; layerIdx < config.n_layers; layerIdx++) {
    const weights = ckpt.layers[layerIdx];
    const normed = zeros(n, dim);
    for (let pos = 0; pos < n; pos++) {
      row(normed, pos).set(rmsnorm(row(x, pos), weights.attnNorm, norm_eps));
    }
    const q = matmul(normed, { rows: dim, cols: n_heads * head_dim, data: weights.wq });
    const k = matmul(normed, { rows: dim, cols: n_kv_heads * head_dim, data: weights.wk });
    const v = matmul(normed, { rows: dim, cols: n_kv_heads * head_dim, data: weights.wv });

    for (let pos = 0; pos < n; pos++) {
      for (let head = 0; head < n_heads; head++) {
        ropeInPlace(sliceHead(q, head, head_dim, pos), pos, rope_theta);
      }
      for (let kvHead = 0; kvHead < n_kv_heads; kvHead++) {
        ropeInPlace(sliceHead(k, kvHead, head_dim, pos), pos, rope_theta);
      }
    }

    // causal attention, concatenated across heads
    const attnOut = zeros(n, n_heads * head_dim);
    for (let head = 0; head < n_heads; head++) {
      const kvHead = Math.floor(head / groupSize);
      for (let pos = 0; pos < n; pos++) {
        const qVec = sliceHead(q, head, head_dim, pos);
        const logits = new Float64Array(pos + 1);
        for (let s = 0; s <= pos; s++) {
          const kVec = sliceHead(k, kvHead, head_dim, s);
          let dot = 0;
          for (let i = 0; i < head_dim; i++) dot += qVec[i] * kVec[i];
          logits[s] = dot * scale;
        }
        softmaxInPlace(logits);
        const outVec = sliceHead(attnOut, head, head_dim, pos);
        for (let s = 0; s <= pos; s++) {
          const weight = logits[s];
          const vVec = sliceHead(v, kvHead, head_dim, s);
          for (let i = 0; i < head_dim; i++) outVec[i] += weight * vVec[i];
        }
      }
    }
    const blockOut = matmul(attnOut, { rows: n_heads * head_dim, cols: dim, data: weights.wo });
    attnBlockOutput.push(Float64Array.from(row(blockOut, n - 1)));

    // capture before the residual mixes the states away
    for (let head = 0; head < n_heads; head++) {
      const kvHead = Math.floor(head / groupSize);
      const qWindow = new Float32Array(window * head_dim);
      for (let w = 0; w < window; w++) {
        qWindow.set(toFloat32(sliceHead(q, head, head_dim, n - window + w)), w * head_dim);
      }
      const woSlice = new Float32Array(head_dim * dim);
      for (let r = 0; r < head_dim; r++) {
        const sourceRow = head * head_dim + r;
        for (let c = 0; c < dim; c++) {
          woSlice[r * dim + c] = Math.fround(weights.wo[sourceRow * dim + c]);
        }
      }
      heads.push({
        layer: layerIdx,
        head,
        n,
        window,
        headDim: head_dim,
        modelDim: dim,
        qWindow,
        keys: packHead(k, kvHead, head_dim),
        values: packHead(v, kvHead, head_dim),
        woSlice,
      });
    }

    for (let pos = 0; pos < n; pos++) {
      const xr = row(x, pos);
      const br = row(blockOut, pos);
      for (let i = 0; i < dim; i++) xr[i] += br[i];
    }

    const normed2 = zeros(n, dim);
    for (let pos = 0; pos < n; pos++) {
      row(normed2, pos).set(rmsnorm(row(x, pos), weights.mlpNorm, norm_eps));
    }
    const gate = matmul(normed2, { rows: dim, cols: hidden_dim, data: weights.wGate });
    const up = matmul(normed2, { rows: dim, cols: hidden_dim, data: weights.wUp });
    for (let i = 0; i < gate.data.length; i++) {
      gate.data[i] = silu(gate.data[i]) * up.data[i];
    }
    const down = matmul(gate, { rows: hidden_dim, cols: dim, data: weights.wDown });
    for (let pos = 0; pos < n; pos++) {
      const xr = row(x, pos);
      const dr = row(down, pos);
      for (let i = 0; i < dim; i++) xr[i] += dr[i];
    }
  }

  return { heads, attnBlockOutput, tokens };
}

/**
 * Recompute the last token's attention-block output from the captured
 * (downcast) tensors alone: per head softmax(q_last K^T / sqrt(d_h)),
 * weights times values, through the head's output slice, summed across
 * heads. The residual against the model's own block output is the
 * export's correctness oracle.
 */
export function reconstructionResidual(
  layerHeads: HeadCapture[],
  blockOutput: Float64Array,
): number {
  const modelDim = blockOutput.length;
  const rebuilt = new Float64Array(modelDim);
  for (const capture of layerHeads) {
    const { n, headDim } = capture;
    const scale = 1 / Math.sqrt(headDim);
    const qLast = capture.qWindow.subarray((capture.window - 1) * headDim);
    const logits = new Float64Array(n);
    for (let s = 0; s < n; s++) {
      let dot = 0;
      for (let i = 0; i < headDim; i++) dot += qLast[i] * capture.keys[s * headDim + i];
      logits[s] = dot * scale;
    }
    softmaxInPlace(logits);
    const headOut = new Float64Array(headDim);
    for (let s = 0; s < n; s++) {
      const weight = logits[s];
      for (let i = 0; i < headDim; i++) headOut[i] += weight * capture.values[s * headDim + i];
    }
    for (let r = 0; r < headDim; r++) {
      const h = headOut[r];
      for (let c = 0; c < modelDim; c++) rebuilt[c] += h * capture.woSlice[r * modelDim + c];
    }
  }
  let worst = 0;
  for (let c = 0; c < modelDim; c++) {
    worst = Math.max(worst, Math.abs(rebuilt[c] - blockOutput[c]));
  }
  return worst;
}
