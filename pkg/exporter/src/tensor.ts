// Small dense kernels for the decoder forward pass. Everything runs in
// float64 and is downcast to float32 only when tensors leave the process.

export type Matrix = {
  rows: number;
  cols: number;
  data: Float64Array; // row-major
};

export function zeros(rows: number, cols: number): Matrix {
  return { rows, cols, data: new Float64Array(rows * cols) };
}

export function row(m: Matrix, r: number): Float64Array {
  return m.data.subarray(r * m.cols, (r + 1) * m.cols);
}

/** out[r,:] = x[r,:] @ w, with w stored [inDim x outDim]. */
export function matmul(x: Matrix, w: Matrix): Matrix {
  if (x.cols !== w.rows) {
    throw new Error(`matmul shape mismatch: ${x.cols} vs ${w.rows}`);
  }
  const out = zeros(x.rows, w.cols);
  for (let r = 0; r < x.rows; r++) {
    const xr = row(x, r);
    const or = row(out, r);
    for (let k = 0; k < x.cols; k++) {
      const xv = xr[k];
      if (xv === 0) continue;
      const wr = row(w, k);
      for (let c = 0; c < w.cols; c++) {
        or[c] += xv * wr[c];
      }
    }
  }
  return out;
}

export function rmsnorm(x: Float64Array, weight: Float64Array, eps: number): Float64Array {
  let ss = 0;
  for (let i = 0; i < x.length; i++) ss += x[i] * x[i];
  const inv = 1 / Math.sqrt(ss / x.length + eps);
  const out = new Float64Array(x.length);
  for (let i = 0; i < x.length; i++) out[i] = x[i] * inv * weight[i];
  return out;
}

export function softmaxInPlace(x: Float64Array): void {
  let max = -Infinity;
  for (let i = 0; i < x.length; i++) if (x[i] > max) max = x[i];
  let sum = 0;
  for (let i = 0; i < x.length; i++) {
    x[i] = Math.exp(x[i] - max);
    sum += x[i];
  }
  for (let i = 0; i < x.length; i++) x[i] /= sum;
}

export function silu(x: number): number {
  return x / (1 + Math.exp(-x));
}

/**
 * Rotary position embedding applied to one head vector in place:
 * consecutive pairs (2i, 2i+1) rotate by pos / theta^(2i/dim).
 */
export function ropeInPlace(v: Float64Array, pos: number, theta: number): void {
  const dim = v.length;
  for (let i = 0; i < dim - 1; i += 2) {
    const freq = 1 / Math.pow(theta, i / dim);
    const angle = pos * freq;
    const cos = Math.cos(angle);
    const sin = Math.sin(angle);
    const a = v[i];
    const b = v[i + 1];
    v[i] = a * cos - b * sin;
    v[i + 1] = a * sin + b * cos;
  }
}

export function toFloat32(x: Float64Array): Float32Array {
  return Float32Array.from(x);
}

/** Deterministic PRNG (splitmix64) feeding a Box-Muller gaussian. */
export class SeededGaussian {
  private state: bigint;
  private spare: number | null = null;

  constructor(seed: number) {
    this.state = BigInt.asUintN(64, BigInt(seed) * 0x9e3779b97f4a7c15n + 0x2545f4914f6cdd1dn);
  }

  nextUniform(): number {
    this.state = BigInt.asUintN(64, this.state + 0x9e3779b97f4a7c15n);
    let z = this.state;
    z = BigInt.asUintN(64, (z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n);
    z = BigInt.asUintN(64, (z ^ (z >> 27n)) * 0x94d049bb133111ebn);
    z = z ^ (z >> 31n);
    return Number(z >> 11n) / 9007199254740992; // 53-bit mantissa in [0, 1)
  }

  nextGaussian(): number {
    if (this.spare !== null) {
      const value = this.spare;
      this.spare = null;
      return value;
    }
    let u = 0;
    let v = 0;
    do {
      u = this.nextUniform();
    } while (u === 0);
    v = this.nextUniform();
    const mag = Math.sqrt(-2 * Math.log(u));
    this.spare = mag * Math.sin(2 * Math.PI * v);
    return mag * Math.cos(2 * Math.PI * v);
  }

  fill(out: Float64Array, scale: number): void {
    for (let i = 0; i < out.length; i++) out[i] = this.nextGaussian() * scale;
  }
}
