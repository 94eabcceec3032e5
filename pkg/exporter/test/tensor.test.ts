import assert from "node:assert/strict";
import { test } from "node:test";

import {
  matmul,
  rmsnorm,
  ropeInPlace,
  SeededGaussian,
  softmaxInPlace,
  zeros,
} from "../src/tensor.js";

test("matmul against a hand example", () => {
  const x = zeros(1, 2);
  x.data.set([1, 2]);
  const w = zeros(2, 3);
  w.data.set([1, 0, 1, 0, 1, -1]);
  const out = matmul(x, w);
  assert.deepEqual(Array.from(out.data), [1, 2, -1]);
});

test("matmul rejects mismatched shapes", () => {
  assert.throws(() => matmul(zeros(1, 2), zeros(3, 1)), /shape mismatch/);
});

test("softmax sums to one and is shift invariant", () => {
  const a = Float64Array.from([1.5, -2, 0.25, 9]);
  const b = Float64Array.from(a, (v) => v + 123.5);
  softmaxInPlace(a);
  softmaxInPlace(b);
  let sum = 0;
  for (const v of a) sum += v;
  assert.ok(Math.abs(sum - 1) < 1e-12);
  for (let i = 0; i < a.length; i++) assert.ok(Math.abs(a[i] - b[i]) < 1e-12);
});

test("rmsnorm yields unit mean square under unit gains", () => {
  const x = Float64Array.from([3, -1, 2, 0.5]);
  const out = rmsnorm(x, Float64Array.from([1, 1, 1, 1]), 0);
  let ms = 0;
  for (const v of out) ms += v * v;
  assert.ok(Math.abs(ms / out.length - 1) < 1e-12);
});

test("rotary embedding preserves vector norm and relative angles", () => {
  const v = Float64Array.from([1, 0.5, -2, 0.25]);
  const before = Math.hypot(...v);
  ropeInPlace(v, 7, 10000);
  assert.ok(Math.abs(Math.hypot(...v) - before) < 1e-12);

  // dot of two rotated vectors depends only on their position gap
  const dotAt = (posA: number, posB: number): number => {
    const a = Float64Array.from([0.3, -1, 0.7, 0.2]);
    const b = Float64Array.from([1.1, 0.4, -0.5, 0.9]);
    ropeInPlace(a, posA, 10000);
    ropeInPlace(b, posB, 10000);
    let dot = 0;
    for (let i = 0; i < a.length; i++) dot += a[i] * b[i];
    return dot;
  };
  assert.ok(Math.abs(dotAt(3, 5) - dotAt(10, 12)) < 1e-9);
});

test("seeded gaussian is deterministic and roughly standard", () => {
  const a = new SeededGaussian(42);
  const b = new SeededGaussian(42);
  const first = Array.from({ length: 5 }, () => a.nextGaussian());
  const second = Array.from({ length: 5 }, () => b.nextGaussian());
  assert.deepEqual(first, second);

  const rng = new SeededGaussian(7);
  let sum = 0;
  let sumSq = 0;
  const count = 20000;
  for (let i = 0; i < count; i++) {
    const v = rng.nextGaussian();
    sum += v;
    sumSq += v * v;
  }
  assert.ok(Math.abs(sum / count) < 0.05);
  assert.ok(Math.abs(sumSq / count - 1) < 0.05);
});
