// Head dump writer: the byte layout shared with the Python core. One
// head per file, a directory per layer. Frozen per format_version:
//
//   bytes 0..3   magic "KVHD"
//   bytes 4..31  seven LE u32: version, n, n_window, head_dim, model_dim,
//                layer, head
//   bytes 32..   LE f32 row-major: q_window, keys, values, w_o_slice

import * as fs from "node:fs";
import * as path from "node:path";

import type { HeadCapture } from "./model.js";

export const MAGIC = "KVHD";
export const FORMAT_VERSION = 1;
const HEADER_BYTES = 32;

export function dumpFileName(layer: number, head: number): string {
  const layerDir = `layer_${String(layer).padStart(2, "0")}`;
  const headFile = `head_${String(head).padStart(3, "0")}.kvhd`;
  return path.join(layerDir, headFile);
}

export function encodeHeadDump(capture: HeadCapture): Buffer {
  const { n, window, headDim, modelDim } = capture;
  const payloadFloats =
    window * headDim + 2 * n * headDim + headDim * modelDim;
  const buffer = Buffer.alloc(HEADER_BYTES + 4 * payloadFloats);
  buffer.write(MAGIC, 0, "ascii");
  const header = [FORMAT_VERSION, n, window, headDim, modelDim, capture.layer, capture.head];
  header.forEach((value, i) => buffer.writeUInt32LE(value, 4 + 4 * i));
  let offset = HEADER_BYTES;
  for (const tensor of [capture.qWindow, capture.keys, capture.values, capture.woSlice]) {
    for (let i = 0; i < tensor.length; i++) {
      buffer.writeFloatLE(tensor[i], offset);
      offset += 4;
    }
  }
  return buffer;
}

export function writeHeadDump(capture: HeadCapture, root: string): string {
  const target = path.join(root, dumpFileName(capture.layer, capture.head));
  fs.mkdirSync(path.dirname(target), { recursive: true });
  const tmp = `${target}.part`;
  fs.writeFileSync(tmp, encodeHeadDump(capture));
  fs.renameSync(tmp, target);
  return target;
}

/** Reader used by the exporter's own tests to validate written bytes. */
export function readHeadDump(file: string): HeadCapture {
  const blob = fs.readFileSync(file);
  if (blob.length < HEADER_BYTES) {
    throw new Error(`${file}: truncated header`);
  }
  if (blob.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error(`${file}: not a HeadDump`);
  }
  const [version, n, window, headDim, modelDim, layer, head] = Array.from(
    { length: 7 },
    (_, i) => blob.readUInt32LE(4 + 4 * i),
  );
  if (version !== FORMAT_VERSION) {
    throw new Error(`${file}: unsupported format_version ${version}`);
  }
  const payloadFloats = window * headDim + 2 * n * headDim + headDim * modelDim;
  if (blob.length !== HEADER_BYTES + 4 * payloadFloats) {
    throw new Error(
      `${file}: length mismatch, expected ${HEADER_BYTES + 4 * payloadFloats} bytes, got ${blob.length}`,
    );
  }
  const readTensor = (offsetFloats: number, count: number): Float32Array => {
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      out[i] = blob.readFloatLE(HEADER_BYTES + 4 * (offsetFloats + i));
    }
    return out;
  };
  let cursor = 0;
  const qWindow = readTensor(cursor, window * headDim);
  cursor += window * headDim;
  const keys = readTensor(cursor, n * headDim);
  cursor += n * headDim;
  const values = readTensor(cursor, n * headDim);
  cursor += n * headDim;
  const woSlice = readTensor(cursor, headDim * modelDim);
  return { layer, head, n, window, headDim, modelDim, qWindow, keys, values, woSlice };
}
