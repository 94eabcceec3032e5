// Export orchestration: load checkpoint, run the prompt, verify every
// layer's reconstruction residual, then write head dumps.

import * as fs from "node:fs";

import { loadCheckpoint } from "./checkpoint.js";
import { forwardWithCapture, reconstructionResidual, type HeadCapture } from "./model.js";
import { writeHeadDump } from "./headdump.js";

/** Residual gate: downcast noise sits orders of magnitude below this. */
export const RECONSTRUCTION_TOLERANCE = 1e-2;

export interface ExportConfig {
  modelDir: string;
  promptPath: string;
  outDir: string;
  window: number;
  layers?: number[]; // omit = all
  heads?: number[]; // omit = all
}

export interface ExportResult {
  files: string[];
  tokenCount: number;
  maxResidual: number;
  residualsPerLayer: number[];
}

/** Byte-level tokenization: one token per prompt byte. */
export function tokenizePrompt(promptPath: string, vocabSize: number): number[] {
  const bytes = fs.readFileSync(promptPath);
  const tokens: number[] = [];
  for (const byte of bytes) tokens.push(byte % vocabSize);
  return tokens;
}

export function runExport(config: ExportConfig): ExportResult {
  const ckpt = loadCheckpoint(config.modelDir);
  const tokens = tokenizePrompt(config.promptPath, ckpt.config.vocab_size);
  if (tokens.length <= config.window) {
    throw new Error(
      `prompt tokenizes to ${tokens.length} tokens, need more than the window (${config.window})`,
    );
  }
  const capture = forwardWithCapture(ckpt, tokens, config.window);

  // reconstruction gate: every layer must rebuild its own attention
  // output from the captured tensors before anything touches disk
  const residuals: number[] = [];
  for (let layer = 0; layer < ckpt.config.n_layers; layer++) {
    const layerHeads = capture.heads.filter((h) => h.layer === layer);
    const residual = reconstructionResidual(layerHeads, capture.attnBlockOutput[layer]);
    residuals.push(residual);
    if (residual > RECONSTRUCTION_TOLERANCE) {
      throw new Error(
        `reconstruction check failed at layer ${layer}: residual ${residual.toExponential(3)} ` +
          `exceeds ${RECONSTRUCTION_TOLERANCE}; aborting export`,
      );
    }
  }

  const wantLayer = (l: number) => !config.layers || config.layers.includes(l);
  const wantHead = (h: number) => !config.heads || config.heads.includes(h);
  const selected = capture.heads.filter((h) => wantLayer(h.layer) && wantHead(h.head));
  if (selected.length === 0) {
    throw new Error("layer/head filter selected nothing to export");
  }
  const files = selected.map((h: HeadCapture) => writeHeadDump(h, config.outDir));
  return {
    files,
    tokenCount: tokens.length,
    maxResidual: Math.max(...residuals),
    residualsPerLayer: residuals,
  };
}
