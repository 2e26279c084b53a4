/**
 * On-disk formats consumed by the cascade engine.
 *
 * Prediction binary: magic "CADSPRED" (8 ASCII bytes), uint32-LE version
 * (1), uint64-LE N and C, then N*C float32-LE probabilities row-major.
 * Labels: one decimal integer per line.  Manifest: JSON with dataset,
 * labels path, and per-expert entries; extra keys (order hash, provenance)
 * are ignored by the loader.
 */

import { createHash } from "node:crypto";
import { mkdirSync, readFileSync, renameSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";

export const PREDICTION_MAGIC = "CADSPRED";
export const PREDICTION_VERSION = 1;
const HEADER_BYTES = 8 + 4 + 8 + 8;

export interface PredictionTable {
  nSamples: number;
  nClasses: number;
  rows: Float32Array; // row-major
}

export function encodePredictions(table: PredictionTable): Buffer {
  const { nSamples, nClasses, rows } = table;
  if (rows.length !== nSamples * nClasses) {
    throw new Error(
      `row buffer has ${rows.length} values, expected ${nSamples * nClasses}`,
    );
  }
  const header = Buffer.alloc(HEADER_BYTES);
  header.write(PREDICTION_MAGIC, 0, "ascii");
  header.writeUInt32LE(PREDICTION_VERSION, 8);
  header.writeBigUInt64LE(BigInt(nSamples), 12);
  header.writeBigUInt64LE(BigInt(nClasses), 20);
  const payload = Buffer.alloc(rows.length * 4);
  for (let i = 0; i < rows.length; i++) {
    payload.writeFloatLE(rows[i], i * 4);
  }
  return Buffer.concat([header, payload]);
}

export function decodePredictions(data: Buffer): PredictionTable {
  if (data.length < HEADER_BYTES) {
    throw new Error("prediction file is truncated (no header)");
  }
  const magic = data.subarray(0, 8).toString("ascii");
  if (magic !== PREDICTION_MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(magic)}`);
  }
  const version = data.readUInt32LE(8);
  if (version !== PREDICTION_VERSION) {
    throw new Error(`unsupported version ${version}`);
  }
  const nSamples = Number(data.readBigUInt64LE(12));
  const nClasses = Number(data.readBigUInt64LE(20));
  const expected = HEADER_BYTES + 4 * nSamples * nClasses;
  if (data.length !== expected) {
    throw new Error(`file has ${data.length} bytes, expected ${expected}`);
  }
  const rows = new Float32Array(nSamples * nClasses);
  for (let i = 0; i < rows.length; i++) {
    rows[i] = data.readFloatLE(HEADER_BYTES + i * 4);
  }
  return { nSamples, nClasses, rows };
}

/** Write via a temp file and rename so partial outputs never appear. */
export function atomicWrite(path: string, data: Buffer | string): void {
  mkdirSync(dirname(path), { recursive: true });
  const tmp = join(dirname(path), `.tmp-${process.pid}-${Math.random().toString(36).slice(2)}`);
  writeFileSync(tmp, data);
  renameSync(tmp, path);
}

export function writePredictionFile(path: string, table: PredictionTable): void {
  atomicWrite(path, encodePredictions(table));
}

export function readPredictionFile(path: string): PredictionTable {
  return decodePredictions(readFileSync(path));
}

export function writeLabels(path: string, labels: Int32Array | number[]): void {
  let text = "";
  for (const value of labels) {
    text += `${value}\n`;
  }
  atomicWrite(path, text);
}

export function readLabels(path: string): number[] {
  return readFileSync(path, "utf8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => Number.parseInt(line, 10));
}

/** Digest of the exact sample order one model processed. */
export function orderHash(datasetId: string, sampleIndices: number[]): string {
  const hash = createHash("sha256");
  hash.update(datasetId);
  for (const index of sampleIndices) {
    hash.update(`:${index}`);
  }
  return hash.digest("hex");
}

export interface ManifestExpert {
  name: string;
  tier: "Scout" | "Specialist" | "Oracle";
  params_millions: number;
  gflops: number;
  predictions: string;
  gflops_source: "catalog" | "counted";
  order_hash: string;
}

export interface Manifest {
  dataset: string;
  labels: string;
  order_hash: string;
  experts: ManifestExpert[];
}

export function writeManifest(path: string, manifest: Manifest): void {
  atomicWrite(path, JSON.stringify(manifest, null, 2) + "\n");
}
