/**
 * Procedural image datasets.
 *
 * Each class owns a seeded frequency/phase signature; a sample is its
 * class pattern plus per-sample noise.  Fully determined by
 * (dataset id, seed, index), so any prefix of the stream is reproducible
 * and identical across models in one export job.
 */

import { childSeed, mulberry32 } from "./rng.js";

export interface DatasetSpec {
  id: string;
  nClasses: number;
  size: number; // square images, size x size x 3
  noise: number;
}

export interface Sample {
  index: number;
  label: number;
  pixels: Float32Array; // size*size*3, values in [0, 1]
}

const REGISTRY: Record<string, Omit<DatasetSpec, "id">> = {
  "synth-rgb-10": { nClasses: 10, size: 32, noise: 0.25 },
  "synth-rgb-4": { nClasses: 4, size: 32, noise: 0.2 },
};

export function datasetSpec(id: string): DatasetSpec {
  const entry = REGISTRY[id];
  if (!entry) {
    throw new Error(
      `unknown dataset '${id}' (available: ${Object.keys(REGISTRY).join(", ")})`,
    );
  }
  return { id, ...entry };
}

interface ClassSignature {
  fx: number[];
  fy: number[];
  phase: number[];
  amp: number[];
}

function classSignatures(spec: DatasetSpec, seed: number): ClassSignature[] {
  const signatures: ClassSignature[] = [];
  for (let c = 0; c < spec.nClasses; c++) {
    const rand = mulberry32(childSeed(seed, 1000 + c));
    const fx: number[] = [];
    const fy: number[] = [];
    const phase: number[] = [];
    const amp: number[] = [];
    for (let channel = 0; channel < 3; channel++) {
      fx.push(1 + Math.floor(rand() * 4));
      fy.push(1 + Math.floor(rand() * 4));
      phase.push(rand() * Math.PI * 2);
      amp.push(0.5 + 0.5 * rand());
    }
    signatures.push({ fx, fy, phase, amp });
  }
  return signatures;
}

export class SyntheticDataset {
  readonly spec: DatasetSpec;
  readonly seed: number;
  private readonly signatures: ClassSignature[];

  constructor(spec: DatasetSpec, seed: number) {
    this.spec = spec;
    this.seed = seed;
    this.signatures = classSignatures(spec, seed);
  }

  sample(index: number): Sample {
    const { size, nClasses, noise } = this.spec;
    const rand = mulberry32(childSeed(this.seed, index));
    const label = Math.floor(rand() * nClasses);
    const signature = this.signatures[label];
    const pixels = new Float32Array(size * size * 3);
    let offset = 0;
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        for (let channel = 0; channel < 3; channel++) {
          const wave =
            0.5 +
            0.5 *
              signature.amp[channel] *
              Math.sin(
                (2 * Math.PI * (signature.fx[channel] * x + signature.fy[channel] * y)) /
                  size +
                  signature.phase[channel],
              );
          const value = wave + noise * (rand() - 0.5);
          pixels[offset++] = Math.min(Math.max(value, 0), 1);
        }
      }
    }
    return { index, label, pixels };
  }

  *batches(limit: number, batchSize: number): Generator<Sample[]> {
    let batch: Sample[] = [];
    for (let index = 0; index < limit; index++) {
      batch.push(this.sample(index));
      if (batch.length === batchSize) {
        yield batch;
        batch = [];
      }
    }
    if (batch.length > 0) {
      yield batch;
    }
  }
}
