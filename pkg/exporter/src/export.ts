/**
 * Export job runner: run every requested model over the dataset and emit
 * a loadable pool (manifest + prediction binaries + labels).
 *
 * Sample order is the dataset's index order and identical for every
 * model; each model accumulates the hash of the order it actually saw,
 * and the shared value lands in the manifest.  Models run sequentially;
 * batching happens within a model.  All writes are atomic.
 */

import * as tf from "@tensorflow/tfjs";
import { join } from "node:path";

import { SyntheticDataset, datasetSpec } from "./dataset.js";
import {
  Manifest,
  ManifestExpert,
  atomicWrite,
  orderHash,
  writeLabels,
  writeManifest,
  writePredictionFile,
} from "./format.js";
import { ExpertModel, buildModel, catalogEntry, isAvailable } from "./models.js";
import { childSeed } from "./rng.js";

export interface ExportJob {
  models: string[];
  dataset: string;
  outDir: string;
  limit: number;
  seed: number;
  batchSize: number;
}

export interface ExportResult {
  manifestPath: string;
  exported: string[];
  skipped: string[];
  nSamples: number;
  nClasses: number;
  orderHash: string;
}

function slugify(name: string): string {
  return name.toLowerCase().replace(/[^a-z0-9]+/g, "-").replace(/^-|-$/g, "");
}

async function runModel(
  expert: ExpertModel,
  dataset: SyntheticDataset,
  job: ExportJob,
): Promise<{ rows: Float32Array; labels: Int32Array; hash: string }> {
  const { size, nClasses } = dataset.spec;
  const rows = new Float32Array(job.limit * nClasses);
  const labels = new Int32Array(job.limit);
  const seen: number[] = [];
  for (const batch of dataset.batches(job.limit, job.batchSize)) {
    const pixels = new Float32Array(batch.length * size * size * 3);
    batch.forEach((sample, row) => {
      pixels.set(sample.pixels, row * size * size * 3);
      labels[sample.index] = sample.label;
      seen.push(sample.index);
    });
    const input = tf.tensor4d(pixels, [batch.length, size, size, 3]);
    const output = expert.model.predict(input) as tf.Tensor;
    const values = await output.data();
    batch.forEach((sample, row) => {
      rows.set(
        values.subarray(row * nClasses, (row + 1) * nClasses) as Float32Array,
        sample.index * nClasses,
      );
    });
    input.dispose();
    output.dispose();
  }
  return { rows, labels, hash: orderHash(dataset.spec.id, seen) };
}

export async function runExport(job: ExportJob): Promise<ExportResult> {
  if (job.limit < 1) {
    throw new Error("limit must be at least 1");
  }
  const spec = datasetSpec(job.dataset);
  const dataset = new SyntheticDataset(spec, job.seed);

  const skipped: string[] = [];
  const experts: ExpertModel[] = [];
  for (const name of job.models) {
    if (!isAvailable(name)) {
      const known = catalogEntry(name)
        ? "pretrained weights are not available offline"
        : "unknown model identifier";
      console.warn(`warning: skipping model '${name}': ${known}`);
      skipped.push(name);
      continue;
    }
    experts.push(buildModel(name, spec.size, spec.nClasses, childSeed(job.seed, experts.length)));
  }
  if (experts.length === 0) {
    throw new Error("no requested model could be exported; manifest would be empty");
  }

  let sharedLabels: Int32Array | null = null;
  let sharedHash: string | null = null;
  const manifestExperts: ManifestExpert[] = [];
  for (const expert of experts) {
    const { rows, labels, hash } = await runModel(expert, dataset, job);
    if (sharedHash === null) {
      sharedHash = hash;
      sharedLabels = labels;
    } else if (hash !== sharedHash) {
      throw new Error(`model '${expert.name}' processed samples in a different order`);
    }
    const filename = `${slugify(expert.name)}.pred`;
    writePredictionFile(join(job.outDir, filename), {
      nSamples: job.limit,
      nClasses: spec.nClasses,
      rows,
    });
    manifestExperts.push({
      name: expert.name,
      tier: expert.tier,
      params_millions: Number(expert.paramsMillions.toFixed(4)),
      gflops: expert.gflops,
      predictions: filename,
      gflops_source: expert.gflopsSource,
      order_hash: hash,
    });
    expert.model.dispose();
  }

  writeLabels(join(job.outDir, "labels.txt"), sharedLabels!);
  const manifest: Manifest = {
    dataset: `${spec.id}(seed=${job.seed},limit=${job.limit})`,
    labels: "labels.txt",
    order_hash: sharedHash!,
    experts: manifestExperts,
  };
  const manifestPath = join(job.outDir, "manifest.json");
  writeManifest(manifestPath, manifest);

  const provenance = {
    job: { ...job },
    preprocessing: `procedural ${spec.size}x${spec.size} rgb, values in [0,1], no augmentation`,
    backend: tf.getBackend(),
    tfjs_version: tf.version.tfjs,
    node_version: process.version,
    exported: experts.map((e) => e.name),
    skipped,
    finished_at: new Date().toISOString(),
  };
  atomicWrite(join(job.outDir, "export_run.json"), JSON.stringify(provenance, null, 2) + "\n");

  return {
    manifestPath,
    exported: experts.map((e) => e.name),
    skipped,
    nSamples: job.limit,
    nClasses: spec.nClasses,
    orderHash: sharedHash!,
  };
}
