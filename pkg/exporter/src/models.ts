/**
 * Model registry.
 *
 * Two kinds of identifiers:
 *  - buildable models: small convolutional nets constructed here with
 *    seeded initializers, so exports are deterministic end to end;
 *  - catalog names: published backbones with known per-sample costs.
 *    Their pretrained weights are not fetchable in an offline
 *    environment, so requesting one warns and skips (the export fails
 *    only if nothing at all could run).
 *
 * Per-sample GFLOPs come from the cost catalog when the name matches,
 * otherwise from an analytic per-layer count (multiply-accumulate = 2 ops).
 */

import * as tf from "@tensorflow/tfjs";

export type Tier = "Scout" | "Specialist" | "Oracle";

export interface CatalogEntry {
  name: string;
  tier: Tier;
  paramsMillions: number;
  gflops: number;
}

// published per-sample costs for the reference backbone pool
export const COST_CATALOG: CatalogEntry[] = [
  { name: "MobileNetV3 Small", tier: "Scout", paramsMillions: 2.5, gflops: 0.01 },
  { name: "EfficientNet-Lite0", tier: "Scout", paramsMillions: 4.7, gflops: 0.04 },
  { name: "GhostNet", tier: "Scout", paramsMillions: 5.2, gflops: 0.05 },
  { name: "MobileViT", tier: "Specialist", paramsMillions: 5.6, gflops: 0.5 },
  { name: "ConvNeXt V2 Atto", tier: "Specialist", paramsMillions: 3.7, gflops: 0.55 },
  { name: "EVA-02 Tiny", tier: "Specialist", paramsMillions: 5.7, gflops: 1.7 },
  { name: "EfficientNetV2-S", tier: "Specialist", paramsMillions: 21.5, gflops: 2.8 },
  { name: "Swin V2 Tiny", tier: "Oracle", paramsMillions: 28.3, gflops: 4.5 },
  { name: "DINOv2 ViT-Small", tier: "Oracle", paramsMillions: 21.0, gflops: 4.6 },
  { name: "MaxViT Tiny", tier: "Oracle", paramsMillions: 30.9, gflops: 5.0 },
  { name: "ConvNeXt V2 Base", tier: "Oracle", paramsMillions: 89.0, gflops: 15.4 },
  { name: "DINOv2 ViT-Base", tier: "Oracle", paramsMillions: 86.0, gflops: 17.6 },
];

export function catalogEntry(name: string): CatalogEntry | undefined {
  return COST_CATALOG.find((entry) => entry.name === name);
}

interface BuildableSpec {
  tier: Tier;
  filters: number[];
  dense: number;
}

// widths chosen so the tiers order by cost, scout to oracle
const BUILDABLE: Record<string, BuildableSpec> = {
  "micro-cnn": { tier: "Scout", filters: [8], dense: 16 },
  "compact-cnn": { tier: "Scout", filters: [12, 16], dense: 24 },
  "mid-cnn": { tier: "Specialist", filters: [24, 32], dense: 48 },
  "wide-cnn": { tier: "Specialist", filters: [32, 48, 64], dense: 64 },
  "deep-cnn": { tier: "Oracle", filters: [48, 64, 96], dense: 128 },
};

export function buildableNames(): string[] {
  return Object.keys(BUILDABLE);
}

export interface ExpertModel {
  name: string;
  tier: Tier;
  model: tf.LayersModel;
  paramsMillions: number;
  gflops: number;
  gflopsSource: "catalog" | "counted";
}

export function isAvailable(name: string): boolean {
  return name in BUILDABLE;
}

export function buildModel(
  name: string,
  imageSize: number,
  nClasses: number,
  seed: number,
): ExpertModel {
  const spec = BUILDABLE[name];
  if (!spec) {
    throw new Error(`model '${name}' cannot be built locally`);
  }
  const model = tf.sequential();
  let first = true;
  spec.filters.forEach((filters, depth) => {
    model.add(
      tf.layers.conv2d({
        filters,
        kernelSize: 3,
        padding: "same",
        activation: "relu",
        inputShape: first ? [imageSize, imageSize, 3] : undefined,
        kernelInitializer: tf.initializers.glorotUniform({ seed: seed + depth }),
        biasInitializer: "zeros",
      }),
    );
    model.add(tf.layers.maxPooling2d({ poolSize: 2 }));
    first = false;
  });
  model.add(tf.layers.flatten());
  model.add(
    tf.layers.dense({
      units: spec.dense,
      activation: "relu",
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 100 }),
      biasInitializer: "zeros",
    }),
  );
  model.add(
    tf.layers.dense({
      units: nClasses,
      activation: "softmax",
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 200 }),
      biasInitializer: "zeros",
    }),
  );

  const catalog = catalogEntry(name);
  const counted = countGflops(model);
  return {
    name,
    tier: spec.tier,
    model,
    paramsMillions: model.countParams() / 1e6,
    gflops: catalog ? catalog.gflops : counted,
    gflopsSource: catalog ? "catalog" : "counted",
  };
}

/** Analytic per-sample FLOPs: 2 * MACs for conv and dense layers. */
export function countGflops(model: tf.LayersModel): number {
  let flops = 0;
  for (const layer of model.layers) {
    const output = layer.outputShape as number[];
    if (layer.getClassName() === "Conv2D") {
      const config = layer.getConfig() as { kernelSize: number[]; filters: number };
      const input = layer.batchInputShape ?? (layer.input as tf.SymbolicTensor).shape;
      const inChannels = Number(input[input.length - 1]);
      const [outH, outW, outC] = [Number(output[1]), Number(output[2]), Number(output[3])];
      const [kh, kw] = config.kernelSize;
      flops += 2 * kh * kw * inChannels * outC * outH * outW;
    } else if (layer.getClassName() === "Dense") {
      const input = (layer.input as tf.SymbolicTensor).shape;
      const inUnits = Number(input[input.length - 1]);
      const outUnits = Number(output[output.length - 1]);
      flops += 2 * inUnits * outUnits;
    }
  }
  return flops / 1e9;
}
