import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { buildableNames } from "./models.js";
import { runExport } from "./export.js";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command("export", "run models over a dataset and emit a prediction pool")
    .demandCommand(1)
    .option("models", {
      type: "string",
      default: buildableNames().join(","),
      describe: "comma-separated model identifiers",
    })
    .option("dataset", { type: "string", default: "synth-rgb-10" })
    .option("out", { type: "string", demandOption: true })
    .option("limit", { type: "number", default: 1000, describe: "samples to export" })
    .option("seed", { type: "number", default: 1 })
    .option("batch", { type: "number", default: 64 })
    .strict()
    .parse();

  const result = await runExport({
    models: String(argv.models)
      .split(",")
      .map((name) => name.trim())
      .filter((name) => name.length > 0),
    dataset: String(argv.dataset),
    outDir: String(argv.out),
    limit: Number(argv.limit),
    seed: Number(argv.seed),
    batchSize: Number(argv.batch),
  });
  console.log(
    `exported ${result.exported.length} model(s) over ${result.nSamples} samples ` +
      `(${result.nClasses} classes) to ${result.manifestPath}`,
  );
  if (result.skipped.length > 0) {
    console.log(`skipped: ${result.skipped.join(", ")}`);
  }
  return 0;
}

main()
  .then((code) => process.exit(code))
  .catch((error) => {
    console.error(`error: ${error instanceof Error ? error.message : error}`);
    process.exit(1);
  });
