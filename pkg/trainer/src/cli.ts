/**
 * Fixture trainer CLI.
 *
 *   node dist/cli.js --dataset blobs --out ../fixtures/blobs-s0 [--seed 0]
 *                    [--widths 2,8,8,2] [--epochs 60] [--deltas 0.01,0.1]
 *                    [--per-delta 5]
 */

import { BLOBS_DEFAULT, DIGITS_DEFAULT, FixtureSpec, buildFixture } from "./pipeline.js";
import { writeBundle } from "./exportio.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) continue;
    const key = argv[i].slice(2);
    const value = i + 1 < argv.length && !argv[i + 1].startsWith("--") ? argv[++i] : "true";
    out.set(key, value);
  }
  return out;
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  const dataset = args.get("dataset") ?? "blobs";
  const outDir = args.get("out");
  if (!outDir) {
    console.error("--out <dir> is required");
    return 2;
  }
  const base = dataset === "blobs" ? BLOBS_DEFAULT : DIGITS_DEFAULT;
  const spec: FixtureSpec = {
    ...base,
    dataset: dataset === "blobs" ? "blobs" : "digits-like",
    seed: args.has("seed") ? Number(args.get("seed")) : base.seed,
    epochs: args.has("epochs") ? Number(args.get("epochs")) : base.epochs,
    widths: args.has("widths")
      ? args.get("widths")!.split(",").map(Number)
      : base.widths,
    deltas: args.has("deltas")
      ? args.get("deltas")!.split(",").map(Number)
      : base.deltas,
    instancesPerDelta: args.has("per-delta")
      ? Number(args.get("per-delta"))
      : base.instancesPerDelta,
  };
  const result = buildFixture(spec);
  writeBundle(outDir, result.bundle);
  console.log(
    `wrote ${result.bundle.instances.length} instances to ${outDir} ` +
      `(accuracy ${(100 * result.accuracy).toFixed(1)}%, seed ${result.seedUsed})`,
  );
  return 0;
}

main(process.argv.slice(2));
