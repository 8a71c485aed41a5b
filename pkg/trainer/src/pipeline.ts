/**
 * End-to-end fixture production: train, gate on accuracy, pick verified
 * instance points, and assemble the export bundle.
 */

import { Dataset, makeBlobs, makeDigitsLike } from "./data.js";
import { ExportBundle, crossCheck, makeInstance, modelJson } from "./exportio.js";
import { countUnstable } from "./intervals.js";
import { Mlp } from "./mlp.js";
import { accuracy, cleanMargin, trainMlp } from "./train.js";

export interface FixtureSpec {
  dataset: "blobs" | "digits-like";
  widths: number[];
  epochs: number;
  seed: number;
  deltas: number[];
  instancesPerDelta: number;
  /** exported instances must stay under this many straddling ReLUs */
  unstableCap: number;
  minAccuracy: number;
}

export const BLOBS_DEFAULT: FixtureSpec = {
  dataset: "blobs",
  widths: [2, 8, 8, 2],
  epochs: 60,
  seed: 0,
  deltas: [0.01, 0.1],
  instancesPerDelta: 5,
  unstableCap: 20,
  minAccuracy: 0.8,
};

export const DIGITS_DEFAULT: FixtureSpec = {
  dataset: "digits-like",
  widths: [784, 20, 20, 10],
  epochs: 6,
  seed: 0,
  deltas: [0.01],
  instancesPerDelta: 4,
  unstableCap: 20,
  minAccuracy: 0.8,
};

const MAX_REGENERATIONS = 25;

function loadDataset(spec: FixtureSpec, seed: number): Dataset {
  if (spec.dataset === "blobs") return makeBlobs(seed);
  return makeDigitsLike(seed);
}

export interface FixtureResult {
  bundle: ExportBundle;
  net: Mlp;
  accuracy: number;
  seedUsed: number;
  regenerations: number;
}

export function buildFixture(spec: FixtureSpec): FixtureResult {
  let seed = spec.seed;
  let regenerations = 0;
  for (;;) {
    const data = loadDataset(spec, seed);
    const net = trainMlp(data, {
      widths: spec.widths,
      epochs: spec.epochs,
      batchSize: 16,
      lr: spec.dataset === "blobs" ? 0.1 : 0.02,
      momentum: 0.9,
      seed,
    });
    const acc = accuracy(net, data.testX, data.testY);
    if (acc < spec.minAccuracy) {
      if (regenerations >= MAX_REGENERATIONS) {
        throw new Error(
          `accuracy gate not reached after ${MAX_REGENERATIONS} retrainings`,
        );
      }
      console.log(
        `accuracy ${(100 * acc).toFixed(1)}% below gate; retraining with seed ${seed + 1}`,
      );
      seed += 1;
      regenerations += 1;
      continue;
    }

    const instances = [];
    const manifestRows = [];
    for (const delta of spec.deltas) {
      let exported = 0;
      for (let i = 0; i < data.testX.length && exported < spec.instancesPerDelta; i++) {
        const x = data.testX[i];
        const label = data.testY[i];
        const { margin, target } = cleanMargin(net, x, label);
        if (margin <= 0) continue; // only correctly classified points
        const unstable = countUnstable(net, x, delta);
        if (unstable > spec.unstableCap) continue;
        instances.push(makeInstance(x, delta, label, target));
        manifestRows.push({
          file: `instance_${String(instances.length - 1).padStart(3, "0")}.json`,
          delta,
          label,
          target,
          clean_margin: margin,
          unstable,
        });
        exported += 1;
      }
    }

    const inputLo = spec.dataset === "blobs" ? -2 : 0;
    const inputHi = spec.dataset === "blobs" ? 2 : 1;
    const bundle: ExportBundle = {
      model: modelJson(net),
      instances,
      manifest: {
        dataset: spec.dataset,
        widths: spec.widths,
        epochs: spec.epochs,
        seed_requested: spec.seed,
        seed_used: seed,
        regenerations,
        test_accuracy: acc,
        unstable_cap: spec.unstableCap,
        instances: manifestRows,
      },
      crosscheck: crossCheck(net, seed, inputLo, inputHi),
    };
    return { bundle, net, accuracy: acc, seedUsed: seed, regenerations };
  }
}
