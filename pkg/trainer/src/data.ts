/**
 * Synthetic datasets generated offline and deterministically.
 *
 * blobs: two Gaussian clusters in the plane, the classic sanity dataset.
 * digits-like: 784-dimensional images built from per-class smooth random
 * templates (a coarse random field upsampled to 28x28) plus pixel jitter,
 * giving an MNIST-shaped classification task without any download.
 */

import { Rng } from "./rng.js";

export interface Dataset {
  name: string;
  inputDim: number;
  numClasses: number;
  trainX: number[][];
  trainY: number[];
  testX: number[][];
  testY: number[];
}

export function makeBlobs(seed: number, trainPer = 200, testPer = 60): Dataset {
  const rng = new Rng(seed * 7919 + 17);
  const centers = [
    [-0.8, -0.8],
    [0.8, 0.8],
  ];
  const std = 0.45;
  const make = (count: number) => {
    const xs: number[][] = [];
    const ys: number[] = [];
    for (let c = 0; c < centers.length; c++) {
      for (let i = 0; i < count; i++) {
        xs.push([
          centers[c][0] + rng.gauss() * std,
          centers[c][1] + rng.gauss() * std,
        ]);
        ys.push(c);
      }
    }
    return { xs, ys };
  };
  const train = make(trainPer);
  const test = make(testPer);
  return {
    name: "blobs",
    inputDim: 2,
    numClasses: 2,
    trainX: train.xs,
    trainY: train.ys,
    testX: test.xs,
    testY: test.ys,
  };
}

function upsampleBilinear(coarse: number[][], size: number): number[] {
  const n = coarse.length;
  const out = new Array(size * size);
  for (let r = 0; r < size; r++) {
    for (let c = 0; c < size; c++) {
      const fr = (r / (size - 1)) * (n - 1);
      const fc = (c / (size - 1)) * (n - 1);
      const r0 = Math.min(Math.floor(fr), n - 2);
      const c0 = Math.min(Math.floor(fc), n - 2);
      const tr = fr - r0;
      const tc = fc - c0;
      out[r * size + c] =
        coarse[r0][c0] * (1 - tr) * (1 - tc) +
        coarse[r0 + 1][c0] * tr * (1 - tc) +
        coarse[r0][c0 + 1] * (1 - tr) * tc +
        coarse[r0 + 1][c0 + 1] * tr * tc;
    }
  }
  return out;
}

export function makeDigitsLike(
  seed: number,
  trainPer = 60,
  testPer = 15,
  size = 28,
): Dataset {
  const rng = new Rng(seed * 104729 + 31);
  const classes = 10;
  const templates: number[][] = [];
  for (let c = 0; c < classes; c++) {
    const coarse: number[][] = [];
    for (let r = 0; r < 7; r++) {
      coarse.push(Array.from({ length: 7 }, () => rng.float()));
    }
    templates.push(upsampleBilinear(coarse, size));
  }
  const make = (count: number) => {
    const xs: number[][] = [];
    const ys: number[] = [];
    for (let c = 0; c < classes; c++) {
      for (let i = 0; i < count; i++) {
        const img = templates[c].map((v) => {
          const noisy = 0.75 * v + 0.25 * rng.float();
          return Math.min(1, Math.max(0, noisy));
        });
        xs.push(img);
        ys.push(c);
      }
    }
    return { xs, ys };
  };
  const train = make(trainPer);
  const test = make(testPer);
  return {
    name: "digits-like",
    inputDim: size * size,
    numClasses: classes,
    trainX: train.xs,
    trainY: train.ys,
    testX: test.xs,
    testY: test.ys,
  };
}
