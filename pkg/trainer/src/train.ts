/**
 * Mini-batch training loop with deterministic shuffling, plus the accuracy
 * and margin measurements recorded in the export manifest.
 */

import { Dataset } from "./data.js";
import {
  Mlp,
  backward,
  forward,
  initMlp,
  sgdInit,
  sgdStep,
  softmaxCrossEntropy,
  zeroGrads,
} from "./mlp.js";
import { Rng } from "./rng.js";

export interface TrainConfig {
  widths: number[];
  epochs: number;
  batchSize: number;
  lr: number;
  momentum: number;
  seed: number;
}

export function trainMlp(data: Dataset, config: TrainConfig): Mlp {
  const rng = new Rng(config.seed * 31 + 7);
  const net = initMlp(config.widths, rng);
  const state = sgdInit(net);
  const order = data.trainX.map((_, i) => i);
  for (let epoch = 0; epoch < config.epochs; epoch++) {
    rng.shuffle(order);
    for (let start = 0; start < order.length; start += config.batchSize) {
      const batch = order.slice(start, start + config.batchSize);
      const grads = zeroGrads(net);
      for (const idx of batch) {
        const record = forward(net, data.trainX[idx]);
        const { grad } = softmaxCrossEntropy(record.logits, data.trainY[idx]);
        backward(net, data.trainX[idx], record, grad, grads);
      }
      sgdStep(net, grads, state, config.lr, config.momentum, batch.length);
    }
  }
  return net;
}

export function accuracy(net: Mlp, xs: number[][], ys: number[]): number {
  let hits = 0;
  for (let i = 0; i < xs.length; i++) {
    const { logits } = forward(net, xs[i]);
    let argmax = 0;
    for (let c = 1; c < logits.length; c++) if (logits[c] > logits[argmax]) argmax = c;
    if (argmax === ys[i]) hits += 1;
  }
  return hits / xs.length;
}

/** Margin between the true class and the strongest other class. */
export function cleanMargin(net: Mlp, x: number[], label: number) {
  const { logits } = forward(net, x);
  let runner = -Infinity;
  let target = -1;
  for (let c = 0; c < logits.length; c++) {
    if (c !== label && logits[c] > runner) {
      runner = logits[c];
      target = c;
    }
  }
  return { margin: logits[label] - runner, target };
}
