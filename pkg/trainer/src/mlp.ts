/**
 * Dense ReLU MLP with plain-array weights: enough for desk-scale fixture
 * training, and trivially serializable at full float64 precision.
 */

import { Rng } from "./rng.js";

export interface Layer {
  /** weights[out][in] */
  weights: number[][];
  bias: number[];
}

export interface Mlp {
  layers: Layer[];
}

export function widthsOf(net: Mlp): number[] {
  const dims = [net.layers[0].weights[0].length];
  for (const layer of net.layers) dims.push(layer.weights.length);
  return dims;
}

export function initMlp(widths: number[], rng: Rng): Mlp {
  const layers: Layer[] = [];
  for (let l = 0; l + 1 < widths.length; l++) {
    const fanIn = widths[l];
    const fanOut = widths[l + 1];
    const scale = Math.sqrt(2 / fanIn);
    const weights: number[][] = [];
    for (let o = 0; o < fanOut; o++) {
      const row: number[] = [];
      for (let i = 0; i < fanIn; i++) row.push(rng.gauss() * scale);
      weights.push(row);
    }
    const bias = new Array(fanOut).fill(0);
    layers.push({ weights, bias });
  }
  return { layers };
}

export interface ForwardRecord {
  /** pre-activations per layer, hidden layers then output */
  preacts: number[][];
  /** post-activations per hidden layer */
  posts: number[][];
  logits: number[];
}

export function forward(net: Mlp, x: number[]): ForwardRecord {
  const preacts: number[][] = [];
  const posts: number[][] = [];
  let h = x;
  for (let l = 0; l < net.layers.length; l++) {
    const { weights, bias } = net.layers[l];
    const z = new Array(weights.length);
    for (let o = 0; o < weights.length; o++) {
      let acc = bias[o];
      const row = weights[o];
      for (let i = 0; i < row.length; i++) acc += row[i] * h[i];
      z[o] = acc;
    }
    preacts.push(z);
    if (l + 1 < net.layers.length) {
      const post = z.map((v) => (v > 0 ? v : 0));
      posts.push(post);
      h = post;
    } else {
      h = z;
    }
  }
  return { preacts, posts, logits: h };
}

export function softmaxCrossEntropy(logits: number[], label: number) {
  const m = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - m));
  const total = exps.reduce((a, b) => a + b, 0);
  const probs = exps.map((v) => v / total);
  const loss = -Math.log(Math.max(probs[label], 1e-300));
  const grad = probs.slice();
  grad[label] -= 1;
  return { loss, grad };
}

export interface Grads {
  weights: number[][][];
  bias: number[][];
}

export function zeroGrads(net: Mlp): Grads {
  return {
    weights: net.layers.map((l) => l.weights.map((row) => row.map(() => 0))),
    bias: net.layers.map((l) => l.bias.map(() => 0)),
  };
}

/** Accumulate the backward pass for one sample into grads. */
export function backward(
  net: Mlp,
  x: number[],
  record: ForwardRecord,
  outGrad: number[],
  grads: Grads,
): void {
  let delta = outGrad;
  for (let l = net.layers.length - 1; l >= 0; l--) {
    const input = l === 0 ? x : record.posts[l - 1];
    const gw = grads.weights[l];
    const gb = grads.bias[l];
    for (let o = 0; o < delta.length; o++) {
      gb[o] += delta[o];
      const row = gw[o];
      for (let i = 0; i < input.length; i++) row[i] += delta[o] * input[i];
    }
    if (l > 0) {
      const prev = new Array(input.length).fill(0);
      const w = net.layers[l].weights;
      for (let o = 0; o < delta.length; o++) {
        for (let i = 0; i < input.length; i++) prev[i] += delta[o] * w[o][i];
      }
      const z = record.preacts[l - 1];
      for (let i = 0; i < prev.length; i++) if (z[i] <= 0) prev[i] = 0;
      delta = prev;
    }
  }
}

export interface SgdState {
  velocityW: number[][][];
  velocityB: number[][];
}

export function sgdInit(net: Mlp): SgdState {
  return {
    velocityW: net.layers.map((l) => l.weights.map((row) => row.map(() => 0))),
    velocityB: net.layers.map((l) => l.bias.map(() => 0)),
  };
}

export function sgdStep(
  net: Mlp,
  grads: Grads,
  state: SgdState,
  lr: number,
  momentum: number,
  batchSize: number,
): void {
  for (let l = 0; l < net.layers.length; l++) {
    const w = net.layers[l].weights;
    const b = net.layers[l].bias;
    for (let o = 0; o < w.length; o++) {
      for (let i = 0; i < w[o].length; i++) {
        const g = grads.weights[l][o][i] / batchSize;
        state.velocityW[l][o][i] = momentum * state.velocityW[l][o][i] - lr * g;
        w[o][i] += state.velocityW[l][o][i];
      }
      const gb = grads.bias[l][o] / batchSize;
      state.velocityB[l][o] = momentum * state.velocityB[l][o] - lr * gb;
      b[o] += state.velocityB[l][o];
    }
  }
}
