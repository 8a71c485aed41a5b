import { describe, expect, it } from "vitest";

import { Rng } from "../src/rng.js";
import {
  backward,
  forward,
  initMlp,
  softmaxCrossEntropy,
  zeroGrads,
} from "../src/mlp.js";

describe("rng", () => {
  it("is deterministic per seed", () => {
    const a = new Rng(42);
    const b = new Rng(42);
    for (let i = 0; i < 100; i++) expect(a.float()).toBe(b.float());
  });

  it("different seeds differ", () => {
    expect(new Rng(1).float()).not.toBe(new Rng(2).float());
  });

  it("gauss has roughly unit variance", () => {
    const rng = new Rng(7);
    const vals = Array.from({ length: 4000 }, () => rng.gauss());
    const mean = vals.reduce((s, v) => s + v, 0) / vals.length;
    const variance = vals.reduce((s, v) => s + (v - mean) ** 2, 0) / vals.length;
    expect(Math.abs(mean)).toBeLessThan(0.08);
    expect(Math.abs(variance - 1)).toBeLessThan(0.12);
  });
});

describe("forward", () => {
  it("computes the hand example", () => {
    // one hidden layer: z = [2x-1, -x+0.5], output z1_post - 2*z2_post + 0.1
    const net = {
      layers: [
        { weights: [[2], [-1]], bias: [-1, 0.5] },
        { weights: [[1, -2]], bias: [0.1] },
      ],
    };
    expect(forward(net, [1]).logits[0]).toBeCloseTo(1.1, 12);
    expect(forward(net, [-1]).logits[0]).toBeCloseTo(-2.9, 12);
  });

  it("relu gates negative preactivations", () => {
    const net = initMlp([3, 5, 2], new Rng(0));
    const record = forward(net, [0.1, -0.4, 0.7]);
    record.preacts[0].forEach((z, i) => {
      expect(record.posts[0][i]).toBe(z > 0 ? z : 0);
    });
  });
});

describe("backward", () => {
  it("matches finite differences through the loss", () => {
    const rng = new Rng(3);
    const net = initMlp([4, 6, 5, 3], rng);
    const x = Array.from({ length: 4 }, () => rng.uniform(-1, 1));
    const label = 1;
    const record = forward(net, x);
    const { grad } = softmaxCrossEntropy(record.logits, label);
    const grads = zeroGrads(net);
    backward(net, x, record, grad, grads);

    const loss = () => softmaxCrossEntropy(forward(net, x).logits, label).loss;
    const eps = 1e-6;
    for (const [l, o, i] of [
      [0, 0, 0],
      [1, 2, 3],
      [2, 1, 4],
    ] as const) {
      const keep = net.layers[l].weights[o][i];
      net.layers[l].weights[o][i] = keep + eps;
      const up = loss();
      net.layers[l].weights[o][i] = keep - eps;
      const down = loss();
      net.layers[l].weights[o][i] = keep;
      const fd = (up - down) / (2 * eps);
      expect(grads.weights[l][o][i]).toBeCloseTo(fd, 4);
    }
  });
});
