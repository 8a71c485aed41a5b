/**
 * Serialization into the verifier's external JSON schemas.
 *
 * Model: {"layers": [{"weights": [[...]], "bias": [...]}]}
 * Instance: {"x0", "delta", "norm", "label", "target", "epsilon", "t_max",
 *            "tau_max", "lambda", "eps_comp"}
 *
 * JSON.stringify emits shortest-round-trip decimals, so float64 weights
 * survive a load on the other side bit-exactly.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Mlp, forward } from "./mlp.js";
import { Rng } from "./rng.js";

export interface InstanceRecord {
  x0: number[];
  delta: number;
  norm: "inf" | "two";
  label: number;
  target: number;
  epsilon: number;
  t_max: number;
  tau_max: number;
  lambda: number;
  eps_comp: number;
}

export function modelJson(net: Mlp): string {
  return JSON.stringify({
    layers: net.layers.map((l) => ({ weights: l.weights, bias: l.bias })),
  });
}

export function makeInstance(
  x0: number[],
  delta: number,
  label: number,
  target: number,
): InstanceRecord {
  return {
    x0,
    delta,
    norm: "inf",
    label,
    target,
    epsilon: 1e-3,
    t_max: 10000,
    tau_max: 20,
    lambda: 0.1,
    eps_comp: 1e-6,
  };
}

export interface CrossCheckRecord {
  inputs: number[][];
  logits: number[][];
}

/** 100 seeded inputs with this trainer's own forward outputs, for the
 * cross-language agreement check on the verifier side. */
export function crossCheck(
  net: Mlp,
  seed: number,
  lo: number,
  hi: number,
  count = 100,
): CrossCheckRecord {
  const rng = new Rng(seed * 613 + 101);
  const dim = net.layers[0].weights[0].length;
  const inputs: number[][] = [];
  const logits: number[][] = [];
  for (let i = 0; i < count; i++) {
    const x = Array.from({ length: dim }, () => rng.uniform(lo, hi));
    inputs.push(x);
    logits.push(forward(net, x).logits);
  }
  return { inputs, logits };
}

export interface ExportBundle {
  model: string;
  instances: InstanceRecord[];
  manifest: object;
  crosscheck: CrossCheckRecord;
}

export function writeBundle(outDir: string, bundle: ExportBundle): void {
  fs.mkdirSync(outDir, { recursive: true });
  fs.writeFileSync(path.join(outDir, "model.json"), bundle.model);
  bundle.instances.forEach((inst, i) => {
    const name = `instance_${String(i).padStart(3, "0")}.json`;
    fs.writeFileSync(path.join(outDir, name), JSON.stringify(inst));
  });
  fs.writeFileSync(
    path.join(outDir, "manifest.json"),
    JSON.stringify(bundle.manifest, null, 2),
  );
  fs.writeFileSync(
    path.join(outDir, "crosscheck.json"),
    JSON.stringify(bundle.crosscheck),
  );
}
