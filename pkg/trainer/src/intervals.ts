/**
 * Interval propagation mirroring the verifier's preactivation bounds, used
 * to report how many ReLUs straddle zero at an export radius (instances are
 * filtered so exact enumeration stays tractable downstream).
 */

import { Mlp } from "./mlp.js";

export function countUnstable(net: Mlp, x0: number[], delta: number): number {
  let lo = x0.map((v) => v - delta);
  let hi = x0.map((v) => v + delta);
  let unstable = 0;
  for (let l = 0; l < net.layers.length - 1; l++) {
    const { weights, bias } = net.layers[l];
    const zl = new Array(weights.length);
    const zu = new Array(weights.length);
    for (let o = 0; o < weights.length; o++) {
      let center = bias[o];
      let spread = 0;
      const row = weights[o];
      for (let i = 0; i < row.length; i++) {
        const mid = (hi[i] + lo[i]) / 2;
        const rad = (hi[i] - lo[i]) / 2;
        center += row[i] * mid;
        spread += Math.abs(row[i]) * rad;
      }
      zl[o] = center - spread;
      zu[o] = center + spread;
      if (zl[o] < 0 && zu[o] > 0) unstable += 1;
    }
    lo = zl.map((v) => Math.max(v, 0));
    hi = zu.map((v) => Math.max(v, 0));
  }
  return unstable;
}
