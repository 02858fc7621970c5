/**
 * Reference transforms.  The fraud filter forwards events whose "amount"
 * attribute is strictly above the threshold, byte-identical to the input
 * payload; everything else is dropped.
 */

import { decodeEvent } from "./events.js";
import { Transform } from "./runtime.js";

export function forwardTransform(payload: Buffer): Buffer[] {
  return [payload];
}

export function dropTransform(_payload: Buffer): Buffer[] {
  return [];
}

export function makeFraudTransform(threshold: number): Transform {
  if (!Number.isFinite(threshold)) {
    throw new Error(`threshold must be finite, got ${threshold}`);
  }
  return (payload: Buffer): Buffer[] => {
    const event = decodeEvent(payload);
    const amount = event.attrs["amount"];
    let value: number;
    if (typeof amount === "number") {
      value = amount;
    } else if (typeof amount === "bigint") {
      value = Number(amount);
    } else {
      throw new Error(`amount is not numeric: ${JSON.stringify(amount ?? null)}`);
    }
    // strict > : an amount exactly at the threshold is not fraud
    return value > threshold ? [payload] : [];
  };
}
