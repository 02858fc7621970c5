/**
 * Event payloads: canonical JSON documents shaped
 * {"attrs":{...},"seq":N,"ts":M}.
 *
 * seq is an unsigned 64-bit sequence number, ts a signed 64-bit microsecond
 * timestamp; attribute values are strings, 64-bit integers, or finite floats.
 * Booleans, nulls, and nesting are rejected so every attribute compares
 * cleanly across languages.
 */

import {
  CanonicalError,
  CanonicalValue,
  canonicalString,
  formatFloat,
  parseCanonical,
} from "./canonical.js";

export class EventError extends Error {}

export const MAX_SEQ = (1n << 64n) - 1n;
export const MIN_TS = -(1n << 63n);
export const MAX_TS = (1n << 63n) - 1n;

export type AttrValue = string | bigint | number;

export interface Event {
  seq: bigint;
  tsProduced: bigint;
  attrs: Record<string, AttrValue>;
}

function checkRange(value: bigint, name: string, lo: bigint, hi: bigint): void {
  if (value < lo || value > hi) {
    throw new EventError(`${name} out of range: ${value}`);
  }
}

export function encodeEvent(event: Event): Buffer {
  checkRange(event.seq, "seq", 0n, MAX_SEQ);
  checkRange(event.tsProduced, "ts", MIN_TS, MAX_TS);
  const attrs: { [key: string]: CanonicalValue } = {};
  for (const [name, value] of Object.entries(event.attrs)) {
    if (typeof value === "string") {
      attrs[name] = value;
    } else if (typeof value === "bigint") {
      checkRange(value, `attrs[${name}]`, MIN_TS, MAX_TS);
      attrs[name] = value;
    } else if (typeof value === "number") {
      try {
        formatFloat(value);
      } catch (e) {
        throw new EventError(`attrs[${name}] is not a finite float`);
      }
      attrs[name] = value;
    } else {
      throw new EventError(`attrs[${name}] has unsupported type`);
    }
  }
  // "attrs" < "seq" < "ts" in code point order, so the envelope lays out
  // attrs first and ts last without a special case in the writer
  const doc: CanonicalValue = { attrs, seq: event.seq, ts: event.tsProduced };
  return Buffer.from(canonicalString(doc), "utf8");
}

export function decodeEvent(data: Buffer | string): Event {
  let doc: CanonicalValue;
  try {
    doc = parseCanonical(data);
  } catch (e) {
    throw new EventError(`payload is not canonical JSON: ${(e as Error).message}`);
  }
  if (doc === null || typeof doc !== "object" || Array.isArray(doc)) {
    throw new EventError("payload is not an object");
  }
  const keys = Object.keys(doc).sort();
  if (keys.length !== 3 || keys[0] !== "attrs" || keys[1] !== "seq" || keys[2] !== "ts") {
    throw new EventError(`unexpected envelope keys: ${keys.join(",")}`);
  }
  const seq = doc["seq"];
  if (typeof seq !== "bigint" || seq < 0n || seq > MAX_SEQ) {
    throw new EventError("seq must be an unsigned 64-bit integer");
  }
  const ts = doc["ts"];
  if (typeof ts !== "bigint" || ts < MIN_TS || ts > MAX_TS) {
    throw new EventError("ts must be a signed 64-bit integer");
  }
  const rawAttrs = doc["attrs"];
  if (rawAttrs === null || typeof rawAttrs !== "object" || Array.isArray(rawAttrs)) {
    throw new EventError("attrs must be an object");
  }
  const attrs: Record<string, AttrValue> = {};
  for (const [name, value] of Object.entries(rawAttrs)) {
    if (typeof value === "string" || typeof value === "number") {
      attrs[name] = value;
    } else if (typeof value === "bigint") {
      if (value < MIN_TS || value > MAX_TS) {
        throw new EventError(`attrs[${name}] out of 64-bit range`);
      }
      attrs[name] = value;
    } else {
      throw new EventError(`attrs[${name}] has unsupported type`);
    }
  }
  return { seq, tsProduced: ts, attrs };
}
