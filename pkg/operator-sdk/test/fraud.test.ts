import { describe, expect, it } from "vitest";
import { encodeEvent } from "../src/events.js";
import { makeFraudTransform } from "../src/fraud.js";
import { corpusLines } from "./corpus.js";

function paymentEvent(seq: bigint, amount: number): Buffer {
  return encodeEvent({
    seq,
    tsProduced: seq,
    attrs: { amount, cardId: "c-1", terminalId: "t-1", timestamp: seq },
  });
}

describe("makeFraudTransform", () => {
  const filter = makeFraudTransform(0.78);

  it("forwards strictly above the threshold, byte-identical", () => {
    const hot = paymentEvent(1n, 0.7800000000000001);
    const out = filter(hot);
    expect(out).toHaveLength(1);
    expect(out[0].equals(hot)).toBe(true);
  });

  it("drops at and below the threshold", () => {
    expect(filter(paymentEvent(2n, 0.78))).toHaveLength(0);
    expect(filter(paymentEvent(3n, 0.1))).toHaveLength(0);
  });

  it("accepts integer amounts", () => {
    const big = encodeEvent({ seq: 4n, tsProduced: 4n, attrs: { amount: 2n } });
    expect(filter(big)).toHaveLength(1);
  });

  it("throws on events without a numeric amount", () => {
    const missing = encodeEvent({ seq: 5n, tsProduced: 5n, attrs: { note: "x" } });
    expect(() => filter(missing)).toThrow(/amount/);
    const boolAmount = Buffer.from('{"attrs":{"amount":true},"seq":6,"ts":6}');
    expect(() => filter(boolAmount)).toThrow();
    expect(() => filter(Buffer.from("not json"))).toThrow();
  });

  it("matches the reference output over the full corpus, in order", () => {
    const events = corpusLines("events.jsonl");
    const expected = corpusLines("fraud-0.78-expected.jsonl");
    const produced: Buffer[] = [];
    for (const line of events) {
      produced.push(...filter(line));
    }
    expect(produced.length).toBe(expected.length);
    for (let i = 0; i < expected.length; i++) {
      expect(produced[i].equals(expected[i])).toBe(true);
    }
  });
});
