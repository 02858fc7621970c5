import { describe, expect, it } from "vitest";
import { ProtocolError, Reply, ResponseParser, encodeCommand, encodePipeline } from "../src/wire.js";

describe("encodeCommand", () => {
  it("frames arguments as an array of bulk strings", () => {
    const frame = encodeCommand(["PUSH", "q", Buffer.from("abc")]);
    expect(frame.toString("latin1")).toBe("*3\r\n$4\r\nPUSH\r\n$1\r\nq\r\n$3\r\nabc\r\n");
  });

  it("frames binary payloads verbatim", () => {
    const payload = Buffer.from([0, 1, 2, 0xff, 0x0d, 0x0a]);
    const frame = encodeCommand(["PUSH", "q", payload]);
    expect(frame.subarray(frame.length - 8, frame.length - 2).equals(payload)).toBe(true);
  });

  it("rejects empty and oversized commands", () => {
    expect(() => encodeCommand([])).toThrow(ProtocolError);
    expect(() => encodeCommand(new Array(65).fill("x"))).toThrow(ProtocolError);
  });
});

function feedByteByByte(parser: ResponseParser, data: Buffer): Reply[] {
  const replies: Reply[] = [];
  for (const byte of data) {
    parser.feed(Buffer.from([byte]));
    let reply;
    while ((reply = parser.nextReply()) !== null) {
      replies.push(reply);
    }
  }
  return replies;
}

describe("ResponseParser", () => {
  const stream = Buffer.from(
    "+OK\r\n:42\r\n:-7\r\n-ERR queue full: demo\r\n*2\r\n$1\r\na\r\n$0\r\n\r\n+PONG\r\n",
    "latin1",
  );

  const expected: Reply[] = [
    { kind: "ok", text: "OK" },
    { kind: "int", value: 42 },
    { kind: "int", value: -7 },
    { kind: "err", message: "ERR queue full: demo" },
    { kind: "array", items: [Buffer.from("a"), Buffer.alloc(0)] },
    { kind: "ok", text: "PONG" },
  ];

  it("parses a pipelined stream fed at once", () => {
    const parser = new ResponseParser();
    parser.feed(stream);
    const replies: Reply[] = [];
    let reply;
    while ((reply = parser.nextReply()) !== null) replies.push(reply);
    expect(replies).toEqual(expected);
  });

  it("parses the same stream fed one byte at a time", () => {
    expect(feedByteByByte(new ResponseParser(), stream)).toEqual(expected);
  });

  it("keeps bulk payload bytes exact", () => {
    const parser = new ResponseParser();
    const payload = Buffer.from([0x0d, 0x0a, 0x00, 0xfe]);
    parser.feed(Buffer.concat([Buffer.from("*1\r\n$4\r\n"), payload, Buffer.from("\r\n")]));
    const reply = parser.nextReply();
    expect(reply?.kind).toBe("array");
    if (reply?.kind === "array") {
      expect(reply.items[0].equals(payload)).toBe(true);
    }
  });

  it("rejects malformed frames", () => {
    const bad = ["?what\r\n", ":4x2\r\n", "*2x\r\n"];
    for (const text of bad) {
      const parser = new ResponseParser();
      parser.feed(Buffer.from(text, "latin1"));
      expect(() => parser.nextReply()).toThrow(ProtocolError);
    }
  });
});

describe("encodePipeline", () => {
  it("concatenates command frames in order", () => {
    const joined = encodePipeline([["PING"], ["LEN", "q"]]);
    expect(joined.toString("latin1")).toBe("*1\r\n$4\r\nPING\r\n*2\r\n$3\r\nLEN\r\n$1\r\nq\r\n");
  });
});
