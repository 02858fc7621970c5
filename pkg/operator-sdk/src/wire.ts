/**
 * Client half of the queue wire protocol.
 *
 * Requests are arrays of bulk strings:
 *
 *   *<n>\r\n  then n times  $<len>\r\n<bytes>\r\n
 *
 * Responses are one of:
 *
 *   +<text>\r\n          ok        ("OK", "PONG", ...)
 *   :<int>\r\n           integer
 *   -ERR <message>\r\n   error     (message includes the ERR prefix)
 *   *<n>\r\n <bulks>     array of bulk strings
 */

export const MAX_BULK_LEN = 8 * 1024 * 1024;
export const MAX_REQUEST_ITEMS = 64;
export const MAX_REPLY_ITEMS = 1_048_576;

export class ProtocolError extends Error {}

export type Reply =
  | { kind: "ok"; text: string }
  | { kind: "int"; value: number }
  | { kind: "err"; message: string }
  | { kind: "array"; items: Buffer[] };

const CRLF = Buffer.from("\r\n");

export function encodeCommand(args: (string | Buffer)[]): Buffer {
  if (args.length === 0 || args.length > MAX_REQUEST_ITEMS) {
    throw new ProtocolError(`command must have 1..${MAX_REQUEST_ITEMS} items`);
  }
  const parts: Buffer[] = [Buffer.from(`*${args.length}\r\n`, "ascii")];
  for (const arg of args) {
    const data = typeof arg === "string" ? Buffer.from(arg, "utf8") : arg;
    if (data.length > MAX_BULK_LEN) {
      throw new ProtocolError(`bulk string too long: ${data.length}`);
    }
    parts.push(Buffer.from(`$${data.length}\r\n`, "ascii"), data, CRLF);
  }
  return Buffer.concat(parts);
}

export function encodePipeline(commands: (string | Buffer)[][]): Buffer {
  return Buffer.concat(commands.map(encodeCommand));
}

/** Incremental response parser; feed() bytes, then drain with nextReply(). */
export class ResponseParser {
  private buf: Buffer = Buffer.alloc(0);
  private pos = 0;
  // in-flight array reply
  private items: Buffer[] | null = null;
  private want = 0;

  feed(data: Buffer): void {
    if (this.pos > 0) {
      this.buf = this.buf.subarray(this.pos);
      this.pos = 0;
    }
    this.buf = this.buf.length === 0 ? data : Buffer.concat([this.buf, data]);
  }

  private takeLine(): Buffer | null {
    const nl = this.buf.indexOf(0x0a, this.pos);
    if (nl < 0) return null;
    if (nl === this.pos || this.buf[nl - 1] !== 0x0d) {
      throw new ProtocolError("line not CRLF-terminated");
    }
    const line = this.buf.subarray(this.pos, nl - 1);
    this.pos = nl + 1;
    return line;
  }

  private takeBulk(): Buffer | null {
    const save = this.pos;
    const header = this.takeLine();
    if (header === null) return null;
    if (header[0] !== 0x24) {
      throw new ProtocolError(`expected bulk string, got ${JSON.stringify(header.toString())}`);
    }
    const lenText = header.subarray(1).toString("ascii");
    if (!/^\d+$/.test(lenText)) {
      throw new ProtocolError(`bad bulk length: ${header.toString()}`);
    }
    const len = parseInt(lenText, 10);
    if (len > MAX_BULK_LEN) {
      throw new ProtocolError(`bad bulk length: ${header.toString()}`);
    }
    if (this.buf.length - this.pos < len + 2) {
      this.pos = save;
      return null;
    }
    const data = this.buf.subarray(this.pos, this.pos + len);
    if (this.buf[this.pos + len] !== 0x0d || this.buf[this.pos + len + 1] !== 0x0a) {
      throw new ProtocolError("bulk string not CRLF-terminated");
    }
    this.pos += len + 2;
    return Buffer.from(data); // copy out of the shared buffer
  }

  nextReply(): Reply | null {
    for (;;) {
      if (this.items !== null) {
        while (this.items.length < this.want) {
          const bulk = this.takeBulk();
          if (bulk === null) return null;
          this.items.push(bulk);
        }
        const items = this.items;
        this.items = null;
        return { kind: "array", items };
      }
      const save = this.pos;
      const line = this.takeLine();
      if (line === null) return null;
      const tag = line[0];
      const rest = line.subarray(1);
      if (tag === 0x2b) {
        return { kind: "ok", text: rest.toString("utf8") };
      }
      if (tag === 0x3a) {
        const text = rest.toString("ascii");
        if (!/^-?\d+$/.test(text)) {
          throw new ProtocolError(`bad integer reply: ${line.toString()}`);
        }
        return { kind: "int", value: parseInt(text, 10) };
      }
      if (tag === 0x2d) {
        return { kind: "err", message: rest.toString("utf8") };
      }
      if (tag === 0x2a) {
        const countText = rest.toString("ascii");
        if (!/^\d+$/.test(countText)) {
          throw new ProtocolError(`bad array count: ${line.toString()}`);
        }
        const count = parseInt(countText, 10);
        if (count > MAX_REPLY_ITEMS) {
          throw new ProtocolError(`bad array count: ${line.toString()}`);
        }
        this.items = [];
        this.want = count;
        continue;
      }
      this.pos = save;
      throw new ProtocolError(`unexpected reply tag: ${line.toString()}`);
    }
  }
}
