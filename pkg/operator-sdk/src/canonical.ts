/**
 * Canonical JSON: one byte sequence per document, stable across languages.
 *
 * Rules: object keys sorted by Unicode code point, no whitespace, UTF-8 with
 * raw (unescaped) non-ASCII, integers as plain decimals, floats in Python
 * repr form (shortest round-trip digits, positional for decimal exponents in
 * [-4, 16), otherwise e+NN / e-NN with a two-digit minimum exponent).
 *
 * Integers and floats are distinct types on the wire ("1" vs "1.0"), so the
 * value model keeps them distinct here too: bigint encodes as an integer,
 * number always encodes as a float.
 */

export class CanonicalError extends Error {}

export type CanonicalValue =
  | null
  | boolean
  | bigint
  | number
  | string
  | CanonicalValue[]
  | { [key: string]: CanonicalValue };

/** Format a float exactly as Python repr() would. */
export function formatFloat(x: number): string {
  if (!Number.isFinite(x)) {
    throw new CanonicalError(`non-finite float: ${x}`);
  }
  if (x === 0) {
    return "0.0"; // -0.0 normalizes to 0.0
  }
  const negative = x < 0;
  // toExponential() with no argument yields the shortest digit string that
  // round-trips, the same digits repr() picks.
  const exp = Math.abs(x).toExponential();
  const m = /^(\d)(?:\.(\d+))?e([+-]\d+)$/.exec(exp);
  if (m === null) {
    throw new CanonicalError(`unexpected exponential form: ${exp}`);
  }
  const digits = m[1] + (m[2] ?? "");
  const e = parseInt(m[3], 10);
  let body: string;
  if (e >= -4 && e < 16) {
    if (e >= digits.length - 1) {
      body = digits + "0".repeat(e - digits.length + 1) + ".0";
    } else if (e >= 0) {
      body = digits.slice(0, e + 1) + "." + digits.slice(e + 1);
    } else {
      body = "0." + "0".repeat(-e - 1) + digits;
    }
  } else {
    const mantissa = digits.length > 1 ? digits[0] + "." + digits.slice(1) : digits;
    const sign = e < 0 ? "-" : "+";
    const magnitude = Math.abs(e).toString().padStart(2, "0");
    body = `${mantissa}e${sign}${magnitude}`;
  }
  return negative ? "-" + body : body;
}

const SHORT_ESCAPES: Record<number, string> = {
  0x08: "\\b",
  0x09: "\\t",
  0x0a: "\\n",
  0x0c: "\\f",
  0x0d: "\\r",
  0x22: '\\"',
  0x5c: "\\\\",
};

function hasLoneSurrogate(s: string): boolean {
  for (let i = 0; i < s.length; i++) {
    const c = s.charCodeAt(i);
    if (c >= 0xd800 && c <= 0xdbff) {
      const d = s.charCodeAt(i + 1);
      if (d >= 0xdc00 && d <= 0xdfff) {
        i++;
      } else {
        return true;
      }
    } else if (c >= 0xdc00 && c <= 0xdfff) {
      return true;
    }
  }
  return false;
}

function writeString(s: string, out: string[]): void {
  if (hasLoneSurrogate(s)) {
    throw new CanonicalError("string contains a lone surrogate");
  }
  out.push('"');
  let plainStart = 0;
  for (let i = 0; i < s.length; i++) {
    const c = s.charCodeAt(i);
    if (c === 0x22 || c === 0x5c || c < 0x20) {
      if (i > plainStart) out.push(s.slice(plainStart, i));
      out.push(SHORT_ESCAPES[c] ?? "\\u" + c.toString(16).padStart(4, "0"));
      plainStart = i + 1;
    }
  }
  if (s.length > plainStart) out.push(s.slice(plainStart));
  out.push('"');
}

// Code point order equals UTF-8 byte order, which is not UTF-16 unit order
// once astral characters appear.
function compareKeys(a: string, b: string): number {
  return Buffer.compare(Buffer.from(a, "utf8"), Buffer.from(b, "utf8"));
}

function writeValue(v: CanonicalValue, out: string[]): void {
  if (v === null) {
    out.push("null");
  } else if (typeof v === "boolean") {
    out.push(v ? "true" : "false");
  } else if (typeof v === "bigint") {
    out.push(v.toString());
  } else if (typeof v === "number") {
    out.push(formatFloat(v));
  } else if (typeof v === "string") {
    writeString(v, out);
  } else if (Array.isArray(v)) {
    out.push("[");
    for (let i = 0; i < v.length; i++) {
      if (i > 0) out.push(",");
      writeValue(v[i], out);
    }
    out.push("]");
  } else if (typeof v === "object") {
    const keys = Object.keys(v).sort(compareKeys);
    out.push("{");
    for (let i = 0; i < keys.length; i++) {
      if (i > 0) out.push(",");
      writeString(keys[i], out);
      out.push(":");
      writeValue(v[keys[i]], out);
    }
    out.push("}");
  } else {
    throw new CanonicalError(`unsupported value: ${typeof v}`);
  }
}

export function canonicalString(doc: CanonicalValue): string {
  const out: string[] = [];
  writeValue(doc, out);
  return out.join("");
}

export function canonicalBytes(doc: CanonicalValue): Buffer {
  return Buffer.from(canonicalString(doc), "utf8");
}

// ---------------------------------------------------------------------------
// strict parser: JSON grammar, integer tokens decode to bigint, float tokens
// to number, duplicate keys rejected, no NaN/Infinity literals

const WS = new Set([0x20, 0x09, 0x0a, 0x0d]);

class Parser {
  private i = 0;

  constructor(private readonly s: string) {}

  parse(): CanonicalValue {
    this.skipWs();
    const v = this.value();
    this.skipWs();
    if (this.i !== this.s.length) {
      throw new CanonicalError(`trailing data at offset ${this.i}`);
    }
    return v;
  }

  private skipWs(): void {
    while (this.i < this.s.length && WS.has(this.s.charCodeAt(this.i))) this.i++;
  }

  private fail(what: string): never {
    throw new CanonicalError(`${what} at offset ${this.i}`);
  }

  private literal(text: string, value: CanonicalValue): CanonicalValue {
    if (this.s.startsWith(text, this.i)) {
      this.i += text.length;
      return value;
    }
    this.fail(`invalid literal`);
  }

  private value(): CanonicalValue {
    if (this.i >= this.s.length) this.fail("unexpected end of input");
    const c = this.s[this.i];
    switch (c) {
      case "{":
        return this.object();
      case "[":
        return this.array();
      case '"':
        return this.string();
      case "t":
        return this.literal("true", true);
      case "f":
        return this.literal("false", false);
      case "n":
        return this.literal("null", null);
      default:
        if (c === "-" || (c >= "0" && c <= "9")) return this.number();
        this.fail(`unexpected character ${JSON.stringify(c)}`);
    }
  }

  private object(): CanonicalValue {
    this.i++; // {
    const obj: { [key: string]: CanonicalValue } = {};
    this.skipWs();
    if (this.s[this.i] === "}") {
      this.i++;
      return obj;
    }
    for (;;) {
      this.skipWs();
      if (this.s[this.i] !== '"') this.fail("expected object key");
      const key = this.string();
      if (Object.prototype.hasOwnProperty.call(obj, key)) {
        throw new CanonicalError(`duplicate key ${JSON.stringify(key)}`);
      }
      this.skipWs();
      if (this.s[this.i] !== ":") this.fail("expected ':'");
      this.i++;
      this.skipWs();
      obj[key] = this.value();
      this.skipWs();
      const c = this.s[this.i];
      if (c === ",") {
        this.i++;
        continue;
      }
      if (c === "}") {
        this.i++;
        return obj;
      }
      this.fail("expected ',' or '}'");
    }
  }

  private array(): CanonicalValue {
    this.i++; // [
    const arr: CanonicalValue[] = [];
    this.skipWs();
    if (this.s[this.i] === "]") {
      this.i++;
      return arr;
    }
    for (;;) {
      this.skipWs();
      arr.push(this.value());
      this.skipWs();
      const c = this.s[this.i];
      if (c === ",") {
        this.i++;
        continue;
      }
      if (c === "]") {
        this.i++;
        return arr;
      }
      this.fail("expected ',' or ']'");
    }
  }

  private string(): string {
    this.i++; // opening quote
    let out = "";
    let plainStart = this.i;
    for (;;) {
      if (this.i >= this.s.length) this.fail("unterminated string");
      const c = this.s.charCodeAt(this.i);
      if (c === 0x22) {
        out += this.s.slice(plainStart, this.i);
        this.i++;
        return out;
      }
      if (c === 0x5c) {
        out += this.s.slice(plainStart, this.i);
        this.i++;
        out += this.escape();
        plainStart = this.i;
        continue;
      }
      if (c < 0x20) this.fail("unescaped control character");
      this.i++;
    }
  }

  private escape(): string {
    const c = this.s[this.i];
    this.i++;
    switch (c) {
      case '"':
        return '"';
      case "\\":
        return "\\";
      case "/":
        return "/";
      case "b":
        return "\b";
      case "f":
        return "\f";
      case "n":
        return "\n";
      case "r":
        return "\r";
      case "t":
        return "\t";
      case "u": {
        const hex = this.s.slice(this.i, this.i + 4);
        if (!/^[0-9a-fA-F]{4}$/.test(hex)) this.fail("invalid \\u escape");
        this.i += 4;
        return String.fromCharCode(parseInt(hex, 16));
      }
      default:
        this.fail(`invalid escape \\${c}`);
    }
  }

  private number(): bigint | number {
    const start = this.i;
    if (this.s[this.i] === "-") this.i++;
    if (this.s[this.i] === "0") {
      this.i++;
    } else if (this.s[this.i] >= "1" && this.s[this.i] <= "9") {
      while (this.s[this.i] >= "0" && this.s[this.i] <= "9") this.i++;
    } else {
      this.fail("invalid number");
    }
    let isFloat = false;
    if (this.s[this.i] === ".") {
      isFloat = true;
      this.i++;
      if (!(this.s[this.i] >= "0" && this.s[this.i] <= "9")) this.fail("invalid fraction");
      while (this.s[this.i] >= "0" && this.s[this.i] <= "9") this.i++;
    }
    if (this.s[this.i] === "e" || this.s[this.i] === "E") {
      isFloat = true;
      this.i++;
      if (this.s[this.i] === "+" || this.s[this.i] === "-") this.i++;
      if (!(this.s[this.i] >= "0" && this.s[this.i] <= "9")) this.fail("invalid exponent");
      while (this.s[this.i] >= "0" && this.s[this.i] <= "9") this.i++;
    }
    const token = this.s.slice(start, this.i);
    if (!isFloat) {
      return BigInt(token);
    }
    const x = Number(token);
    if (!Number.isFinite(x)) {
      throw new CanonicalError(`float out of range: ${token}`);
    }
    return x;
  }
}

export function parseCanonical(data: Buffer | string): CanonicalValue {
  let text: string;
  if (typeof data === "string") {
    text = data;
  } else {
    text = data.toString("utf8");
    // toString silently substitutes U+FFFD for bad sequences; round-trip to
    // reject invalid UTF-8 instead
    if (!Buffer.from(text, "utf8").equals(data)) {
      throw new CanonicalError("payload is not valid UTF-8");
    }
  }
  return new Parser(text).parse();
}
