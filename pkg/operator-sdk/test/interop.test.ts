/**
 * End-to-end interop: spawn the queue server and node manager, publish the
 * compiled SDK bundle as an operator package, deploy it, stream the golden
 * corpus through the live worker, and hot-update it mid-stream.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { copyFileSync, mkdirSync, mkdtempSync, readdirSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { QueueConnection } from "../src/client.js";
import { encodeEvent } from "../src/events.js";
import { corpusLines } from "./corpus.js";

const HOST = "127.0.0.1";
const QUEUE_PORT = 21000 + 2 * Math.floor(Math.random() * 5000);
const CONTROL_PORT = QUEUE_PORT + 1;
const DIST = fileURLToPath(new URL("../dist", import.meta.url));

let root: string;
let serverProc: ChildProcess;
let managerProc: ChildProcess;
let control: QueueConnection;
let data: QueueConnection;

function makePackage(name: string, threshold: number): string {
  const dir = join(root, name);
  mkdirSync(dir);
  for (const file of readdirSync(DIST)) {
    if (file.endsWith(".js")) copyFileSync(join(DIST, file), join(dir, file));
  }
  writeFileSync(join(dir, "package.json"), JSON.stringify({ type: "module" }));
  writeFileSync(join(dir, "operator.json"), JSON.stringify({ kind: "fraud", threshold }));
  return dir;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitForEndpoint(port: number, deadlineMs: number): Promise<QueueConnection> {
  const deadline = Date.now() + deadlineMs;
  for (;;) {
    const conn = new QueueConnection(HOST, port, 30_000);
    try {
      await conn.connect();
      await conn.ping();
      return conn;
    } catch {
      conn.close();
      if (Date.now() > deadline) throw new Error(`no endpoint on :${port} after ${deadlineMs}ms`);
      await sleep(100);
    }
  }
}

async function pushAll(conn: QueueConnection, queue: string, payloads: Buffer[]): Promise<void> {
  const CHUNK = 500;
  for (let i = 0; i < payloads.length; i += CHUNK) {
    const commands = payloads.slice(i, i + CHUNK).map((p) => ["PUSH", queue, p] as (string | Buffer)[]);
    const replies = await conn.execute(commands);
    for (const reply of replies) {
      expect(reply.kind).not.toBe("err");
    }
  }
}

async function collectExactly(
  conn: QueueConnection,
  queue: string,
  want: number,
  deadlineMs: number,
): Promise<Buffer[]> {
  const collected: Buffer[] = [];
  const deadline = Date.now() + deadlineMs;
  while (collected.length < want) {
    const items = await conn.range(queue, 0, 4096);
    if (items.length > 0) {
      await conn.trim(queue, items.length);
      collected.push(...items);
      continue;
    }
    if (Date.now() > deadline) {
      throw new Error(`collected ${collected.length}/${want} before deadline`);
    }
    await sleep(20);
  }
  // a short grace poll catches duplicated or stray trailing output
  await sleep(300);
  const extra = await conn.range(queue, 0, 16);
  expect(extra).toHaveLength(0);
  return collected;
}

interface Doc {
  [key: string]: unknown;
}

async function command(conn: QueueConnection, ...args: string[]): Promise<Doc> {
  const reply = await conn.one(...args);
  expect(reply.kind).toBe("array");
  if (reply.kind !== "array") throw new Error("unreachable");
  expect(reply.items).toHaveLength(1);
  return JSON.parse(reply.items[0].toString("utf8")) as Doc;
}

beforeAll(async () => {
  root = mkdtempSync(join(tmpdir(), "cepless-interop-"));
  const registry = join(root, "registry");
  mkdirSync(registry);

  serverProc = spawn("cepless-queue-server", ["--bind", `${HOST}:${QUEUE_PORT}`], {
    stdio: "ignore",
  });
  data = await waitForEndpoint(QUEUE_PORT, 15_000);

  const v1 = makePackage("pkg-v1", 0.78);
  const v2 = makePackage("pkg-v2", 0.9);
  for (const [version, dir] of [["1.0.0", v1], ["1.1.0", v2]] as const) {
    execFileSync(
      "cepless-registry",
      ["--registry-root", registry, "publish", "ts-fraud", version,
       "--package", dir, "--command", "node main.js"],
      { stdio: "pipe" },
    );
  }

  managerProc = spawn(
    "cepless-node-manager",
    ["--bind", `${HOST}:${CONTROL_PORT}`, "--queue-addr", `${HOST}:${QUEUE_PORT}`,
     "--registry-root", registry],
    { stdio: "ignore" },
  );
  control = await waitForEndpoint(CONTROL_PORT, 15_000);
});

afterAll(async () => {
  control?.close();
  data?.close();
  managerProc?.kill("SIGTERM");
  await sleep(300);
  serverProc?.kill("SIGTERM");
  rmSync(root, { recursive: true, force: true });
});

describe("live node-manager interop", () => {
  let instanceId: string;
  let inQueue: string;
  let outQueue: string;

  it("deploys and reproduces the reference output byte for byte", async () => {
    const doc = await command(control, "DEPLOY", "ts-fraud", "1.0.0");
    expect(doc.state).toBe("running");
    expect(doc.version).toBe("1.0.0");
    instanceId = doc.instance_id as string;
    const queues = doc.queues as { in: string; out: string };
    inQueue = queues.in;
    outQueue = queues.out;

    const events = corpusLines("events.jsonl");
    const expected = corpusLines("fraud-0.78-expected.jsonl");
    await pushAll(data, inQueue, events);

    const collected = await collectExactly(data, outQueue, expected.length, 60_000);
    for (let i = 0; i < expected.length; i++) {
      expect(collected[i].equals(expected[i])).toBe(true);
    }
    expect(await data.length(`${instanceId}-dlq`)).toBe(0);
  });

  it("hot-updates mid-stream with a clean drain handshake", async () => {
    // amounts above both thresholds: every event must come out exactly once
    // no matter which worker generation handles it
    const burst: Buffer[] = [];
    for (let i = 0; i < 2000; i++) {
      burst.push(
        encodeEvent({
          seq: BigInt(i),
          tsProduced: BigInt(i),
          attrs: { amount: 0.95, cardId: "c-7", terminalId: "t-7", timestamp: BigInt(i) },
        }),
      );
    }
    await pushAll(data, inQueue, burst);

    const report = await command(control, "UPDATE", instanceId, "1.1.0");
    expect(report.old_version).toBe("1.0.0");
    expect(report.new_version).toBe("1.1.0");
    expect(report.old_worker_exit).toBe(0); // drained voluntarily
    expect(report.forced_kill).toBe(false);
    expect(report.error).toBeUndefined();

    const collected = await collectExactly(data, outQueue, burst.length, 30_000);
    for (let i = 0; i < burst.length; i++) {
      expect(collected[i].equals(burst[i])).toBe(true);
    }

    // the new threshold must be live: 0.85 no longer passes, 0.95 still does
    const low = encodeEvent({ seq: 1n, tsProduced: 1n, attrs: { amount: 0.85 } });
    const high = encodeEvent({ seq: 2n, tsProduced: 2n, attrs: { amount: 0.95 } });
    await pushAll(data, inQueue, [low, high]);
    const probe = await collectExactly(data, outQueue, 1, 10_000);
    expect(probe[0].equals(high)).toBe(true);

    const status = await command(control, "STATUS", instanceId);
    expect(status.version).toBe("1.1.0");
    expect(status.state).toBe("running");
    expect(status.generation).toBe(2);
    expect(await data.length(`${instanceId}-dlq`)).toBe(0);

    const removed = await control.one("REMOVE", instanceId);
    expect(removed.kind).toBe("ok");
  });
});
