/**
 * The worker loop: consume batches from the in queue, transform, publish to
 * the out queue, then trim the consumed inputs.
 *
 * Reading with RANGE (never popping) and trimming only after every output
 * landed gives exactly-once delivery across worker crashes and hot swaps: a
 * worker that dies mid-batch leaves the inputs in place for its successor.
 */

import { ConnectionLost, ControlLog, QueueConnection } from "./client.js";
import {
  CTL_ACTIVATE,
  CTL_DRAIN,
  CTL_DRAINED,
  CTL_READY,
  OperatorContext,
  dlqOf,
} from "./env.js";

export type Transform = (payload: Buffer) => Buffer[];

const CTL_POLL_SLEEP_NS = 500_000; // idle wait for activation; on the swap critical path
const CONNECT_RETRY_LIMIT = 40;

/** The k-th consecutive idle poll sleeps k * increment, capped. */
export class LinearBackoff {
  private idlePolls = 0;

  constructor(
    readonly incrementNs: number,
    readonly capNs: number,
  ) {
    if (incrementNs < 1 || capNs < incrementNs) {
      throw new Error("need 1 <= increment <= cap");
    }
  }

  nextSleepNs(): number {
    this.idlePolls++;
    return Math.min(this.idlePolls * this.incrementNs, this.capNs);
  }

  reset(): void {
    this.idlePolls = 0;
  }
}

function sleepNs(ns: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ns / 1e6));
}

function deadLetter(payload: Buffer, error: Error): Buffer {
  const record = {
    error: `${error.name}: ${error.message}`,
    payload_b64: payload.toString("base64"),
    ts: Date.now() * 1000,
  };
  // keys are already in sorted order; stringify emits them as written
  return Buffer.from(JSON.stringify(record), "utf8");
}

async function connectWithRetry(ctx: OperatorContext): Promise<QueueConnection> {
  const backoff = new LinearBackoff(1_000_000, 50_000_000);
  for (let attempt = 0; attempt < CONNECT_RETRY_LIMIT; attempt++) {
    const conn = new QueueConnection(ctx.queueHost, ctx.queuePort, 2_000);
    try {
      await conn.connect();
      return conn;
    } catch (err) {
      if (!(err instanceof ConnectionLost)) throw err;
      await sleepNs(backoff.nextSleepNs());
    }
  }
  throw new ConnectionLost(`queue server unreachable at ${ctx.queueHost}:${ctx.queuePort}`);
}

async function flushThenTrim(
  conn: QueueConnection,
  outQueue: string,
  dlq: string,
  inQueue: string,
  outputs: Buffer[],
  letters: Buffer[],
  consumed: number,
  backoff: LinearBackoff,
): Promise<void> {
  // The server applies pipelined commands strictly in order, so the trim can
  // only take effect after every push landed.  Bounced pushes (queue full)
  // are retried before trimming; pushes the server can never accept are
  // dead-lettered so the loop cannot wedge.
  let pending: [string, Buffer][] = [
    ...outputs.map((p): [string, Buffer] => [outQueue, p]),
    ...letters.map((l): [string, Buffer] => [dlq, l]),
  ];
  while (pending.length > 0) {
    const commands = pending.map(([queue, payload]) => ["PUSH", queue, payload]);
    const replies = await conn.execute(commands);
    const bounced: [string, Buffer][] = [];
    for (let i = 0; i < pending.length; i++) {
      const reply = replies[i];
      if (reply.kind !== "err") continue;
      const [queue, payload] = pending[i];
      if (reply.message.includes("full")) {
        bounced.push([queue, payload]);
      } else if (queue !== dlq) {
        bounced.push([dlq, deadLetter(payload, new Error(reply.message))]);
      } else {
        console.error(`dead letter rejected by server: ${reply.message}`);
      }
    }
    if (bounced.length > 0 && bounced.length === pending.length) {
      await sleepNs(backoff.nextSleepNs());
    }
    pending = bounced;
  }
  await conn.trim(inQueue, consumed);
}

/** Run the consume loop until drained.  Resolves with the process exit code. */
export async function runWorker(transform: Transform, ctx: OperatorContext): Promise<number> {
  const conn = await connectWithRetry(ctx);
  try {
    const ctl = new ControlLog(conn, ctx.ctlQueue);
    const backoff = new LinearBackoff(ctx.backoffNs, Math.max(ctx.backoffNs, 10_000_000));
    const dlq = dlqOf(ctx);

    await ctl.post(CTL_READY);

    let activated = false;
    while (!activated) {
      for (const message of await ctl.poll()) {
        if (message.equals(CTL_ACTIVATE)) {
          activated = true;
        } else if (message.equals(CTL_DRAIN)) {
          await ctl.post(CTL_DRAINED);
          return 0;
        }
      }
      if (!activated) await sleepNs(CTL_POLL_SLEEP_NS);
    }

    for (;;) {
      const messages = await ctl.poll();
      if (messages.some((m) => m.equals(CTL_DRAIN))) {
        await ctl.post(CTL_DRAINED);
        return 0;
      }
      const batch = await conn.range(ctx.inQueue, 0, ctx.batchSize);
      if (batch.length === 0) {
        await sleepNs(backoff.nextSleepNs());
        continue;
      }
      const outputs: Buffer[] = [];
      const letters: Buffer[] = [];
      for (const payload of batch) {
        try {
          outputs.push(...transform(payload));
        } catch (err) {
          // operator code is untrusted; a poisoned payload must not stall the lane
          letters.push(deadLetter(payload, err instanceof Error ? err : new Error(String(err))));
        }
      }
      await flushThenTrim(conn, ctx.outQueue, dlq, ctx.inQueue, outputs, letters, batch.length, backoff);
      backoff.reset();
    }
  } finally {
    conn.close();
  }
}
