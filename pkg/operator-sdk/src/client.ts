/**
 * TCP client for the queue server and the node-manager control endpoint
 * (both speak the same wire protocol).
 */

import * as net from "node:net";
import { encodePipeline, Reply, ResponseParser } from "./wire.js";

export class ConnectionLost extends Error {}

/** An -ERR reply surfaced from a single-command helper. */
export class ServerError extends Error {}

interface Pending {
  want: number;
  replies: Reply[];
  resolve: (replies: Reply[]) => void;
  reject: (err: Error) => void;
}

export class QueueConnection {
  private socket: net.Socket | null = null;
  private parser = new ResponseParser();
  private pending: Pending | null = null;
  private queue: Promise<unknown> = Promise.resolve();
  private closed = false;

  constructor(
    readonly host: string,
    readonly port: number,
    readonly timeoutMs = 10_000,
  ) {}

  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = net.connect({ host: this.host, port: this.port });
      socket.setNoDelay(true);
      const onError = (err: Error) => {
        socket.destroy();
        reject(new ConnectionLost(`connect ${this.host}:${this.port}: ${err.message}`));
      };
      socket.once("error", onError);
      socket.once("connect", () => {
        socket.removeListener("error", onError);
        this.socket = socket;
        socket.on("data", (chunk) => this.onData(chunk));
        socket.on("error", (err) => this.onLost(err.message));
        socket.on("close", () => this.onLost("connection closed"));
        resolve();
      });
    });
  }

  close(): void {
    this.closed = true;
    if (this.socket !== null) {
      this.socket.destroy();
      this.socket = null;
    }
  }

  private onData(chunk: Buffer): void {
    try {
      this.parser.feed(chunk);
      let reply: Reply | null;
      while (this.pending !== null && (reply = this.parser.nextReply()) !== null) {
        this.pending.replies.push(reply);
        if (this.pending.replies.length === this.pending.want) {
          const done = this.pending;
          this.pending = null;
          done.resolve(done.replies);
        }
      }
    } catch (err) {
      this.onLost((err as Error).message);
    }
  }

  private onLost(reason: string): void {
    if (this.pending !== null) {
      const p = this.pending;
      this.pending = null;
      p.reject(new ConnectionLost(reason));
    }
    if (this.socket !== null && !this.closed) {
      this.socket.destroy();
      this.socket = null;
    }
  }

  /** Send commands back-to-back; resolve with one reply per command. */
  execute(commands: (string | Buffer)[][]): Promise<Reply[]> {
    const run = this.queue.then(() => this.executeNow(commands));
    // keep the chain alive after rejections; callers see the original error
    this.queue = run.catch(() => undefined);
    return run;
  }

  private executeNow(commands: (string | Buffer)[][]): Promise<Reply[]> {
    if (commands.length === 0) return Promise.resolve([]);
    const socket = this.socket;
    if (socket === null) {
      return Promise.reject(new ConnectionLost("not connected"));
    }
    const data = encodePipeline(commands);
    return new Promise<Reply[]>((resolve, reject) => {
      const timer = setTimeout(() => {
        this.onLost(`timed out after ${this.timeoutMs}ms`);
      }, this.timeoutMs);
      this.pending = {
        want: commands.length,
        replies: [],
        resolve: (replies) => {
          clearTimeout(timer);
          resolve(replies);
        },
        reject: (err) => {
          clearTimeout(timer);
          reject(err);
        },
      };
      socket.write(data);
    });
  }

  async one(...args: (string | Buffer)[]): Promise<Reply> {
    const [reply] = await this.execute([args]);
    if (reply.kind === "err") {
      throw new ServerError(reply.message);
    }
    return reply;
  }

  async ping(): Promise<string> {
    const reply = await this.one("PING");
    if (reply.kind !== "ok") throw new ServerError(`unexpected PING reply: ${reply.kind}`);
    return reply.text;
  }

  async qcreate(queue: string): Promise<void> {
    await this.one("QCREATE", queue);
  }

  async push(queue: string, payload: Buffer | string): Promise<void> {
    await this.one("PUSH", queue, payload);
  }

  async range(queue: string, offset: number | bigint, count: number): Promise<Buffer[]> {
    const reply = await this.one("RANGE", queue, String(offset), String(count));
    if (reply.kind !== "array") throw new ServerError(`unexpected RANGE reply: ${reply.kind}`);
    return reply.items;
  }

  async trim(queue: string, count: number): Promise<number> {
    const reply = await this.one("TRIM", queue, String(count));
    if (reply.kind !== "int") throw new ServerError(`unexpected TRIM reply: ${reply.kind}`);
    return reply.value;
  }

  async length(queue: string): Promise<number> {
    const reply = await this.one("LEN", queue);
    if (reply.kind !== "int") throw new ServerError(`unexpected LEN reply: ${reply.kind}`);
    return reply.value;
  }
}

/**
 * Cursor over an append-only control queue.  Control queues are never
 * trimmed: each side reads with RANGE at its own offset, so the manager and
 * the worker share one queue without stealing each other's messages.
 */
export class ControlLog {
  constructor(
    private readonly conn: QueueConnection,
    readonly queue: string,
    public offset = 0,
  ) {}

  async post(payload: Buffer | string): Promise<void> {
    await this.conn.push(this.queue, payload);
  }

  async poll(): Promise<Buffer[]> {
    const items = await this.conn.range(this.queue, this.offset, 64);
    this.offset += items.length;
    return items;
  }
}
