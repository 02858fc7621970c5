/**
 * Worker process contract: every operator worker is configured through
 * environment variables set by the node manager.
 */

export const ENV_QUEUE_ADDR = "CEPLESS_QUEUE_ADDR";
export const ENV_IN_QUEUE = "CEPLESS_IN_QUEUE";
export const ENV_OUT_QUEUE = "CEPLESS_OUT_QUEUE";
export const ENV_CTL_QUEUE = "CEPLESS_CTL_QUEUE";
export const ENV_BATCH_SIZE = "CEPLESS_BATCH_SIZE";
export const ENV_BACKOFF_NS = "CEPLESS_BACKOFF_NS";

export const DEFAULT_BATCH_SIZE = 1024;
export const DEFAULT_BACKOFF_NS = 100_000;

// control-queue messages exchanged with the node manager
export const CTL_READY = Buffer.from("__ready__");
export const CTL_ACTIVATE = Buffer.from("__activate__");
export const CTL_DRAIN = Buffer.from("__drain__");
export const CTL_DRAINED = Buffer.from("__drained__");

export class ConfigError extends Error {}

export interface OperatorContext {
  queueHost: string;
  queuePort: number;
  inQueue: string;
  outQueue: string;
  ctlQueue: string;
  batchSize: number;
  backoffNs: number;
}

/** Dead letters go to the instance's own queue, next to -in/-out/-ctl. */
export function dlqOf(ctx: OperatorContext): string {
  const base = ctx.inQueue.endsWith("-in") ? ctx.inQueue.slice(0, -3) : ctx.inQueue;
  return base + "-dlq";
}

function parsePositive(raw: string | undefined, fallback: number, name: string): number {
  if (raw === undefined || raw === "") return fallback;
  const value = parseInt(raw, 10);
  if (!Number.isInteger(value) || value < 1 || String(value) !== raw.trim()) {
    throw new ConfigError(`${name} must be a positive integer, got ${JSON.stringify(raw)}`);
  }
  return value;
}

export function contextFromEnv(
  env: Record<string, string | undefined> = process.env,
): OperatorContext {
  const required = [ENV_QUEUE_ADDR, ENV_IN_QUEUE, ENV_OUT_QUEUE, ENV_CTL_QUEUE];
  const missing = required.filter((name) => !env[name]);
  if (missing.length > 0) {
    throw new ConfigError(`missing environment: ${missing.join(", ")}`);
  }
  const addr = env[ENV_QUEUE_ADDR]!;
  const colon = addr.lastIndexOf(":");
  const port = colon > 0 ? parseInt(addr.slice(colon + 1), 10) : NaN;
  if (colon <= 0 || !Number.isInteger(port) || port < 1 || port > 65535) {
    throw new ConfigError(`${ENV_QUEUE_ADDR} must be host:port, got ${JSON.stringify(addr)}`);
  }
  return {
    queueHost: addr.slice(0, colon),
    queuePort: port,
    inQueue: env[ENV_IN_QUEUE]!,
    outQueue: env[ENV_OUT_QUEUE]!,
    ctlQueue: env[ENV_CTL_QUEUE]!,
    batchSize: parsePositive(env[ENV_BATCH_SIZE], DEFAULT_BATCH_SIZE, ENV_BATCH_SIZE),
    backoffNs: parsePositive(env[ENV_BACKOFF_NS], DEFAULT_BACKOFF_NS, ENV_BACKOFF_NS),
  };
}
