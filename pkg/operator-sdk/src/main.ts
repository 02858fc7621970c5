/**
 * Worker entry point.  The node manager starts this with the operator
 * package as the working directory; operator.json selects the transform.
 *
 * Exit codes: 0 drained, 2 bad configuration or environment, 3 queue server
 * unreachable.
 */

import { readFileSync } from "node:fs";
import { ConnectionLost } from "./client.js";
import { ConfigError, contextFromEnv } from "./env.js";
import { dropTransform, forwardTransform, makeFraudTransform } from "./fraud.js";
import { Transform, runWorker } from "./runtime.js";

interface OperatorConfig {
  kind?: string;
  threshold?: number;
}

function loadTransform(): Transform {
  let config: OperatorConfig = {};
  try {
    config = JSON.parse(readFileSync("operator.json", "utf8")) as OperatorConfig;
  } catch (err) {
    if ((err as NodeJS.ErrnoException).code !== "ENOENT") {
      throw new ConfigError(`operator.json: ${(err as Error).message}`);
    }
  }
  const kind = config.kind ?? "forward";
  switch (kind) {
    case "forward":
      return forwardTransform;
    case "drop":
      return dropTransform;
    case "fraud": {
      const threshold = config.threshold;
      if (typeof threshold !== "number") {
        throw new ConfigError("fraud operator needs a numeric threshold");
      }
      return makeFraudTransform(threshold);
    }
    default:
      throw new ConfigError(`unknown operator kind: ${kind}`);
  }
}

async function main(): Promise<number> {
  let transform: Transform;
  let ctx;
  try {
    transform = loadTransform();
    ctx = contextFromEnv();
  } catch (err) {
    if (err instanceof ConfigError) {
      console.error(err.message);
      return 2;
    }
    throw err;
  }
  try {
    return await runWorker(transform, ctx);
  } catch (err) {
    if (err instanceof ConnectionLost) {
      console.error(err.message);
      return 3;
    }
    throw err;
  }
}

process.exitCode = await main();
