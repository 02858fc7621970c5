export {
  CanonicalError,
  CanonicalValue,
  canonicalBytes,
  canonicalString,
  formatFloat,
  parseCanonical,
} from "./canonical.js";
export {
  AttrValue,
  Event,
  EventError,
  MAX_SEQ,
  MAX_TS,
  MIN_TS,
  decodeEvent,
  encodeEvent,
} from "./events.js";
export {
  MAX_BULK_LEN,
  MAX_REPLY_ITEMS,
  MAX_REQUEST_ITEMS,
  ProtocolError,
  Reply,
  ResponseParser,
  encodeCommand,
  encodePipeline,
} from "./wire.js";
export { ConnectionLost, ControlLog, QueueConnection, ServerError } from "./client.js";
export {
  CTL_ACTIVATE,
  CTL_DRAIN,
  CTL_DRAINED,
  CTL_READY,
  ConfigError,
  DEFAULT_BACKOFF_NS,
  DEFAULT_BATCH_SIZE,
  OperatorContext,
  contextFromEnv,
  dlqOf,
} from "./env.js";
export { LinearBackoff, Transform, runWorker } from "./runtime.js";
export { dropTransform, forwardTransform, makeFraudTransform } from "./fraud.js";
