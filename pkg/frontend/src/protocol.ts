// Wire schema shared with the daemon: newline-delimited JSON over TCP,
// one JSON object per WebSocket text message. Every inbound message is
// validated here; anything malformed is rejected (the caller logs and
// skips it) so a bad frame can never take the page down.

export type Stream = "raw" | "filtered" | "resampled";
export type CommandAction = "start" | "stop" | "pause" | "resume" | "reset";
export type DaemonState = "idle" | "streaming" | "paused" | "device_lost";

export interface WelcomeConfig {
  native_rate: number;
  effective_rate: number;
  n_channels: number;
  daisy: boolean;
  streams: Stream[];
  resample: boolean;
  [extra: string]: unknown;
}

export interface WelcomeMsg {
  type: "welcome";
  config: WelcomeConfig;
}

export interface StatusMsg {
  type: "status";
  state: DaemonState;
  packets?: number;
  gaps_interpolated?: number;
  dropouts?: number;
  duplicates?: number;
  discarded_bytes?: number;
  packet_rate?: number;
  session?: number;
  [extra: string]: unknown;
}

export interface DataMsg {
  type: "data";
  stream: Stream;
  first_index: number;
  frames: number[][];
}

export interface TagAckMsg {
  type: "tag_ack";
  tag_id: number;
  resolved_index: number;
  label: string;
  client_time: number | null;
}

export interface EpochMsg {
  type: "epoch";
  tag_id: number;
  start_index: number;
  rate: number;
  data: number[][];
}

export interface BandPowerMsg {
  type: "band_power";
  value: number;
  band: [number, number];
  channel: number;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  detail: string;
}

export interface PongMsg {
  type: "pong";
}

export type ServerMessage =
  | WelcomeMsg
  | StatusMsg
  | DataMsg
  | TagAckMsg
  | EpochMsg
  | BandPowerMsg
  | ErrorMsg
  | PongMsg;

export type ClientMessage =
  | { type: "hello" }
  | { type: "command"; action: CommandAction }
  | { type: "subscribe"; stream: Stream; channels?: number[] }
  | { type: "unsubscribe"; stream?: Stream }
  | { type: "tag"; label: string; client_time: number }
  | { type: "request_epoch"; tag_id: number; window?: { start_ms: number; end_ms: number } }
  | { type: "request_band_power"; band: [number, number]; window_s?: number; channel?: number }
  | { type: "ping" };

const STREAMS: readonly string[] = ["raw", "filtered", "resampled"];
const DAEMON_STATES: readonly string[] = ["idle", "streaming", "paused", "device_lost"];

function isRecord(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

function isNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function isNumberMatrix(x: unknown): x is number[][] {
  return Array.isArray(x) && x.every((row) => Array.isArray(row) && row.every(isNumber));
}

/** Validate one server message; null means malformed (log and skip). */
export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (!isRecord(msg) || typeof msg.type !== "string") return null;
  switch (msg.type) {
    case "welcome": {
      if (!isRecord(msg.config)) return null;
      const c = msg.config;
      if (!isNumber(c.native_rate) || !isNumber(c.effective_rate) || !isNumber(c.n_channels)) {
        return null;
      }
      if (!Array.isArray(c.streams) || !c.streams.every((s) => STREAMS.includes(s as string))) {
        return null;
      }
      return msg as unknown as WelcomeMsg;
    }
    case "status":
      if (typeof msg.state !== "string" || !DAEMON_STATES.includes(msg.state)) return null;
      return msg as unknown as StatusMsg;
    case "data":
      if (typeof msg.stream !== "string" || !STREAMS.includes(msg.stream)) return null;
      if (!isNumber(msg.first_index) || !isNumberMatrix(msg.frames)) return null;
      return msg as unknown as DataMsg;
    case "tag_ack":
      if (!isNumber(msg.tag_id) || !isNumber(msg.resolved_index)) return null;
      if (typeof msg.label !== "string") return null;
      return msg as unknown as TagAckMsg;
    case "epoch":
      if (!isNumber(msg.tag_id) || !isNumber(msg.start_index) || !isNumber(msg.rate)) return null;
      if (!isNumberMatrix(msg.data)) return null;
      return msg as unknown as EpochMsg;
    case "band_power":
      if (!isNumber(msg.value)) return null;
      return msg as unknown as BandPowerMsg;
    case "error":
      if (typeof msg.code !== "string" || typeof msg.detail !== "string") return null;
      return msg as unknown as ErrorMsg;
    case "pong":
      return { type: "pong" };
    default:
      return null;
  }
}

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}
