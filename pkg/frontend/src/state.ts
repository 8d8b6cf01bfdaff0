// Console state mirror. The page never guesses: daemon state changes only
// when a status message says so, traces hold the last five seconds of the
// selected stream, and a reconnect throws the mirror away until the
// daemon speaks again.

import type {
  DaemonState,
  ServerMessage,
  Stream,
  StatusMsg,
  TagAckMsg,
  WelcomeConfig,
} from "./protocol.js";

export const TRACE_SECONDS = 5;

export interface PendingTag {
  label: string;
  sentAt: number; // local ms clock, as sent in client_time
}

export interface ConsoleState {
  connection: "connected" | "reconnecting";
  daemonState: DaemonState | null; // null until the daemon reports one
  config: WelcomeConfig | null;
  stats: StatusMsg | null;
  scopeStream: Stream;
  traces: number[][]; // per channel, bounded to TRACE_SECONDS * rate
  traceNextIndex: number | null; // stream index expected next (gap display)
  pendingTags: PendingTag[];
  ackedTags: TagAckMsg[];
  lastError: string | null;
  droppedMessages: number; // malformed server messages skipped
}

export function initialState(scopeStream: Stream = "filtered"): ConsoleState {
  return {
    connection: "reconnecting",
    daemonState: null,
    config: null,
    stats: null,
    scopeStream,
    traces: [],
    traceNextIndex: null,
    pendingTags: [],
    ackedTags: [],
    lastError: null,
    droppedMessages: 0,
  };
}

export function traceCapacity(state: ConsoleState): number {
  const rate = traceRate(state);
  return Math.max(1, Math.round(TRACE_SECONDS * rate));
}

export function traceRate(state: ConsoleState): number {
  if (!state.config) return 250;
  if (state.scopeStream === "resampled") return 256;
  return state.config.effective_rate;
}

export function socketOpened(state: ConsoleState): void {
  state.connection = "connected";
  // truth is daemon-reported only; wait for welcome/status to repopulate
  state.daemonState = null;
  state.stats = null;
  state.traces = [];
  state.traceNextIndex = null;
  state.pendingTags = [];
}

export function socketClosed(state: ConsoleState): void {
  state.connection = "reconnecting";
  state.daemonState = null;
}

export function selectScopeStream(state: ConsoleState, stream: Stream): void {
  if (stream !== state.scopeStream) {
    state.scopeStream = stream;
    state.traces = [];
    state.traceNextIndex = null;
  }
}

export function recordPendingTag(state: ConsoleState, label: string, sentAt: number): void {
  state.pendingTags.push({ label, sentAt });
}

/** Apply one validated server message to the mirror. */
export function applyServerMessage(state: ConsoleState, msg: ServerMessage): void {
  switch (msg.type) {
    case "welcome":
      state.config = msg.config;
      break;
    case "status":
      state.daemonState = msg.state;
      state.stats = msg;
      break;
    case "data":
      if (msg.stream === state.scopeStream) {
        appendTraces(state, msg.first_index, msg.frames);
      }
      break;
    case "tag_ack": {
      const i = state.pendingTags.findIndex(
        (p) => p.label === msg.label && (msg.client_time === null || p.sentAt === msg.client_time),
      );
      if (i >= 0) state.pendingTags.splice(i, 1);
      state.ackedTags.push(msg);
      if (state.ackedTags.length > 100) state.ackedTags.shift();
      break;
    }
    case "error":
      state.lastError = `${msg.code}: ${msg.detail}`;
      break;
    case "epoch":
    case "band_power":
    case "pong":
      break;
  }
}

/** Parse-and-apply for a raw socket payload; malformed input is counted. */
export function applyRawMessage(
  state: ConsoleState,
  raw: string,
  parse: (raw: string) => ServerMessage | null,
): ServerMessage | null {
  const msg = parse(raw);
  if (msg === null) {
    state.droppedMessages += 1;
    return null;
  }
  applyServerMessage(state, msg);
  return msg;
}

function appendTraces(state: ConsoleState, firstIndex: number, frames: number[][]): void {
  if (frames.length === 0) return;
  const nCh = frames[0].length;
  if (state.traces.length !== nCh) {
    state.traces = Array.from({ length: nCh }, () => []);
    state.traceNextIndex = null;
  }
  if (state.traceNextIndex !== null && firstIndex !== state.traceNextIndex) {
    // stream discontinuity (resubscribe or new session): restart cleanly
    state.traces = Array.from({ length: nCh }, () => []);
  }
  const cap = traceCapacity(state);
  for (let ch = 0; ch < nCh; ch++) {
    const lane = state.traces[ch];
    for (const frame of frames) lane.push(frame[ch]);
    if (lane.length > cap) lane.splice(0, lane.length - cap);
  }
  state.traceNextIndex = firstIndex + frames.length;
}
