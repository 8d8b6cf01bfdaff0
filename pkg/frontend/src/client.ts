// User actions -> client messages, gated by a mirror of the daemon's
// transition table so the page never offers a command the daemon would
// reject; plus the WebSocket wrapper with automatic reconnection.

import {
  encodeClientMessage,
  parseServerMessage,
  type ClientMessage,
  type CommandAction,
  type DaemonState,
  type Stream,
} from "./protocol.js";
import {
  applyRawMessage,
  initialState,
  recordPendingTag,
  selectScopeStream,
  socketClosed,
  socketOpened,
  type ConsoleState,
} from "./state.js";

export type UserAction =
  | { kind: "command"; action: CommandAction }
  | { kind: "tag"; label: string }
  | { kind: "selectStream"; stream: Stream }
  | { kind: "ping" };

// which commands each daemon-reported state accepts
const VALID_COMMANDS: Record<DaemonState, CommandAction[]> = {
  idle: ["start", "reset"],
  streaming: ["pause", "stop"],
  paused: ["resume", "stop"],
  device_lost: [],
};

export function commandAllowed(state: ConsoleState, action: CommandAction): boolean {
  if (state.connection !== "connected" || state.daemonState === null) return false;
  return VALID_COMMANDS[state.daemonState].includes(action);
}

export function tagAllowed(state: ConsoleState): boolean {
  return (
    state.connection === "connected" &&
    (state.daemonState === "streaming" || state.daemonState === "paused")
  );
}

/**
 * Translate a user action into the message to send, updating local
 * bookkeeping (pending tags, stream selection). Returns null when the
 * action is not available right now; the UI shows that as a disabled
 * control or a banner.
 */
export function dispatch(
  state: ConsoleState,
  action: UserAction,
  now: () => number = Date.now,
): ClientMessage | null {
  if (state.connection !== "connected") return null;
  switch (action.kind) {
    case "command":
      if (!commandAllowed(state, action.action)) return null;
      return { type: "command", action: action.action };
    case "tag": {
      if (!tagAllowed(state)) return null;
      const sentAt = now();
      recordPendingTag(state, action.label, sentAt);
      return { type: "tag", label: action.label, client_time: sentAt };
    }
    case "selectStream":
      selectScopeStream(state, action.stream);
      return { type: "subscribe", stream: action.stream };
    case "ping":
      return { type: "ping" };
  }
}

// minimal surface of the browser WebSocket the console relies on
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

const RECONNECT_INITIAL_MS = 500;
const RECONNECT_MAX_MS = 8000;

/**
 * Owns the single WebSocket and the console state. Event-driven and
 * single-threaded: socket callbacks mutate the state mirror, the render
 * loop reads it on animation ticks.
 */
export class ConsoleClient {
  readonly state: ConsoleState;
  onchange: (() => void) | null = null;
  private socket: SocketLike | null = null;
  private backoffMs = RECONNECT_INITIAL_MS;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(
    private url: string,
    private makeSocket: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
    scopeStream: Stream = "filtered",
  ) {
    this.state = initialState(scopeStream);
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  stop(): void {
    this.stopped = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
  }

  /** Send a user action; false when unavailable in the current state. */
  act(action: UserAction, now: () => number = Date.now): boolean {
    const msg = dispatch(this.state, action, now);
    if (msg === null || this.socket === null) return false;
    this.socket.send(encodeClientMessage(msg));
    this.notify();
    return true;
  }

  private open(): void {
    const socket = this.makeSocket(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.backoffMs = RECONNECT_INITIAL_MS;
      socketOpened(this.state);
      socket.send(encodeClientMessage({ type: "hello" }));
      socket.send(encodeClientMessage({ type: "subscribe", stream: this.state.scopeStream }));
      this.notify();
    };
    socket.onmessage = (ev) => {
      if (typeof ev.data !== "string") return;
      const msg = applyRawMessage(this.state, ev.data, parseServerMessage);
      if (msg === null) {
        console.warn("skipping malformed server message", ev.data);
      }
      this.notify();
    };
    socket.onclose = () => {
      this.socket = null;
      socketClosed(this.state);
      this.notify();
      if (!this.stopped) this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, RECONNECT_MAX_MS);
    this.reconnectTimer = setTimeout(() => this.open(), delay);
  }

  private notify(): void {
    this.onchange?.();
  }
}
