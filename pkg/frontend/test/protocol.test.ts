import { describe, expect, it } from "vitest";

import { encodeClientMessage, parseServerMessage } from "../src/protocol.js";

const WELCOME = JSON.stringify({
  type: "welcome",
  config: {
    native_rate: 250,
    effective_rate: 250,
    n_channels: 8,
    daisy: false,
    streams: ["raw", "filtered"],
    resample: false,
  },
});

describe("parseServerMessage", () => {
  it("accepts the full server vocabulary", () => {
    expect(parseServerMessage(WELCOME)?.type).toBe("welcome");
    expect(
      parseServerMessage(JSON.stringify({ type: "status", state: "streaming", packets: 5 }))?.type,
    ).toBe("status");
    expect(
      parseServerMessage(
        JSON.stringify({ type: "data", stream: "raw", first_index: 10, frames: [[1, 2]] }),
      )?.type,
    ).toBe("data");
    expect(
      parseServerMessage(
        JSON.stringify({
          type: "tag_ack",
          tag_id: 2,
          resolved_index: 500,
          label: "x",
          client_time: 1,
        }),
      )?.type,
    ).toBe("tag_ack");
    expect(
      parseServerMessage(
        JSON.stringify({ type: "epoch", tag_id: 2, start_index: 500, rate: 250, data: [[0]] }),
      )?.type,
    ).toBe("epoch");
    expect(
      parseServerMessage(
        JSON.stringify({ type: "band_power", value: 0.5, band: [8, 12], channel: 0 }),
      )?.type,
    ).toBe("band_power");
    expect(
      parseServerMessage(JSON.stringify({ type: "error", code: "state", detail: "no" }))?.type,
    ).toBe("error");
    expect(parseServerMessage(JSON.stringify({ type: "pong" }))?.type).toBe("pong");
  });

  it("rejects malformed input instead of throwing", () => {
    const bad = [
      "not json",
      "42",
      "[1,2]",
      JSON.stringify({ noType: true }),
      JSON.stringify({ type: "mystery" }),
      JSON.stringify({ type: "status", state: "sleeping" }),
      JSON.stringify({ type: "data", stream: "raw", first_index: "x", frames: [[1]] }),
      JSON.stringify({ type: "data", stream: "spectral", first_index: 0, frames: [] }),
      JSON.stringify({ type: "data", stream: "raw", first_index: 0, frames: [["a"]] }),
      JSON.stringify({ type: "tag_ack", tag_id: "two", resolved_index: 0, label: "x" }),
      JSON.stringify({ type: "welcome", config: { native_rate: "fast" } }),
      JSON.stringify({ type: "error", code: 5, detail: "x" }),
    ];
    for (const raw of bad) {
      expect(parseServerMessage(raw)).toBeNull();
    }
  });
});

describe("encodeClientMessage", () => {
  it("matches the daemon field names exactly", () => {
    expect(JSON.parse(encodeClientMessage({ type: "command", action: "start" }))).toEqual({
      type: "command",
      action: "start",
    });
    expect(JSON.parse(encodeClientMessage({ type: "tag", label: "s", client_time: 12 }))).toEqual({
      type: "tag",
      label: "s",
      client_time: 12,
    });
    expect(JSON.parse(encodeClientMessage({ type: "subscribe", stream: "filtered" }))).toEqual({
      type: "subscribe",
      stream: "filtered",
    });
  });
});
