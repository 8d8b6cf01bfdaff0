// Page wiring: buttons, status bar, tag entry and the scope canvas.
// Single event-driven thread; rendering runs on animation ticks reading
// the state mirror, decoupled from message arrival.

import { ConsoleClient, commandAllowed, tagAllowed } from "./client.js";
import { DEFAULT_SCOPE, renderScope, type ScopeOptions } from "./scope.js";
import type { CommandAction, Stream } from "./protocol.js";

const wsUrl =
  new URLSearchParams(location.search).get("ws") ?? `ws://${location.hostname || "127.0.0.1"}:8337`;

const client = new ConsoleClient(wsUrl);
const scopeOpts: ScopeOptions = { ...DEFAULT_SCOPE };

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("scope");
const ctx = canvas.getContext("2d");
if (!ctx) throw new Error("no 2d context");

const commandButtons: Array<[CommandAction, HTMLButtonElement]> = (
  ["start", "stop", "pause", "resume", "reset"] as CommandAction[]
).map((a) => [a, $<HTMLButtonElement>(`btn-${a}`)]);

for (const [action, btn] of commandButtons) {
  btn.addEventListener("click", () => client.act({ kind: "command", action }));
}

const tagLabel = $<HTMLInputElement>("tag-label");
$<HTMLButtonElement>("btn-tag").addEventListener("click", () => {
  client.act({ kind: "tag", label: tagLabel.value || "stim" });
});

const streamSelect = $<HTMLSelectElement>("stream-select");
streamSelect.addEventListener("change", () => {
  client.act({ kind: "selectStream", stream: streamSelect.value as Stream });
});

const autoscale = $<HTMLInputElement>("autoscale");
autoscale.addEventListener("change", () => {
  scopeOpts.autoscale = autoscale.checked;
});

function refreshControls(): void {
  const s = client.state;
  $("conn-state").textContent = s.connection;
  $("daemon-state").textContent = s.daemonState ?? "unknown";
  const st = s.stats;
  $("stats").textContent = st
    ? `packets ${st.packets ?? 0} | rate ${st.packet_rate ?? 0}/s | ` +
      `gaps ${st.gaps_interpolated ?? 0} | dropouts ${st.dropouts ?? 0}`
    : "no status yet";
  $("banner").textContent =
    s.connection !== "connected"
      ? "daemon unreachable, reconnecting"
      : s.lastError
        ? `daemon error: ${s.lastError}`
        : "";
  for (const [action, btn] of commandButtons) {
    btn.disabled = !commandAllowed(s, action);
  }
  $<HTMLButtonElement>("btn-tag").disabled = !tagAllowed(s);
  $("pending-tags").textContent = s.pendingTags.length
    ? `${s.pendingTags.length} tag(s) awaiting ack`
    : "";
  const acked = s.ackedTags[s.ackedTags.length - 1];
  $("last-tag").textContent = acked
    ? `tag #${acked.tag_id} "${acked.label}" @ sample ${acked.resolved_index}`
    : "";
}

client.onchange = refreshControls;

function frame(): void {
  renderScope(ctx!, client.state.traces, canvas.width, canvas.height, scopeOpts);
  requestAnimationFrame(frame);
}

client.connect();
refreshControls();
requestAnimationFrame(frame);
