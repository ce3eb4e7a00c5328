// DOM wiring: chat panel on the left, tag chips above the input box,
// flow view on the right.

import { HttpApi } from "./api.js";
import { FlowView } from "./render.js";
import { ExplorerStore } from "./state.js";

const api = new HttpApi("");
const store = new ExplorerStore(api);

const messagesEl = document.getElementById("messages") as HTMLDivElement;
const chipsEl = document.getElementById("chips") as HTMLDivElement;
const legendEl = document.getElementById("legend") as HTMLDivElement;
const inputEl = document.getElementById("chat-input") as HTMLInputElement;
const sendEl = document.getElementById("send") as HTMLButtonElement;
const statusEl = document.getElementById("status") as HTMLDivElement;
const canvas = document.getElementById("flow-canvas") as HTMLCanvasElement;

const view = new FlowView(canvas, store);

function note(text: string): void {
  statusEl.textContent = text;
  if (text) setTimeout(() => (statusEl.textContent = ""), 6000);
}

function renderConversation(): void {
  messagesEl.replaceChildren(
    ...store.conversation.map((m) => {
      const div = document.createElement("div");
      div.className = `turn turn-${m.role}`;
      div.textContent = m.text;
      return div;
    }),
  );
  messagesEl.scrollTop = messagesEl.scrollHeight;
}

function renderChips(): void {
  chipsEl.replaceChildren(
    ...store.chips.map((tag) => {
      const b = document.createElement("button");
      b.className = "chip";
      b.textContent = tag.name;
      const active = store.highlights.get(tag.query_text);
      if (active) b.style.background = active.color;
      b.onclick = () =>
        store.toggleTag(tag.query_text).catch((e) => note(String(e)));
      return b;
    }),
  );
}

function renderLegend(): void {
  legendEl.replaceChildren(
    ...[...store.highlights.entries()].map(([tag, h]) => {
      const div = document.createElement("div");
      div.className = "legend-row";
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = h.color;
      div.append(swatch, ` ${tag} (${h.ids.length})`);
      return div;
    }),
  );
}

store.onChange(() => {
  renderConversation();
  renderChips();
  renderLegend();
  sendEl.disabled = !inputEl.value.trim();
});

inputEl.addEventListener("input", () => {
  sendEl.disabled = !inputEl.value.trim();
});

async function send(): Promise<void> {
  const text = inputEl.value.trim();
  if (!text) return;
  sendEl.disabled = true;
  try {
    await store.send(text);
    inputEl.value = ""; // cleared only after success; failures keep it
  } catch (e) {
    note(String(e)); // non-blocking notice, input intact for retry
  } finally {
    sendEl.disabled = !inputEl.value.trim();
  }
}

sendEl.addEventListener("click", () => void send());
inputEl.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") void send();
});

async function boot(): Promise<void> {
  try {
    const health = await api.health();
    note(`connected: ${health.version} / ${health.fingerprint.slice(0, 8)}`);
    const page = await api.streamlines(0, 5000);
    view.setBackground(page.streamlines);
  } catch (e) {
    note(`backend unreachable: ${e}`);
  }
}

void boot();
