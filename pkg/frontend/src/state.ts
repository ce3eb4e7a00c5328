// Explorer view state: active tag highlights, conversation, and tag chips.
// All mutations go through the store so the interaction log can replay the
// exact same state, and so stale query responses (superseded clicks) are
// discarded by sequence number.

import type { Api, ChatMessage, TagInfo } from "./api.js";

export interface HighlightSet {
  color: string;
  ids: number[];
  polylines: Map<number, number[]>;
}

export type InteractionEvent =
  | { kind: "tag-toggle"; tag: string }
  | { kind: "send"; message: string };

export const PALETTE = [
  "#e6550d", "#31a354", "#756bb1", "#d62728", "#0e8f8f",
  "#bc6fd0", "#8c6d31", "#2a6fbb",
];

export class ExplorerStore {
  highlights = new Map<string, HighlightSet>();
  conversation: ChatMessage[] = [];
  chips: TagInfo[] = [];
  log: InteractionEvent[] = [];
  queryK = 20;

  private seq = new Map<string, number>();
  private pending = new Set<string>();
  private listeners: Array<() => void> = [];

  constructor(private api: Api) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  private nextColor(): string {
    const used = new Set([...this.highlights.values()].map((h) => h.color));
    for (const c of PALETTE) if (!used.has(c)) return c;
    return PALETTE[this.highlights.size % PALETTE.length];
  }

  highlightIds(tag: string): number[] | undefined {
    return this.highlights.get(tag)?.ids;
  }

  /** Snapshot of tag -> ids, for tests and for the legend. */
  highlightSnapshot(): Record<string, number[]> {
    const out: Record<string, number[]> = {};
    for (const [tag, h] of this.highlights) out[tag] = [...h.ids];
    return out;
  }

  async toggleTag(tag: string): Promise<void> {
    this.log.push({ kind: "tag-toggle", tag });
    await this.applyToggle(tag);
  }

  private async applyToggle(tag: string): Promise<void> {
    if (this.highlights.has(tag)) {
      this.highlights.delete(tag); // clears only this tag's overlay
      this.emit();
      return;
    }
    if (this.pending.has(tag)) {
      // a second click while the query is in flight cancels it: net no-op
      this.seq.set(tag, (this.seq.get(tag) ?? 0) + 1);
      this.pending.delete(tag);
      this.emit();
      return;
    }
    const mySeq = (this.seq.get(tag) ?? 0) + 1;
    this.seq.set(tag, mySeq);
    this.pending.add(tag);
    try {
      const res = await this.api.query(tag, this.queryK);
      if (this.seq.get(tag) !== mySeq) return; // superseded
      const polylines = new Map<number, number[]>();
      for (const r of res.results) polylines.set(r.segment_id, r.polyline);
      this.highlights.set(tag, {
        color: this.nextColor(),
        ids: res.results.map((r) => r.segment_id),
        polylines,
      });
    } finally {
      if (this.seq.get(tag) === mySeq) this.pending.delete(tag);
      this.emit();
    }
  }

  /** Send one user message: chat round trip, then tag extraction+merge. */
  async send(message: string): Promise<void> {
    if (!message.trim()) return;
    this.log.push({ kind: "send", message });
    await this.applySend(message);
  }

  private async applySend(message: string): Promise<void> {
    const attempt: ChatMessage[] = [
      ...this.conversation,
      { role: "user", text: message },
    ];
    const reply = await this.api.chat(attempt); // throws -> state untouched
    this.conversation = [
      ...attempt,
      { role: "assistant", text: reply.text },
    ];
    this.emit();
    const res = await this.api.extractTags(reply.text,
                                           this.conversation.length - 1);
    this.chips = res.tags; // server returns the merged, deduplicated set
    this.emit();
  }

  /** Rebuild state by replaying an interaction log against the backend. */
  async replay(log: InteractionEvent[]): Promise<void> {
    this.highlights.clear();
    this.conversation = [];
    this.chips = [];
    this.seq.clear();
    this.pending.clear();
    this.log = [];
    for (const ev of log) {
      this.log.push(ev);
      if (ev.kind === "tag-toggle") await this.applyToggle(ev.tag);
      else await this.applySend(ev.message);
    }
    this.emit();
  }
}
