// Typed client for the flowquery HTTP service. The explorer talks to the
// backend exclusively through this surface, which also makes the store
// testable with a mock implementation.

export interface QueryResult {
  segment_id: number;
  rank: number;
  score: number;
  polyline: number[];
}

export interface TagInfo {
  name: string;
  source_turn: number;
  query_text: string;
}

export interface ChatMessage {
  role: "user" | "assistant" | "system";
  text: string;
}

export interface StreamlineRecord {
  id: number;
  points: number[];
}

export interface Api {
  health(): Promise<{ version: string; fingerprint: string; streamlines: number }>;
  query(text: string, k: number): Promise<{ results: QueryResult[] }>;
  chat(messages: ChatMessage[]): Promise<{ role: string; text: string }>;
  extractTags(text: string, turnIndex: number): Promise<{ tags: TagInfo[] }>;
  streamlines(offset: number, limit: number): Promise<{ total: number; streamlines: StreamlineRecord[] }>;
}

export class HttpApi implements Api {
  constructor(private base: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const r = await fetch(this.base + path);
    if (!r.ok) throw new Error(`${path} -> ${r.status}`);
    return (await r.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const r = await fetch(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!r.ok) {
      let detail = `${r.status}`;
      try {
        const err = (await r.json()) as { error?: string; detail?: string };
        detail = err.detail ?? err.error ?? detail;
      } catch {
        /* keep the status code */
      }
      throw new Error(`${path} -> ${detail}`);
    }
    return (await r.json()) as T;
  }

  health() {
    return this.get<{ version: string; fingerprint: string; streamlines: number }>("/health");
  }

  query(text: string, k: number) {
    return this.post<{ results: QueryResult[] }>("/query", { text, k });
  }

  chat(messages: ChatMessage[]) {
    return this.post<{ role: string; text: string }>("/chat", { messages });
  }

  extractTags(text: string, turnIndex: number) {
    return this.post<{ tags: TagInfo[] }>("/tags", { text, turn_index: turnIndex });
  }

  streamlines(offset: number, limit: number) {
    return this.get<{ total: number; streamlines: StreamlineRecord[] }>(
      `/streamlines?offset=${offset}&limit=${limit}`,
    );
  }
}
