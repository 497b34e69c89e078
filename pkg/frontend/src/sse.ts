/** Fetch-based server-sent-events reader.
 *
 * Works in the browser and under node (vitest) alike, unlike
 * window.EventSource, and supports the Authorization header the API needs.
 * Reconnects with capped exponential backoff until stop() is called.
 */

import type { PushEvent, PushEventName } from './types.js';

export type EventHandler = (event: PushEvent) => void;

export function parseSseChunk(buffer: string): { events: PushEvent[]; rest: string } {
  const events: PushEvent[] = [];
  const blocks = buffer.split('\n\n');
  const rest = blocks.pop() ?? '';
  for (const block of blocks) {
    let name: PushEventName = 'hello';
    let data = '';
    for (const line of block.split('\n')) {
      if (line.startsWith('event: ')) name = line.slice(7).trim() as PushEventName;
      else if (line.startsWith('data: ')) data += line.slice(6);
    }
    if (data) {
      try {
        events.push({ name, data: JSON.parse(data) });
      } catch {
        /* skip malformed frame */
      }
    } else {
      events.push({ name, data: {} });
    }
  }
  return { events, rest };
}

export class EventStream {
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private baseUrl: string,
    private token: string,
    private onEvent: EventHandler,
    private onStatus: (connected: boolean) => void = () => {},
  ) {}

  async run(): Promise<void> {
    let backoff = 250;
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const response = await fetch(this.baseUrl + '/api/events', {
          headers: { authorization: `Bearer ${this.token}` },
          signal: this.controller.signal,
        });
        if (!response.ok || !response.body) throw new Error(`stream ${response.status}`);
        this.onStatus(true);
        backoff = 250;
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        let buffer = '';
        for (;;) {
          const { done, value } = await reader.read();
          if (done || this.stopped) break;
          buffer += decoder.decode(value, { stream: true });
          const { events, rest } = parseSseChunk(buffer);
          buffer = rest;
          for (const event of events) this.onEvent(event);
        }
      } catch {
        /* dropped or aborted; fall through to reconnect */
      }
      this.onStatus(false);
      if (this.stopped) return;
      await new Promise((resolve) => setTimeout(resolve, backoff));
      backoff = Math.min(backoff * 2, 5000);
    }
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }
}
