/** Small rendering helpers. Views emit HTML strings so they stay testable
 * without a DOM; app.ts injects them into the page. */

export function esc(value: unknown): string {
  return String(value)
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function fmtTime(ms: number): string {
  if (ms < 10_000_000) return `t+${ms}`; // virtual-clock ticks
  return new Date(ms).toISOString().replace('T', ' ').slice(0, 19);
}

export function badge(text: string, kind: string): string {
  return `<span class="badge badge-${esc(kind)}">${esc(text)}</span>`;
}
