/** Security event center: boundary-violation feed with acknowledgment. */

import { ConsoleApi } from './api.js';
import { badge, esc, fmtTime } from './dom.js';
import type { EscalationView, PushEvent } from './types.js';

const LAYER_BADGE: Record<string, string> = {
  L1: 'danger',
  L2: 'danger',
  routing: 'warn',
  session: 'warn',
};

export class SecurityEventCenter {
  events: EscalationView[] = [];

  constructor(private api: ConsoleApi) {}

  async refresh(): Promise<void> {
    this.events = (await this.api.escalations()).escalations;
  }

  applyEvent(event: PushEvent): boolean {
    if (event.name !== 'escalation') return false;
    const data = event.data;
    if (!this.events.some((e) => e.event_id === data.event_id)) {
      this.events.push({
        event_id: String(data.event_id),
        identity: String(data.identity ?? ''),
        layer: data.layer as EscalationView['layer'],
        op_kind: String(data.op_kind ?? ''),
        targets: (data.targets as string[]) ?? [],
        t: Number(data.t ?? 0),
        acknowledged: false,
      });
    }
    return true;
  }

  async acknowledge(eventId: string): Promise<void> {
    await this.api.acknowledge(eventId);
    const event = this.events.find((e) => e.event_id === eventId);
    if (event) event.acknowledged = true;
  }

  unacknowledgedCount(): number {
    return this.events.filter((e) => !e.acknowledged).length;
  }

  render(): string {
    if (!this.events.length) {
      return `<section class="security"><h2>Security events</h2>
        <p class="empty">no boundary violations recorded</p></section>`;
    }
    const rows = this.events.map(
      (event) => `<tr class="${event.acknowledged ? 'acked' : 'unacked'}">
        <td>${esc(event.event_id)}</td>
        <td>${badge(event.layer, LAYER_BADGE[event.layer] ?? 'warn')}</td>
        <td>${esc(event.identity)}</td>
        <td>${esc(event.op_kind)} ${esc(event.targets.join(' '))}</td>
        <td>${esc(fmtTime(event.t))}</td>
        <td>${
          event.acknowledged
            ? badge('acknowledged', 'muted')
            : `<button data-ack="${esc(event.event_id)}">acknowledge</button>`
        }</td>
      </tr>`,
    );
    return `<section class="security">
      <h2>Security events ${
        this.unacknowledgedCount() ? badge(`${this.unacknowledgedCount()} new`, 'danger') : ''
      }</h2>
      <table><thead><tr><th>event</th><th>layer</th><th>identity</th><th>attempt</th><th>when</th><th></th></tr></thead>
      <tbody>${rows.join('')}</tbody></table>
    </section>`;
  }
}
