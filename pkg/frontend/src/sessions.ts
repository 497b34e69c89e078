/** Session list with owner-layer abort (confirmation required). */

import { ApiError, ConsoleApi } from './api.js';
import { badge, esc } from './dom.js';
import type { PushEvent, SessionView } from './types.js';

export class SessionsView {
  sessions: SessionView[] = [];
  notice = '';
  private armedAbort: string | null = null;

  constructor(private api: ConsoleApi) {}

  async refresh(): Promise<void> {
    this.sessions = (await this.api.sessions()).sessions;
  }

  applyEvent(event: PushEvent): boolean {
    if (event.name !== 'session') return false;
    const sid = String(event.data.session);
    const existing = this.sessions.find((s) => s.id === sid);
    if (existing) {
      existing.state = String(event.data.state);
      existing.reason = String(event.data.reason ?? '');
      existing.turn_count = Number(event.data.turn_count ?? existing.turn_count);
    }
    return true;
  }

  async abort(sessionId: string): Promise<string> {
    if (this.armedAbort !== sessionId) {
      this.armedAbort = sessionId;
      return 'confirm_required';
    }
    this.armedAbort = null;
    try {
      const result = await this.api.abortSession(sessionId);
      this.notice = `session ${sessionId} -> ${result.session_state}`;
      await this.refresh();
      return result.session_state;
    } catch (error) {
      if (error instanceof ApiError) {
        this.notice = error.code;
        return error.code;
      }
      throw error;
    }
  }

  render(): string {
    const rows = this.sessions.map((session) => {
      const live = session.state !== 'Terminated';
      return `<tr>
        <td>${esc(session.id)}${session.chain_parent ? ` ${badge('child of ' + session.chain_parent, 'muted')}` : ''}</td>
        <td>${esc(session.initiator)} &harr; ${esc(session.responder)}</td>
        <td>${badge(session.state, live ? 'ok' : 'muted')}${session.reason ? ' ' + esc(session.reason) : ''}</td>
        <td>${esc(session.turn_count)}/${esc(session.max_turns)}</td>
        <td>depth ${esc(session.depth)}</td>
        <td>${
          live
            ? `<button data-abort="${esc(session.id)}">${
                this.armedAbort === session.id ? 'confirm abort' : 'abort'
              }</button>`
            : ''
        }</td>
      </tr>`;
    });
    return `<section class="sessions">
      <h2>Sessions</h2>
      ${this.notice ? `<p class="notice">${esc(this.notice)}</p>` : ''}
      ${
        rows.length
          ? `<table><thead><tr><th>id</th><th>parties</th><th>state</th><th>turns</th><th>depth</th><th></th></tr></thead><tbody>${rows.join('')}</tbody></table>`
          : '<p class="empty">no sessions</p>'
      }
    </section>`;
  }
}
