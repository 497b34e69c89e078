/** Approvals inbox: live pending requests with approve/reject actions.
 *
 * Rejection is destructive (it terminates the initiation sequence), so it
 * requires a second, explicit confirmation click. AlreadyResolved/Expired
 * surface inline rather than as dead ends.
 */

import { ApiError, ConsoleApi } from './api.js';
import { badge, esc, fmtTime } from './dom.js';
import type { ApprovalView, PushEvent } from './types.js';

export class ApprovalsInbox {
  pending: ApprovalView[] = [];
  sessionStates = new Map<string, { state: string; reason: string }>();
  notice = '';
  private armedReject: string | null = null;

  constructor(private api: ConsoleApi) {}

  async refresh(): Promise<void> {
    this.pending = (await this.api.approvals()).approvals;
  }

  /** Feed push events; returns true when the view needs a re-render. */
  applyEvent(event: PushEvent): boolean {
    if (event.name === 'approval_request') {
      const data = event.data as unknown as ApprovalView & { request_id: string };
      if (!this.pending.some((p) => p.request_id === data.request_id)) {
        this.pending.push({
          request_id: String(data.request_id),
          session: String(data.session),
          role: data.role,
          summary: String(data.summary ?? ''),
          deadline_ms: Number(data.deadline_ms ?? 0),
          state: 'pending',
        });
      }
      return true;
    }
    if (event.name === 'session') {
      this.sessionStates.set(String(event.data.session), {
        state: String(event.data.state),
        reason: String(event.data.reason ?? ''),
      });
      return true;
    }
    return false;
  }

  /** Returns 'confirm_required' when a reject needs its second click. */
  async resolve(requestId: string, decision: 'approve' | 'reject'): Promise<string> {
    if (decision === 'reject' && this.armedReject !== requestId) {
      this.armedReject = requestId;
      return 'confirm_required';
    }
    this.armedReject = null;
    try {
      const result = await this.api.resolveApproval(requestId, decision);
      this.pending = this.pending.filter((p) => p.request_id !== requestId);
      this.notice = `request ${requestId}: session now ${result.session_state}`;
      return result.session_state;
    } catch (error) {
      if (error instanceof ApiError) {
        this.notice = `request ${requestId}: ${error.code}`;
        if (error.code === 'already_resolved' || error.code === 'expired') {
          this.pending = this.pending.filter((p) => p.request_id !== requestId);
        }
        return error.code;
      }
      throw error;
    }
  }

  render(nowMs = 0): string {
    const rows = this.pending.map((request) => {
      const expired = request.state === 'expired' || (nowMs > 0 && nowMs > request.deadline_ms);
      const actions = expired
        ? badge('expired', 'muted')
        : `<button data-approve="${esc(request.request_id)}">approve</button>
           <button data-reject="${esc(request.request_id)}">${
             this.armedReject === request.request_id ? 'confirm reject' : 'reject'
           }</button>`;
      return `<tr class="${expired ? 'expired' : ''}">
        <td>${esc(request.request_id)}</td>
        <td>${esc(request.session)}</td>
        <td>${badge(request.role, request.role)}</td>
        <td>${esc(request.summary)}</td>
        <td>${esc(fmtTime(request.deadline_ms))}</td>
        <td>${actions}</td>
      </tr>`;
    });
    const sessions = [...this.sessionStates.entries()]
      .map(
        ([sid, s]) =>
          `<li>${esc(sid)}: ${badge(s.state, s.state === 'Terminated' ? 'danger' : 'ok')}${
            s.reason ? ' ' + esc(s.reason) : ''
          }</li>`,
      )
      .join('');
    return `<section class="approvals">
      <h2>Approvals</h2>
      ${this.notice ? `<p class="notice">${esc(this.notice)}</p>` : ''}
      ${
        rows.length
          ? `<table><thead><tr><th>request</th><th>session</th><th>role</th><th>summary</th><th>deadline</th><th></th></tr></thead><tbody>${rows.join('')}</tbody></table>`
          : '<p class="empty">no pending approvals</p>'
      }
      ${sessions ? `<h3>Session updates</h3><ul>${sessions}</ul>` : ''}
    </section>`;
  }
}
