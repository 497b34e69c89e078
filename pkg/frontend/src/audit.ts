/** Audit browser plus rollback panel.
 *
 * The chain-verify badge reflects the persisted log: green when intact,
 * red with the breaking sequence otherwise, and the breaking row is
 * highlighted in the table. Rollback is destructive and therefore armed
 * by a first click and executed only on the confirming second click.
 */

import { ApiError, ConsoleApi } from './api.js';
import { badge, esc, fmtTime } from './dom.js';
import type { AuditRecordView, RestoreReport, VerifyResult } from './types.js';

export class AuditBrowser {
  records: AuditRecordView[] = [];
  headSeq = -1;
  verdict: VerifyResult | null = null;
  error = '';

  constructor(private api: ConsoleApi) {}

  async refresh(since = 0, limit = 200): Promise<void> {
    try {
      const page = await this.api.audit(since, limit);
      this.records = page.records;
      this.headSeq = page.head_seq;
      this.verdict = await this.api.auditVerify();
      this.error = '';
    } catch (err) {
      if (err instanceof ApiError) {
        this.error = `${err.code}: ${err.message}`;
        this.records = [];
        this.verdict = null;
        return;
      }
      throw err;
    }
  }

  render(): string {
    if (this.error) {
      return `<section class="audit"><h2>Audit log</h2>
        <p class="error">not authorized: ${esc(this.error)}</p></section>`;
    }
    const verifyBadge =
      this.verdict === null
        ? badge('unverified', 'muted')
        : this.verdict.ok
          ? badge('chain ok', 'ok')
          : badge(`broken_at(${this.verdict.broken_at})`, 'danger');
    const rows = this.records.map((record) => {
      const broken = this.verdict && !this.verdict.ok && record.seq === this.verdict.broken_at;
      return `<tr class="${broken ? 'broken' : ''}">
        <td>${esc(record.seq)}${broken ? ' ' + badge('break', 'danger') : ''}</td>
        <td>${esc(record.kind)}</td>
        <td>${esc(record.result)}</td>
        <td>${esc(record.identity)}</td>
        <td>${esc(record.targets.join(' '))}</td>
        <td>${esc(record.session)}</td>
        <td>${esc(record.backup_ref)}</td>
        <td>${esc(fmtTime(record.t))}</td>
      </tr>`;
    });
    return `<section class="audit">
      <h2>Audit log ${verifyBadge}</h2>
      <table><thead><tr><th>seq</th><th>op</th><th>result</th><th>identity</th><th>targets</th><th>session</th><th>backup</th><th>when</th></tr></thead>
      <tbody>${rows.join('')}</tbody></table>
    </section>`;
  }
}

export class RollbackPanel {
  report: RestoreReport | null = null;
  notice = '';
  private armed: string | null = null;

  constructor(private api: ConsoleApi) {}

  /** Two-phase: first call arms, second call with the same arguments runs. */
  async rollbackTo(seq: number): Promise<string> {
    const key = `rollback:${seq}`;
    if (this.armed !== key) {
      this.armed = key;
      return 'confirm_required';
    }
    this.armed = null;
    return this.execute(() => this.api.nodeRollback(seq));
  }

  async undo(n: number): Promise<string> {
    const key = `undo:${n}`;
    if (this.armed !== key) {
      this.armed = key;
      return 'confirm_required';
    }
    this.armed = null;
    return this.execute(() => this.api.nodeUndo(n));
  }

  private async execute(call: () => Promise<RestoreReport>): Promise<string> {
    try {
      this.report = await call();
      this.notice = `${this.report.report.reversals.length} reversed, ${this.report.report.skipped.length} skipped`;
      return 'done';
    } catch (error) {
      if (error instanceof ApiError) {
        this.notice = error.code === 'node_unavailable' ? 'node offline' : error.code;
        return error.code;
      }
      throw error;
    }
  }

  get armedAction(): string | null {
    return this.armed;
  }

  render(): string {
    const lines = this.report
      ? [...this.report.report.reversals, ...this.report.report.skipped]
          .map(
            (line) => `<tr class="${line.status === 'reversed' ? 'ok' : 'skipped'}">
          <td>${esc(line.seq)}</td><td>${esc(line.kind)}</td>
          <td>${esc(line.status)}</td><td>${esc(line.detail ?? line.reason ?? '')}</td></tr>`,
          )
          .join('')
      : '';
    return `<section class="rollback">
      <h2>Undo / rollback</h2>
      <p>
        <button data-undo="1">${this.armed === 'undo:1' ? 'confirm undo(1)' : 'undo last'}</button>
        <input id="rollback-seq" type="number" value="-1" />
        <button data-rollback>${this.armed?.startsWith('rollback') ? 'confirm rollback' : 'rollback to seq'}</button>
      </p>
      ${this.notice ? `<p class="notice">${esc(this.notice)}</p>` : ''}
      ${
        lines
          ? `<table><thead><tr><th>seq</th><th>op</th><th>status</th><th>detail</th></tr></thead><tbody>${lines}</tbody></table>`
          : ''
      }
    </section>`;
  }
}
