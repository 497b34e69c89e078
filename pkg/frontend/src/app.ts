/** Browser bootstrap: one update queue, push events and user actions merge
 * through it, views re-render from their models. No state-changing action
 * happens outside a ConsoleApi call. */

import { ConsoleApi } from './api.js';
import { ApprovalsInbox } from './approvals.js';
import { AuditBrowser, RollbackPanel } from './audit.js';
import { IdentitiesView } from './identities.js';
import { SecurityEventCenter } from './security.js';
import { SessionsView } from './sessions.js';
import { EventStream } from './sse.js';
import type { PushEvent } from './types.js';

type ViewName = 'approvals' | 'security' | 'audit' | 'sessions' | 'identities';

export class ConsoleApp {
  approvals: ApprovalsInbox;
  security: SecurityEventCenter;
  audit: AuditBrowser;
  rollback: RollbackPanel;
  sessions: SessionsView;
  identities: IdentitiesView;
  active: ViewName = 'approvals';
  owner = '';
  connected = false;
  private queue: Array<() => Promise<void>> = [];
  private draining = false;

  constructor(
    private api: ConsoleApi,
    private rerender: () => void = () => {},
  ) {
    this.approvals = new ApprovalsInbox(api);
    this.security = new SecurityEventCenter(api);
    this.audit = new AuditBrowser(api);
    this.rollback = new RollbackPanel(api);
    this.sessions = new SessionsView(api);
    this.identities = new IdentitiesView(api);
  }

  /** Single-writer update queue: push events and user actions serialize here. */
  enqueue(task: () => Promise<void>): Promise<void> {
    return new Promise((resolve, reject) => {
      this.queue.push(async () => {
        try {
          await task();
          resolve();
        } catch (error) {
          reject(error);
        }
      });
      void this.drain();
    });
  }

  private async drain(): Promise<void> {
    if (this.draining) return;
    this.draining = true;
    while (this.queue.length) {
      const task = this.queue.shift()!;
      await task();
      this.rerender();
    }
    this.draining = false;
  }

  async start(): Promise<void> {
    this.owner = (await this.api.whoami()).owner;
    await Promise.all([
      this.approvals.refresh(),
      this.security.refresh(),
      this.audit.refresh(),
      this.sessions.refresh(),
      this.identities.refresh(),
    ]);
    this.rerender();
  }

  onPush(event: PushEvent): void {
    void this.enqueue(async () => {
      this.approvals.applyEvent(event);
      this.security.applyEvent(event);
      this.sessions.applyEvent(event);
    });
  }

  renderActive(): string {
    switch (this.active) {
      case 'approvals':
        return this.approvals.render(Date.now());
      case 'security':
        return this.security.render();
      case 'audit':
        return this.audit.render() + this.rollback.render();
      case 'sessions':
        return this.sessions.render();
      case 'identities':
        return this.identities.render();
    }
  }

  renderNav(): string {
    const tabs: ViewName[] = ['approvals', 'security', 'audit', 'sessions', 'identities'];
    return tabs
      .map(
        (tab) =>
          `<button data-view="${tab}" class="${tab === this.active ? 'active' : ''}">${tab}</button>`,
      )
      .join('');
  }
}

function mount(): void {
  const root = document.getElementById('app');
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const token = params.get('token') ?? window.prompt('console token') ?? '';
  const base = params.get('server') ?? '';
  const api = new ConsoleApi(base, token);

  const app = new ConsoleApp(api, () => {
    root.innerHTML = `
      <header>
        <h1>clawnet console</h1>
        <p>${app.owner ? `owner: ${app.owner}` : ''}
           <span class="badge badge-${app.connected ? 'ok' : 'danger'}">
             ${app.connected ? 'live' : 'reconnecting'}
           </span></p>
        <nav>${app.renderNav()}</nav>
      </header>
      <main>${app.renderActive()}</main>`;
  });

  root.addEventListener('click', (raw) => {
    const target = raw.target as HTMLElement;
    const view = target.getAttribute('data-view');
    if (view) {
      app.active = view as never;
      void app.enqueue(async () => {});
      return;
    }
    const approve = target.getAttribute('data-approve');
    if (approve) void app.enqueue(() => app.approvals.resolve(approve, 'approve').then(() => {}));
    const reject = target.getAttribute('data-reject');
    if (reject) void app.enqueue(() => app.approvals.resolve(reject, 'reject').then(() => {}));
    const ack = target.getAttribute('data-ack');
    if (ack) void app.enqueue(() => app.security.acknowledge(ack));
    const abort = target.getAttribute('data-abort');
    if (abort) void app.enqueue(() => app.sessions.abort(abort).then(() => {}));
    const retire = target.getAttribute('data-retire');
    if (retire) void app.enqueue(() => app.identities.retire(retire).then(() => {}));
    if (target.hasAttribute('data-undo'))
      void app.enqueue(() => app.rollback.undo(1).then(() => {}));
    if (target.hasAttribute('data-rollback')) {
      const input = document.getElementById('rollback-seq') as HTMLInputElement | null;
      const seq = input ? parseInt(input.value, 10) : -1;
      void app.enqueue(() => app.rollback.rollbackTo(seq).then(() => {}));
    }
  });

  const stream = new EventStream(
    base,
    token,
    (event) => app.onPush(event),
    (connected) => {
      app.connected = connected;
    },
  );
  void stream.run();
  void app.start();
}

if (typeof document !== 'undefined' && typeof window !== 'undefined') {
  mount();
}
