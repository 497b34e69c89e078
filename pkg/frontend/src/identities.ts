/** Identity and contact management. */

import { ApiError, ConsoleApi } from './api.js';
import { badge, esc } from './dom.js';
import type { ContactView, IdentityView } from './types.js';

export class IdentitiesView {
  identities: IdentityView[] = [];
  contacts: ContactView[] = [];
  notice = '';
  private armedRetire: string | null = null;

  constructor(private api: ConsoleApi) {}

  async refresh(): Promise<void> {
    this.identities = (await this.api.identities()).identities;
    this.contacts = (await this.api.contacts()).contacts;
  }

  async create(tag: string, scopePrefix: string, scopeClass: string, peers: string[]): Promise<string> {
    try {
      const scope = scopePrefix ? [{ prefix: scopePrefix, class: scopeClass }] : [];
      const created = await this.api.createIdentity(tag, scope, peers);
      this.notice = `created ${created.id}`;
      await this.refresh();
      return created.id;
    } catch (error) {
      if (error instanceof ApiError) {
        this.notice = error.code;
        return error.code;
      }
      throw error;
    }
  }

  async retire(id: string): Promise<string> {
    if (this.armedRetire !== id) {
      this.armedRetire = id;
      return 'confirm_required';
    }
    this.armedRetire = null;
    try {
      const result = await this.api.retireIdentity(id);
      this.notice = `retired ${result.identity} (${result.terminated_sessions.length} session(s) terminated)`;
      await this.refresh();
      return 'retired';
    } catch (error) {
      if (error instanceof ApiError) {
        this.notice = error.code;
        return error.code;
      }
      throw error;
    }
  }

  async assign(peer: string, identity: string): Promise<string> {
    try {
      await this.api.assignIdentity(peer, identity);
      this.notice = `presenting ${identity} to ${peer}`;
      await this.refresh();
      return 'assigned';
    } catch (error) {
      if (error instanceof ApiError) {
        this.notice = error.code;
        return error.code;
      }
      throw error;
    }
  }

  render(): string {
    const identityRows = this.identities.map(
      (identity) => `<tr>
        <td>${esc(identity.id)}</td>
        <td>${esc(identity.context_tag)}</td>
        <td>${badge(identity.status, identity.status === 'active' ? 'ok' : 'muted')}</td>
        <td>${esc(identity.permitted_peers.join(', '))}</td>
        <td>${identity.scope.map((g) => `${esc(g.prefix)} (${esc(g.class)})`).join('<br>')}</td>
        <td>${
          identity.status === 'active'
            ? `<button data-retire="${esc(identity.id)}">${
                this.armedRetire === identity.id ? 'confirm retire' : 'retire'
              }</button>`
            : ''
        }</td>
      </tr>`,
    );
    const contactRows = this.contacts.map(
      (contact) => `<tr>
        <td>${esc(contact.peer)}</td>
        <td>${badge(contact.state, contact.state === 'confirmed' ? 'ok' : 'warn')}</td>
        <td>${esc(contact.presented_identity || '(none)')}</td>
      </tr>`,
    );
    return `<section class="identities">
      <h2>Identities</h2>
      ${this.notice ? `<p class="notice">${esc(this.notice)}</p>` : ''}
      ${
        identityRows.length
          ? `<table><thead><tr><th>id</th><th>context</th><th>status</th><th>permitted peers</th><th>scope</th><th></th></tr></thead><tbody>${identityRows.join('')}</tbody></table>`
          : '<p class="empty">no identities yet</p>'
      }
      <h2>Contacts</h2>
      ${
        contactRows.length
          ? `<table><thead><tr><th>peer</th><th>state</th><th>presented identity</th></tr></thead><tbody>${contactRows.join('')}</tbody></table>`
          : '<p class="empty">no contacts yet</p>'
      }
    </section>`;
  }
}
