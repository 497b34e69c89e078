/** Typed client for the orchestrator's console API.
 *
 * The console holds no authority of its own: every state change is a round
 * trip through these endpoints, and authorization errors surface as
 * ApiError so views can render them instead of leaking another owner's data.
 */

import type {
  ApprovalView,
  AuditPage,
  ContactView,
  EscalationView,
  IdentityView,
  RestoreReport,
  SessionView,
  VerifyResult,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export class ConsoleApi {
  constructor(
    private baseUrl: string,
    private token: string,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: {
        authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { 'content-type': 'application/json' } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!response.ok) {
      let code = response.status === 401 ? 'unauthorized' : 'error';
      let message = response.statusText;
      try {
        const detail = (await response.json()).detail;
        if (typeof detail === 'string') message = detail;
        else if (detail && typeof detail === 'object') {
          code = detail.code ?? code;
          message = detail.message ?? message;
        }
      } catch {
        /* non-JSON error body; keep defaults */
      }
      if (response.status === 403 && code === 'error') code = 'forbidden';
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  whoami(): Promise<{ owner: string }> {
    return this.request('GET', '/api/whoami');
  }

  approvals(): Promise<{ approvals: ApprovalView[] }> {
    return this.request('GET', '/api/approvals');
  }

  resolveApproval(requestId: string, decision: 'approve' | 'reject'): Promise<{ session_state: string }> {
    return this.request('POST', `/api/approvals/${requestId}`, { decision });
  }

  escalations(includeAcknowledged = true): Promise<{ escalations: EscalationView[] }> {
    return this.request('GET', `/api/escalations?include_acknowledged=${includeAcknowledged}`);
  }

  acknowledge(eventId: string): Promise<{ event_id: string; acknowledged: boolean }> {
    return this.request('POST', `/api/escalations/${eventId}/ack`);
  }

  audit(since = 0, limit = 100): Promise<AuditPage> {
    return this.request('GET', `/api/audit?since=${since}&limit=${limit}`);
  }

  auditVerify(): Promise<VerifyResult> {
    return this.request('GET', '/api/audit/verify');
  }

  sessions(): Promise<{ sessions: SessionView[] }> {
    return this.request('GET', '/api/sessions');
  }

  abortSession(sessionId: string): Promise<{ session_state: string }> {
    return this.request('POST', `/api/sessions/${sessionId}/abort`);
  }

  identities(): Promise<{ identities: IdentityView[] }> {
    return this.request('GET', '/api/identities');
  }

  createIdentity(tag: string, scope: { prefix: string; class: string }[], peers: string[]): Promise<{ id: string }> {
    return this.request('POST', '/api/identities', { tag, scope, peers });
  }

  retireIdentity(id: string): Promise<{ identity: string; terminated_sessions: string[] }> {
    return this.request('POST', '/api/identities/retire', { id });
  }

  contacts(): Promise<{ contacts: ContactView[] }> {
    return this.request('GET', '/api/contacts');
  }

  requestContact(peer: string): Promise<{ ok: boolean }> {
    return this.request('POST', '/api/contacts/request', { peer });
  }

  confirmContact(peer: string): Promise<{ ok: boolean }> {
    return this.request('POST', '/api/contacts/confirm', { peer });
  }

  assignIdentity(peer: string, identity: string): Promise<{ peer: string; presented_identity: string }> {
    return this.request('POST', '/api/contacts/assign', { peer, identity });
  }

  nodeUndo(n: number): Promise<RestoreReport> {
    return this.request('POST', '/api/node/undo', { n });
  }

  nodeRollback(toSeq: number): Promise<RestoreReport> {
    return this.request('POST', '/api/node/rollback', { to_seq: toSeq });
  }
}
