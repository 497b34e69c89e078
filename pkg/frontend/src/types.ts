/** Wire types mirroring the console API (docs/console-api.md). */

export interface ApprovalView {
  request_id: string;
  session: string;
  role: 'initiator' | 'responder' | 'decision';
  summary: string;
  deadline_ms: number;
  state: 'pending' | 'approved' | 'rejected' | 'expired';
}

export interface EscalationView {
  event_id: string;
  identity: string;
  layer: 'L1' | 'L2' | 'routing' | 'session';
  op_kind: string;
  targets: string[];
  t: number;
  acknowledged: boolean;
}

export interface AuditRecordView {
  seq: number;
  kind: string;
  targets: string[];
  issuer: string;
  session: string;
  result: string;
  identity: string;
  t: number;
  backup_ref: string;
  hash: string;
}

export interface AuditPage {
  records: AuditRecordView[];
  head_seq: number;
}

export interface VerifyResult {
  ok: boolean;
  broken_at: number | null;
}

export interface SessionView {
  id: string;
  state: string;
  reason: string;
  initiator: string;
  responder: string;
  turn_count: number;
  max_turns: number;
  depth: number;
  chain_parent: string;
}

export interface IdentityView {
  id: string;
  context_tag: string;
  status: 'active' | 'retired';
  permitted_peers: string[];
  scope: { prefix: string; class: string }[];
}

export interface ContactView {
  peer: string;
  state: string;
  presented_identity: string;
}

export interface RestoreLine {
  seq: number;
  kind: string;
  status: string;
  detail: string;
  reason?: string;
}

export interface RestoreReport {
  status: string;
  report: { reversals: RestoreLine[]; skipped: RestoreLine[] };
}

/** Server-push event names carried over the SSE stream. */
export type PushEventName =
  | 'hello'
  | 'approval_request'
  | 'escalation'
  | 'session'
  | 'advisor';

export interface PushEvent {
  name: PushEventName;
  data: Record<string, unknown>;
}
