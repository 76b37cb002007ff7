/** Wire types for the annotation service. The server never sends the
 * classifier prediction or the gold label for open sessions, so no hidden
 * fields exist here to begin with. */

export interface SessionSummary {
  session_id: string;
  task: string;
  n_items: number;
  n_answered: number;
  complete: boolean;
}

export interface SessionListPayload {
  sessions: SessionSummary[];
}

export interface SessionItemView {
  item_id: string;
  /** Already shuffled server-side; rendered in this order. */
  tokens: string[];
  /** NLI only: hypothesis sentence rendered as plain text. */
  hypothesis: string | null;
}

export interface SessionPayload {
  session_id: string;
  task: string;
  label_names: string[];
  items: SessionItemView[];
  /** Item ids answered in an earlier visit; used to resume. */
  answered: string[];
  complete: boolean;
}

export interface AnswerBody {
  item_id: string;
  label: number;
  unsure: boolean;
}

export interface AnswerAck {
  accepted: boolean;
  remaining: number;
  complete: boolean;
}

export interface SessionReport {
  session_id: string;
  n_items: number;
  csr_h: number;
  acc_h: number;
  unsure_fraction: number;
  csr_h_sure_only: number | null;
  acc_h_sure_only: number | null;
}

export interface AgreementPayload {
  session_a: string;
  session_b: string;
  n_items: number;
  p_o: number;
  p_e: number;
  kappa: number;
  degenerate: boolean;
}
