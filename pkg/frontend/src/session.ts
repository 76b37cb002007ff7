import { ApiError } from "./api.js";
import type {
  AnswerAck,
  AnswerBody,
  SessionItemView,
  SessionPayload,
} from "./types.js";

/** The one service capability the stepper needs. */
export interface AnswerPort {
  answer(sessionId: string, body: AnswerBody): Promise<AnswerAck>;
}

export type Phase = "labeling" | "sending" | "retry" | "complete";

export interface SessionView {
  index: number;
  total: number;
  answeredCount: number;
  item: SessionItemView | null;
  labelNames: string[];
  phase: Phase;
  buffered: AnswerBody | null;
}

/** Forward-only session stepper.
 *
 * Items are presented in the server's order; the current item is always
 * the first unanswered one, so reloading the page resumes exactly where
 * the annotator left off. A submitted answer is buffered locally and the
 * item only advances once the service acknowledges it; until then the
 * only possible action is retrying the identical payload. Once an item is
 * acknowledged there is no way back to it.
 */
export class SessionMachine {
  private readonly answered: Set<string>;
  private buffered: AnswerBody | null = null;
  private sending = false;

  constructor(
    private readonly api: AnswerPort,
    private readonly payload: SessionPayload,
  ) {
    this.answered = new Set(payload.answered);
  }

  get sessionId(): string {
    return this.payload.session_id;
  }

  get labelNames(): string[] {
    return this.payload.label_names;
  }

  get total(): number {
    return this.payload.items.length;
  }

  get answeredCount(): number {
    return this.answered.size;
  }

  get complete(): boolean {
    return this.answered.size === this.payload.items.length;
  }

  /** Index of the first unanswered item in served order; -1 when done. */
  currentIndex(): number {
    return this.payload.items.findIndex(
      (item) => !this.answered.has(item.item_id),
    );
  }

  current(): SessionItemView | null {
    const index = this.currentIndex();
    return index === -1 ? null : this.payload.items[index] ?? null;
  }

  view(): SessionView {
    const phase: Phase = this.complete
      ? "complete"
      : this.sending
        ? "sending"
        : this.buffered !== null
          ? "retry"
          : "labeling";
    return {
      index: this.currentIndex(),
      total: this.total,
      answeredCount: this.answeredCount,
      item: this.current(),
      labelNames: this.labelNames,
      phase,
      buffered: this.buffered,
    };
  }

  /** Submit a label for the current item. The answer is buffered until the
   * service acknowledges it; on network failure it stays buffered and must
   * be retried verbatim. */
  async submit(label: number, unsure: boolean): Promise<AnswerAck> {
    if (this.complete) {
      throw new Error("session is complete; nothing left to answer");
    }
    if (this.buffered !== null) {
      throw new Error("an answer is awaiting acknowledgment; retry it first");
    }
    if (!Number.isInteger(label) || label < 0 || label >= this.labelNames.length) {
      throw new RangeError(
        `label must be an integer in 0..${this.labelNames.length - 1}`,
      );
    }
    const item = this.current();
    if (item === null) {
      throw new Error("no current item");
    }
    this.buffered = { item_id: item.item_id, label, unsure };
    return this.flush();
  }

  /** Resend the buffered answer after a failure. */
  async retry(): Promise<AnswerAck> {
    if (this.buffered === null) {
      throw new Error("nothing buffered to retry");
    }
    return this.flush();
  }

  private async flush(): Promise<AnswerAck> {
    if (this.sending) {
      throw new Error("a submission is already in flight");
    }
    const body = this.buffered;
    if (body === null) {
      throw new Error("nothing buffered to send");
    }
    this.sending = true;
    try {
      const ack = await this.api.answer(this.payload.session_id, body);
      this.answered.add(body.item_id);
      this.buffered = null;
      return ack;
    } catch (err) {
      if (err instanceof ApiError && err.code === "already_answered") {
        // the service recorded this answer but our acknowledgment was
        // lost (e.g. refresh mid-POST); treat it as accepted
        this.answered.add(body.item_id);
        this.buffered = null;
        return {
          accepted: true,
          remaining: this.total - this.answeredCount,
          complete: this.complete,
        };
      }
      throw err; // stays buffered; caller shows the retry prompt
    } finally {
      this.sending = false;
    }
  }
}
