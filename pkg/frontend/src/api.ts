import type {
  AgreementPayload,
  AnswerAck,
  AnswerBody,
  SessionListPayload,
  SessionPayload,
  SessionReport,
} from "./types.js";

/** Error carrying the service's structured detail payload. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the five service endpoints. Nothing else is
 * reachable from the UI: there is deliberately no method that could ask
 * for per-item predictions or gold labels. */
export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(base: string, fetchImpl?: FetchLike) {
    this.base = base.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.base + path, init);
    if (!response.ok) {
      let code = "http_error";
      let message = `${response.status}`;
      try {
        const body = (await response.json()) as {
          detail?: { error?: string; message?: string };
        };
        code = body.detail?.error ?? code;
        message = body.detail?.message ?? message;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  sessions(): Promise<SessionListPayload> {
    return this.request<SessionListPayload>("/sessions");
  }

  session(id: string): Promise<SessionPayload> {
    return this.request<SessionPayload>(`/session/${encodeURIComponent(id)}`);
  }

  answer(id: string, body: AnswerBody): Promise<AnswerAck> {
    return this.request<AnswerAck>(
      `/session/${encodeURIComponent(id)}/answer`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      },
    );
  }

  report(id: string): Promise<SessionReport> {
    return this.request<SessionReport>(
      `/session/${encodeURIComponent(id)}/report`,
    );
  }

  agreement(a: string, b: string): Promise<AgreementPayload> {
    const qs = new URLSearchParams({ a, b });
    return this.request<AgreementPayload>(`/agreement?${qs.toString()}`);
  }
}
