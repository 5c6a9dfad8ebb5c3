/** Thin fetch wrapper over the /v1 surface. Every server interaction in
 * the client goes through this class, and every path it emits starts
 * with /v1 — the tests audit the request log to keep it that way. */

import type {
  CandidatesPayload,
  ManifestPayload,
  ScoresPayload,
  ShotsPayload,
  StatusPayload,
  TokenPayload,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

/** 409: someone else holds the target; safe to retry later. */
export class ConflictError extends ApiError {}

/** The server itself is gone; render the error state, never stale data. */
export class UnreachableError extends Error {
  constructor(cause: unknown) {
    super(`API unreachable: ${cause instanceof Error ? cause.message : String(cause)}`);
  }
}

async function detailOf(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: string };
    return body.detail ?? res.statusText;
  } catch {
    return res.statusText;
  }
}

export class ApiClient {
  readonly requestLog: string[] = [];

  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    this.requestLog.push(path);
    let res: Response;
    try {
      res = await this.fetchImpl(this.base + path, init);
    } catch (err) {
      throw new UnreachableError(err);
    }
    if (!res.ok) {
      const detail = await detailOf(res);
      if (res.status === 409) throw new ConflictError(res.status, detail);
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  private post<T>(path: string, body: Record<string, unknown>): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  status(): Promise<StatusPayload> {
    return this.request("/v1/status");
  }

  shots(): Promise<ShotsPayload> {
    return this.request("/v1/shots");
  }

  candidates(subclipId: string): Promise<CandidatesPayload> {
    return this.request(`/v1/subclips/${encodeURIComponent(subclipId)}/candidates`);
  }

  manifest(): Promise<ManifestPayload> {
    return this.request("/v1/manifest");
  }

  scores(): Promise<ScoresPayload> {
    return this.request("/v1/scores");
  }

  token(token: string): Promise<TokenPayload> {
    return this.request(`/v1/tokens/${encodeURIComponent(token)}`);
  }

  run(token: string): Promise<TokenPayload> {
    return this.post("/v1/run", { token });
  }

  regenerate(subclipId: string, token: string): Promise<TokenPayload> {
    return this.post(`/v1/subclips/${encodeURIComponent(subclipId)}/regenerate`, { token });
  }

  approve(subclipId: string, candidateId: string, token: string): Promise<TokenPayload> {
    return this.post(`/v1/subclips/${encodeURIComponent(subclipId)}/approve`, {
      candidate_id: candidateId,
      token,
    });
  }
}
