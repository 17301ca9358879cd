/** Typed client for the live session REST API. */

export interface DesignOut {
  kind: "continuous" | "index";
  values: number[];
}

export interface CreateSessionResponse {
  session_id: string;
  step: number;
  design: DesignOut;
}

export interface HistoryRow {
  step: number;
  design: DesignOut;
  outcome: number;
}

export interface StepResponse {
  session_id: string;
  step: number;
  done: boolean;
  design: DesignOut | null;
  outcome: number;
  gain_trace: number[] | null;
}

export interface SessionView {
  session_id: string;
  model: string;
  checkpoint: string;
  mode: "live" | "simulated";
  step: number;
  horizon: number;
  done: boolean;
  pending_design: DesignOut | null;
  history: HistoryRow[];
  n_particles: number;
  outcome_hint: string;
  gain_trace: number[] | null;
}

export interface PosteriorPoint {
  theta: number[];
  weight: number;
}

export interface PosteriorResponse {
  session_id: string;
  n: number;
  ess: number;
  points: PosteriorPoint[];
}

export interface CheckpointInfo {
  id: string;
  status: "ok" | "invalid";
  model: string | null;
  policy_kind: string | null;
}

export interface CheckpointCatalog {
  checkpoints: CheckpointInfo[];
}

export interface CreateSessionRequest {
  model: string;
  checkpoint: string;
  mode: "live" | "simulated";
  seed: number;
  n_particles: number;
}

/** Error carrying the structured body the service attaches to non-2xx responses. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly detail: string = "",
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, "unreachable", `server unreachable: ${String(err)}`);
  }
  const body = await res.json().catch(() => ({}));
  if (!res.ok) {
    throw new ApiError(
      res.status,
      body.code ?? "error",
      body.message ?? res.statusText,
      body.detail ?? "",
    );
  }
  return body as T;
}

export class SessionApi {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}/api${path}`;
  }

  health(): Promise<{ status: string; sessions: number }> {
    return request(this.url("/health"));
  }

  checkpoints(): Promise<CheckpointCatalog> {
    return request(this.url("/checkpoints"));
  }

  createSession(req: CreateSessionRequest): Promise<CreateSessionResponse> {
    return request(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  /** Submit an observed outcome; omit `y` to let a simulated session draw it. */
  postOutcome(sessionId: string, y?: number): Promise<StepResponse> {
    return request(this.url(`/sessions/${sessionId}/outcomes`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(y === undefined ? {} : { y }),
    });
  }

  sessionView(sessionId: string): Promise<SessionView> {
    return request(this.url(`/sessions/${sessionId}`));
  }

  posterior(sessionId: string, n?: number): Promise<PosteriorResponse> {
    const q = n === undefined ? "" : `?n=${n}`;
    return request(this.url(`/sessions/${sessionId}/posterior${q}`));
  }
}
