// Thin client for the authentication service HTTP API. All verdicts and
// messages come from the server; this module only moves bytes.

export interface FeedbackItem {
  code: string;
  message: string;
}

export interface AuthVerdict {
  accepted: boolean;
  feedback: FeedbackItem[];
  fallback_required: boolean;
}

export type EnrollResult =
  | { ok: true }
  | { ok: false; status: number; feedback: FeedbackItem[] };

export type AuthResult =
  | { ok: true; verdict: AuthVerdict }
  | { ok: false; status: number };

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async post(path: string, body: unknown): Promise<Response> {
    return this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async enroll(userId: string, images: string[]): Promise<EnrollResult> {
    const resp = await this.post(`/users/${encodeURIComponent(userId)}/enroll`, { images });
    if (resp.ok) return { ok: true };
    if (resp.status === 422) {
      const body = (await resp.json()) as { feedback: FeedbackItem[] };
      return { ok: false, status: 422, feedback: body.feedback };
    }
    return { ok: false, status: resp.status, feedback: [] };
  }

  async authenticate(userId: string, image: string): Promise<AuthResult> {
    const resp = await this.post(`/users/${encodeURIComponent(userId)}/authenticate`, { image });
    if (resp.ok) return { ok: true, verdict: (await resp.json()) as AuthVerdict };
    if (resp.status === 403) {
      // locked out: surface as a fallback-required verdict
      return {
        ok: true,
        verdict: { accepted: false, feedback: [], fallback_required: true },
      };
    }
    return { ok: false, status: resp.status };
  }

  async reset(userId: string): Promise<boolean> {
    const resp = await this.post(`/users/${encodeURIComponent(userId)}/reset`, {});
    return resp.ok;
  }
}
