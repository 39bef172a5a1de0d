// Thin typed client over the review-service HTTP API. All errors that the
// caller may want to branch on carry the HTTP status code.

import type { Assignment, Decision, Progress } from "./types";

export class ApiError extends Error {
  status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

export type FetchFn = typeof fetch;

export class ApiClient {
  private base: string;
  private token: string;
  private fetchFn: FetchFn;

  constructor(base: string, token: string, fetchFn: FetchFn = fetch) {
    this.base = base.replace(/\/+$/, "");
    this.token = token;
    this.fetchFn = fetchFn;
  }

  /** null means the queue is exhausted (HTTP 204). */
  async nextAssignment(): Promise<Assignment | null> {
    const res = await this.fetchFn(
      `${this.base}/api/assignment?reviewer=${encodeURIComponent(this.token)}`,
    );
    if (res.status === 204) return null;
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as Assignment;
  }

  async submitVerdict(recordId: string, decision: Decision, note = ""): Promise<string> {
    const res = await this.fetchFn(`${this.base}/api/verdict`, {
      method: "POST",
      headers: {
        "Content-Type": "application/json",
        "X-Reviewer-Token": this.token,
      },
      body: JSON.stringify({ record_id: recordId, decision, note }),
    });
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    const body = (await res.json()) as { status: string };
    return body.status;
  }

  async progress(): Promise<Progress> {
    const res = await this.fetchFn(`${this.base}/api/progress`);
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as Progress;
  }

  imageUrl(assignment: Assignment): string {
    return `${this.base}${assignment.image_url}`;
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through to the generic message
  }
  return `request failed with status ${res.status}`;
}
