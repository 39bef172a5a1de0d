// Review-session state machine, independent of the DOM so it can be tested
// headlessly. Guarantees: at most one live assignment, exactly one submission
// per rendered assignment, and a local history entry only for verdicts the
// server acknowledged with 200.

import { ApiClient, ApiError } from "./api";
import type { Assignment, Decision, DecisionRecord, Progress } from "./types";

export type Phase = "idle" | "loading" | "reviewing" | "submitting" | "done" | "error";

export interface SessionEvent {
  kind: "phase" | "notice" | "progress";
  message?: string;
}

type Listener = (ev: SessionEvent) => void;

export class ReviewSession {
  readonly client: ApiClient;
  phase: Phase = "idle";
  current: Assignment | null = null;
  history: DecisionRecord[] = [];
  progress: Progress | null = null;
  lastError = "";
  showScores = false;
  private listeners: Listener[] = [];

  constructor(client: ApiClient) {
    this.client = client;
  }

  onChange(fn: Listener): void {
    this.listeners.push(fn);
  }

  private emit(ev: SessionEvent): void {
    for (const fn of this.listeners) fn(ev);
  }

  private setPhase(phase: Phase): void {
    this.phase = phase;
    this.emit({ kind: "phase" });
  }

  toggleScores(): void {
    this.showScores = !this.showScores;
    this.emit({ kind: "phase" });
  }

  /** Fetch the next assignment; 204 moves the session to the done screen. */
  async next(): Promise<void> {
    if (this.phase === "loading" || this.phase === "submitting") return;
    this.setPhase("loading");
    try {
      const assignment = await this.client.nextAssignment();
      if (assignment === null) {
        this.current = null;
        await this.refreshProgress();
        this.setPhase("done");
        return;
      }
      this.current = assignment;
      this.setPhase("reviewing");
    } catch (err) {
      this.current = null;
      this.lastError = err instanceof Error ? err.message : String(err);
      this.setPhase("error");
    }
  }

  /** Submit a decision for the live assignment and auto-advance. */
  async decide(decision: Decision, note = ""): Promise<void> {
    if (this.phase !== "reviewing" || this.current === null) return;
    const assignment = this.current;
    this.setPhase("submitting");
    try {
      const status = await this.client.submitVerdict(assignment.record_id, decision, note);
      this.history.push({
        record_id: assignment.record_id,
        decision,
        note,
        status,
        at: Date.now(),
      });
      this.current = null;
      this.setPhase("idle");
      await this.next();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone (or a stale tab) already recorded this reviewer's verdict;
        // non-fatal, just move on
        this.emit({ kind: "notice", message: err.message });
        this.current = null;
        this.setPhase("idle");
        await this.next();
        return;
      }
      this.lastError = err instanceof Error ? err.message : String(err);
      this.current = null;
      this.setPhase("error");
    }
  }

  /** Poll progress; failures keep the previous snapshot (stale badge). */
  async refreshProgress(): Promise<boolean> {
    try {
      this.progress = await this.client.progress();
      this.emit({ kind: "progress" });
      return true;
    } catch {
      return false;
    }
  }

  ownCount(): number {
    return this.history.length;
  }
}
