// DOM layer: renders the session state into a container and wires keyboard
// shortcuts. Keeps zero logic of its own beyond presentation; everything
// decision-shaped lives in ReviewSession.

import { ApiClient } from "./api";
import { loadConfig } from "./config";
import { ReviewSession } from "./session";

export const PROGRESS_POLL_MS = 15_000;

export interface App {
  session: ReviewSession;
  root: HTMLElement;
  stop(): void;
}

export function mountApp(root: HTMLElement, session: ReviewSession, pollMs = PROGRESS_POLL_MS): App {
  root.innerHTML = `
    <div class="review-app" tabindex="0">
      <div class="notice" hidden></div>
      <div class="error-banner" hidden>
        <span class="error-text"></span>
        <button class="retry">Retry</button>
      </div>
      <div class="stage">
        <img class="assignment-image" alt="" hidden>
        <div class="done-screen" hidden>All assignments reviewed.</div>
        <div class="loading-screen" hidden>Loading…</div>
      </div>
      <pre class="scores" hidden></pre>
      <div class="controls">
        <button class="approve">Approve (A)</button>
        <button class="reject">Reject (R)</button>
        <button class="zoom">Zoom (Z)</button>
        <button class="toggle-scores">Scores (S)</button>
      </div>
      <div class="progress-panel">
        <span class="counts"></span>
        <span class="own-count"></span>
        <span class="stale-badge" hidden>stale</span>
      </div>
    </div>`;

  const el = <T extends HTMLElement>(sel: string): T => {
    const found = root.querySelector<T>(sel);
    if (!found) throw new Error(`missing element ${sel}`);
    return found;
  };
  const appEl = el<HTMLElement>(".review-app");
  const img = el<HTMLImageElement>(".assignment-image");
  const scoresEl = el<HTMLPreElement>(".scores");
  const noticeEl = el<HTMLElement>(".notice");
  const errorBanner = el<HTMLElement>(".error-banner");
  const approveBtn = el<HTMLButtonElement>(".approve");
  const rejectBtn = el<HTMLButtonElement>(".reject");

  let zoomed = false;

  function render(): void {
    const reviewing = session.phase === "reviewing" && session.current !== null;
    img.hidden = !reviewing;
    el<HTMLElement>(".done-screen").hidden = session.phase !== "done";
    el<HTMLElement>(".loading-screen").hidden =
      session.phase !== "loading" && session.phase !== "submitting";
    errorBanner.hidden = session.phase !== "error";
    if (session.phase === "error") {
      el<HTMLElement>(".error-text").textContent = session.lastError;
    }
    approveBtn.disabled = !reviewing;
    rejectBtn.disabled = !reviewing;
    if (reviewing && session.current) {
      img.src = session.client.imageUrl(session.current);
      img.dataset.recordId = session.current.record_id;
      img.classList.toggle("zoomed", zoomed);
    }
    const scores = session.current?.scores;
    scoresEl.hidden = !(session.showScores && reviewing && scores);
    if (scores) scoresEl.textContent = JSON.stringify(scores, null, 2);
    renderProgress();
  }

  function renderProgress(): void {
    const p = session.progress;
    if (p) {
      const c = p.counts;
      el<HTMLElement>(".counts").textContent =
        `pending ${c.pending} · approved ${c.approved} · rejected ${c.rejected} · conflicted ${c.conflicted}`;
    }
    el<HTMLElement>(".own-count").textContent = `you: ${session.ownCount()}`;
  }

  session.onChange((ev) => {
    if (ev.kind === "notice" && ev.message) {
      noticeEl.textContent = ev.message;
      noticeEl.hidden = false;
    }
    render();
  });

  appEl.addEventListener("keydown", (ev: KeyboardEvent) => {
    const key = ev.key.toLowerCase();
    if (key === "a") void session.decide("approve");
    else if (key === "r") void session.decide("reject");
    else if (key === "z") {
      zoomed = !zoomed;
      render();
    } else if (key === "s") session.toggleScores();
  });
  approveBtn.addEventListener("click", () => void session.decide("approve"));
  rejectBtn.addEventListener("click", () => void session.decide("reject"));
  el<HTMLButtonElement>(".retry").addEventListener("click", () => void session.next());

  const poll = setInterval(() => {
    void session.refreshProgress().then((ok) => {
      el<HTMLElement>(".stale-badge").hidden = ok;
      renderProgress();
    });
  }, pollMs);

  render();
  return { session, root, stop: () => clearInterval(poll) };
}

export async function bootstrap(root: HTMLElement): Promise<App> {
  const cfg = await loadConfig(window.location.search);
  const session = new ReviewSession(new ApiClient(cfg.apiBase, cfg.token));
  const app = mountApp(root, session);
  void session.refreshProgress();
  void session.next();
  return app;
}
