/** Application state machine for the rater session.
 *
 * The controller owns a single Screen value and mutates it only through
 * the action methods below; the view layer re-renders on every change.
 * The server is the source of truth for which dataset is next - the UI
 * never reorders or skips, it always shows the first pending item the
 * server reports, so no path can bypass an unlabeled item.
 */

import {
  ApiClient,
  ApiError,
  NetworkError,
  type HistoryEntry,
  type QueryItem,
} from "./api.js";

export type Screen =
  | { kind: "login"; error: string | null; busy: boolean }
  | {
      kind: "item";
      item: QueryItem;
      slice: number;
      retrying: number | null; // score waiting on a network retry
      error: string | null;
    }
  | { kind: "waiting"; reason: string }
  | { kind: "complete" } // query set finished, model retraining
  | { kind: "done"; message: string }
  | {
      kind: "history";
      entries: HistoryEntry[];
      viewing: { entry: HistoryEntry; slice: number } | null;
    }
  | { kind: "instructions"; text: string };

export interface ControllerOptions {
  /** Delay between polls while the server retrains, in ms. */
  pollMs?: number;
  /** Delay before retrying a failed label submission, in ms. */
  retryMs?: number;
}

const RUN_OVER = /no active run/;

export class Controller {
  screen: Screen = { kind: "login", error: null, busy: false };
  /** Screen to return to when instructions or history are dismissed. */
  private previous: Screen | null = null;
  private client: ApiClient | null = null;
  private listeners: Array<(s: Screen) => void> = [];
  private pollMs: number;
  private retryMs: number;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private generation = 0; // invalidates in-flight polls after a transition

  constructor(
    private makeClient: (token: string) => ApiClient,
    options: ControllerOptions = {},
  ) {
    this.pollMs = options.pollMs ?? 1500;
    this.retryMs = options.retryMs ?? 1200;
  }

  get api(): ApiClient {
    if (!this.client) throw new Error("not authenticated");
    return this.client;
  }

  subscribe(listener: (s: Screen) => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private set(screen: Screen): void {
    this.screen = screen;
    for (const listener of this.listeners) listener(screen);
  }

  private bump(): number {
    this.generation += 1;
    if (this.pollTimer !== null) {
      clearTimeout(this.pollTimer);
      this.pollTimer = null;
    }
    return this.generation;
  }

  /** Validate the token against the API and enter the labeling loop. */
  async login(token: string): Promise<void> {
    const candidate = this.makeClient(token);
    this.set({ kind: "login", error: null, busy: true });
    try {
      await candidate.getStatus();
    } catch (err) {
      const detail =
        err instanceof ApiError && err.status === 401
          ? "Invalid token."
          : "Server unreachable.";
      this.set({ kind: "login", error: detail, busy: false });
      return;
    }
    this.client = candidate;
    await this.refreshQuery();
  }

  /** Ask the server what to show now: an item, a waiting notice, or done. */
  async refreshQuery(): Promise<void> {
    const generation = this.bump();
    try {
      const response = await this.api.getQuery();
      if (generation !== this.generation) return;
      if (response.status === "item") {
        this.set({
          kind: "item",
          item: response.item,
          slice: 0,
          retrying: null,
          error: null,
        });
      } else {
        this.set({ kind: "waiting", reason: response.reason });
        this.schedulePoll(generation);
      }
    } catch (err) {
      if (generation !== this.generation) return;
      if (err instanceof ApiError && err.status === 409 && RUN_OVER.test(err.detail)) {
        this.set({ kind: "done", message: "The labeling run is complete." });
        return;
      }
      if (err instanceof ApiError && err.status === 401) {
        this.client = null;
        this.set({ kind: "login", error: "Session expired.", busy: false });
        return;
      }
      // transient failure: keep polling rather than dead-ending the rater
      this.set({ kind: "waiting", reason: "reconnecting" });
      this.schedulePoll(generation);
    }
  }

  private schedulePoll(generation: number): void {
    if (generation !== this.generation) return;
    this.pollTimer = setTimeout(() => {
      void this.refreshQuery();
    }, this.pollMs);
  }

  /** Submit a 1-5 score for the item on screen. */
  async score(cls: number): Promise<void> {
    if (this.screen.kind !== "item") return;
    if (!Number.isInteger(cls) || cls < 1 || cls > 5) {
      this.set({ ...this.screen, error: `Score must be 1-5, got ${cls}.` });
      return;
    }
    const item = this.screen.item;
    try {
      const result = await this.api.postLabel(item.dataset_id, cls);
      if (result.query_complete) {
        this.set({ kind: "complete" });
        this.schedulePoll(this.bump());
      } else {
        await this.refreshQuery();
      }
    } catch (err) {
      if (err instanceof NetworkError) {
        // keep the score and retry until the server comes back
        this.set({ ...this.screen, retrying: cls, error: null });
        setTimeout(() => {
          if (this.screen.kind === "item" && this.screen.retrying === cls) {
            this.set({ ...this.screen, retrying: null });
            void this.score(cls);
          }
        }, this.retryMs);
        return;
      }
      if (err instanceof ApiError && err.status === 409) {
        // the item is no longer labelable (stale tab / finished set):
        // resync with the server rather than guessing
        await this.refreshQuery();
        return;
      }
      const detail = err instanceof ApiError ? err.detail : String(err);
      this.set({ ...this.screen, error: `Rejected: ${detail}` });
    }
  }

  setSlice(slice: number): void {
    if (this.screen.kind === "item") {
      const max = this.screen.item.n_slices - 1;
      const clamped = Math.max(0, Math.min(max, slice));
      this.set({ ...this.screen, slice: clamped });
    } else if (this.screen.kind === "history" && this.screen.viewing) {
      const max = this.screen.viewing.entry.n_slices - 1;
      const clamped = Math.max(0, Math.min(max, slice));
      this.set({
        ...this.screen,
        viewing: { ...this.screen.viewing, slice: clamped },
      });
    }
  }

  stepSlice(delta: number): void {
    if (this.screen.kind === "item") {
      this.setSlice(this.screen.slice + delta);
    } else if (this.screen.kind === "history" && this.screen.viewing) {
      this.setSlice(this.screen.viewing.slice + delta);
    }
  }

  async showInstructions(): Promise<void> {
    if (this.screen.kind === "instructions" || !this.client) return;
    this.previous = this.screen;
    this.bump();
    const { instructions } = await this.api.getInstructions();
    this.set({ kind: "instructions", text: instructions });
  }

  async showHistory(): Promise<void> {
    if (this.screen.kind === "history" || !this.client) return;
    this.previous = this.screen;
    this.bump();
    const { items } = await this.api.getHistory();
    this.set({ kind: "history", entries: items, viewing: null });
  }

  openHistoryEntry(entry: HistoryEntry): void {
    if (this.screen.kind !== "history") return;
    this.set({ ...this.screen, viewing: { entry, slice: 0 } });
  }

  closeHistoryEntry(): void {
    if (this.screen.kind !== "history") return;
    this.set({ ...this.screen, viewing: null });
  }

  /** Leave instructions or history, resuming where the rater was. */
  async back(): Promise<void> {
    if (this.screen.kind !== "instructions" && this.screen.kind !== "history")
      return;
    const target = this.previous;
    this.previous = null;
    if (!target || target.kind === "login") {
      await this.refreshQuery();
      return;
    }
    if (target.kind === "item") {
      // the item may have been labeled in another tab; resync
      await this.refreshQuery();
      return;
    }
    this.set(target);
    if (target.kind === "waiting" || target.kind === "complete") {
      this.schedulePoll(this.bump());
    }
  }

  /** Keyboard dispatch: digits score, arrows move through the stack. */
  handleKey(key: string): void {
    if (/^[1-5]$/.test(key)) {
      if (this.screen.kind === "item") void this.score(Number(key));
      return;
    }
    if (key === "ArrowLeft" || key === "ArrowUp") this.stepSlice(-1);
    if (key === "ArrowRight" || key === "ArrowDown") this.stepSlice(1);
  }
}
