/** Controller state-machine tests against a scripted in-memory API. */

import { describe, expect, it } from "vitest";
import {
  ApiClient,
  ApiError,
  NetworkError,
  type HistoryResponse,
  type LabelResult,
  type QueryResponse,
  type StatusResponse,
} from "../src/api.js";
import { Controller } from "../src/state.js";

type Script = {
  query?: Array<QueryResponse | ApiError | NetworkError>;
  label?: Array<LabelResult | ApiError | NetworkError>;
  status?: StatusResponse | ApiError;
  history?: HistoryResponse;
};

function item(id: string, position: number, total = 3, labeled = 0) {
  return {
    status: "item" as const,
    item: {
      dataset_id: id,
      position,
      total,
      labeled,
      n_slices: 4,
      height: 8,
      width: 8,
      image_uris: [0, 1, 2, 3].map((k) => `/api/image/${id}/${k}`),
    },
  };
}

class FakeApi extends ApiClient {
  labels: Array<[string, number]> = [];
  constructor(private script: Script) {
    super("", "token");
  }
  private next<T>(queue: Array<T | ApiError | NetworkError> | undefined): T {
    if (!queue || queue.length === 0) throw new Error("script exhausted");
    const head = queue.shift()!;
    if (head instanceof Error) throw head;
    return head;
  }
  override getQuery(): Promise<QueryResponse> {
    return Promise.resolve(this.next(this.script.query));
  }
  override postLabel(id: string, cls: number): Promise<LabelResult> {
    const result = this.next(this.script.label);
    this.labels.push([id, cls]);
    return Promise.resolve(result);
  }
  override getStatus(): Promise<StatusResponse> {
    if (this.script.status instanceof ApiError)
      return Promise.reject(this.script.status);
    return Promise.resolve(
      this.script.status ?? {
        run_state: "waiting_for_labels",
        n_labeled: 0,
        n_unlabeled: 9,
        curve_point: null,
        query: null,
      },
    );
  }
  override getHistory(): Promise<HistoryResponse> {
    return Promise.resolve(this.script.history ?? { items: [], count: 0 });
  }
  override getInstructions(): Promise<{ instructions: string }> {
    return Promise.resolve({ instructions: "score 1-5" });
  }
}

function controllerWith(script: Script): { c: Controller; api: FakeApi } {
  const api = new FakeApi(script);
  const c = new Controller(() => api, { pollMs: 5, retryMs: 5 });
  return { c, api };
}

function until(predicate: () => boolean, ms = 2000): Promise<void> {
  const deadline = Date.now() + ms;
  return new Promise((resolve, reject) => {
    const tick = () => {
      if (predicate()) return resolve();
      if (Date.now() > deadline) return reject(new Error("timed out"));
      setTimeout(tick, 2);
    };
    tick();
  });
}

describe("login", () => {
  it("rejects a bad token and stays on the login screen", async () => {
    const { c } = controllerWith({ status: new ApiError(401, "invalid token") });
    await c.login("wrong");
    expect(c.screen).toMatchObject({ kind: "login", error: "Invalid token." });
  });

  it("enters the item screen on success", async () => {
    const { c } = controllerWith({ query: [item("vol1", 1)] });
    await c.login("good");
    expect(c.screen).toMatchObject({
      kind: "item",
      item: { dataset_id: "vol1" },
      slice: 0,
    });
  });
});

describe("scoring", () => {
  it("advances to the next item after a 2xx", async () => {
    const { c, api } = controllerWith({
      query: [item("vol1", 1), item("vol2", 2, 3, 1)],
      label: [{ ok: true, progress: { labeled: 1, total: 3 }, query_complete: false }],
    });
    await c.login("t");
    await c.score(3);
    expect(api.labels).toEqual([["vol1", 3]]);
    expect(c.screen).toMatchObject({ kind: "item", item: { dataset_id: "vol2" } });
  });

  it("shows the retraining notice when the set completes", async () => {
    const { c } = controllerWith({
      query: [item("vol9", 3, 3, 2)],
      label: [{ ok: true, progress: { labeled: 3, total: 3 }, query_complete: true }],
    });
    await c.login("t");
    await c.score(5);
    expect(c.screen.kind).toBe("complete");
  });

  it("keeps and retries the score over a network failure", async () => {
    const { c, api } = controllerWith({
      query: [item("vol1", 1), item("vol2", 2, 3, 1)],
      label: [
        new NetworkError("connection refused"),
        { ok: true, progress: { labeled: 1, total: 3 }, query_complete: false },
      ],
    });
    await c.login("t");
    await c.score(2);
    expect(c.screen).toMatchObject({ kind: "item", retrying: 2 });
    await until(() => c.screen.kind === "item" && c.screen.item.dataset_id === "vol2");
    expect(api.labels).toEqual([["vol1", 2]]);
  });

  it("resyncs instead of double-submitting on a stale-item conflict", async () => {
    const { c } = controllerWith({
      query: [item("vol1", 1), item("vol2", 2, 3, 1)],
      label: [new ApiError(409, "not in the current query set")],
    });
    await c.login("t");
    await c.score(1);
    expect(c.screen).toMatchObject({ kind: "item", item: { dataset_id: "vol2" } });
  });

  it("rejects out-of-range scores inline without a request", async () => {
    const { c, api } = controllerWith({ query: [item("vol1", 1)] });
    await c.login("t");
    await c.score(7);
    expect(api.labels).toEqual([]);
    expect(c.screen).toMatchObject({ kind: "item", error: "Score must be 1-5, got 7." });
  });
});

describe("waiting and done", () => {
  it("polls through the retraining phase to the next item", async () => {
    const { c } = controllerWith({
      query: [
        { status: "waiting", reason: "retraining" },
        { status: "waiting", reason: "retraining" },
        item("vol5", 1, 2),
      ],
    });
    await c.login("t");
    expect(c.screen.kind).toBe("waiting");
    await until(() => c.screen.kind === "item");
  });

  it("ends on the done screen when the run is over", async () => {
    const { c } = controllerWith({
      query: [new ApiError(409, "no active run (state: done); start or resume")],
    });
    await c.login("t");
    expect(c.screen).toMatchObject({ kind: "done" });
  });
});

describe("slice navigation", () => {
  it("clamps the slider and steps with arrow keys", async () => {
    const { c } = controllerWith({ query: [item("vol1", 1)] });
    await c.login("t");
    c.setSlice(99);
    expect(c.screen).toMatchObject({ kind: "item", slice: 3 });
    c.handleKey("ArrowLeft");
    expect(c.screen).toMatchObject({ slice: 2 });
    c.handleKey("ArrowDown");
    expect(c.screen).toMatchObject({ slice: 3 });
    c.setSlice(-4);
    expect(c.screen).toMatchObject({ slice: 0 });
  });
});

describe("instructions and history", () => {
  it("shows instructions from any screen and returns", async () => {
    const { c } = controllerWith({ query: [item("vol1", 1), item("vol1", 1)] });
    await c.login("t");
    await c.showInstructions();
    expect(c.screen).toMatchObject({ kind: "instructions", text: "score 1-5" });
    await c.back();
    expect(c.screen.kind).toBe("item");
  });

  it("opens a history entry read-only and closes it", async () => {
    const entry = { dataset_id: "vol7", class: 4, submitted_at: 1, n_slices: 4 };
    const { c } = controllerWith({
      query: [item("vol1", 1), item("vol1", 1)],
      history: { items: [entry], count: 1 },
    });
    await c.login("t");
    await c.showHistory();
    expect(c.screen).toMatchObject({ kind: "history", viewing: null });
    c.openHistoryEntry(entry);
    expect(c.screen).toMatchObject({ kind: "history", viewing: { entry, slice: 0 } });
    c.handleKey("ArrowRight");
    expect(c.screen).toMatchObject({ viewing: { slice: 1 } });
    c.closeHistoryEntry();
    expect(c.screen).toMatchObject({ kind: "history", viewing: null });
  });

  it("keyboard scores are ignored outside the item screen", async () => {
    const { c, api } = controllerWith({
      query: [item("vol1", 1), item("vol1", 1)],
    });
    await c.login("t");
    await c.showHistory();
    c.handleKey("3");
    await new Promise((r) => setTimeout(r, 10));
    expect(api.labels).toEqual([]);
  });
});
