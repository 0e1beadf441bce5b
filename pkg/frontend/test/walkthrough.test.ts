/** End-to-end rater walkthrough against the live labeling server.
 *
 * Boots the real HTTP service on a scratch database, mounts the real app
 * in the DOM, and drives it the way a rater would: sign in (bad token
 * first), read the instructions, score a full 40-item query set with the
 * keyboard, watch the retraining notice, finish the follow-up query set,
 * and review the history read-only.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { get } from "node:http";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, expect, it } from "vitest";
import type { Controller } from "../src/state.js";
import { mount } from "../src/main.js";

const here = dirname(fileURLToPath(import.meta.url));
const TOKEN = "walkthrough-secret";

let proc: ChildProcess | null = null;
let scratch: string;
let base: string;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.on("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string")
        return reject(new Error("no port"));
      probe.close(() => resolve(address.port));
    });
  });
}

function probeStatus(): Promise<number> {
  return new Promise((resolve) => {
    const request = get(
      `${base}/api/status`,
      { headers: { Authorization: `Bearer ${TOKEN}` } },
      (response) => {
        response.resume();
        resolve(response.statusCode ?? 0);
      },
    );
    request.on("error", () => resolve(0));
  });
}

async function serverReady(timeoutMs = 60000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if ((await probeStatus()) === 200) return;
    await new Promise((r) => setTimeout(r, 300));
  }
  throw new Error("labeling server did not come up");
}

function waitFor(
  predicate: () => boolean,
  what: string,
  timeoutMs = 60000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  return new Promise((resolve, reject) => {
    const tick = () => {
      if (predicate()) return resolve();
      if (Date.now() > deadline)
        return reject(new Error(`timed out waiting for ${what}`));
      setTimeout(tick, 25);
    };
    tick();
  });
}

function pressKey(key: string): void {
  document.dispatchEvent(
    new KeyboardEvent("keydown", { key, bubbles: true, cancelable: true }),
  );
}

function query<T extends HTMLElement>(selector: string): T {
  const node = document.querySelector<T>(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node;
}

beforeAll(async () => {
  scratch = mkdtempSync(join(tmpdir(), "ui-walkthrough-"));
  const built = spawnSync(
    "python3",
    [join(here, "make_fixture.py"), scratch],
    { stdio: "inherit", timeout: 180000 },
  );
  if (built.status !== 0) throw new Error("fixture build failed");
  const port = await freePort();
  base = `http://127.0.0.1:${port}`;
  // the UI is served same-origin in production (the server's --static dir);
  // pointing the DOM at the server mirrors that and keeps fetch same-origin
  (window as unknown as { happyDOM: { setURL: (u: string) => void } }).happyDOM
    .setURL(`${base}/`);
  proc = spawn(
    "python3",
    [
      "-m", "alqa.cli", "serve",
      "--db", join(scratch, "db"),
      "--config", join(scratch, "run.json"),
      "--features", join(scratch, "features.csv"),
      "--run-dir", join(scratch, "run"),
      "--host", "127.0.0.1",
      "--port", String(port),
    ],
    { env: { ...process.env, ALQA_TOKEN: TOKEN }, stdio: "ignore" },
  );
  await serverReady();
}, 240000);

afterAll(() => {
  proc?.kill("SIGKILL");
  rmSync(scratch, { recursive: true, force: true });
});

it("a rater signs in, reads instructions, labels a 40-item set by keyboard, sees retraining, finishes, and reviews history", async () => {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app")!;
  const controller: Controller = mount(root);

  // --- authenticate: wrong token is refused, right one enters the loop
  expect(document.querySelector("#token")).toBeTruthy();
  query<HTMLInputElement>("#token").value = "not-the-token";
  query<HTMLButtonElement>("#login").click();
  await waitFor(
    () => document.querySelector("#login-error") !== null,
    "login rejection",
  );
  expect(query("#login-error").textContent).toContain("Invalid token");

  query<HTMLInputElement>("#token").value = TOKEN;
  query<HTMLButtonElement>("#login").click();
  await waitFor(() => controller.screen.kind === "item", "first query item");

  // --- the first presented set is the 40-item initial draw
  expect(controller.screen.kind).toBe("item");
  const first = controller.screen.kind === "item" ? controller.screen.item : null;
  expect(first?.total).toBe(40);
  expect(query("#progress").textContent).toContain("1 of 40");

  // --- instructions are reachable and dismissable from the item screen
  query<HTMLButtonElement>("#nav-instructions").click();
  await waitFor(
    () => controller.screen.kind === "instructions",
    "instructions screen",
  );
  expect(query("#instructions-text").textContent).toMatch(/1.*5/s);
  query<HTMLButtonElement>("#nav-back").click();
  await waitFor(() => controller.screen.kind === "item", "return to labeling");

  // --- slice slider spans the stack; arrows move through it
  expect(query<HTMLInputElement>("#slice-slider").max).toBe("1");
  pressKey("ArrowRight");
  await waitFor(
    () => query("#slice-count").textContent === "slice 2 / 2",
    "slice advance",
  );
  expect(query<HTMLImageElement>("#slice-image").src).toContain("/api/image/");

  // --- label all 40 items with the number keys
  const labeled = new Set<string>();
  for (let i = 0; i < 40; i++) {
    await waitFor(() => controller.screen.kind === "item", `item ${i + 1}`);
    const screen = controller.screen;
    if (screen.kind !== "item") throw new Error("unreachable");
    const id = screen.item.dataset_id;
    expect(labeled.has(id)).toBe(false); // server never re-asks
    expect(screen.item.position).toBe(i + 1);
    labeled.add(id);
    const score = String(1 + ((i * 3) % 5));
    pressKey(score);
    await waitFor(
      () =>
        controller.screen.kind !== "item" ||
        controller.screen.item.dataset_id !== id,
      `advance past item ${i + 1}`,
    );
  }
  expect(labeled.size).toBe(40);

  // --- completing the set shows the retraining notice
  await waitFor(
    () => document.querySelector("#retraining-notice") !== null,
    "retraining notice",
  );
  expect(query("#retraining-notice").textContent).toMatch(/retraining/i);

  // --- the loop serves one more 3-item uncertainty query; finish it
  for (let i = 0; i < 3; i++) {
    await waitFor(
      () => controller.screen.kind === "item",
      `follow-up item ${i + 1}`,
      120000,
    );
    const screen = controller.screen;
    if (screen.kind !== "item") throw new Error("unreachable");
    expect(screen.item.total).toBe(3);
    expect(labeled.has(screen.item.dataset_id)).toBe(false);
    labeled.add(screen.item.dataset_id);
    pressKey("2");
    await waitFor(
      () => controller.screen.kind !== "item" || screen.item.dataset_id !== (controller.screen as { item: { dataset_id: string } }).item.dataset_id,
      `advance past follow-up ${i + 1}`,
    );
  }

  // --- the run ends; the done screen appears
  await waitFor(() => controller.screen.kind === "done", "done screen", 120000);
  expect(query("#done-notice").textContent).toContain("All done");

  // --- history lists all 43 ratings; entries reopen read-only
  query<HTMLButtonElement>("#nav-history").click();
  await waitFor(() => controller.screen.kind === "history", "history screen");
  const rows = document.querySelectorAll(".history-row");
  expect(rows.length).toBe(43);
  query<HTMLButtonElement>(".history-open").click();
  await waitFor(
    () => document.querySelector("#history-detail") !== null,
    "history viewer",
  );
  expect(query("#history-score").textContent).toMatch(/scored [1-5]/);
  expect(document.querySelector("#score-1")).toBeNull();
  expect(query<HTMLImageElement>("#slice-image").src).toContain("/api/image/");
  query<HTMLButtonElement>("#history-close").click();
  await waitFor(
    () => document.querySelector("#history-list") !== null,
    "back to history list",
  );
}, 300000);
