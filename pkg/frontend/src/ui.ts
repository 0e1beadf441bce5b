/** DOM rendering for each screen.
 *
 * One render(root, screen, controller) call replaces the screen container's
 * content; tiny interactive parts (slider, keyboard) dispatch back into the
 * controller. Rendering is deliberately stateless so the view can never
 * disagree with the controller about what the rater is allowed to do.
 */

import type { ApiClient, HistoryEntry, QueryItem } from "./api.js";
import type { Controller, Screen } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const SCORE_WORDS: Record<number, string> = {
  1: "very good",
  2: "good",
  3: "acceptable",
  4: "poor",
  5: "non-diagnostic",
};

function navBar(controller: Controller, screen: Screen): HTMLElement {
  const bar = el("nav", "topbar");
  const title = el("span", "brand", "Image quality scoring");
  bar.append(title);
  const spacer = el("span", "spacer");
  bar.append(spacer);
  if (screen.kind === "instructions" || screen.kind === "history") {
    const back = el("button", "navbtn", "Back to labeling");
    back.id = "nav-back";
    back.onclick = () => void controller.back();
    bar.append(back);
  } else if (screen.kind !== "login") {
    const instructions = el("button", "navbtn", "Instructions");
    instructions.id = "nav-instructions";
    instructions.onclick = () => void controller.showInstructions();
    const history = el("button", "navbtn", "My history");
    history.id = "nav-history";
    history.onclick = () => void controller.showHistory();
    bar.append(instructions, history);
  }
  return bar;
}

function loginScreen(
  controller: Controller,
  screen: Extract<Screen, { kind: "login" }>,
): HTMLElement {
  const panel = el("section", "panel login");
  panel.append(el("h1", undefined, "Rater sign-in"));
  panel.append(
    el(
      "p",
      "hint",
      "Enter the access token from your invitation to start scoring.",
    ),
  );
  const field = el("input", "token");
  field.id = "token";
  field.type = "password";
  field.placeholder = "access token";
  field.disabled = screen.busy;
  const submit = el("button", "primary", screen.busy ? "Checking…" : "Sign in");
  submit.id = "login";
  submit.disabled = screen.busy;
  const go = () => void controller.login(field.value.trim());
  submit.onclick = go;
  field.onkeydown = (event) => {
    if (event.key === "Enter") go();
  };
  panel.append(field, submit);
  if (screen.error) {
    const error = el("p", "error", screen.error);
    error.id = "login-error";
    panel.append(error);
  }
  return panel;
}

function viewer(
  api: ApiClient,
  datasetId: string,
  nSlices: number,
  slice: number,
  onSlice: (k: number) => void,
): HTMLElement {
  const box = el("div", "viewer");
  const img = el("img", "slice");
  img.id = "slice-image";
  img.src = api.imageUri(datasetId, slice);
  img.alt = `slice ${slice + 1} of ${nSlices}`;
  img.draggable = false;
  box.append(img);
  const controls = el("div", "slicebar");
  const slider = el("input");
  slider.id = "slice-slider";
  slider.type = "range";
  slider.min = "0";
  slider.max = String(nSlices - 1);
  slider.value = String(slice);
  slider.oninput = () => onSlice(Number(slider.value));
  const counter = el("span", "slicecount", `slice ${slice + 1} / ${nSlices}`);
  counter.id = "slice-count";
  controls.append(slider, counter);
  box.append(controls);
  return box;
}

function scoreButtons(controller: Controller): HTMLElement {
  const row = el("div", "scores");
  for (let cls = 1; cls <= 5; cls++) {
    const button = el("button", "score", `${cls}`);
    button.id = `score-${cls}`;
    button.title = SCORE_WORDS[cls] ?? "";
    button.onclick = () => void controller.score(cls);
    const label = el("span", "scoreword", SCORE_WORDS[cls] ?? "");
    const cell = el("div", "scorecell");
    cell.append(button, label);
    row.append(cell);
  }
  return row;
}

function itemScreen(
  controller: Controller,
  screen: Extract<Screen, { kind: "item" }>,
): HTMLElement {
  const { item, slice } = screen;
  const panel = el("section", "panel item");
  const progress = el(
    "p",
    "progress",
    `Dataset ${item.position} of ${item.total} — ${item.labeled} scored`,
  );
  progress.id = "progress";
  panel.append(progress);
  panel.append(el("p", "datasetid", item.dataset_id));
  panel.append(
    viewer(controller.api, item.dataset_id, item.n_slices, slice, (k) =>
      controller.setSlice(k),
    ),
  );
  panel.append(
    el(
      "p",
      "hint",
      "Score the whole dataset: press 1 (very good) … 5 (non-diagnostic). " +
        "Arrow keys move through the stack.",
    ),
  );
  panel.append(scoreButtons(controller));
  if (screen.retrying !== null) {
    const banner = el(
      "p",
      "banner retry",
      `Connection lost — your score of ${screen.retrying} is saved and will be retried.`,
    );
    banner.id = "retry-banner";
    panel.append(banner);
  }
  if (screen.error) {
    const error = el("p", "error", screen.error);
    error.id = "submit-error";
    panel.append(error);
  }
  return panel;
}

function waitingScreen(
  screen: Extract<Screen, { kind: "waiting" | "complete" }>,
): HTMLElement {
  const panel = el("section", "panel waiting");
  const headline =
    screen.kind === "complete"
      ? "Query set complete — the model is retraining"
      : "The model is retraining";
  const notice = el("h1", undefined, headline);
  notice.id = "retraining-notice";
  panel.append(notice);
  panel.append(
    el(
      "p",
      "hint",
      "The next query set is being selected. This page refreshes on its own.",
    ),
  );
  panel.append(el("div", "spinner"));
  return panel;
}

function doneScreen(
  screen: Extract<Screen, { kind: "done" }>,
): HTMLElement {
  const panel = el("section", "panel done");
  const headline = el("h1", undefined, "All done");
  headline.id = "done-notice";
  panel.append(headline);
  panel.append(el("p", "hint", screen.message));
  panel.append(
    el("p", "hint", "Thank you — your ratings have been recorded."),
  );
  return panel;
}

function instructionsScreen(
  screen: Extract<Screen, { kind: "instructions" }>,
): HTMLElement {
  const panel = el("section", "panel instructions");
  panel.append(el("h1", undefined, "Instructions"));
  const body = el("pre", "instructions-text", screen.text);
  body.id = "instructions-text";
  panel.append(body);
  return panel;
}

function historyScreen(
  controller: Controller,
  screen: Extract<Screen, { kind: "history" }>,
): HTMLElement {
  const panel = el("section", "panel history");
  panel.append(el("h1", undefined, "Your previous ratings"));
  if (screen.viewing) {
    const { entry, slice } = screen.viewing;
    const detail = el("div", "history-detail");
    detail.id = "history-detail";
    const head = el(
      "p",
      "progress",
      `${entry.dataset_id} — scored ${entry.class} (${SCORE_WORDS[entry.class] ?? ""})`,
    );
    head.id = "history-score";
    detail.append(head);
    detail.append(
      viewer(controller.api, entry.dataset_id, entry.n_slices, slice, (k) =>
        controller.setSlice(k),
      ),
    );
    detail.append(el("p", "hint", "Read-only: past scores cannot be changed."));
    const close = el("button", "navbtn", "Close");
    close.id = "history-close";
    close.onclick = () => controller.closeHistoryEntry();
    detail.append(close);
    panel.append(detail);
    return panel;
  }
  if (screen.entries.length === 0) {
    const empty = el("p", "hint", "Nothing labeled yet.");
    empty.id = "history-empty";
    panel.append(empty);
    return panel;
  }
  const list = el("ul", "history-list");
  list.id = "history-list";
  for (const entry of screen.entries) {
    const row = el("li", "history-row");
    const when = new Date(entry.submitted_at * 1000).toLocaleString();
    const button = el(
      "button",
      "history-open",
      `${entry.dataset_id} — class ${entry.class} — ${when}`,
    );
    button.onclick = () => controller.openHistoryEntry(entry);
    row.append(button);
    list.append(row);
  }
  panel.append(list);
  return panel;
}

export function render(root: HTMLElement, controller: Controller): void {
  const screen = controller.screen;
  root.replaceChildren();
  root.append(navBar(controller, screen));
  switch (screen.kind) {
    case "login":
      root.append(loginScreen(controller, screen));
      break;
    case "item":
      root.append(itemScreen(controller, screen));
      break;
    case "waiting":
    case "complete":
      root.append(waitingScreen(screen));
      break;
    case "done":
      root.append(doneScreen(screen));
      break;
    case "instructions":
      root.append(instructionsScreen(screen));
      break;
    case "history":
      root.append(historyScreen(controller, screen));
      break;
  }
}
