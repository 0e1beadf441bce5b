/** Entry point: wire the controller, renderer, and global keyboard map. */

import { ApiClient } from "./api.js";
import { Controller } from "./state.js";
import { render } from "./ui.js";

export function mount(root: HTMLElement, base = ""): Controller {
  const controller = new Controller((token) => new ApiClient(base, token));
  controller.subscribe(() => render(root, controller));
  document.addEventListener("keydown", (event) => {
    const target = event.target as HTMLElement | null;
    // typing in the token field must not trigger score shortcuts
    if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA"))
      return;
    controller.handleKey(event.key);
  });
  render(root, controller);
  return controller;
}

const rootElement = document.getElementById("app");
if (rootElement) mount(rootElement);
