import { RatingApi } from "./api.js";
import { VideoElementPlayer } from "./player.js";
import { SessionController } from "./session.js";
import { buildSkeleton, render } from "./ui.js";

function fail(root: HTMLElement, message: string): void {
  root.textContent = message;
}

const root = document.getElementById("app");
if (root) {
  const sessionId = new URLSearchParams(window.location.search).get("session");
  if (!sessionId) {
    fail(root, "Missing ?session=<id> in the URL. Ask the study coordinator for your link.");
  } else {
    const elements = buildSkeleton(root);
    const api = new RatingApi("");
    const controller: SessionController = new SessionController(
      api,
      new VideoElementPlayer(elements.video),
      sessionId,
      (view) => render(view, controller, elements),
    );
    controller.init().catch((err) => fail(root, `Failed to load session: ${String(err)}`));
  }
}
