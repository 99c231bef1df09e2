/** DOM rendering for the rating session. Markup is rebuilt per phase. */

import { SessionController, SessionView } from "./session.js";

export interface UiElements {
  root: HTMLElement;
  video: HTMLVideoElement;
}

/** Create the fixed skeleton: a video surface plus a panel that re-renders. */
export function buildSkeleton(root: HTMLElement): UiElements {
  root.innerHTML = "";
  const video = document.createElement("video");
  video.id = "player";
  // no controls and no seeking: the protocol allows exactly one viewing
  video.removeAttribute("controls");
  video.preload = "auto";
  const panel = document.createElement("div");
  panel.id = "panel";
  root.append(video, panel);
  return { root, video };
}

export function render(view: SessionView, controller: SessionController,
                       elements: UiElements): void {
  const panel = elements.root.querySelector<HTMLDivElement>("#panel");
  if (!panel) return;
  panel.innerHTML = "";
  elements.video.style.display = view.phase === "playing" ? "block" : "none";

  const progress = document.createElement("p");
  progress.id = "progress";
  progress.textContent = `${view.rated}/${view.total}`;
  panel.append(progress);

  switch (view.phase) {
    case "loading":
      panel.append(text("p", "Loading session..."));
      break;
    case "intro":
      renderIntro(panel, controller);
      break;
    case "playing":
      panel.append(text("p", "Watch the video. It plays only once."));
      break;
    case "rating":
    case "submitting":
      renderRating(view, panel, controller);
      break;
    case "done":
      panel.append(text("h2", "Session complete"));
      panel.append(text("p", `You rated ${view.rated}/${view.total} videos. Thank you!`));
      break;
  }

  if (view.error) {
    const err = text("p", view.error);
    err.id = "error";
    panel.append(err);
    if (view.canRetry) {
      const retry = button("retry", "Retry", () => void controller.retry());
      panel.append(retry);
    }
  }
}

function renderIntro(panel: HTMLElement, controller: SessionController): void {
  panel.append(text("h2", "Video quality study"));
  panel.append(text(
    "p",
    "You will watch a series of short videos. Each video plays exactly " +
    "once and cannot be paused or replayed. After it ends, rate its " +
    "visual quality from 1 (bad) to 5 (excellent) in steps of 0.1: " +
    "1 bad, 2 poor, 3 fair, 4 good, 5 excellent.",
  ));
  panel.append(button("start", "Start", () => void controller.start()));
}

function renderRating(view: SessionView, panel: HTMLElement,
                      controller: SessionController): void {
  panel.append(text("p", "How would you rate the video quality?"));
  const slider = document.createElement("input");
  slider.type = "range";
  slider.id = "rating-slider";
  slider.min = "1";
  slider.max = "5";
  slider.step = "0.1";
  slider.value = view.sliderValue.toFixed(1);
  slider.disabled = view.phase === "submitting";
  slider.addEventListener("input", () => controller.setSlider(Number(slider.value)));
  const readout = text("span", view.sliderValue.toFixed(1));
  readout.id = "rating-readout";
  const submit = button("submit", view.phase === "submitting" ? "Sending..." : "Submit",
                        () => void controller.submit());
  submit.disabled = !controller.canSubmit;
  panel.append(slider, readout, submit);
  if (!view.interacted && view.phase === "rating") {
    panel.append(text("p", "Move the slider to enable submission."));
  }
}

function text(tag: string, content: string): HTMLElement {
  const el = document.createElement(tag);
  el.textContent = content;
  return el;
}

function button(id: string, label: string, onClick: () => void): HTMLButtonElement {
  const el = document.createElement("button");
  el.id = id;
  el.textContent = label;
  el.addEventListener("click", onClick);
  return el;
}
