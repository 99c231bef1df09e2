/** HTMLVideoElement wrapper that resolves once playback finishes.
 *
 * The element carries no controls, so the rater cannot seek, pause, or
 * replay; one call to play() is one exposure.
 */

import { MediaPlayer } from "./session.js";

export class VideoElementPlayer implements MediaPlayer {
  constructor(private readonly element: HTMLVideoElement) {}

  play(url: string): Promise<void> {
    return new Promise((resolve, reject) => {
      const el = this.element;
      const cleanup = () => {
        el.removeEventListener("ended", onEnded);
        el.removeEventListener("error", onError);
      };
      const onEnded = () => {
        cleanup();
        resolve();
      };
      const onError = () => {
        cleanup();
        reject(new Error(`playback failed for ${url}`));
      };
      el.addEventListener("ended", onEnded);
      el.addEventListener("error", onError);
      el.src = url;
      void el.play();
    });
  }
}
