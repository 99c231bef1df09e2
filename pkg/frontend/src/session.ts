/** Session state machine: watch once, rate on the 0.1 grid, advance.
 *
 * The controller owns the protocol discipline the study depends on: each
 * item's media is requested exactly once, the rating control only unlocks
 * after playback completes, a server rejection blocks advancing, and a
 * transport failure offers a retry that never replays the video.
 */

import { ApiError, NetworkError, NextItem, SessionApi } from "./api.js";

export type Phase = "loading" | "intro" | "playing" | "rating" | "submitting" | "done";

export const SLIDER_DEFAULT = 3.0;

/** Snap a slider value onto the 0.1 grid inside [1, 5]. */
export function snapRating(value: number): number {
  const snapped = Math.round(value * 10) / 10;
  return Math.min(5, Math.max(1, snapped));
}

/** Plays a media URL and resolves when playback has finished. */
export interface MediaPlayer {
  play(url: string): Promise<void>;
}

export interface SessionView {
  phase: Phase;
  total: number;
  rated: number;
  index: number | null;
  videoId: string | null;
  sliderValue: number;
  interacted: boolean;
  error: string | null;
  canRetry: boolean;
}

type Listener = (view: SessionView) => void;

export class SessionController {
  private phase: Phase = "loading";
  private total = 0;
  private rated = 0;
  private index: number | null = null;
  private videoId: string | null = null;
  private mediaUrl: string | null = null;
  private sliderValue = SLIDER_DEFAULT;
  private interacted = false;
  private error: string | null = null;
  private canRetry = false;
  private playedUrls = new Set<string>();

  constructor(
    private readonly api: SessionApi,
    private readonly player: MediaPlayer,
    private readonly sessionId: string,
    private readonly listener: Listener = () => undefined,
  ) {}

  view(): SessionView {
    return {
      phase: this.phase,
      total: this.total,
      rated: this.rated,
      index: this.index,
      videoId: this.videoId,
      sliderValue: this.sliderValue,
      interacted: this.interacted,
      error: this.error,
      canRetry: this.canRetry,
    };
  }

  private emit(): void {
    this.listener(this.view());
  }

  /** Resume or begin: intro only for untouched sessions, no intro repeat. */
  async init(): Promise<void> {
    const status = await this.api.getSession(this.sessionId);
    this.total = status.total;
    this.rated = status.rated;
    if (status.done) {
      this.phase = "done";
      this.emit();
      return;
    }
    if (status.rated > 0) {
      // returning rater: resume at the cursor directly
      await this.advance();
      return;
    }
    this.phase = "intro";
    this.emit();
  }

  /** Leave the intro screen and play the first item. */
  async start(): Promise<void> {
    if (this.phase !== "intro") {
      throw new Error(`cannot start from phase ${this.phase}`);
    }
    await this.advance();
  }

  private async advance(): Promise<void> {
    this.error = null;
    this.canRetry = false;
    const item: NextItem = await this.api.nextItem(this.sessionId);
    this.total = item.total;
    this.rated = item.rated;
    if (item.done) {
      this.phase = "done";
      this.index = null;
      this.videoId = null;
      this.emit();
      return;
    }
    this.index = item.index ?? null;
    this.videoId = item.video_id ?? null;
    this.mediaUrl = item.media_url ?? null;
    this.phase = "playing";
    this.sliderValue = SLIDER_DEFAULT;
    this.interacted = false;
    this.emit();
    if (this.mediaUrl === null) {
      throw new Error("server returned an item without a media URL");
    }
    if (this.playedUrls.has(this.mediaUrl)) {
      // single-exposure guard: never fetch the same playback URL twice
      throw new Error(`media for item ${this.index} was already played`);
    }
    this.playedUrls.add(this.mediaUrl);
    await this.player.play(this.mediaUrl);
    this.phase = "rating";
    this.emit();
  }

  /** Move the rating slider; value snaps to the 0.1 grid. */
  setSlider(value: number): void {
    if (this.phase !== "rating") {
      return; // control is disabled until playback completes
    }
    this.sliderValue = snapRating(value);
    this.interacted = true;
    this.emit();
  }

  get canSubmit(): boolean {
    return this.phase === "rating" && this.interacted;
  }

  /** Submit the current rating; retry after network failure never replays. */
  async submit(): Promise<void> {
    if (this.phase === "rating" && !this.interacted) {
      this.error = "move the slider to choose a rating first";
      this.emit();
      return;
    }
    if (this.phase !== "rating" && !(this.phase === "submitting" && this.canRetry)) {
      throw new Error(`cannot submit from phase ${this.phase}`);
    }
    if (this.videoId === null) {
      throw new Error("no current item");
    }
    this.phase = "submitting";
    this.error = null;
    this.canRetry = false;
    this.emit();
    try {
      await this.api.submitRating(this.sessionId, this.videoId, this.sliderValue);
    } catch (err) {
      if (err instanceof NetworkError) {
        // the media stays consumed; only the submit is retried
        this.canRetry = true;
        this.error = "connection lost; your rating was kept, press retry";
        this.emit();
        return;
      }
      if (err instanceof ApiError) {
        if (err.code === "duplicate_rating") {
          // a lost response to an accepted submit; treat the retry as done
          await this.advance();
          return;
        }
        // protocol rejection: surface inline and stay on this item
        this.phase = "rating";
        this.error = `${err.code}: ${err.message}`;
        this.emit();
        return;
      }
      throw err;
    }
    await this.advance();
  }

  /** Re-send the rating after a transport failure. */
  async retry(): Promise<void> {
    if (!this.canRetry) {
      throw new Error("nothing to retry");
    }
    await this.submit();
  }
}
