// Path animation: fetch the frames once, then step through them on a timer
// with pause/resume. Frame advancement is injectable for tests.

import { ApiClient, Reconstruction } from "./api.js";

export class PathAnimator {
  frames: Reconstruction[] = [];
  cursor = 0;
  playing = false;
  private timer: unknown = null;

  constructor(
    private readonly api: ApiClient,
    private readonly onFrame: (frame: Reconstruction, index: number) => void,
    private readonly frameMs = 120,
    private readonly schedule: (fn: () => void, ms: number) => unknown =
      (fn, ms) => setTimeout(fn, ms),
    private readonly cancel: (t: unknown) => void = (t) => clearTimeout(t as number),
  ) {}

  async load(from: number[], to: number[], steps: number): Promise<number> {
    const res = await this.api.path(from, to, steps);
    this.frames = res.frames;
    this.cursor = 0;
    return this.frames.length;
  }

  play(): void {
    if (this.frames.length === 0 || this.playing) return;
    this.playing = true;
    this.tick();
  }

  pause(): void {
    this.playing = false;
    if (this.timer !== null) {
      this.cancel(this.timer);
      this.timer = null;
    }
  }

  private tick(): void {
    if (!this.playing) return;
    if (this.cursor >= this.frames.length) {
      this.playing = false;
      return;
    }
    this.onFrame(this.frames[this.cursor], this.cursor);
    this.cursor += 1;
    this.timer = this.schedule(() => this.tick(), this.frameMs);
  }
}
