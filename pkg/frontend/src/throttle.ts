// Trailing throttle for probe drags: at most one call per interval, always
// ending with the latest arguments. In-flight results that have been
// superseded are dropped by the caller via the returned token.

export type Scheduler = (fn: () => void, ms: number) => unknown;

export class Throttle<A extends unknown[]> {
  private last = -Infinity;
  private pending: A | null = null;
  private timer: unknown = null;
  calls = 0;

  constructor(
    private readonly fn: (...args: A) => void,
    private readonly intervalMs: number,
    private readonly now: () => number = () => Date.now(),
    private readonly schedule: Scheduler = (f, ms) => setTimeout(f, ms),
  ) {}

  fire(...args: A): void {
    const t = this.now();
    if (t - this.last >= this.intervalMs) {
      this.last = t;
      this.calls += 1;
      this.fn(...args);
      return;
    }
    this.pending = args;
    if (this.timer === null) {
      const wait = this.intervalMs - (t - this.last);
      this.timer = this.schedule(() => {
        this.timer = null;
        if (this.pending !== null) {
          const args2 = this.pending;
          this.pending = null;
          this.last = this.now();
          this.calls += 1;
          this.fn(...args2);
        }
      }, wait);
    }
  }
}

// Monotonic token source: responses older than the newest request are stale.
export class RequestSequencer {
  private issued = 0;
  private applied = 0;

  next(): number {
    return ++this.issued;
  }

  tryApply(token: number): boolean {
    if (token <= this.applied) return false;
    this.applied = token;
    return true;
  }
}
