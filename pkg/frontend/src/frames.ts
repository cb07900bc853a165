/**
 * Frame-interval reporting. The client never classifies drops; it
 * streams raw intervals per trial and the server-side analysis owns the
 * 1.1x-period rule. The synthetic cadence used off-browser matches the
 * loopback simulator's policy so transcripts line up.
 */

export const REFRESH_PERIOD_MS = 1000 / 60;

/** Steady fake cadence covering a span: floor(span * 60 / 1000) frames. */
export function syntheticFrameIntervals(spanMs: number): number[] {
  const count = Math.floor((spanMs * 60) / 1000);
  return new Array(count).fill(REFRESH_PERIOD_MS);
}

/** Rolling collector fed by requestAnimationFrame timestamps. */
export class FrameIntervalCollector {
  private lastTs: number | null = null;
  private intervals: number[] = [];

  tick(timestampMs: number): void {
    if (this.lastTs !== null) {
      this.intervals.push(timestampMs - this.lastTs);
    }
    this.lastTs = timestampMs;
  }

  /** Drain the batch collected since the previous call. */
  drain(): number[] {
    const out = this.intervals;
    this.intervals = [];
    return out;
  }

  reset(): void {
    this.lastTs = null;
    this.intervals = [];
  }
}

/** Live counter for the experimenter panel (display only). */
export function countDrops(intervalsMs: number[], periodMs: number): number {
  const bound = 1.1 * periodMs;
  let n = 0;
  for (const v of intervalsMs) {
    if (v > bound) n += 1;
  }
  return n;
}
