/** Fixed-rate polling driver.
 *
 * The preview "stream" is plain request/response polling, 5 Hz unless
 * configured otherwise. A tick that is still in flight when the next
 * interval fires is not overlapped; the interval is skipped instead.
 */

export const DEFAULT_POLL_HZ = 5;

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(
    private readonly tick: () => Promise<void>,
    readonly hz: number = DEFAULT_POLL_HZ,
    private readonly onError: (err: unknown) => void = () => {},
  ) {
    if (!(hz > 0)) throw new Error(`poll rate must be positive, got ${hz}`);
  }

  get intervalMs(): number {
    return 1000 / this.hz;
  }

  get running(): boolean {
    return this.timer !== null;
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => void this.fire(), this.intervalMs);
    void this.fire();
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One immediate tick, shared with the interval path. */
  async fire(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      await this.tick();
    } catch (err) {
      this.onError(err);
    } finally {
      this.inFlight = false;
    }
  }
}
