import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { DEFAULT_POLL_HZ, Poller } from "../src/poller.js";

describe("Poller", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("defaults to 5 Hz", () => {
    expect(DEFAULT_POLL_HZ).toBe(5);
    expect(new Poller(async () => {}).intervalMs).toBe(200);
  });

  it("ticks at the configured rate, starting immediately", async () => {
    let ticks = 0;
    const poller = new Poller(async () => {
      ticks += 1;
    }, 2);
    poller.start();
    await vi.advanceTimersByTimeAsync(0);
    expect(ticks).toBe(1);
    await vi.advanceTimersByTimeAsync(1500);
    expect(ticks).toBe(4);
    poller.stop();
  });

  it("never overlaps a tick that is still in flight", async () => {
    let started = 0;
    let release: () => void = () => {};
    const poller = new Poller(async () => {
      started += 1;
      await new Promise<void>((resolve) => {
        release = resolve;
      });
    }, 10);
    poller.start();
    await vi.advanceTimersByTimeAsync(1000);
    expect(started).toBe(1);
    release();
    await vi.advanceTimersByTimeAsync(100);
    expect(started).toBe(2);
    poller.stop();
    release();
  });

  it("keeps polling after a tick throws", async () => {
    const errors: unknown[] = [];
    let ticks = 0;
    const poller = new Poller(
      async () => {
        ticks += 1;
        if (ticks === 1) throw new Error("server away");
      },
      5,
      (err) => errors.push(err),
    );
    poller.start();
    await vi.advanceTimersByTimeAsync(450);
    expect(ticks).toBe(3);
    expect(errors).toHaveLength(1);
    poller.stop();
  });

  it("stops cleanly", async () => {
    let ticks = 0;
    const poller = new Poller(async () => {
      ticks += 1;
    }, 5);
    poller.start();
    await vi.advanceTimersByTimeAsync(200);
    poller.stop();
    const seen = ticks;
    await vi.advanceTimersByTimeAsync(1000);
    expect(ticks).toBe(seen);
    expect(poller.running).toBe(false);
  });

  it("rejects a non-positive rate", () => {
    expect(() => new Poller(async () => {}, 0)).toThrow(/positive/);
  });
});
