import { describe, expect, it, vi } from "vitest";

import { subscribeEvents, type EventSourceLike } from "../src/stream.js";
import type { SessionEvent } from "../src/types.js";

class FakeEventSource implements EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  closed = false;

  constructor(public url: string) {}

  close(): void {
    this.closed = true;
  }

  push(event: SessionEvent): void {
    this.onmessage?.({ data: JSON.stringify(event) });
  }

  fail(): void {
    this.onerror?.(new Error("connection lost"));
  }
}

function ev(seq: number): SessionEvent {
  return { seq, ts_ms: seq * 1000, type: "validation_warning", payload: { code: "x", detail: "y" } };
}

describe("SSE subscription", () => {
  it("delivers events and tracks the last seq", () => {
    const sources: FakeEventSource[] = [];
    const seen: number[] = [];
    const handle = subscribeEvents("s1", (event) => seen.push(event.seq), {
      factory: (url) => {
        const source = new FakeEventSource(url);
        sources.push(source);
        return source;
      },
    });
    sources[0]!.push(ev(1));
    sources[0]!.push(ev(2));
    expect(seen).toEqual([1, 2]);
    expect(handle.lastSeq()).toBe(2);
    handle.close();
    expect(sources[0]!.closed).toBe(true);
  });

  it("reconnects from the last seen seq and drops redelivered events", () => {
    vi.useFakeTimers();
    const sources: FakeEventSource[] = [];
    const seen: number[] = [];
    const statuses: boolean[] = [];
    const handle = subscribeEvents("s1", (event) => seen.push(event.seq), {
      reconnectDelayMs: 10,
      onStatus: (connected) => statuses.push(connected),
      factory: (url) => {
        const source = new FakeEventSource(url);
        sources.push(source);
        return source;
      },
    });
    sources[0]!.push(ev(1));
    sources[0]!.push(ev(2));
    sources[0]!.fail();
    vi.advanceTimersByTime(20);

    expect(sources).toHaveLength(2);
    expect(sources[1]!.url).toContain("from_seq=2");
    // server resends an overlap; the subscription must drop it
    sources[1]!.push(ev(2));
    sources[1]!.push(ev(3));
    expect(seen).toEqual([1, 2, 3]);
    expect(statuses).toEqual([true, false, true]);
    handle.close();
    vi.useRealTimers();
  });

  it("stops reconnecting after close", () => {
    vi.useFakeTimers();
    const sources: FakeEventSource[] = [];
    const handle = subscribeEvents("s1", () => {}, {
      reconnectDelayMs: 10,
      factory: (url) => {
        const source = new FakeEventSource(url);
        sources.push(source);
        return source;
      },
    });
    sources[0]!.fail();
    handle.close();
    vi.advanceTimersByTime(100);
    expect(sources).toHaveLength(1);
    vi.useRealTimers();
  });
});
