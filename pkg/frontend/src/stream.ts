// SSE subscription that survives connection loss: every reconnect resumes
// from the last seq actually applied, and the idempotent reducer makes any
// overlap harmless.

import type { SessionEvent } from "./types.js";

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface StreamOptions {
  baseUrl?: string;
  fromSeq?: number;
  reconnectDelayMs?: number;
  factory?: EventSourceFactory;
  onStatus?: (connected: boolean) => void;
}

export interface StreamHandle {
  close(): void;
  lastSeq(): number;
}

// A real EventSource hands the handler a full MessageEvent, which satisfies
// the minimal {data} shape; the cast bridges the declaration variance.
const defaultFactory: EventSourceFactory = (url) => new EventSource(url) as unknown as EventSourceLike;

export function subscribeEvents(
  sessionId: string,
  onEvent: (ev: SessionEvent) => void,
  options: StreamOptions = {},
): StreamHandle {
  const factory = options.factory ?? defaultFactory;
  const baseUrl = options.baseUrl ?? "";
  const reconnectDelay = options.reconnectDelayMs ?? 1000;
  let lastSeq = options.fromSeq ?? 0;
  let source: EventSourceLike | null = null;
  let closed = false;
  let timer: ReturnType<typeof setTimeout> | null = null;

  function connect(): void {
    if (closed) return;
    source = factory(`${baseUrl}/sessions/${sessionId}/events?from_seq=${lastSeq}`);
    options.onStatus?.(true);
    source.onmessage = (message) => {
      const event = JSON.parse(message.data) as SessionEvent;
      if (event.seq > lastSeq) {
        lastSeq = event.seq;
        onEvent(event);
      }
    };
    source.onerror = () => {
      if (closed) return;
      options.onStatus?.(false);
      source?.close();
      timer = setTimeout(connect, reconnectDelay);
    };
  }

  connect();
  return {
    close() {
      closed = true;
      if (timer !== null) clearTimeout(timer);
      source?.close();
    },
    lastSeq: () => lastSeq,
  };
}
