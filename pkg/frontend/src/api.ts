// Thin typed client over the session service's HTTP API.

import type { SessionEvent, Snapshot } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  if (!response.ok) {
    let detail = response.statusText;
    try {
      detail = (await response.json()).detail ?? detail;
    } catch {
      // non-JSON error body; keep statusText
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class SessionApi {
  constructor(private baseUrl: string = "") {}

  createSession(config?: Record<string, unknown>): Promise<{ session_id: string; snapshot: Snapshot }> {
    return request(`${this.baseUrl}/sessions`, {
      method: "POST",
      body: JSON.stringify(config ? { config } : {}),
    });
  }

  postUtterance(sessionId: string, text: string): Promise<{ seq: number; ts_ms: number }> {
    return request(`${this.baseUrl}/sessions/${sessionId}/utterance`, {
      method: "POST",
      body: JSON.stringify({ text }),
    });
  }

  advance(sessionId: string): Promise<{ events: SessionEvent[]; awaiting_user: boolean; phase: string }> {
    return request(`${this.baseUrl}/sessions/${sessionId}/advance`, { method: "POST" });
  }

  ingestScene(
    sessionId: string,
    objects: string[],
    description: string,
  ): Promise<{ events: SessionEvent[]; phase: string }> {
    return request(`${this.baseUrl}/sessions/${sessionId}/scene`, {
      method: "POST",
      body: JSON.stringify({ objects, description }),
    });
  }

  getState(sessionId: string): Promise<{ snapshot: Snapshot }> {
    return request(`${this.baseUrl}/sessions/${sessionId}/state`);
  }
}
