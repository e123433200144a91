// Typed client for the session service. Event streaming reads the NDJSON
// response line by line; replay-on-subscribe makes reconnects lossless.

import type { ErrorBody, SessionInfo, StreamEvent, TurnRecord } from "./types.js";

export class ServiceError extends Error {
  readonly status: number;
  readonly body: ErrorBody | null;

  constructor(status: number, body: ErrorBody | null) {
    super(body ? `${body.code}: ${body.message}` : `HTTP ${status}`);
    this.status = status;
    this.body = body;
  }
}

async function parseError(response: Response): Promise<ServiceError> {
  let body: ErrorBody | null = null;
  try {
    body = (await response.json()) as ErrorBody;
  } catch {
    body = null;
  }
  return new ServiceError(response.status, body);
}

export class ConvragClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  createSession(overrides: Record<string, unknown> = {}): Promise<SessionInfo> {
    return this.requestJson<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(overrides),
    });
  }

  getSession(id: string): Promise<SessionInfo> {
    return this.requestJson<SessionInfo>(`/sessions/${id}`);
  }

  postTurn(id: string, text: string): Promise<TurnRecord> {
    return this.requestJson<TurnRecord>(`/sessions/${id}/turns`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text }),
    });
  }

  corpusStats(): Promise<Record<string, unknown>> {
    return this.requestJson("/corpus/stats");
  }

  health(): Promise<Record<string, unknown>> {
    return this.requestJson("/healthz");
  }

  // Yields events in stream order; completes when the server closes the
  // response (follow=false) or the signal aborts.
  async *streamEvents(
    id: string,
    options: { follow?: boolean; signal?: AbortSignal } = {},
  ): AsyncGenerator<StreamEvent> {
    const follow = options.follow ?? true;
    const url = `${this.baseUrl}/sessions/${id}/events?follow=${follow ? 1 : 0}`;
    const response = await fetch(url, { signal: options.signal ?? null });
    if (!response.ok || !response.body) {
      throw await parseError(response);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (value) {
          buffer += decoder.decode(value, { stream: true });
          let newline = buffer.indexOf("\n");
          while (newline >= 0) {
            const line = buffer.slice(0, newline).trim();
            buffer = buffer.slice(newline + 1);
            if (line) {
              yield JSON.parse(line) as StreamEvent;
            }
            newline = buffer.indexOf("\n");
          }
        }
        if (done) {
          const tail = buffer.trim();
          if (tail) {
            yield JSON.parse(tail) as StreamEvent;
          }
          return;
        }
      }
    } finally {
      reader.releaseLock();
    }
  }
}
