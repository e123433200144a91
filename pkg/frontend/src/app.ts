// Session screen: chat on the left, pipeline inspector on the right. All
// pipeline logic stays server-side; this file only renders event payloads
// and posts turns/config.

import { ConvragClient, ServiceError } from "./api.js";
import type { SessionInfo, StreamEvent } from "./types.js";
import {
  SessionView,
  TurnView,
  applyEvent,
  decisionBadge,
  emptySession,
} from "./viewmodel.js";

const SERVICE_URL =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8450";

const client = new ConvragClient(SERVICE_URL);

interface AppState {
  session: SessionInfo | null;
  view: SessionView;
  userTexts: string[];
  inFlight: boolean;
  connection: "connecting" | "live" | "reconnecting" | "error";
  streamAbort: AbortController | null;
}

const state: AppState = {
  session: null,
  view: emptySession(),
  userTexts: [],
  inFlight: false,
  connection: "connecting",
  streamAbort: null,
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(value: number): string {
  return value.toFixed(4);
}

function renderTurn(turn: TurnView): HTMLElement {
  const box = el("section", "turn");
  const userText = state.userTexts[turn.turnIndex];
  if (userText !== undefined) {
    const bubble = el("div", "bubble user", userText);
    box.appendChild(bubble);
  }

  const inspector = el("div", "inspector");
  const badge = el("span", `badge badge-${decisionBadge(turn)}`, decisionBadge(turn));
  const decisionRow = el("div", "row");
  decisionRow.appendChild(el("span", "label", "decision"));
  decisionRow.appendChild(badge);
  if (turn.noRetrieverCall && turn.decision) {
    decisionRow.appendChild(el("span", "marker", "no retriever call"));
  }
  inspector.appendChild(decisionRow);

  if (turn.query) {
    const queryBox = el("div", "panel query");
    queryBox.appendChild(el("div", "label", "query"));
    queryBox.appendChild(el("div", "summary", `summary: ${turn.query.summary}`));
    queryBox.appendChild(el("div", "question", `question: ${turn.query.question}`));
    inspector.appendChild(queryBox);
  }

  if (turn.passages.length > 0) {
    const passageBox = el("div", "panel passages");
    passageBox.appendChild(el("div", "label", "retrieved passages"));
    const list = el("ol");
    for (const entry of turn.passages) {
      list.appendChild(el("li", "passage", `${entry.id} (${fmt(entry.score)})`));
    }
    passageBox.appendChild(list);
    inspector.appendChild(passageBox);
  }

  if (turn.candidates.length > 0) {
    const table = el("table", "candidates");
    const head = el("tr");
    for (const column of ["passage", "p_norm", "s_rel", "s_grd", "s_utl", "composite", ""]) {
      head.appendChild(el("th", undefined, column));
    }
    table.appendChild(head);
    turn.candidates.forEach((candidate) => {
      const row = el("tr", candidate.failed ? "failed" : candidate.selected ? "selected" : "");
      row.appendChild(el("td", undefined, candidate.passageId ?? "(none)"));
      row.appendChild(el("td", undefined, fmt(candidate.pNorm)));
      row.appendChild(el("td", undefined, fmt(candidate.sRel)));
      row.appendChild(el("td", undefined, fmt(candidate.sGrd)));
      row.appendChild(el("td", undefined, fmt(candidate.sUtl)));
      row.appendChild(el("td", undefined, fmt(candidate.composite)));
      row.appendChild(
        el("td", undefined, candidate.failed ? `failed: ${candidate.error ?? ""}` : candidate.selected ? "selected" : ""),
      );
      table.appendChild(row);
    });
    const panel = el("div", "panel");
    panel.appendChild(el("div", "label", "candidates"));
    panel.appendChild(table);
    inspector.appendChild(panel);
  }

  box.appendChild(inspector);
  if (turn.finalText !== null) {
    box.appendChild(el("div", "bubble assistant", turn.finalText));
  }
  return box;
}

function render(): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.textContent = "";

  const status = el("div", `status status-${state.connection}`);
  status.textContent =
    state.connection === "live"
      ? `connected to ${SERVICE_URL}` + (state.session ? ` · session ${state.session.id}` : "")
      : state.connection === "reconnecting"
        ? "connection lost - reconnecting…"
        : state.connection === "error"
          ? `cannot reach ${SERVICE_URL}`
          : "connecting…";
  root.appendChild(status);

  const weights = el("div", "panel weights");
  weights.appendChild(el("div", "label", "config (applies to a fresh session)"));
  const form = el("div", "weights-form");
  const config = state.session?.config;
  const fields: [string, number][] = [
    ["w1", config?.weights.w1 ?? 1.0],
    ["w2", config?.weights.w2 ?? 1.0],
    ["w3", config?.weights.w3 ?? 0.5],
    ["top_k", config?.top_k ?? 5],
  ];
  const inputs = new Map<string, HTMLInputElement>();
  for (const [name, value] of fields) {
    const label = el("label", undefined, `${name} `);
    const input = el("input");
    input.type = "number";
    input.step = name === "top_k" ? "1" : "0.1";
    input.value = String(value);
    input.name = name;
    inputs.set(name, input);
    label.appendChild(input);
    form.appendChild(label);
  }
  const applyButton = el("button", undefined, "new session with these values");
  const validation = el("span", "validation");
  applyButton.addEventListener("click", async () => {
    validation.textContent = "";
    const w1 = Number(inputs.get("w1")?.value);
    const w2 = Number(inputs.get("w2")?.value);
    const w3 = Number(inputs.get("w3")?.value);
    const topK = Number(inputs.get("top_k")?.value);
    try {
      await startSession({ weights: { w1, w2, w3 }, top_k: topK });
    } catch (error) {
      validation.textContent =
        error instanceof ServiceError && error.body
          ? `${error.body.message}: ${JSON.stringify(error.body.detail)}`
          : String(error);
    }
  });
  form.appendChild(applyButton);
  form.appendChild(validation);
  weights.appendChild(form);
  root.appendChild(weights);

  const turns = el("div", "turns");
  for (const turn of state.view.turns) {
    turns.appendChild(renderTurn(turn));
  }
  root.appendChild(turns);

  const composer = el("div", "composer");
  const input = el("input");
  input.type = "text";
  input.placeholder = state.inFlight ? "turn in flight…" : "ask something";
  input.disabled = state.inFlight || state.session === null || state.connection === "error";
  const send = el("button", undefined, "send");
  send.disabled = input.disabled;
  const submit = async () => {
    const text = input.value.trim();
    if (!text || !state.session) return;
    state.userTexts[state.view.turns.length] = text;
    state.inFlight = true;
    render();
    try {
      await client.postTurn(state.session.id, text);
    } catch (error) {
      alert(error instanceof Error ? error.message : String(error));
    } finally {
      state.inFlight = false;
      render();
    }
  };
  send.addEventListener("click", submit);
  input.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void submit();
  });
  composer.appendChild(input);
  composer.appendChild(send);
  root.appendChild(composer);
}

async function subscribe(sessionId: string): Promise<void> {
  state.streamAbort?.abort();
  const abort = new AbortController();
  state.streamAbort = abort;
  for (;;) {
    try {
      state.connection = "live";
      render();
      for await (const event of client.streamEvents(sessionId, { signal: abort.signal })) {
        applyEvent(state.view, event as StreamEvent);
        render();
      }
      return; // server closed the stream cleanly
    } catch (error) {
      if (abort.signal.aborted) return;
      state.connection = "reconnecting";
      render();
      await new Promise((resolve) => setTimeout(resolve, 1000));
      // Replay-on-subscribe plus the stream_seq guard makes this lossless.
    }
  }
}

async function startSession(overrides: Record<string, unknown> = {}): Promise<void> {
  const session = await client.createSession(overrides);
  state.session = session;
  state.view = emptySession();
  state.userTexts = [];
  render();
  void subscribe(session.id);
}

async function boot(): Promise<void> {
  render();
  try {
    await startSession();
  } catch (error) {
    state.connection = "error";
    render();
    console.error(error);
  }
}

void boot();
