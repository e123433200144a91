// Pure event-fold: the session screen's state is a function of the event
// stream, applied strictly in arrival order. Every number in a view is copied
// verbatim from an event payload.

import type {
  CandidatePayload,
  DecisionPayload,
  QueryPayload,
  RetrievedEntry,
  SelectedPayload,
  StreamEvent,
} from "./types.js";

export interface CandidateView {
  passageId: string | null;
  text: string;
  pNorm: number;
  sRel: number;
  sGrd: number;
  sUtl: number;
  composite: number;
  failed: boolean;
  error: string | null;
  selected: boolean;
}

export interface TurnView {
  turnIndex: number;
  decision: DecisionPayload | null;
  // Explicit marker: this turn ran without any retriever call.
  noRetrieverCall: boolean;
  query: QueryPayload | null;
  passages: RetrievedEntry[];
  candidates: CandidateView[];
  selectedIndex: number | null;
  finalText: string | null;
}

export interface SessionView {
  turns: TurnView[];
  lastStreamSeq: number;
}

export function emptySession(): SessionView {
  return { turns: [], lastStreamSeq: -1 };
}

function turnAt(view: SessionView, index: number): TurnView {
  while (view.turns.length <= index) {
    view.turns.push({
      turnIndex: view.turns.length,
      decision: null,
      noRetrieverCall: true,
      query: null,
      passages: [],
      candidates: [],
      selectedIndex: null,
      finalText: null,
    });
  }
  const turn = view.turns[index];
  if (!turn) throw new Error(`turn ${index} missing after fill`);
  return turn;
}

function candidateView(payload: CandidatePayload): CandidateView {
  return {
    passageId: payload.passage_id,
    text: payload.text,
    pNorm: payload.breakdown.p_norm,
    sRel: payload.breakdown.s_rel,
    sGrd: payload.breakdown.s_grd,
    sUtl: payload.breakdown.s_utl,
    composite: payload.total,
    failed: payload.failed,
    error: payload.error,
    selected: false,
  };
}

const TURN_EVENT_KINDS = new Set(["decision", "query", "retrieved", "candidate", "selected"]);

export function applyEvent(view: SessionView, event: StreamEvent): SessionView {
  if (!TURN_EVENT_KINDS.has(event.kind)) {
    return view; // heartbeats, error markers, future kinds
  }
  if (event.stream_seq <= view.lastStreamSeq) {
    return view; // replay overlap after a reconnect
  }
  view.lastStreamSeq = event.stream_seq;
  const turn = turnAt(view, event.turn_index);
  switch (event.kind) {
    case "decision": {
      const payload = event.payload as DecisionPayload;
      turn.decision = payload;
      turn.noRetrieverCall = payload.choice !== "Retrieve";
      break;
    }
    case "query":
      turn.query = event.payload as QueryPayload;
      break;
    case "retrieved":
      turn.passages = (event.payload as { entries: RetrievedEntry[] }).entries;
      break;
    case "candidate":
      turn.candidates.push(candidateView(event.payload as CandidatePayload));
      break;
    case "selected": {
      const payload = event.payload as SelectedPayload;
      turn.selectedIndex = payload.index;
      turn.finalText = payload.text;
      turn.candidates.forEach((candidate, i) => {
        candidate.selected = i === payload.index;
      });
      break;
    }
  }
  return view;
}

export function buildSession(events: StreamEvent[]): SessionView {
  const view = emptySession();
  for (const event of events) {
    applyEvent(view, event);
  }
  return view;
}

export function decisionBadge(turn: TurnView): string {
  if (!turn.decision) return "…";
  return turn.decision.choice;
}

export function maxPNormIndex(turn: TurnView): number {
  let best = -1;
  let bestValue = -Infinity;
  turn.candidates.forEach((candidate, i) => {
    if (!candidate.failed && candidate.pNorm > bestValue) {
      bestValue = candidate.pNorm;
      best = i;
    }
  });
  return best;
}
