// Faithfulness tests: everything the view model exposes must equal the
// corresponding field of the captured service payloads, with no client-side
// recomputation. Fixtures come from scripts/capture_ui_fixtures.py (real
// service, scripted backend).

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { buildSession, decisionBadge, maxPNormIndex } from "../src/viewmodel.js";
import type { CandidatePayload, StreamEvent, TurnRecord } from "../src/types.js";

interface Fixture {
  session: { id: string; config: { weights: { w1: number; w2: number; w3: number } } };
  turn_records: TurnRecord[];
  events: StreamEvent[];
}

function loadFixture(name: string): Fixture {
  const path = join(__dirname, "..", "fixtures", `${name}.json`);
  return JSON.parse(readFileSync(path, "utf-8")) as Fixture;
}

describe("retrieve session screen", () => {
  const fixture = loadFixture("retrieve_session");
  const view = buildSession(fixture.events);
  const turn = view.turns[0]!;
  const result = fixture.turn_records[0]!.result;

  it("renders the decision badge from the event payload", () => {
    expect(decisionBadge(turn)).toBe("Retrieve");
    expect(turn.noRetrieverCall).toBe(false);
  });

  it("renders the passage panel in retrieved order", () => {
    expect(turn.passages.map((p) => p.id)).toEqual(["d2", "d1"]);
    expect(turn.passages).toEqual(result.retrieved);
  });

  it("renders per-candidate scores equal to the event payload", () => {
    expect(turn.candidates).toHaveLength(result.candidates.length);
    turn.candidates.forEach((candidate, i) => {
      const payload = result.candidates[i] as CandidatePayload;
      expect(candidate.passageId).toBe(payload.passage_id);
      expect(candidate.pNorm).toBe(payload.breakdown.p_norm);
      expect(candidate.sRel).toBe(payload.breakdown.s_rel);
      expect(candidate.sGrd).toBe(payload.breakdown.s_grd);
      expect(candidate.sUtl).toBe(payload.breakdown.s_utl);
      expect(candidate.composite).toBe(payload.total);
    });
  });

  it("highlights exactly the selected candidate", () => {
    expect(turn.selectedIndex).toBe(result.selected_index);
    expect(turn.candidates.map((c) => c.selected)).toEqual(
      result.candidates.map((_, i) => i === result.selected_index),
    );
    expect(turn.finalText).toBe(result.selected_text);
  });

  it("shows the query panel fields verbatim", () => {
    expect(turn.query).toEqual(result.query);
  });

  it("matches the stored snapshot", () => {
    expect(view).toMatchSnapshot();
  });
});

describe("evidence-reuse session screen", () => {
  const fixture = loadFixture("figure_one_session");
  const view = buildSession(fixture.events);

  it("renders the continue badge and the no-retriever-call marker", () => {
    const turn = view.turns[1]!;
    expect(decisionBadge(turn)).toBe("ContinueToUseEvidence");
    expect(turn.noRetrieverCall).toBe(true);
    expect(turn.passages).toEqual([]);
    expect(turn.query).toBeNull();
  });

  it("keeps the first turn's retrieval panels intact", () => {
    const turn = view.turns[0]!;
    expect(decisionBadge(turn)).toBe("Retrieve");
    expect(turn.noRetrieverCall).toBe(false);
    expect(turn.passages.length).toBeGreaterThan(0);
  });
});

describe("zero-weights session", () => {
  const fixture = loadFixture("zero_weights_session");
  const view = buildSession(fixture.events);

  it("was produced with w = (0, 0, 0)", () => {
    const weights = fixture.session.config.weights;
    expect([weights.w1, weights.w2, weights.w3]).toEqual([0, 0, 0]);
  });

  it("selected the max-p_norm candidate", () => {
    const turn = view.turns[0]!;
    expect(turn.selectedIndex).toBe(maxPNormIndex(turn));
  });
});

describe("top_k = 1 session", () => {
  const fixture = loadFixture("top1_session");
  const view = buildSession(fixture.events);

  it("shows exactly one passage on the retrieve turn", () => {
    const turn = view.turns[0]!;
    expect(decisionBadge(turn)).toBe("Retrieve");
    expect(turn.passages).toHaveLength(1);
    expect(turn.candidates).toHaveLength(1);
  });
});

describe("failed candidates", () => {
  it("stay visible, marked failed, never selected", () => {
    const events: StreamEvent[] = [
      {
        stream_seq: 0,
        turn_index: 0,
        seq: 0,
        kind: "candidate",
        payload: {
          passage_id: "dX",
          rank: 0,
          failed: true,
          error: "backend unreachable",
          segments: [],
          total: -Infinity,
          text: "",
          breakdown: { p_norm: 0, s_rel: 0, s_grd: 0, s_utl: 0 },
        },
      },
    ];
    const view = buildSession(events);
    const turn = view.turns[0]!;
    expect(turn.candidates).toHaveLength(1);
    expect(turn.candidates[0]!.failed).toBe(true);
    expect(turn.candidates[0]!.error).toBe("backend unreachable");
    expect(turn.candidates[0]!.selected).toBe(false);
    expect(maxPNormIndex(turn)).toBe(-1);
  });
});

describe("event folding", () => {
  const fixture = loadFixture("retrieve_session");

  it("is idempotent under replayed events", () => {
    const once = buildSession(fixture.events);
    const twice = buildSession([...fixture.events, ...fixture.events]);
    expect(twice).toEqual(once);
  });

  it("applies events in stream order", () => {
    const seqs = fixture.events.map((e) => e.stream_seq);
    expect(seqs).toEqual([...seqs].sort((a, b) => a - b));
  });
});
