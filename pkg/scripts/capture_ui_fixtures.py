"""Capture wire-level fixtures for the frontend tests from the real service.

Runs the scripted scenarios through the HTTP app in-process and writes the
session view, turn record, and event stream for each into frontend/fixtures/.
Re-run after changing the wire format:

    python3 scripts/capture_ui_fixtures.py
"""

import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from convrag.backend import ScriptedBackend, script_from_rules
from convrag.core import PipelineConfig
from convrag.orchestrator import Bm25Retriever
from convrag.retrieval import build_bm25
from convrag.service import ServiceConfig, create_app

import fixtures as fx

OUT_DIR = ROOT / "frontend" / "fixtures"


def zero_weight_rules() -> list[dict]:
    """Retrieve scenario where d1 has the higher p_norm but d2 wins on the
    reflection scores: zero weights must flip the selection to d1."""
    rules = fx.retrieve_rules()
    for rule in rules:
        if rule["kind"] == "generate" and rule["match"] == "(id=d1)":
            text = rule["payload"]["text"]
            rule["payload"]["tokens"] = [[text, -0.05]]
    return rules


def capture(name: str, backend, question: str, overrides: dict, history=None) -> None:
    corpus = fx.toy_corpus()
    with tempfile.TemporaryDirectory() as tmp:
        config = ServiceConfig(data_dir=tmp, pipeline=PipelineConfig(top_k=3, beam_size=3))
        app = create_app(
            config, backend=backend, corpus=corpus, retriever=Bm25Retriever(build_bm25(corpus))
        )
        client = TestClient(app)
        session = client.post("/sessions", json=overrides).json()
        records = []
        for text in (history or []) + [question]:
            response = client.post(f"/sessions/{session['id']}/turns", json={"text": text})
            response.raise_for_status()
            records.append(response.json())
        with client.stream("GET", f"/sessions/{session['id']}/events?follow=0") as response:
            events = [json.loads(line) for line in response.iter_lines() if line]
        view = client.get(f"/sessions/{session['id']}").json()
    payload = {"session": view, "turn_records": records, "events": events}
    out = OUT_DIR / f"{name}.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(events)} events)")


def figure_one_backend_with_first_turn() -> ScriptedBackend:
    """Figure-one flow driven end to end: first turn retrieves and attaches a
    passage, second turn continues from it without a retriever call."""
    rules = fx.retrieve_rules() + fx.figure_one_rules()[1:]
    decision_continue = fx.figure_one_rules()[0]
    return ScriptedBackend(script_from_rules([decision_continue] + rules))


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    capture("retrieve_session", fx.retrieve_backend(), fx.RETRIEVE_QUESTION, {})
    capture(
        "figure_one_session",
        figure_one_backend_with_first_turn(),
        fx.FIGURE_ONE_QUESTION,
        {},
        history=[fx.RETRIEVE_QUESTION],
    )
    capture(
        "zero_weights_session",
        ScriptedBackend(script_from_rules(zero_weight_rules())),
        fx.RETRIEVE_QUESTION,
        {"weights": {"w1": 0.0, "w2": 0.0, "w3": 0.0}},
    )
    capture("top1_session", fx.retrieve_backend(), fx.RETRIEVE_QUESTION, {"top_k": 1})


if __name__ == "__main__":
    main()
