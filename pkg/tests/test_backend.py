import json
import math
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from convrag.backend import (
    NEG_INF,
    FinishReason,
    Generation,
    GenerationRequest,
    ScoreRequest,
    ScriptedBackend,
    load_script,
    script_from_rules,
    sequence_logprob_norm,
)
from convrag.errors import DataError, ScriptMissError


def make_backend(rules):
    return ScriptedBackend(script_from_rules(rules))


class TestRequestInvariants:
    def test_max_tokens_positive(self):
        with pytest.raises(DataError):
            GenerationRequest(prompt="p", max_tokens=0)

    def test_candidates_distinct_nonempty(self):
        with pytest.raises(DataError):
            ScoreRequest(prompt="p", candidates=())
        with pytest.raises(DataError):
            ScoreRequest(prompt="p", candidates=("a", "a"))

    def test_generation_tokens_must_concatenate(self):
        with pytest.raises(DataError):
            Generation(text="ab", token_logprobs=(("a", -0.1),))

    def test_positive_logprob_rejected(self):
        with pytest.raises(DataError):
            Generation(text="a", token_logprobs=(("a", 0.5),))


class TestScriptedGenerate:
    def test_scripted_echo(self):
        backend = make_backend(
            [
                {
                    "match": "capital of France",
                    "kind": "generate",
                    "payload": {"text": "Paris.", "tokens": [["Paris", -0.1], [".", -0.05]]},
                }
            ]
        )
        out = backend.generate(GenerationRequest(prompt="What is the capital of France?"))
        assert out.text == "Paris."
        assert out.token_logprobs == (("Paris", -0.1), (".", -0.05))
        assert out.finish is FinishReason.STOP

    def test_stop_sequence_truncates(self):
        backend = make_backend(
            [
                {
                    "match": "q",
                    "kind": "generate",
                    "payload": {
                        "text": "line one\nline two",
                        "tokens": [["line one", -0.1], ["\nline two", -0.2]],
                    },
                }
            ]
        )
        out = backend.generate(GenerationRequest(prompt="q", stop=("\n",)))
        assert out.text == "line one"
        assert out.finish is FinishReason.STOP
        assert "".join(t for t, _ in out.token_logprobs) == "line one"

    def test_max_tokens_truncates_with_length_finish(self):
        backend = make_backend(
            [
                {
                    "match": "q",
                    "kind": "generate",
                    "payload": {"text": "abc", "tokens": [["a", -0.1], ["b", -0.1], ["c", -0.1]]},
                }
            ]
        )
        out = backend.generate(GenerationRequest(prompt="q", max_tokens=2))
        assert out.text == "ab"
        assert out.finish is FinishReason.LENGTH

    def test_unmatched_prompt_names_digest(self):
        backend = make_backend([{"match": "x", "kind": "generate", "payload": {"text": "y"}}])
        with pytest.raises(ScriptMissError, match="prompt digest"):
            backend.generate(GenerationRequest(prompt="something else"))

    def test_first_matching_rule_wins(self):
        backend = make_backend(
            [
                {"match": "alpha", "kind": "generate", "payload": {"text": "first"}},
                {"match": "alpha", "kind": "generate", "payload": {"text": "second"}},
            ]
        )
        assert backend.generate(GenerationRequest(prompt="alpha")).text == "first"

    def test_regex_rule(self):
        backend = make_backend(
            [
                {
                    "match": r"judge-relevance.*id=d2",
                    "regex": True,
                    "kind": "score",
                    "payload": {"[Relevant]": -0.5, "[Non Relevant]": -1.5},
                }
            ]
        )
        out = backend.score_continuations(
            ScoreRequest(
                prompt="Task: judge-relevance\nstuff\nPassage (id=d2): x",
                candidates=("[Relevant]", "[Non Relevant]"),
            )
        )
        assert out["[Relevant]"] == -0.5


class TestScriptedScore:
    def test_scripted_map(self):
        payload = {"[Retrieve]": -0.1, "[No Retrieve]": -3.0, "[Continue to Use Evidence]": -3.0}
        backend = make_backend([{"match": "decide", "kind": "score", "payload": payload}])
        out = backend.score_continuations(
            ScoreRequest(prompt="decide", candidates=tuple(payload))
        )
        assert out == payload

    def test_single_candidate(self):
        backend = make_backend([{"match": "p", "kind": "score", "payload": {"only": -1.0}}])
        out = backend.score_continuations(ScoreRequest(prompt="p", candidates=("only",)))
        assert out == {"only": -1.0}

    def test_determinism(self):
        backend = make_backend([{"match": "p", "kind": "score", "payload": {"a": -1, "b": -2}}])
        req = ScoreRequest(prompt="p", candidates=("a", "b"))
        assert backend.score_continuations(req) == backend.score_continuations(req)

    def test_keys_equal_candidate_set_with_sentinel_fill(self):
        backend = make_backend([{"match": "p", "kind": "score", "payload": {"a": -1.0}}])
        out = backend.score_continuations(ScoreRequest(prompt="p", candidates=("a", "b")))
        assert set(out) == {"a", "b"}
        assert out["b"] == NEG_INF

    def test_neg_inf_string_payload(self):
        backend = make_backend([{"match": "p", "kind": "score", "payload": {"a": "-inf", "b": -1}}])
        out = backend.score_continuations(ScoreRequest(prompt="p", candidates=("a", "b")))
        assert out["a"] == NEG_INF

    def test_concurrent_requests_are_safe(self):
        backend = make_backend([{"match": "p", "kind": "score", "payload": {"a": -1.0}}])
        req = ScoreRequest(prompt="p", candidates=("a",))
        results = []

        def worker():
            for _ in range(50):
                results.append(backend.score_continuations(req)["a"])

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == [-1.0] * 200
        assert backend.score_calls == 200


class TestScriptFile:
    def test_line_delimited_rules(self):
        lines = [
            json.dumps({"match": "a", "kind": "generate", "payload": {"text": "hi"}}),
            "",
            json.dumps({"match": "b", "kind": "score", "payload": {"x": -1}}),
        ]
        script = load_script(lines)
        assert len(script.rules) == 2

    def test_bad_line_reports_number(self):
        with pytest.raises(DataError, match="line 1"):
            load_script(["{broken"])

    def test_missing_field_rejected(self):
        with pytest.raises(DataError, match="kind"):
            load_script([json.dumps({"match": "a", "payload": {}})])


class TestSequenceLogprobNorm:
    def test_hand_arithmetic(self):
        g = Generation(text="Paris.", token_logprobs=(("Paris", -0.1), (".", -0.05)))
        assert sequence_logprob_norm(g) == pytest.approx(math.exp(-0.075), abs=1e-4)
        assert sequence_logprob_norm(g) == pytest.approx(0.9277, abs=1e-4)

    def test_certainty(self):
        g = Generation(text="ab", token_logprobs=(("a", 0.0), ("b", 0.0)))
        assert sequence_logprob_norm(g) == 1.0

    def test_neg_inf_token_gives_zero(self):
        g = Generation(text="a", token_logprobs=(("a", NEG_INF),))
        assert sequence_logprob_norm(g) == 0.0

    def test_zero_tokens_is_error(self):
        g = Generation(text="", token_logprobs=())
        with pytest.raises(DataError):
            sequence_logprob_norm(g)

    @given(st.lists(st.floats(min_value=-5, max_value=0), min_size=1, max_size=6))
    def test_invariant_under_mean_preserving_resegmentation(self, lps):
        text = "x" * len(lps)
        g1 = Generation(text=text, token_logprobs=tuple(("x", lp) for lp in lps))
        mean = sum(lps) / len(lps)
        g2 = Generation(text=text, token_logprobs=((text, mean),))
        assert sequence_logprob_norm(g1) == pytest.approx(sequence_logprob_norm(g2), abs=1e-12)
