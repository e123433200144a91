import io
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from convrag.core import (
    Conversation,
    PipelineConfig,
    Role,
    ScoringWeights,
    Turn,
    read_conversations,
    validate_config,
    validate_conversation,
    write_conversations,
)
from convrag.errors import DataError
from fixtures import toy_corpus


def conv(*texts_by_role) -> Conversation:
    turns = tuple(Turn(role=Role(role), text=text) for role, text in texts_by_role)
    return Conversation(id="c1", turns=turns)


class TestValidateConversation:
    def test_well_formed_alternation(self):
        c = conv(("user", "q1"), ("assistant", "a1"), ("user", "q2"))
        assert validate_conversation(c).ok

    def test_must_start_with_user(self):
        c = conv(("assistant", "a1"))
        result = validate_conversation(c)
        assert not result.ok
        assert any("must start with user" in m for m in result.messages())

    def test_empty_turn_text(self):
        c = conv(("user", "   "))
        result = validate_conversation(c)
        assert any("empty turn text" in m for m in result.messages())

    def test_violations_carry_turn_index(self):
        c = conv(("user", "q"), ("user", "q2"))
        result = validate_conversation(c)
        assert any(v.where == "turn 1" for v in result.violations)

    def test_final_user_turn_only_checked_when_requested(self):
        c = conv(("user", "q"), ("assistant", "a"))
        assert validate_conversation(c).ok
        assert not validate_conversation(c, require_user_last=True).ok

    def test_attached_ids_checked_against_corpus(self):
        c = Conversation(
            id="c1",
            turns=(Turn(role=Role.USER, text="q", attached_passage_ids=("nope",)),),
        )
        assert validate_conversation(c).ok
        result = validate_conversation(c, corpus=toy_corpus())
        assert any("nope" in m for m in result.messages())


class TestValidateConfig:
    def test_default_ok(self):
        assert validate_config(PipelineConfig()).ok

    def test_valid_explicit(self):
        cfg = PipelineConfig(top_k=5, beam_size=2, weights=ScoringWeights(1, 1, 0.5))
        assert validate_config(cfg).ok

    def test_top_k_zero(self):
        result = validate_config(PipelineConfig(top_k=0))
        assert any("top_k" in m for m in result.messages())

    def test_nan_weight(self):
        result = validate_config(PipelineConfig(weights=ScoringWeights(math.nan, 1, 1)))
        assert any("weights finite" in m for m in result.messages())

    def test_config_roundtrip(self):
        cfg = PipelineConfig(top_k=3, beam_size=4, weights=ScoringWeights(0, 0, 0))
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


texts = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
    min_size=1,
).filter(lambda s: s.strip())


@st.composite
def conversations(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    turns = []
    for i in range(n):
        role = Role.USER if i % 2 == 0 else Role.ASSISTANT
        attached = tuple(draw(st.lists(st.sampled_from(["d1", "d2", "d3"]), max_size=2)))
        gold = draw(st.none() | st.lists(st.sampled_from(["g1", "g2"]), max_size=2).map(tuple))
        turns.append(
            Turn(role=role, text=draw(texts), attached_passage_ids=attached, gold_passage_ids=gold)
        )
    return Conversation(id=draw(st.uuids().map(str)), turns=tuple(turns))


@given(conversations())
def test_conversation_roundtrip(original):
    assert validate_conversation(original).ok
    buf = io.StringIO()
    write_conversations([original], buf)
    buf.seek(0)
    (restored,) = list(read_conversations(buf))
    assert restored == original


def test_read_conversations_rejects_bad_json():
    with pytest.raises(DataError, match="line 1"):
        list(read_conversations(io.StringIO("{nope\n")))


def test_turn_requires_known_role():
    with pytest.raises(DataError):
        Turn.from_dict({"role": "system", "text": "hi"})


def test_serialized_form_matches_wire_contract():
    c = Conversation(
        id="c9",
        turns=(
            Turn(role=Role.USER, text="q", attached_passage_ids=("d1",), gold_passage_ids=("g",)),
        ),
    )
    record = json.loads(json.dumps(c.to_dict()))
    assert record == {
        "id": "c9",
        "turns": [
            {
                "role": "user",
                "text": "q",
                "attached_passage_ids": ["d1"],
                "gold_passage_ids": ["g"],
            }
        ],
    }
