# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import json
from pathlib import Path

import pytest
from nextplace_core.models import PromptText, RankedPrediction, RawResponse
from nextplace_core.parsing import dedupe_places, parse_prediction, repair_prompt, serialize_prediction
from nextplace_core.utils.exceptions import ErrorCode, NextPlaceException

CORPUS_DIR = Path(__file__).parent.parent / "fixtures" / "parser"
CORPUS = sorted(p.stem for p in CORPUS_DIR.glob("*.txt"))


def _raw(text: str) -> RawResponse:
    return RawResponse(text=text, model_id="test")


def test_corpus_is_present():
    assert len(CORPUS) >= 30


@pytest.mark.acceptance
@pytest.mark.parametrize("case", CORPUS)
def test_parser_corpus(case):
    """Each recorded response parses to its expected places and flags, or fails with its expected code."""
    text = (CORPUS_DIR / f"{case}.txt").read_text(encoding="utf-8")
    expected = json.loads((CORPUS_DIR / f"{case}.expected").read_text(encoding="utf-8"))

    if "error" in expected:
        with pytest.raises(NextPlaceException) as exc_info:
            parse_prediction(_raw(text), k=10)
        assert exc_info.value.name == expected["error"]
        return

    prediction = parse_prediction(_raw(text), k=10)

    assert list(prediction.places) == expected["places"]
    assert prediction.reason == expected["reason"]
    assert prediction.diagnostics.had_duplicates is expected["had_duplicates"]
    assert prediction.diagnostics.was_truncated is expected["was_truncated"]
    assert prediction.diagnostics.syntax_fixed is expected["syntax_fixed"]
    assert prediction.diagnostics.repair_used is False


@pytest.mark.acceptance
def test_duplicate_answer_keeps_first_occurrences():
    """The repeated 444 is dropped and nothing is invented to fill the gap."""
    text = '{"prediction": [445, 9, 444, 335, 448, 447, 446, 1, 444, 443], "reason": ""}'

    prediction = parse_prediction(_raw(text), k=10)

    assert prediction.places == (445, 9, 444, 335, 448, 447, 446, 1, 443)
    assert prediction.diagnostics.had_duplicates
    assert not prediction.diagnostics.was_truncated


@pytest.mark.parametrize("k", [1, 3, 5])
def test_truncates_to_k(k):
    prediction = parse_prediction(_raw('{"prediction": [9, 8, 7, 6, 5, 4]}'), k=k)

    assert prediction.places == (9, 8, 7, 6, 5, 4)[:k]
    assert prediction.diagnostics.was_truncated


def test_short_list_is_not_padded():
    prediction = parse_prediction(_raw('{"prediction": [3, 1]}'), k=5)

    assert prediction.places == (3, 1)
    assert not prediction.diagnostics.was_truncated


def test_never_returns_duplicates_or_more_than_k():
    """Structural invariants hold on every successfully parsed corpus entry."""
    for case in CORPUS:
        text = (CORPUS_DIR / f"{case}.txt").read_text(encoding="utf-8")
        for k in (1, 5, 10):
            try:
                prediction = parse_prediction(_raw(text), k=k)
            except NextPlaceException:
                continue
            assert 1 <= len(prediction.places) <= k
            assert len(set(prediction.places)) == len(prediction.places)


@pytest.mark.parametrize(
    "places, reason",
    [((4,), ""), ((1, 2, 3), "evening routine"), ((0, 12, 7, 3, 5), 'quoted "gym"')],
)
def test_serialize_is_a_fixed_point(places, reason):
    """Serializing then parsing gives back the same prediction."""
    prediction = RankedPrediction(places=places, reason=reason)

    parsed = parse_prediction(_raw(serialize_prediction(prediction, k=10)), k=10)

    assert parsed.places == prediction.places
    assert parsed.reason == prediction.reason


def test_single_place_is_bare_integer_only_for_k1():
    """k=1 answers with an integer; any other k keeps the array even for one place."""
    prediction = RankedPrediction(places=(4,))

    assert json.loads(serialize_prediction(prediction, k=1))["prediction"] == 4
    assert json.loads(serialize_prediction(prediction, k=10))["prediction"] == [4]


def test_dedupe_places():
    assert dedupe_places([3, 1, 3, 2, 1]) == ([3, 1, 2], True)
    assert dedupe_places([3, 1, 2]) == ([3, 1, 2], False)


def test_repair_prompt_quotes_previous_answer():
    original = PromptText.build("Predict the next place.", "main_v1", 5)

    repaired = repair_prompt(original, _raw("I am not sure, maybe place 3?"))

    assert repaired.text.startswith("Predict the next place.\n\n")
    assert "I am not sure, maybe place 3?" in repaired.text
    assert "an array of 5 integers" in repaired.text
    assert repaired.k == 5
    assert repaired.prompt_hash != original.prompt_hash


def test_repair_prompt_k1_asks_for_integer():
    original = PromptText.build("Predict.", "main_v1", 1)

    assert "(an integer," in repair_prompt(original, _raw("")).text


def test_repair_prompt_limits_quote():
    original = PromptText.build("Predict.", "main_v1", 10)

    repaired = repair_prompt(original, _raw("x" * 5000))

    assert "x" * 2000 + " ..." in repaired.text
    assert "x" * 2001 not in repaired.text


def test_no_object_error_code():
    with pytest.raises(NextPlaceException) as exc_info:
        parse_prediction(_raw("no json here"), k=10)
    assert exc_info.value.code == ErrorCode.PARSE_NO_OBJECT
