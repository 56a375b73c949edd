# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import ast
import json
import re
from typing import Any, Iterator, List, Optional, Tuple

from .models import ParseDiagnostics, PromptText, RankedPrediction, RawResponse
from .utils.exceptions import ErrorCode, NextPlaceException

_TRAILING_COMMA = re.compile(r",\s*([\]}])")
_CONTROL_CHARS = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f]")

REPAIR_QUOTE_LIMIT = 2000


def _balanced_objects(text: str) -> Iterator[Tuple[int, str]]:
    """Yield (start, substring) for each balanced top-level ``{...}`` span, left to right.

    Braces inside double-quoted strings are ignored. An unclosed object at the
    end of the text yields nothing.
    """
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"' and depth > 0:
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                yield start, text[start : i + 1]


def _decode(candidate: str) -> Tuple[Optional[Any], bool]:
    """Decode a candidate object; the flag reports whether lenient fixes were needed."""
    try:
        return json.loads(candidate), False
    except json.JSONDecodeError:
        pass
    cleaned = _TRAILING_COMMA.sub(r"\1", _CONTROL_CHARS.sub("", candidate))
    try:
        return json.loads(cleaned), True
    except json.JSONDecodeError:
        pass
    try:
        # single-quoted keys and strings
        return ast.literal_eval(cleaned), True
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return None, False


def _find_prediction_object(text: str) -> Tuple[dict, bool]:
    for _, candidate in _balanced_objects(text):
        decoded, fixed = _decode(candidate)
        if isinstance(decoded, dict) and "prediction" in decoded:
            return decoded, fixed
    raise NextPlaceException(ErrorCode.PARSE_NO_OBJECT)


def _is_place_id(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def _coerce_places(value: Any) -> List[int]:
    if _is_place_id(value):
        return [value]
    if isinstance(value, (list, tuple)) and all(_is_place_id(v) for v in value):
        return list(value)
    raise NextPlaceException(ErrorCode.PARSE_SCHEMA_MISMATCH, message_args={"error_message": repr(value)[:200]})


def dedupe_places(places: List[int]) -> Tuple[List[int], bool]:
    """Drop repeated ids, keeping first occurrences in order."""
    seen = set()
    unique = []
    for place in places:
        if place not in seen:
            seen.add(place)
            unique.append(place)
    return unique, len(unique) != len(places)


def parse_prediction(raw: RawResponse, k: int) -> RankedPrediction:
    """Turn model text into a validated RankedPrediction.

    Scans past any prose for the first balanced object carrying a ``prediction``
    key, accepts an integer or an integer array, removes duplicates (first
    occurrence wins) and truncates to ``k``. Short lists are kept as they are.

    Raises:
        NextPlaceException: PARSE_NO_OBJECT, PARSE_SCHEMA_MISMATCH or PARSE_EMPTY_PREDICTION
    """
    payload, syntax_fixed = _find_prediction_object(raw.text or "")
    places, had_duplicates = dedupe_places(_coerce_places(payload["prediction"]))
    if not places:
        raise NextPlaceException(ErrorCode.PARSE_EMPTY_PREDICTION)

    was_truncated = len(places) > k
    reason = payload.get("reason")
    return RankedPrediction(
        places=tuple(places[:k]),
        reason=reason if isinstance(reason, str) else "",
        diagnostics=ParseDiagnostics(
            had_duplicates=had_duplicates, was_truncated=was_truncated, syntax_fixed=syntax_fixed
        ),
    )


def serialize_prediction(prediction: RankedPrediction, k: int) -> str:
    """Canonical response text; the prediction is a bare integer only when ``k`` is 1."""
    places = prediction.places
    value: Any = places[0] if k == 1 and len(places) == 1 else list(places)
    return json.dumps({"prediction": value, "reason": prediction.reason}, ensure_ascii=False)


def repair_prompt(original: PromptText, raw: RawResponse) -> PromptText:
    """Append a corrective stanza quoting the unparseable answer and restating the schema."""
    quoted = (raw.text or "").strip()
    if len(quoted) > REPAIR_QUOTE_LIMIT:
        quoted = quoted[:REPAIR_QUOTE_LIMIT] + " ..."
    shape = "an integer" if original.k == 1 else f"an array of {original.k} integers"
    stanza = (
        "\n\nYour previous answer could not be read:\n"
        f'"""\n{quoted}\n"""\n'
        'Answer again with a single JSON object and nothing else. It must have the keys "prediction" '
        f'({shape}, place ids in descending order of probability) and "reason" (a string, may be empty).'
    )
    return PromptText.build(original.text + stanza, original.template_id, original.k)
