# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from collections import Counter
from typing import Iterable, Optional

from ..models import PromptText, RankedPrediction, RawResponse, Stay, TargetSlot
from ..parsing import serialize_prediction
from ..prompts import extract_prompt_data
from ..utils.exceptions import ErrorCode, NextPlaceException
from .base import CompletionBackend

MOCK_MODEL_ID = "mock"
TIME_WINDOW_MIN = 120
SLOT_MULTIPLIER = 2


def _weight(stay: Stay, target: Optional[TargetSlot]) -> int:
    if target is None:
        return 1
    same_slot = stay.day_of_week == target.day_of_week and abs(stay.start_time - target.start_time) <= TIME_WINDOW_MIN
    return SLOT_MULTIPLIER if same_slot else 1


def score_places(stays: Iterable[Stay], target: Optional[TargetSlot]) -> Counter:
    scores: Counter = Counter()
    for stay in stays:
        scores[stay.place_id] += _weight(stay, target)
    return scores


def mock_complete(prompt: PromptText, k: int) -> RawResponse:
    """Deterministic offline answer computed from the data embedded in the prompt.

    Each stay in history and context adds 1 to its place's score, or 2 when it
    falls on the target's day within 120 minutes of the target time. The top k
    places by score (ties by ascending id) are returned.

    Raises:
        NextPlaceException: EXTRACTION_FAILED if the prompt does not round-trip
    """
    data = extract_prompt_data(prompt.text)
    stays = tuple(data.history or ()) + tuple(data.context or ())
    if not stays:
        raise NextPlaceException(ErrorCode.EXTRACTION_FAILED, message_args={"error_message": "prompt holds no stays"})
    scores = score_places(stays, data.target)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    places = tuple(place for place, _ in ranked)

    top_place, top_score = ranked[0]
    reason = f"Place {top_place} has the highest visit score ({top_score}) among {len(stays)} recent stays"
    if data.target is not None:
        reason += f", counting visits near {data.target.label} twice"
    text = serialize_prediction(RankedPrediction(places=places, reason=reason + "."), k)
    return RawResponse(text=text, model_id=MOCK_MODEL_ID, latency_ms=0.0, attempt_count=1)


class MockBackend(CompletionBackend):
    """Offline backend answering with :func:`mock_complete`."""

    @property
    def model_id(self) -> str:
        return MOCK_MODEL_ID

    def _send(self, prompt: PromptText) -> RawResponse:
        return mock_complete(prompt, prompt.k)


def register():
    """Register the mock backend with the backend registry."""
    from . import backend_registry

    backend_registry.register("mock", MockBackend)
