# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import json
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from .models import Stay
from .utils.exceptions import ErrorCode, NextPlaceException
from .utils.loggings import get_logger

logger = get_logger(__name__)


class TransitionModel(BaseModel):
    """First-order mobility Markov chain of one user.

    ``successors`` maps an origin place to its ranked successors with
    probabilities; ``visit_counts`` holds how often each place was visited in
    training and drives the frequency fallback.
    """

    model_config = ConfigDict(frozen=True)

    user_id: str = ""
    successors: Dict[int, Tuple[Tuple[int, float], ...]] = Field(default_factory=dict)
    visit_counts: Dict[int, int] = Field(default_factory=dict)

    def frequency_ranking(self) -> List[int]:
        """All visited places by count descending, then ascending id."""
        return [place for place, _ in sorted(self.visit_counts.items(), key=lambda item: (-item[1], item[0]))]


def fit_1mmc(train_stays: Sequence[Stay], user_id: str = "") -> TransitionModel:
    """Count transitions between consecutive stays and normalise per origin.

    Successors are ordered by probability descending, then by higher visit
    count, then by ascending place id.
    """
    if not train_stays:
        logger.warning(
            NextPlaceException(ErrorCode.EMPTY_TRAINING, message_args={"user_id": user_id or "<anonymous>"}).message
        )
        return TransitionModel(user_id=user_id)

    places = [stay.place_id for stay in train_stays]
    visit_counts = Counter(places)
    transitions: Dict[int, Counter] = defaultdict(Counter)
    for origin, destination in zip(places, places[1:]):
        transitions[origin][destination] += 1

    successors = {}
    for origin, counts in transitions.items():
        total = sum(counts.values())
        ranked = sorted(counts.items(), key=lambda item: (-item[1], -visit_counts[item[0]], item[0]))
        successors[origin] = tuple((place, count / total) for place, count in ranked)

    return TransitionModel(
        user_id=user_id, successors=dict(sorted(successors.items())), visit_counts=dict(visit_counts)
    )


def predict_1mmc(model: TransitionModel, current_place: int, k: int) -> List[int]:
    """Top-k successors of ``current_place``, padded from the frequency ranking without repeats."""
    ranking = [place for place, _ in model.successors.get(current_place, ())][:k]
    if len(ranking) < k:
        chosen = set(ranking)
        for place in model.frequency_ranking():
            if len(ranking) >= k:
                break
            if place not in chosen:
                ranking.append(place)
                chosen.add(place)
    return ranking


def predict_topfreq(model: TransitionModel, k: int) -> List[int]:
    """Top-k places by visit count, ties by ascending id."""
    return model.frequency_ranking()[:k]


def fit_population(train: Mapping[str, Sequence[Stay]]) -> Dict[str, TransitionModel]:
    """One model per user; users are never pooled."""
    return {user_id: fit_1mmc(stays, user_id=user_id) for user_id, stays in sorted(train.items())}


# ==================== Dump / Restore ====================


def dump_models(models: Mapping[str, TransitionModel], path: Union[str, Path]) -> Path:
    """Write one JSON object per user."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for user_id in sorted(models):
            model = models[user_id]
            record = {
                "user_id": user_id,
                "successors": {str(o): [[p, prob] for p, prob in ranked] for o, ranked in model.successors.items()},
                "visit_counts": {str(p): c for p, c in model.visit_counts.items()},
            }
            f.write(json.dumps(record) + "\n")
    return path


def load_models(path: Union[str, Path]) -> Dict[str, TransitionModel]:
    models = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            models[record["user_id"]] = TransitionModel(
                user_id=record["user_id"],
                successors={
                    int(o): tuple((int(p), float(prob)) for p, prob in ranked)
                    for o, ranked in record["successors"].items()
                },
                visit_counts={int(p): int(c) for p, c in record["visit_counts"].items()},
            )
    return models
