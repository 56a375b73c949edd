# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from collections import Counter
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from pydantic import BaseModel, Field

from .config import IngestConfig, WindowConfig
from .ingest import split_train_test
from .models import PredictionSample, Stay, TargetSlot, UserSequence
from .utils.exceptions import ErrorCode, NextPlaceException
from .utils.loggings import get_logger

logger = get_logger(__name__)

SAMPLE_INDEX_WIDTH = 6


def make_sample_id(user_id: str, target_index: int) -> str:
    return f"{user_id}#{target_index:0{SAMPLE_INDEX_WIDTH}d}"


class SampleBuildStats(BaseModel):
    """Bookkeeping for one call of :func:`build_test_samples`."""

    users_kept: int = 0
    users_dropped: int = 0
    samples: int = 0
    skipped_empty_context: int = 0
    history_sizes: Dict[int, int] = Field(default_factory=dict)
    context_sizes: Dict[int, int] = Field(default_factory=dict)


def build_samples(
    seq: UserSequence, cfg: Union[WindowConfig, dict], test_indices: Iterable[int]
) -> List[PredictionSample]:
    """Cut history/context windows in front of each target position.

    For target ``t``: ``context = stays[max(0, t-N):t]`` and
    ``history = stays[max(0, t-N-M):max(0, t-N)]``. Targets at position 0 have
    no context and are skipped with a warning.
    """
    if isinstance(cfg, dict):
        cfg = WindowConfig(**cfg)

    samples = []
    for t in sorted(set(test_indices)):
        if t <= 0 or t >= len(seq.stays):
            if t == 0:
                error = NextPlaceException(ErrorCode.EMPTY_CONTEXT, message_args={"index": t, "user_id": seq.user_id})
                logger.warning(f"Skipping sample: {error.message}")
            else:
                logger.warning(f"Skipping out-of-range target {t} of user {seq.user_id}")
            continue
        context_start = max(0, t - cfg.context_len)
        history_start = max(0, t - cfg.context_len - cfg.history_len)
        target_stay = seq.stays[t]
        samples.append(
            PredictionSample(
                sample_id=make_sample_id(seq.user_id, t),
                user_id=seq.user_id,
                target_index=t,
                history=seq.stays[history_start:context_start],
                context=seq.stays[context_start:t],
                target=TargetSlot(start_time=target_stay.start_time, day_of_week=target_stay.day_of_week),
                ground_truth=target_stay.place_id,
            )
        )
    return samples


def build_test_samples(
    sequences: Sequence[UserSequence],
    window: Union[WindowConfig, dict],
    ingest: Union[IngestConfig, dict],
) -> Tuple[List[PredictionSample], Dict[str, Tuple[Stay, ...]], SampleBuildStats]:
    """Split every user chronologically and build samples for the test targets.

    Returns:
        (samples ordered by sample_id, training prefix per kept user, build statistics)
    """
    if isinstance(window, dict):
        window = WindowConfig(**window)
    if isinstance(ingest, dict):
        ingest = IngestConfig(**ingest)

    stats = SampleBuildStats()
    history_sizes: Counter = Counter()
    context_sizes: Counter = Counter()
    samples: List[PredictionSample] = []
    train: Dict[str, Tuple[Stay, ...]] = {}

    for seq in sequences:
        try:
            split = split_train_test(seq, ingest.test_fraction, ingest.min_stays_per_user)
        except NextPlaceException as e:
            if e.code is not ErrorCode.TOO_FEW_STAYS:
                raise
            stats.users_dropped += 1
            logger.warning(f"Dropping user: {e.message}")
            continue
        stats.users_kept += 1
        train[seq.user_id] = split.train
        user_samples = build_samples(seq, window, split.test_indices)
        stats.skipped_empty_context += len(split.test_indices) - len(user_samples)
        for sample in user_samples:
            history_sizes[len(sample.history)] += 1
            context_sizes[len(sample.context)] += 1
        samples.extend(user_samples)

    samples.sort(key=lambda s: s.sample_id)
    stats.samples = len(samples)
    stats.history_sizes = dict(sorted(history_sizes.items()))
    stats.context_sizes = dict(sorted(context_sizes.items()))
    logger.info(
        f"Built {stats.samples} samples from {stats.users_kept} users "
        f"({stats.users_dropped} dropped, {stats.skipped_empty_context} skipped)"
    )
    return samples, train, stats
