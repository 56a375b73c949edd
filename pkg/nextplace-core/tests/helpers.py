# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import csv
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from nextplace_core.geo import EARTH_RADIUS_M
from nextplace_core.models import (
    DayOfWeek,
    PredictionSample,
    Stay,
    TargetSlot,
    UserSequence,
    parse_clock,
    slot_from_timestamp,
)

# 2024-01-01T00:00:00Z, a Monday
MONDAY_EPOCH = 1704067200
DAY_S = 86400


def epoch(day: int, hour: int, minute: int = 0) -> int:
    """Seconds since the epoch for ``day`` days after MONDAY_EPOCH at hour:minute UTC."""
    return MONDAY_EPOCH + day * DAY_S + hour * 3600 + minute * 60


def make_stay(clock: str, day: str, duration: int, place_id: int) -> Stay:
    return Stay(
        start_time=parse_clock(clock), day_of_week=DayOfWeek.from_label(day), duration=duration, place_id=place_id
    )


def make_sequence(user_id: str, rows: Sequence[Tuple[int, int, int]], utc_offset_hours: float = 0.0) -> UserSequence:
    """Build a sequence from (epoch, duration, place_id) rows."""
    stays = []
    for ts, duration, place_id in rows:
        start_time, day_of_week = slot_from_timestamp(ts, utc_offset_hours)
        stays.append(Stay(start_time=start_time, day_of_week=day_of_week, duration=duration, place_id=place_id))
    return UserSequence(
        user_id=user_id,
        stays=tuple(stays),
        absolute_times=tuple(ts for ts, _, _ in rows),
        utc_offset_hours=utc_offset_hours,
    )


def numbered_sequence(user_id: str, n: int, start_day: int = 0) -> UserSequence:
    """n stays, four hours apart, with place_id equal to the position."""
    return make_sequence(user_id, [(epoch(start_day, 0) + i * 4 * 3600, 60, i) for i in range(n)])


def golden_sample() -> PredictionSample:
    return PredictionSample(
        sample_id="u1#000005",
        user_id="u1",
        target_index=5,
        history=(
            make_stay("08:05", "Monday", 540, 0),
            make_stay("17:30", "Tuesday", 35, 1),
            make_stay("18:20", "Tuesday", 780, 2),
        ),
        context=(
            make_stay("08:10", "Wednesday", 545, 0),
            make_stay("17:45", "Wednesday", 60, 3),
        ),
        target=TargetSlot(start_time=parse_clock("19:00"), day_of_week=DayOfWeek.WEDNESDAY),
        ground_truth=2,
    )


def synthetic_sequences(n_users: int, n_stays: int, n_places: int = 6, seed: int = 7) -> List[UserSequence]:
    """Routine-like random users: stays every 3-9 hours over a small set of places."""
    rng = np.random.default_rng(seed)
    sequences = []
    for u in range(n_users):
        gaps = rng.integers(3, 10, size=n_stays) * 3600
        times = epoch(0, 6) + np.cumsum(gaps)
        places = rng.integers(0, n_places, size=n_stays)
        durations = rng.integers(30, 600, size=n_stays)
        rows = [(int(t), int(d), int(p)) for t, d, p in zip(times, durations, places)]
        sequences.append(make_sequence(f"user{u:02d}", rows))
    return sequences


def write_stays_csv(path: Path, sequences: Sequence[UserSequence]) -> Path:
    """Stay table with epoch-second timestamps."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["user_id", "start_ts", "duration_min", "place_id"])
        for seq in sequences:
            for stay, ts in zip(seq.stays, seq.absolute_times):
                writer.writerow([seq.user_id, ts, stay.duration, stay.place_id])
    return path


def offset_point(lat: float, lon: float, north_m: float, east_m: float) -> Tuple[float, float]:
    """Shift a coordinate by a local flat-earth displacement."""
    dlat = np.degrees(north_m / EARTH_RADIUS_M)
    dlon = np.degrees(east_m / (EARTH_RADIUS_M * np.cos(np.radians(lat))))
    return float(lat + dlat), float(lon + dlon)
