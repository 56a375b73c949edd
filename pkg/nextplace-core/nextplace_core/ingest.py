# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import json
import math
from collections import defaultdict
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .config import IngestConfig
from .geo import haversine_m
from .models import Stay, TrackPoint, UserSequence, slot_from_timestamp
from .utils.exceptions import ErrorCode, NextPlaceException
from .utils.loggings import get_logger

logger = get_logger(__name__)

StayFormat = Literal["csv", "jsonl"]

STAY_COLUMNS = ("user_id", "start_ts", "duration_min", "place_id")
TRACK_COLUMNS = ("user_id", "lat", "lon", "ts")

# Points compared against an anchor per vectorised step
_RUN_CHUNK = 256


class LoadedStays(BaseModel):
    """Sequences read from a stay table, plus how many rows were rejected."""

    sequences: List[UserSequence]
    skipped_rows: int = 0


class LoadedTracks(BaseModel):
    points: List[TrackPoint]
    skipped_rows: int = 0


class DetectedStay(BaseModel):
    """A stay found in raw points, before a place id is assigned."""

    model_config = ConfigDict(frozen=True)

    latitude: float
    longitude: float
    start_ts: float
    duration_min: int


class TrainTestSplit(BaseModel):
    model_config = ConfigDict(frozen=True)

    train: Tuple[Stay, ...]
    test_indices: Tuple[int, ...]


class DatasetStatistics(BaseModel):
    """Per-dataset summary; means and population standard deviations across users."""

    users: int
    days_tracked_mean: float
    days_tracked_std: float
    stays_per_user_mean: float
    stays_per_user_std: float
    unique_places_mean: float
    unique_places_std: float
    test_samples: int

    def to_table(self) -> str:
        rows = [
            ("# Users", f"{self.users}"),
            ("# Days tracked", f"{self.days_tracked_mean:.0f} ± {self.days_tracked_std:.0f}"),
            ("# Stays per user", f"{self.stays_per_user_mean:.0f} ± {self.stays_per_user_std:.0f}"),
            ("# Unique places per user", f"{self.unique_places_mean:.0f} ± {self.unique_places_std:.0f}"),
            ("# Test samples", f"{self.test_samples}"),
        ]
        width = max(len(label) for label, _ in rows)
        return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows)


# ==================== Parsing helpers ====================


def _finite(value: float, text: Any) -> float:
    if not math.isfinite(value):
        raise ValueError(f"invalid timestamp '{text}'")
    return value


def _parse_timestamp(value: Any, utc_offset_hours: float) -> float:
    """Epoch seconds from an ISO-8601 string or a number; naive times are local to the offset."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return _finite(float(value), value)
    text = str(value).strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        return _finite(float(text), text)
    except ValueError:
        pass
    ts = pd.Timestamp(text)
    if ts is pd.NaT:
        raise ValueError(f"invalid timestamp '{text}'")
    if ts.tzinfo is None:
        ts = ts.tz_localize(timezone(timedelta(hours=utc_offset_hours)))
    return ts.timestamp()


def _parse_whole(value: Any, field: str) -> int:
    number = float(value)
    if not number.is_integer() or number < 0:
        raise ValueError(f"{field} must be a non-negative whole number, got '{value}'")
    return int(number)


def _detect_format(path: Path) -> StayFormat:
    return "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"


RawRow = Union[Dict[str, Any], str]


def _read_rows(path: Path, fmt: StayFormat, columns: Sequence[str]) -> Iterable[Tuple[Union[int, str], RawRow]]:
    """Yield (row reference, row dict) or (row reference, reason the row could not be decoded).

    CSV lines with more fields than the header have no row index and are
    referenced as ``-``.
    """
    if fmt == "csv":
        rejected: List[List[str]] = []
        # the callback returning None drops the line; short rows are padded with ""
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, engine="python", on_bad_lines=rejected.append
        ).fillna("")
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise NextPlaceException(
                ErrorCode.COMMON_CONFIG_ERROR,
                message_args={"config_error": f"{path} lacks columns {', '.join(missing)}"},
            )
        for row_index, row in enumerate(frame[list(columns)].to_dict(orient="records")):
            yield row_index, row
        for fields in rejected:
            yield "-", f"{len(fields)} fields, header has {len(frame.columns)}: {','.join(fields)[:120]}"
        return

    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for row_index, line in enumerate(f):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                yield row_index, "undecodable line"
                continue
            yield row_index, row if isinstance(row, dict) else "not a JSON object"


# ==================== Stay tables ====================


def load_stays(
    path: Union[str, Path], fmt: Optional[StayFormat] = None, utc_offset_hours: float = 0.0
) -> LoadedStays:
    """Load a stay table into one time-ordered UserSequence per user.

    Args:
        path: CSV with header ``user_id,start_ts,duration_min,place_id`` or JSONL with the same keys
        fmt: "csv" or "jsonl"; inferred from the suffix when omitted
        utc_offset_hours: Fixed offset used for naive timestamps and for local time fields

    Returns:
        LoadedStays with sequences sorted by user_id and the number of skipped rows
    """
    path = Path(path)
    fmt = fmt or _detect_format(path)
    per_user: Dict[str, List[Tuple[float, int, int, int]]] = defaultdict(list)
    skipped = 0

    for row_index, row in _read_rows(path, fmt, STAY_COLUMNS):
        try:
            if isinstance(row, str):
                raise ValueError(row)
            user_id = str(row["user_id"]).strip()
            if not user_id:
                raise ValueError("empty user_id")
            epoch = _parse_timestamp(row["start_ts"], utc_offset_hours)
            duration = _parse_whole(row["duration_min"], "duration_min")
            place_id = _parse_whole(row["place_id"], "place_id")
        except (KeyError, TypeError, ValueError) as e:
            skipped += 1
            error = NextPlaceException(
                ErrorCode.MALFORMED_ROW, message_args={"row_index": row_index, "error_message": str(e)}
            )
            logger.warning(f"Skipping row: {error.message}")
            continue
        per_user[user_id].append((epoch, row_index, duration, place_id))

    if not per_user:
        raise NextPlaceException(ErrorCode.EMPTY_DATASET, message_args={"path": str(path)})

    sequences = []
    for user_id in sorted(per_user):
        rows = sorted(per_user[user_id])
        stays, times = [], []
        for epoch, _, duration, place_id in rows:
            start = math.floor(epoch)
            start_time, day_of_week = slot_from_timestamp(start, utc_offset_hours)
            stays.append(Stay(start_time=start_time, day_of_week=day_of_week, duration=duration, place_id=place_id))
            times.append(start)
        sequences.append(
            UserSequence(
                user_id=user_id, stays=tuple(stays), absolute_times=tuple(times), utc_offset_hours=utc_offset_hours
            )
        )

    logger.info(f"Loaded {sum(len(s) for s in sequences)} stays of {len(sequences)} users from {path}")
    return LoadedStays(sequences=sequences, skipped_rows=skipped)


def write_stays_jsonl(sequences: Sequence[UserSequence], path: Union[str, Path]) -> Path:
    """Write sequences as a JSONL stay table, one stay object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for seq in sequences:
            tz = timezone(timedelta(hours=seq.utc_offset_hours))
            for stay, ts in zip(seq.stays, seq.absolute_times):
                record = {
                    "user_id": seq.user_id,
                    "start_ts": datetime.fromtimestamp(ts, tz=tz).isoformat(),
                    "duration_min": stay.duration,
                    "place_id": stay.place_id,
                }
                f.write(json.dumps(record) + "\n")
    return path


# ==================== Track points ====================


def load_track_points(path: Union[str, Path], utc_offset_hours: float = 0.0) -> LoadedTracks:
    """Load a track-point CSV with header ``user_id,lat,lon,ts``."""
    path = Path(path)
    points: List[TrackPoint] = []
    skipped = 0
    for row_index, row in _read_rows(path, "csv", TRACK_COLUMNS):
        try:
            if isinstance(row, str):
                raise ValueError(row)
            points.append(
                TrackPoint(
                    user_id=str(row["user_id"]).strip(),
                    latitude=float(row["lat"]),
                    longitude=float(row["lon"]),
                    timestamp=_parse_timestamp(row["ts"], utc_offset_hours),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            # pydantic's ValidationError is a ValueError
            skipped += 1
            logger.warning(f"Skipping track point row {row_index}: {e}")
    if not points:
        raise NextPlaceException(ErrorCode.EMPTY_DATASET, message_args={"path": str(path)})
    points.sort(key=lambda p: (p.user_id, p.timestamp))
    return LoadedTracks(points=points, skipped_rows=skipped)


def _run_end(lats: np.ndarray, lons: np.ndarray, anchor: int, radius_m: float) -> int:
    """Exclusive end of the run of points within radius_m of the anchor."""
    n = len(lats)
    start = anchor + 1
    while start < n:
        stop = min(start + _RUN_CHUNK, n)
        distances = haversine_m(lats[anchor], lons[anchor], lats[start:stop], lons[start:stop])
        outside = np.flatnonzero(distances > radius_m)
        if outside.size:
            return start + int(outside[0])
        start = stop
    return n


def detect_stays(points: Sequence[TrackPoint], cfg: Union[IngestConfig, dict]) -> List[DetectedStay]:
    """Anchor-based stay-point detection for one user's time-ordered points.

    A run is a maximal block of consecutive points that all lie within
    ``stay_radius_m`` of its first point. Runs spanning at least
    ``stay_min_duration_min`` become stays located at the run centroid; the
    scan resumes after the run. Otherwise the anchor advances by one point.
    """
    if isinstance(cfg, dict):
        cfg = IngestConfig(**cfg)
    if not points:
        return []

    lats = np.fromiter((p.latitude for p in points), dtype=float, count=len(points))
    lons = np.fromiter((p.longitude for p in points), dtype=float, count=len(points))
    times = np.fromiter((p.timestamp for p in points), dtype=float, count=len(points))
    min_span_s = cfg.stay_min_duration_min * 60.0

    stays: List[DetectedStay] = []
    i = 0
    while i < len(points):
        j = _run_end(lats, lons, i, cfg.stay_radius_m)
        span_s = times[j - 1] - times[i]
        if span_s >= min_span_s:
            stays.append(
                DetectedStay(
                    latitude=float(lats[i:j].mean()),
                    longitude=float(lons[i:j].mean()),
                    start_ts=float(times[i]),
                    duration_min=int(span_s // 60),
                )
            )
            i = j
        else:
            i += 1
    return stays


def assign_place_ids(centroids: Sequence[Tuple[float, float]], radius_m: float = 200.0) -> List[int]:
    """Greedy leader clustering of stay centroids.

    A centroid joins the first place (in creation order) whose representative
    lies within ``radius_m``; otherwise it founds a new place. Ids count up
    from 0 in first-seen order.
    """
    rep_lats = np.empty(len(centroids), dtype=float)
    rep_lons = np.empty(len(centroids), dtype=float)
    n_places = 0
    ids: List[int] = []
    for lat, lon in centroids:
        if n_places:
            distances = haversine_m(rep_lats[:n_places], rep_lons[:n_places], lat, lon)
            hits = np.flatnonzero(distances <= radius_m)
            if hits.size:
                ids.append(int(hits[0]))
                continue
        rep_lats[n_places], rep_lons[n_places] = lat, lon
        ids.append(n_places)
        n_places += 1
    return ids


def stays_from_tracks(points: Sequence[TrackPoint], cfg: Union[IngestConfig, dict]) -> List[UserSequence]:
    """Detect stays per user, then assign dataset-global place ids in one deterministic pass."""
    if isinstance(cfg, dict):
        cfg = IngestConfig(**cfg)

    by_user: Dict[str, List[TrackPoint]] = defaultdict(list)
    for point in points:
        by_user[point.user_id].append(point)

    detected: List[Tuple[str, DetectedStay]] = []
    for user_id in sorted(by_user):
        user_points = sorted(by_user[user_id], key=lambda p: p.timestamp)
        user_stays = detect_stays(user_points, cfg)
        logger.debug(f"User {user_id}: {len(user_points)} points -> {len(user_stays)} stays")
        detected.extend((user_id, stay) for stay in user_stays)

    place_ids = assign_place_ids([(s.latitude, s.longitude) for _, s in detected], cfg.place_cluster_radius_m)

    grouped: Dict[str, List[Tuple[int, int]]] = defaultdict(list)
    for (user_id, stay), place_id in zip(detected, place_ids):
        grouped[user_id].append((math.floor(stay.start_ts), stay.duration_min, place_id))

    sequences = []
    for user_id in sorted(grouped):
        stays, times = [], []
        for start, duration, place_id in grouped[user_id]:
            start_time, day_of_week = slot_from_timestamp(start, cfg.utc_offset_hours)
            stays.append(Stay(start_time=start_time, day_of_week=day_of_week, duration=duration, place_id=place_id))
            times.append(start)
        sequences.append(
            UserSequence(
                user_id=user_id, stays=tuple(stays), absolute_times=tuple(times), utc_offset_hours=cfg.utc_offset_hours
            )
        )
    logger.info(f"Detected {len(detected)} stays at {len(set(place_ids))} places for {len(sequences)} users")
    return sequences


# ==================== Splits and statistics ====================


def split_train_test(seq: UserSequence, test_fraction: float, min_stays_per_user: int = 10) -> TrainTestSplit:
    """Chronological split: the last ceil(test_fraction * n) positions are test targets.

    Raises:
        NextPlaceException: TOO_FEW_STAYS when the user is below ``min_stays_per_user``
    """
    n = len(seq.stays)
    if n < min_stays_per_user:
        raise NextPlaceException(
            ErrorCode.TOO_FEW_STAYS,
            message_args={"user_id": seq.user_id, "count": n, "minimum": min_stays_per_user},
        )
    # round() absorbs float noise such as 0.2 * 10 = 2.0000000000000004
    n_test = min(n, math.ceil(round(test_fraction * n, 9)))
    first = n - n_test
    return TrainTestSplit(train=seq.stays[:first], test_indices=tuple(range(first, n)))


def _days_tracked(seq: UserSequence) -> int:
    tz = timezone(timedelta(hours=seq.utc_offset_hours))
    first = datetime.fromtimestamp(seq.absolute_times[0], tz=tz).date()
    last_end = seq.absolute_times[-1] + seq.stays[-1].duration * 60
    last = datetime.fromtimestamp(last_end, tz=tz).date()
    return (last - first).days + 1


def dataset_statistics(sequences: Sequence[UserSequence], test_samples: int) -> DatasetStatistics:
    """Users, days tracked, stays and unique places per user (mean and std), test samples."""
    if not sequences:
        raise NextPlaceException(ErrorCode.EMPTY_DATASET, message_args={"path": "<in-memory sequences>"})
    frame = pd.DataFrame(
        {
            "days": [_days_tracked(seq) for seq in sequences],
            "stays": [len(seq.stays) for seq in sequences],
            "places": [len({stay.place_id for stay in seq.stays}) for seq in sequences],
        }
    )
    means = frame.mean()
    stds = frame.std(ddof=0)
    return DatasetStatistics(
        users=len(sequences),
        days_tracked_mean=float(means["days"]),
        days_tracked_std=float(stds["days"]),
        stays_per_user_mean=float(means["stays"]),
        stays_per_user_std=float(stds["stays"]),
        unique_places_mean=float(means["places"]),
        unique_places_std=float(stds["places"]),
        test_samples=test_samples,
    )
