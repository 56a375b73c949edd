# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import hashlib
from datetime import datetime, timedelta, timezone
from enum import IntEnum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

MINUTES_PER_DAY = 1440


class DayOfWeek(IntEnum):
    """Day of week, numbered like ``datetime.weekday()``."""

    MONDAY = 0
    TUESDAY = 1
    WEDNESDAY = 2
    THURSDAY = 3
    FRIDAY = 4
    SATURDAY = 5
    SUNDAY = 6

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "DayOfWeek":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown day of week '{label}'") from None


def format_clock(minutes: int) -> str:
    """Render minutes-since-midnight as ``HH:MM``."""
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def parse_clock(text: str) -> int:
    """Parse ``HH:MM`` into minutes-since-midnight."""
    hours, _, mins = text.strip().partition(":")
    value = int(hours) * 60 + int(mins)
    if not 0 <= value < MINUTES_PER_DAY or not 0 <= int(mins) < 60:
        raise ValueError(f"Clock time out of range: '{text}'")
    return value


def slot_from_timestamp(timestamp: float, utc_offset_hours: float = 0.0) -> Tuple[int, "DayOfWeek"]:
    """Derive (start_time, day_of_week) of an epoch timestamp in a fixed UTC offset."""
    local = datetime.fromtimestamp(timestamp, tz=timezone(timedelta(hours=utc_offset_hours)))
    return local.hour * 60 + local.minute, DayOfWeek(local.weekday())


# ==================== Stays and Sequences ====================


class Stay(BaseModel):
    """One stationary episode: (start time, day of week, duration, place id)."""

    model_config = ConfigDict(frozen=True)

    start_time: int = Field(..., ge=0, le=MINUTES_PER_DAY - 1, description="Minutes since midnight")
    day_of_week: DayOfWeek = Field(..., description="Day of week of the stay start")
    duration: int = Field(..., ge=0, description="Duration in whole minutes")
    place_id: int = Field(..., ge=0, description="Dataset-global place identifier")

    def as_tuple(self) -> Tuple[str, str, int, int]:
        """Prompt serialization form, e.g. ``("17:30", "Tuesday", 35, 1)``."""
        return format_clock(self.start_time), self.day_of_week.label, self.duration, self.place_id


class UserSequence(BaseModel):
    """Time-ordered stays of a single user."""

    model_config = ConfigDict(frozen=True)

    user_id: str = Field(..., description="Opaque user identifier")
    stays: Tuple[Stay, ...] = Field(default=(), description="Stays in time order")
    absolute_times: Tuple[int, ...] = Field(default=(), description="Epoch seconds of each stay start")
    utc_offset_hours: float = Field(default=0.0, description="Offset used to derive local time fields")

    @model_validator(mode="after")
    def validate_ordering(self):
        if len(self.stays) != len(self.absolute_times):
            raise ValueError("stays and absolute_times must have equal length")
        for previous, current in zip(self.absolute_times, self.absolute_times[1:]):
            if current < previous:
                raise ValueError(f"Stays of user {self.user_id} are not time-ordered")
        for stay, ts in zip(self.stays, self.absolute_times):
            if slot_from_timestamp(ts, self.utc_offset_hours) != (stay.start_time, stay.day_of_week):
                raise ValueError(f"Stay at {ts} of user {self.user_id} disagrees with its timestamp")
        return self

    def __len__(self) -> int:
        return len(self.stays)


class TargetSlot(BaseModel):
    """When the predicted stay begins."""

    model_config = ConfigDict(frozen=True)

    start_time: int = Field(..., ge=0, le=MINUTES_PER_DAY - 1)
    day_of_week: DayOfWeek

    @property
    def label(self) -> str:
        return f"({format_clock(self.start_time)}, {self.day_of_week.label})"


class PredictionSample(BaseModel):
    """One test instance: history window, context window, target slot and answer."""

    model_config = ConfigDict(frozen=True)

    sample_id: str
    user_id: str
    target_index: int = Field(..., ge=1)
    history: Tuple[Stay, ...] = ()
    context: Tuple[Stay, ...] = Field(..., min_length=1)
    target: TargetSlot
    ground_truth: int = Field(..., ge=0)

    @property
    def current_place(self) -> int:
        """Place of the most recent stay before the target."""
        return self.context[-1].place_id


class TrackPoint(BaseModel):
    """A raw GPS fix."""

    model_config = ConfigDict(frozen=True)

    user_id: str
    latitude: float = Field(..., ge=-90.0, le=90.0)
    longitude: float = Field(..., ge=-180.0, le=180.0)
    timestamp: float = Field(..., description="Epoch seconds")


# ==================== Prompts and Responses ====================


def prompt_digest(template_id: str, text: str, k: int) -> str:
    payload = "\x1f".join([template_id, text, str(k)])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class PromptText(BaseModel):
    """A rendered prompt and its stable hash."""

    model_config = ConfigDict(frozen=True)

    text: str
    template_id: str
    k: int = Field(..., ge=1)
    prompt_hash: str

    @classmethod
    def build(cls, text: str, template_id: str, k: int) -> "PromptText":
        return cls(text=text, template_id=template_id, k=k, prompt_hash=prompt_digest(template_id, text, k))


class RawResponse(BaseModel):
    """Assistant text returned by a completion backend."""

    model_config = ConfigDict(frozen=True)

    text: str
    model_id: str
    latency_ms: float = 0.0
    from_cache: bool = False
    attempt_count: int = Field(default=1, ge=0)
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None

    @model_validator(mode="after")
    def validate_attempts(self):
        if not self.from_cache and self.attempt_count < 1:
            raise ValueError("attempt_count must be at least 1 for a network response")
        return self


class ParseDiagnostics(BaseModel):
    """How a prediction was normalized."""

    model_config = ConfigDict(frozen=True)

    had_duplicates: bool = False
    was_truncated: bool = False
    repair_used: bool = False
    syntax_fixed: bool = False


class RankedPrediction(BaseModel):
    """Ordered candidate places plus the model's reason."""

    model_config = ConfigDict(frozen=True)

    places: Tuple[int, ...] = Field(..., min_length=1)
    reason: str = ""
    diagnostics: ParseDiagnostics = Field(default_factory=ParseDiagnostics)

    @model_validator(mode="after")
    def validate_unique(self):
        if len(set(self.places)) != len(self.places):
            raise ValueError("places must not contain duplicates")
        return self


# ==================== Scoring ====================


class ScoredSample(BaseModel):
    """A prediction aligned with its ground truth."""

    model_config = ConfigDict(frozen=True)

    sample_id: str
    places: Tuple[int, ...] = ()
    ground_truth: int
    hit_rank: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def validate_hit_rank(self):
        if self.hit_rank is None:
            return self
        if self.hit_rank > len(self.places) or self.places[self.hit_rank - 1] != self.ground_truth:
            raise ValueError("hit_rank does not point at the ground truth")
        return self

    @property
    def user_id(self) -> str:
        return self.sample_id.rsplit("#", 1)[0]


class MetricsReport(BaseModel):
    """Flat metric record; ``None`` marks a metric not computable for the run's k."""

    name: str = ""
    acc1: float
    acc5: Optional[float] = None
    acc10: Optional[float] = None
    weighted_f1: float
    ndcg10: Optional[float] = None
    parse_failure_rate: float = 0.0
    n_samples: int


class SampleRecord(BaseModel):
    """One line of a results file. Self-contained for re-aggregation."""

    model_config = ConfigDict(extra="ignore")

    sample_id: str
    predictor: str
    k: int = Field(..., ge=1)
    ground_truth: int
    places: List[int] = Field(default_factory=list)
    reason: str = ""
    prompt_hash: Optional[str] = None
    raw_text: Optional[str] = None
    hit_rank: Optional[int] = None
    error: Optional[str] = None
    latency_ms: float = 0.0
    attempts: int = 0
    from_cache: bool = False
    diagnostics: Dict[str, bool] = Field(default_factory=dict)

    @property
    def parse_failed(self) -> bool:
        return self.error is not None
