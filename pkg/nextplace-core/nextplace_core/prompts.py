# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import ast
import re
import string
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict

from .config import PromptConfig
from .models import DayOfWeek, PredictionSample, PromptText, Stay, TargetSlot, parse_clock
from .utils.exceptions import ErrorCode, NextPlaceException
from .utils.loggings import get_logger

logger = get_logger(__name__)

_BLOCK_MARKER = re.compile(r"^---\s+(\w+)\s*$")
_HISTORY_LINE = re.compile(r"<history>:[ \t]*(\[[^\n]*\])")
_CONTEXT_LINE = re.compile(r"<context>:[ \t]*(\[[^\n]*\])")
_TARGET_LINE = re.compile(r"<target_stay>:[ \t]*\((\d{1,2}:\d{2}),[ \t]*([A-Za-z]+)\)")

# Block name -> whether a config emits it
BLOCK_RULES: Dict[str, Callable[[PromptConfig], bool]] = {
    "task": lambda cfg: True,
    "describe_stay": lambda cfg: True,
    "describe_history": lambda cfg: cfg.include_history,
    "describe_context": lambda cfg: cfg.include_context,
    "describe_target": lambda cfg: cfg.time_aware,
    "history": lambda cfg: cfg.include_history,
    "context": lambda cfg: cfg.include_context,
    "target": lambda cfg: cfg.time_aware,
    "guidance": lambda cfg: cfg.include_guidance,
    "guidance_history": lambda cfg: cfg.include_guidance and cfg.include_history,
    "guidance_context": lambda cfg: cfg.include_guidance and cfg.include_context,
    "guidance_time": lambda cfg: cfg.include_guidance and cfg.time_aware,
    "output_count": lambda cfg: True,
    "reason": lambda cfg: cfg.ask_reason,
    "output_format": lambda cfg: True,
}

_ALWAYS_REQUIRED = ("task", "output_count", "output_format")

ABLATION_VARIANTS: Tuple[str, ...] = ("Full", "NoHistory", "NoContext", "NoTime", "NoGuide", "NoReason")

_ABLATION_FLAGS: Dict[str, Optional[str]] = {
    "Full": None,
    "NoHistory": "include_history",
    "NoContext": "include_context",
    "NoTime": "time_aware",
    "NoGuide": "include_guidance",
    "NoReason": "ask_reason",
}


class PromptTemplate(BaseModel):
    """A parsed template: named blocks in file order."""

    model_config = ConfigDict(frozen=True)

    template_id: str
    blocks: Tuple[Tuple[str, str], ...]

    @property
    def block_names(self) -> List[str]:
        return [name for name, _ in self.blocks]


class ExtractedPrompt(BaseModel):
    """Data recovered from a rendered prompt; ``None`` where the block is absent."""

    model_config = ConfigDict(frozen=True)

    history: Optional[Tuple[Stay, ...]] = None
    context: Optional[Tuple[Stay, ...]] = None
    target: Optional[TargetSlot] = None


# ==================== Templates ====================


def parse_template(template_id: str, text: str) -> PromptTemplate:
    """Split template text into ``--- <block>`` sections. Lines before the first marker are comments."""
    blocks: List[Tuple[str, List[str]]] = []
    for line in text.splitlines():
        marker = _BLOCK_MARKER.match(line)
        if marker:
            name = marker.group(1)
            if name not in BLOCK_RULES:
                raise NextPlaceException(
                    ErrorCode.TEMPLATE_MISSING,
                    message_args={"template_id": template_id, "error_message": f"unknown block '{name}'"},
                )
            blocks.append((name, []))
        elif blocks:
            blocks[-1][1].append(line)
    return PromptTemplate(
        template_id=template_id,
        blocks=tuple((name, "\n".join(lines).strip("\n")) for name, lines in blocks),
    )


@lru_cache(maxsize=32)
def load_template(template_id: str, template_dir: Optional[Path] = None) -> PromptTemplate:
    """Load ``<template_dir>/<template_id>.txt``, or the shipped template of that name."""
    try:
        if template_dir is not None:
            text = (Path(template_dir) / f"{template_id}.txt").read_text(encoding="utf-8")
        else:
            text = resources.files("nextplace_core").joinpath("templates", f"{template_id}.txt").read_text(
                encoding="utf-8"
            )
    except (OSError, FileNotFoundError) as e:
        raise NextPlaceException(
            ErrorCode.TEMPLATE_MISSING, message_args={"template_id": template_id, "error_message": str(e)}
        ) from e
    return parse_template(template_id, text)


# ==================== Rendering ====================


def format_stays(stays: Sequence[Stay]) -> str:
    """Serialize stays as a list of ``("HH:MM", "Day", duration, place_id)`` tuples."""
    items = []
    for stay in stays:
        clock, day, duration, place = stay.as_tuple()
        items.append(f'("{clock}", "{day}", {duration}, {place})')
    return "[" + ", ".join(items) + "]"


def _prediction_shape(k: int) -> str:
    return "<one place id as an integer>" if k == 1 else f"[<{k} place ids as integers>]"


def _placeholders(body: str) -> List[str]:
    return [field for _, field, _, _ in string.Formatter().parse(body) if field]


def render_prompt(sample: PredictionSample, cfg: Union[PromptConfig, dict]) -> PromptText:
    """Render a sample into the prompt text selected by ``cfg``.

    Raises:
        NextPlaceException: TEMPLATE_MISSING when the template (or a block the
            config needs) cannot be found; PLACEHOLDER_UNFILLED when an emitted
            block references data the config excludes
    """
    if isinstance(cfg, dict):
        cfg = PromptConfig(**cfg)
    elif not isinstance(cfg, PromptConfig):
        raise TypeError(f"cfg must be PromptConfig or dict, got {type(cfg)}")

    template = load_template(cfg.template_id, cfg.template_dir)
    emitted = [(name, body) for name, body in template.blocks if BLOCK_RULES[name](cfg)]

    required = list(_ALWAYS_REQUIRED)
    required += ["history"] if cfg.include_history else []
    required += ["context"] if cfg.include_context else []
    required += ["target"] if cfg.time_aware else []
    present = {name for name, _ in emitted}
    for name in required:
        if name not in present:
            raise NextPlaceException(
                ErrorCode.TEMPLATE_MISSING,
                message_args={"template_id": cfg.template_id, "error_message": f"no '{name}' block"},
            )

    values: Dict[str, object] = {"k": cfg.k, "prediction_shape": _prediction_shape(cfg.k)}
    if cfg.include_history:
        values["history"] = format_stays(sample.history)
    if cfg.include_context:
        values["context"] = format_stays(sample.context)
    if cfg.time_aware:
        values["target_time"] = sample.target.label

    parts = []
    for name, body in emitted:
        for placeholder in _placeholders(body):
            if placeholder not in values:
                raise NextPlaceException(
                    ErrorCode.PLACEHOLDER_UNFILLED,
                    message_args={"block": name, "template_id": cfg.template_id, "placeholder": placeholder},
                )
        parts.append(body.format(**values))
    return PromptText.build("\n".join(parts), cfg.template_id, cfg.k)


def ablation_variants(base: Union[PromptConfig, dict]) -> Dict[str, PromptConfig]:
    """Full plus the five single-flag ablations, in a fixed order."""
    if isinstance(base, dict):
        base = PromptConfig(**base)
    flags = [flag for flag in _ABLATION_FLAGS.values() if flag]
    disabled = [flag for flag in flags if not getattr(base, flag)]
    if disabled:
        raise NextPlaceException(
            ErrorCode.COMMON_CONFIG_ERROR,
            message_args={"config_error": f"ablation base must be the full configuration; disabled: {disabled}"},
        )
    return {
        name: base if flag is None else base.model_copy(update={flag: False}) for name, flag in _ABLATION_FLAGS.items()
    }


# ==================== Reference extraction ====================


def _parse_stay_list(raw: str, label: str) -> Tuple[Stay, ...]:
    try:
        items = ast.literal_eval(raw)
        return tuple(
            Stay(
                start_time=parse_clock(clock),
                day_of_week=DayOfWeek.from_label(day),
                duration=int(duration),
                place_id=int(place),
            )
            for clock, day, duration, place in items
        )
    except (ValueError, SyntaxError, TypeError) as e:
        raise NextPlaceException(
            ErrorCode.EXTRACTION_FAILED, message_args={"error_message": f"bad {label} block: {e}"}
        ) from e


def extract_prompt_data(text: str) -> ExtractedPrompt:
    """Recover history, context and target slot from a rendered prompt."""
    history_match = _HISTORY_LINE.search(text)
    context_match = _CONTEXT_LINE.search(text)
    if history_match is None and context_match is None:
        raise NextPlaceException(
            ErrorCode.EXTRACTION_FAILED, message_args={"error_message": "neither <history> nor <context> found"}
        )

    target = None
    target_match = _TARGET_LINE.search(text)
    if target_match:
        try:
            target = TargetSlot(
                start_time=parse_clock(target_match.group(1)),
                day_of_week=DayOfWeek.from_label(target_match.group(2)),
            )
        except ValueError as e:
            raise NextPlaceException(
                ErrorCode.EXTRACTION_FAILED, message_args={"error_message": f"bad target line: {e}"}
            ) from e

    return ExtractedPrompt(
        history=_parse_stay_list(history_match.group(1), "history") if history_match else None,
        context=_parse_stay_list(context_match.group(1), "context") if context_match else None,
        target=target,
    )
