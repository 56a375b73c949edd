# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from enum import Enum
from typing import Any, Dict, Optional


class ErrorCode(Enum):
    """Error codes with their message templates.

    Each member's value is ``(code, template)``. Templates are formatted with the
    ``message_args`` passed to :class:`NextPlaceException`.
    """

    # ==================== Common ====================
    COMMON_CONFIG_ERROR = ("100001", "Configuration error: {config_error}")
    COMMON_FIELD_INVALID = ("100002", "Invalid field: {field_error}")

    # ==================== Samples / Ingest ====================
    EMPTY_CONTEXT = ("200001", "Target index {index} of user {user_id} has no preceding stay")
    MALFORMED_ROW = ("200002", "Malformed row {row_index}: {error_message}")
    EMPTY_DATASET = ("200003", "No usable records in {path}")
    TOO_FEW_STAYS = ("200004", "User {user_id} has {count} stays, fewer than {minimum}")

    # ==================== Prompts ====================
    TEMPLATE_MISSING = ("300001", "Template '{template_id}' not found: {error_message}")
    PLACEHOLDER_UNFILLED = ("300002", "Block '{block}' of template '{template_id}' references '{placeholder}'")
    EXTRACTION_FAILED = ("300003", "Prompt does not round-trip: {error_message}")

    # ==================== Backends ====================
    BACKEND_NOT_FOUND = ("400001", "No completion backend registered under '{name}'")
    BACKEND_AUTH_FAILED = ("400002", "Authentication failed: {error_message}")
    BACKEND_RATE_LIMITED = ("400003", "Rate limited after {attempts} attempts: {error_message}")
    BACKEND_TRANSPORT_ERROR = ("400004", "Transport error: {error_message}")
    BACKEND_CONTENT_REFUSAL = ("400005", "Empty or refused completion: {error_message}")

    # ==================== Parsing ====================
    PARSE_NO_OBJECT = ("500001", "No JSON object with a 'prediction' key found")
    PARSE_SCHEMA_MISMATCH = ("500002", "Prediction is not an integer or integer array: {error_message}")
    PARSE_EMPTY_PREDICTION = ("500003", "Prediction contains no places")

    # ==================== Baselines / Metrics / Runner ====================
    EMPTY_TRAINING = ("600001", "No training stays for user {user_id}")
    EMPTY_SAMPLE_SET = ("600002", "Cannot compute {metric} over an empty sample set")
    CORRUPT_RECORD = ("600003", "Corrupt record at line {line_number}: {error_message}")

    @property
    def code(self) -> str:
        return self.value[0]

    @property
    def template(self) -> str:
        return self.value[1]


class NextPlaceException(Exception):
    """Exception carrying an :class:`ErrorCode` and a rendered message."""

    def __init__(
        self,
        code: ErrorCode,
        message: Optional[str] = None,
        message_args: Optional[Dict[str, Any]] = None,
    ):
        self.code = code
        self.message_args = message_args or {}
        self.message = message or self._render(code, self.message_args)
        super().__init__(f"[{code.code}] {self.message}")

    @staticmethod
    def _render(code: ErrorCode, message_args: Dict[str, Any]) -> str:
        try:
            return code.template.format(**message_args)
        except (KeyError, IndexError):
            # unformatted template on missing args
            return code.template

    @property
    def name(self) -> str:
        """Short error name, e.g. ``PARSE_NO_OBJECT``."""
        return self.code.name
