# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import hashlib
import os
import tempfile
from pathlib import Path
from typing import Optional, Union

from ..utils.loggings import get_logger

logger = get_logger(__name__)


class ResponseCache:
    """Content-addressed response store: one file per key, holding the raw response text."""

    def __init__(self, cache_dir: Union[str, Path]):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(model_id: str, temperature: float, prompt_hash: str) -> str:
        payload = "\x1f".join([model_id, repr(float(temperature)), prompt_hash])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def path_for(self, key: str) -> Path:
        return self.cache_dir / key

    def get(self, key: str) -> Optional[str]:
        path = self.path_for(key)
        try:
            return path.read_bytes().decode("utf-8")
        except FileNotFoundError:
            return None
        except (OSError, UnicodeDecodeError) as e:
            logger.warning(f"Ignoring unreadable cache entry {path.name}: {e}")
            return None

    def put(self, key: str, text: str) -> None:
        """Write via a temporary file and rename, so readers never see a partial entry."""
        fd, tmp_name = tempfile.mkstemp(dir=self.cache_dir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(text.encode("utf-8"))
            os.replace(tmp_name, self.path_for(key))
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def __contains__(self, key: str) -> bool:
        return self.path_for(key).exists()
