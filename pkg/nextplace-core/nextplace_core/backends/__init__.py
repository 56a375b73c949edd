# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from importlib.metadata import entry_points
from typing import Callable, Dict, List, Optional, Type, Union

from ..config import BackendConfig
from ..utils.exceptions import ErrorCode, NextPlaceException
from ..utils.loggings import get_logger
from .base import CompletionBackend, UsageCounters
from .cache import ResponseCache

logger = get_logger(__name__)

ENTRY_POINT_GROUP = "nextplace.backends"

BackendFactory = Callable[[BackendConfig], CompletionBackend]


class BackendRegistry:
    """Name -> completion backend. Plugins add themselves through ``register()`` entry points."""

    def __init__(self):
        self._backends: Dict[str, Type[CompletionBackend]] = {}
        self._factories: Dict[str, BackendFactory] = {}
        self._config_classes: Dict[str, Type[BackendConfig]] = {}
        self._discovered = False

    def register(
        self,
        name: str,
        backend_class: Type[CompletionBackend],
        factory: Optional[BackendFactory] = None,
        config_class: Optional[Type[BackendConfig]] = None,
    ) -> None:
        if name in self._backends and self._backends[name] is not backend_class:
            logger.warning(f"Replacing backend '{name}': {self._backends[name].__name__} -> {backend_class.__name__}")
        self._backends[name] = backend_class
        self._config_classes[name] = config_class or backend_class.config_class
        if factory is not None:
            self._factories[name] = factory
        else:
            self._factories.pop(name, None)

    def discover(self) -> None:
        """Load every ``nextplace.backends`` entry point once."""
        if self._discovered:
            return
        self._discovered = True
        from .mock import MockBackend

        self.register("mock", MockBackend)
        for entry_point in entry_points(group=ENTRY_POINT_GROUP):
            try:
                entry_point.load()()
            except Exception as e:
                logger.warning(f"Failed to load backend plugin '{entry_point.name}': {e}")

    def available(self) -> List[str]:
        self.discover()
        return sorted(self._backends)

    def create(self, name: str, config: Union[BackendConfig, dict, None] = None) -> CompletionBackend:
        self.discover()
        if name not in self._backends:
            raise NextPlaceException(ErrorCode.BACKEND_NOT_FOUND, message_args={"name": name})
        config_class = self._config_classes[name]
        if config is None:
            config = config_class()
        elif isinstance(config, dict):
            config = config_class(**config)
        elif not isinstance(config, config_class):
            config = config_class(**config.model_dump())
        factory = self._factories.get(name)
        return factory(config) if factory else self._backends[name](config)


backend_registry = BackendRegistry()


def get_backend(name: str, config: Union[BackendConfig, dict, None] = None) -> CompletionBackend:
    return backend_registry.create(name, config)


__all__ = [
    "BackendRegistry",
    "CompletionBackend",
    "ResponseCache",
    "UsageCounters",
    "backend_registry",
    "get_backend",
]
