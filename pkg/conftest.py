"""Workspace-level pytest wiring.

Each workspace member keeps its own top-level ``tests`` package. When the whole
workspace is collected in one run, drop the previous member's ``tests`` modules
from ``sys.modules`` before collecting the next member's tests so each resolves its own.
"""

import sys
from pathlib import Path

_ROOT = Path(__file__).parent


def pytest_ignore_collect(collection_path, config):
    path = Path(collection_path)
    if path.name == "tests" and path.parent.parent == _ROOT and path.is_dir():
        tests_pkg = sys.modules.get("tests")
        if tests_pkg is not None and not Path(tests_pkg.__file__).is_relative_to(path):
            for name in [m for m in sys.modules if m == "tests" or m.startswith("tests.")]:
                del sys.modules[name]
    return None
