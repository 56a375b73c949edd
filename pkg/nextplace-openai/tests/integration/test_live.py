# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import csv
import os

import pytest
from nextplace_core.config import ExperimentConfig
from nextplace_core.runner import evaluate, run_experiment
from nextplace_openai import register

pytestmark = [
    pytest.mark.integration,
    pytest.mark.live,
    pytest.mark.skipif(not os.environ.get("OPENAI_API_KEY"), reason="OPENAI_API_KEY not set"),
]

# cafe, work, gym, home
ROUTINE = [(7, 30, 30, 3), (8, 0, 540, 0), (17, 45, 60, 2), (19, 0, 720, 1)]


def _routine_stays(path, users=5, days=5):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["user_id", "start_ts", "duration_min", "place_id"])
        for u in range(users):
            for day in range(days):
                for hour, minute, duration, place in ROUTINE:
                    ts = 1704067200 + day * 86400 + hour * 3600 + minute * 60
                    writer.writerow([f"user{u}", ts, duration, place + 10 * u])
    return path


def test_live_smoke(tmp_path):
    """Twenty samples against the configured endpoint parse at least 90% of the time."""
    register()
    cfg = ExperimentConfig(
        stays_path=_routine_stays(tmp_path / "stays.csv"),
        output_dir=tmp_path / "out",
        predictor="llm",
        backend={
            "endpoint_url": os.environ.get("NEXTPLACE_ENDPOINT_URL", "https://api.openai.com/v1"),
            "model_id": os.environ.get("NEXTPLACE_MODEL_ID", "gpt-3.5-turbo"),
            "max_in_flight": 2,
        },
    )

    report = evaluate(run_experiment(cfg))

    assert report.n_samples == 20
    assert report.parse_failure_rate <= 0.1
