# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from collections import defaultdict
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import f1_score

from .models import MetricsReport, ScoredSample
from .utils.exceptions import ErrorCode, NextPlaceException

# Label standing in for "no prediction" in the rank-1 confusion matrix
NO_PREDICTION = -1


def score_sample(sample_id: str, places: Sequence[int], ground_truth: int) -> ScoredSample:
    """Align a ranking with its ground truth; hit_rank is 1-based or None."""
    places = tuple(places)
    try:
        hit_rank: Optional[int] = places.index(ground_truth) + 1
    except ValueError:
        hit_rank = None
    return ScoredSample(sample_id=sample_id, places=places, ground_truth=ground_truth, hit_rank=hit_rank)


def _require_samples(samples: Sequence[ScoredSample], metric: str) -> None:
    if not samples:
        raise NextPlaceException(ErrorCode.EMPTY_SAMPLE_SET, message_args={"metric": metric})


def _ranks(samples: Sequence[ScoredSample]) -> np.ndarray:
    """Hit ranks with misses encoded as +inf."""
    return np.array([s.hit_rank if s.hit_rank is not None else np.inf for s in samples], dtype=float)


def acc_at_k(samples: Sequence[ScoredSample], k: int) -> float:
    """Fraction of samples whose ground truth is within the top k. Failures count as misses."""
    _require_samples(samples, f"Acc@{k}")
    return float(np.mean(_ranks(samples) <= k))


def ndcg_at_k(samples: Sequence[ScoredSample], k: int) -> float:
    """Mean nDCG@k with a single relevant item, so IDCG = 1 and a hit at rank r scores 1/log2(r+1)."""
    _require_samples(samples, f"nDCG@{k}")
    ranks = _ranks(samples)
    gains = np.zeros_like(ranks)
    hit = ranks <= k
    gains[hit] = 1.0 / np.log2(ranks[hit] + 1.0)
    return float(gains.mean())


def weighted_f1(samples: Sequence[ScoredSample]) -> float:
    """Support-weighted F1 over ground-truth places, using rank-1 predictions only."""
    _require_samples(samples, "weighted F1")
    y_true = [s.ground_truth for s in samples]
    y_pred = [s.places[0] if s.places else NO_PREDICTION for s in samples]
    labels = sorted(set(y_true))
    return float(f1_score(y_true, y_pred, labels=labels, average="weighted", zero_division=0))


def build_report(
    samples: Sequence[ScoredSample], k: int, parse_failures: int = 0, name: str = ""
) -> MetricsReport:
    """Aggregate samples into a MetricsReport.

    Metrics that need more ranked places than the run asked for (Acc@5 when
    k < 5, Acc@10 and nDCG@10 when k < 10) are left as None.
    """
    _require_samples(samples, "report")
    return MetricsReport(
        name=name,
        acc1=acc_at_k(samples, 1),
        acc5=acc_at_k(samples, 5) if k >= 5 else None,
        acc10=acc_at_k(samples, 10) if k >= 10 else None,
        weighted_f1=weighted_f1(samples),
        ndcg10=ndcg_at_k(samples, 10) if k >= 10 else None,
        parse_failure_rate=parse_failures / len(samples),
        n_samples=len(samples),
    )


def reports_by_user(
    samples: Sequence[ScoredSample], k: int, failed_ids: Sequence[str] = ()
) -> Dict[str, MetricsReport]:
    """One report per user (sample ids are ``<user_id>#<index>``)."""
    failed = set(failed_ids)
    grouped: Dict[str, List[ScoredSample]] = defaultdict(list)
    for sample in samples:
        grouped[sample.user_id].append(sample)
    return {
        user_id: build_report(group, k, sum(s.sample_id in failed for s in group), name=user_id)
        for user_id, group in sorted(grouped.items())
    }
