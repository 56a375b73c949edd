# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import json
import os
import re
import tempfile
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError
from tqdm import tqdm

from .backends import CompletionBackend, get_backend
from .baselines import TransitionModel, fit_population, predict_1mmc, predict_topfreq
from .config import ExperimentConfig, PromptConfig
from .ingest import load_stays, load_track_points, stays_from_tracks
from .metrics import build_report, reports_by_user, score_sample
from .models import MetricsReport, PredictionSample, RawResponse, SampleRecord, ScoredSample, UserSequence
from .parsing import parse_prediction, repair_prompt
from .prompts import ablation_variants, render_prompt
from .samples import SampleBuildStats, build_test_samples
from .utils.exceptions import ErrorCode, NextPlaceException
from .utils.loggings import get_logger

logger = get_logger(__name__)

REPORT_COLUMNS = ("name", "acc1", "acc5", "acc10", "weighted_f1", "ndcg10", "parse_failure_rate")
METRIC_COLUMNS = REPORT_COLUMNS[1:]
MISSING_CELL = "-"
SUMMARY_FILE = "summary.json"
_REPEAT_SUFFIX = re.compile(r"_r\d+$")

# Errors that stop a run instead of being recorded against one sample
_FATAL_CODES = (ErrorCode.BACKEND_AUTH_FAILED, ErrorCode.COMMON_CONFIG_ERROR, ErrorCode.BACKEND_NOT_FOUND)


class RunSummary(BaseModel):
    """Counters of one run, logged and appended to ``summary.json``."""

    results_path: str
    predictor: str
    samples: int = 0
    new_records: int = 0
    skipped_existing: int = 0
    parse_failures: int = 0
    repair_calls: int = 0
    backend_requests: int = 0
    cache_hits: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    elapsed_s: float = 0.0


# ==================== Data preparation ====================


def load_sequences(cfg: ExperimentConfig) -> List[UserSequence]:
    """Stay table if configured, otherwise stays detected from track points."""
    offset = cfg.ingest.utc_offset_hours
    if cfg.stays_path is not None:
        return load_stays(cfg.stays_path, utc_offset_hours=offset).sequences
    tracks = load_track_points(cfg.tracks_path, utc_offset_hours=offset)
    return stays_from_tracks(tracks.points, cfg.ingest)


def prepare_samples(
    cfg: ExperimentConfig,
) -> Tuple[List[PredictionSample], Dict[str, Tuple], SampleBuildStats]:
    """Test samples, training prefixes and build statistics.

    With ``sample_limit`` a subset of that size is drawn with ``cfg.seed``, so
    reruns and ablation variants see the same samples. Order stays by sample_id.
    """
    samples, train, stats = build_test_samples(load_sequences(cfg), cfg.window, cfg.ingest)
    if cfg.sample_limit is not None and cfg.sample_limit < len(samples):
        rng = np.random.default_rng(cfg.seed)
        chosen = np.sort(rng.choice(len(samples), size=cfg.sample_limit, replace=False))
        samples = [samples[i] for i in chosen]
    return samples, train, stats


def effective_predictor(cfg: ExperimentConfig) -> str:
    """Predictor that actually answers; ``NO_NETWORK=1`` turns ``llm`` into ``mock``."""
    if cfg.predictor == "llm" and os.environ.get("NO_NETWORK") == "1":
        return "mock"
    return cfg.predictor


def results_filename(cfg: ExperimentConfig, repeat: Optional[int] = None) -> str:
    mode = "wt" if cfg.prompt.time_aware else "wot"
    suffix = f"_r{repeat}" if repeat is not None else ""
    return f"results_{effective_predictor(cfg)}_k{cfg.prompt.k}_{mode}{suffix}.jsonl"


# ==================== Predictors ====================


class SamplePredictor(ABC):
    """Turns one sample into one SampleRecord. Per-sample failures end up in ``record.error``."""

    name: str = ""

    @abstractmethod
    def predict(self, sample: PredictionSample) -> SampleRecord:
        raise NotImplementedError

    def close(self) -> None:
        pass


class BaselinePredictor(SamplePredictor):
    def __init__(self, kind: str, models: Mapping[str, TransitionModel], k: int):
        if kind not in ("1mmc", "topfreq"):
            raise ValueError(f"Unknown baseline '{kind}'")
        self.name = kind
        self.models = models
        self.k = k

    def predict(self, sample: PredictionSample) -> SampleRecord:
        started = time.perf_counter()
        model = self.models.get(sample.user_id) or TransitionModel(user_id=sample.user_id)
        if self.name == "1mmc":
            places = predict_1mmc(model, sample.current_place, self.k)
        else:
            places = predict_topfreq(model, self.k)
        error = None
        if not places:
            error = ErrorCode.EMPTY_TRAINING.name
        return SampleRecord(
            sample_id=sample.sample_id,
            predictor=self.name,
            k=self.k,
            ground_truth=sample.ground_truth,
            places=places,
            raw_text=f"<baseline:{self.name}>",
            error=error,
            latency_ms=(time.perf_counter() - started) * 1000.0,
        )


class PromptPredictor(SamplePredictor):
    """Render, complete, parse; one repair round when the first answer does not parse."""

    def __init__(self, name: str, backend: CompletionBackend, prompt_cfg: PromptConfig, use_cache: bool = True):
        self.name = name
        self.backend = backend
        self.prompt_cfg = prompt_cfg
        self.use_cache = use_cache
        self.repair_calls = 0
        self._lock = threading.Lock()

    def _complete(self, prompt) -> Tuple[Optional[RawResponse], Optional[NextPlaceException]]:
        try:
            return self.backend.complete(prompt, use_cache=self.use_cache), None
        except NextPlaceException as e:
            if e.code in _FATAL_CODES:
                raise
            logger.warning(f"Backend failure: {e}")
            return None, e

    def predict(self, sample: PredictionSample) -> SampleRecord:
        k = self.prompt_cfg.k
        record = SampleRecord(sample_id=sample.sample_id, predictor=self.name, k=k, ground_truth=sample.ground_truth)
        prompt = render_prompt(sample, self.prompt_cfg)
        record.prompt_hash = prompt.prompt_hash

        raw, error = self._complete(prompt)
        if raw is None:
            record.error = error.name
            return record
        record.raw_text = raw.text
        record.latency_ms = raw.latency_ms
        record.attempts = raw.attempt_count
        record.from_cache = raw.from_cache

        try:
            prediction = parse_prediction(raw, k)
        except NextPlaceException as first_error:
            logger.debug(f"Sample {sample.sample_id}: {first_error.name}, sending repair prompt")
            with self._lock:
                self.repair_calls += 1
            repaired, error = self._complete(repair_prompt(prompt, raw))
            if repaired is None:
                record.error = error.name
                return record
            record.raw_text = repaired.text
            record.latency_ms += repaired.latency_ms
            record.attempts += repaired.attempt_count
            try:
                prediction = parse_prediction(repaired, k)
            except NextPlaceException as second_error:
                record.error = second_error.name
                return record
            prediction = prediction.model_copy(
                update={"diagnostics": prediction.diagnostics.model_copy(update={"repair_used": True})}
            )

        record.places = list(prediction.places)
        record.reason = prediction.reason
        record.diagnostics = prediction.diagnostics.model_dump()
        return record

    def close(self) -> None:
        self.backend.close()


def _backend_name(cfg: ExperimentConfig) -> str:
    if effective_predictor(cfg) != "mock":
        return cfg.backend_name
    if cfg.predictor != "mock":
        logger.warning(f"NO_NETWORK=1: using the mock backend instead of '{cfg.backend_name}'")
    return "mock"


def make_predictor(
    cfg: ExperimentConfig,
    train: Mapping[str, Sequence],
    prompt_cfg: Optional[PromptConfig] = None,
    use_cache: bool = True,
    backend: Optional[CompletionBackend] = None,
) -> SamplePredictor:
    prompt_cfg = prompt_cfg or cfg.prompt
    if cfg.predictor in ("1mmc", "topfreq"):
        return BaselinePredictor(cfg.predictor, fit_population(train), prompt_cfg.k)
    backend = backend or get_backend(_backend_name(cfg), cfg.backend)
    return PromptPredictor(effective_predictor(cfg), backend, prompt_cfg, use_cache=use_cache)


# ==================== Results files ====================


def read_records(path: Union[str, Path], predictor: Optional[str] = None) -> Tuple[Dict[str, SampleRecord], int]:
    """Records keyed by sample_id (first occurrence wins) and the number of corrupt lines skipped.

    With ``predictor`` set, records written by any other predictor are ignored.
    """
    records: Dict[str, SampleRecord] = {}
    corrupt = 0
    foreign = 0
    path = Path(path)
    if not path.exists():
        return records, corrupt
    with open(path, "rb") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = SampleRecord.model_validate_json(line.decode("utf-8"))
            except (UnicodeDecodeError, ValidationError) as e:
                corrupt += 1
                error = NextPlaceException(
                    ErrorCode.CORRUPT_RECORD,
                    message_args={"line_number": line_number, "error_message": str(e).splitlines()[0]},
                )
                logger.warning(f"{path.name}: {error.message}")
                continue
            if predictor is not None and record.predictor != predictor:
                foreign += 1
                continue
            records.setdefault(record.sample_id, record)
    if foreign:
        logger.warning(f"{path.name}: ignoring {foreign} records not written by '{predictor}'")
    return records, corrupt


def _rewrite_sorted(path: Path, records: Mapping[str, SampleRecord]) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        for sample_id in sorted(records):
            f.write(records[sample_id].model_dump_json() + "\n")
    os.replace(tmp_name, path)


def _needs_newline(path: Path) -> bool:
    """True when the file ends in a partial line, e.g. after an interrupted write."""
    if not path.exists() or path.stat().st_size == 0:
        return False
    with open(path, "rb") as f:
        f.seek(-1, os.SEEK_END)
        return f.read(1) != b"\n"


def _append_summary(output_dir: Path, summary: RunSummary) -> None:
    with open(output_dir / SUMMARY_FILE, "a", encoding="utf-8") as f:
        f.write(summary.model_dump_json() + "\n")


def execute_samples(
    samples: Sequence[PredictionSample],
    predictor: SamplePredictor,
    results_path: Union[str, Path],
    max_workers: int = 1,
    show_progress: bool = False,
) -> RunSummary:
    """Predict every sample missing from ``results_path`` and append its record.

    Workers only compute records; this thread is the single writer. The file is
    compacted and ordered by sample_id when the loop finishes. Records left by
    another predictor do not count as done and are dropped by the compaction.
    """
    results_path = Path(results_path)
    results_path.parent.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    existing, _ = read_records(results_path, predictor=predictor.name)
    pending = [s for s in samples if s.sample_id not in existing]
    summary = RunSummary(
        results_path=str(results_path),
        predictor=predictor.name,
        samples=len(samples),
        skipped_existing=len(samples) - len(pending),
    )
    if existing:
        logger.info(f"Resuming {results_path.name}: {len(existing)} records present, {len(pending)} to go")

    progress = tqdm(total=len(pending), desc=predictor.name, disable=None if show_progress else True)
    needs_newline = _needs_newline(results_path)
    with open(results_path, "a", encoding="utf-8") as out, ThreadPoolExecutor(max_workers=max_workers) as pool:
        if needs_newline:
            out.write("\n")
        queue = iter(pending)
        in_flight: Dict[Future, PredictionSample] = {}

        def submit_next() -> None:
            sample = next(queue, None)
            if sample is not None:
                in_flight[pool.submit(predictor.predict, sample)] = sample

        for _ in range(max_workers):
            submit_next()
        try:
            while in_flight:
                done, _ = wait(in_flight, return_when=FIRST_COMPLETED)
                for future in done:
                    in_flight.pop(future)
                    record = future.result()
                    out.write(record.model_dump_json() + "\n")
                    out.flush()
                    existing[record.sample_id] = record
                    summary.new_records += 1
                    summary.parse_failures += int(record.parse_failed)
                    progress.update(1)
                    submit_next()
        except BaseException:
            for future in in_flight:
                future.cancel()
            raise
        finally:
            progress.close()

    _rewrite_sorted(results_path, existing)

    if isinstance(predictor, PromptPredictor):
        usage = predictor.backend.usage
        summary.repair_calls = predictor.repair_calls
        summary.backend_requests = usage.requests
        summary.cache_hits = usage.cache_hits
        summary.prompt_tokens = usage.prompt_tokens
        summary.completion_tokens = usage.completion_tokens
    summary.elapsed_s = round(time.perf_counter() - started, 3)
    logger.info(
        f"Run finished: {summary.new_records} new, {summary.skipped_existing} already present, "
        f"{summary.parse_failures} parse failures, {summary.backend_requests} requests, "
        f"{summary.cache_hits} cache hits -> {results_path}"
    )
    return summary


def run_experiment(cfg: ExperimentConfig, repeat: Optional[int] = None, show_progress: bool = False) -> Path:
    """Run one configured experiment and return the results file.

    Reruns resume: samples already in the file are not predicted again.
    """
    cfg.check_paths()
    samples, train, _ = prepare_samples(cfg)
    use_cache = not (repeat is not None and cfg.backend.temperature > 0)
    predictor = make_predictor(cfg, train, use_cache=use_cache)
    results_path = cfg.output_dir / results_filename(cfg, repeat)
    try:
        summary = execute_samples(
            samples, predictor, results_path, max_workers=cfg.backend.max_in_flight, show_progress=show_progress
        )
    finally:
        predictor.close()
    _append_summary(cfg.output_dir, summary)
    return results_path


def run_repeats(cfg: ExperimentConfig, show_progress: bool = False) -> List[Path]:
    """``cfg.repeats`` independent runs; a single repeat is a plain run."""
    if cfg.repeats == 1:
        return [run_experiment(cfg, show_progress=show_progress)]
    return [run_experiment(cfg, repeat=i, show_progress=show_progress) for i in range(1, cfg.repeats + 1)]


# ==================== Evaluation ====================


def _scored(path: Union[str, Path]) -> Tuple[List[ScoredSample], List[str], int]:
    records, _ = read_records(path)
    if not records:
        raise NextPlaceException(ErrorCode.EMPTY_SAMPLE_SET, message_args={"metric": f"evaluation of {path}"})
    ordered = [records[sample_id] for sample_id in sorted(records)]
    scored = [score_sample(r.sample_id, r.places, r.ground_truth) for r in ordered]
    failed = [r.sample_id for r in ordered if r.parse_failed]
    return scored, failed, ordered[0].k


def evaluate(results_path: Union[str, Path], name: Optional[str] = None) -> MetricsReport:
    """Recompute hit ranks from stored places and ground truth and aggregate."""
    scored, failed, k = _scored(results_path)
    return build_report(scored, k, len(failed), name=name or Path(results_path).stem)


def evaluate_by_user(results_path: Union[str, Path]) -> Dict[str, MetricsReport]:
    scored, failed, k = _scored(results_path)
    return reports_by_user(scored, k, failed)


# ==================== Ablation ====================


def ablate(base_cfg: ExperimentConfig, show_progress: bool = False) -> Dict[str, MetricsReport]:
    """Run every prompt variant over the same samples and backend.

    Writes ``ablate_<Variant>.jsonl`` per variant plus ``ablate_report.csv``.
    A failing variant does not stop the others; the first failure is re-raised
    after the table is written.
    """
    if base_cfg.predictor not in ("llm", "mock"):
        raise NextPlaceException(
            ErrorCode.COMMON_CONFIG_ERROR,
            message_args={"config_error": f"ablation needs a prompt predictor, got '{base_cfg.predictor}'"},
        )
    variants = ablation_variants(base_cfg.prompt)
    base_cfg.check_paths()
    samples, train, _ = prepare_samples(base_cfg)
    backend = get_backend(_backend_name(base_cfg), base_cfg.backend)

    reports: Dict[str, MetricsReport] = {}
    failures: List[Tuple[str, Exception]] = []
    try:
        for variant, prompt_cfg in variants.items():
            predictor = make_predictor(base_cfg, train, prompt_cfg=prompt_cfg, backend=backend)
            path = base_cfg.output_dir / f"ablate_{variant}.jsonl"
            try:
                summary = execute_samples(
                    samples, predictor, path, max_workers=base_cfg.backend.max_in_flight, show_progress=show_progress
                )
                _append_summary(base_cfg.output_dir, summary)
                reports[variant] = evaluate(path, name=variant)
            except NextPlaceException as e:
                if e.code in _FATAL_CODES:
                    raise
                logger.error(f"Ablation variant {variant} failed: {e}")
                failures.append((variant, e))
    finally:
        backend.close()

    write_report(list(reports.values()), base_cfg.output_dir / "ablate_report.csv")
    if failures:
        raise failures[0][1]
    return reports


# ==================== Reports ====================


def _cell(value: Optional[float]) -> str:
    return MISSING_CELL if value is None else f"{value:.4f}"


def _frame(rows: Sequence[Sequence[str]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=list(REPORT_COLUMNS), dtype=str)


def _render(frame: pd.DataFrame) -> Tuple[str, str]:
    csv_text = frame.to_csv(index=False, lineterminator="\n")
    if frame.empty:
        return "  ".join(REPORT_COLUMNS), csv_text
    return frame.to_string(index=False), csv_text


def report(reports: Sequence[MetricsReport]) -> Tuple[str, str]:
    """Aligned text table and CSV, one row per report. Uncomputable metrics render as "-"."""
    rows = [[r.name] + [_cell(getattr(r, column)) for column in METRIC_COLUMNS] for r in reports]
    return _render(_frame(rows))


def report_repeats(groups: Mapping[str, Sequence[MetricsReport]]) -> Tuple[str, str]:
    """One row per group with ``mean ± std`` cells (population std over repeats)."""
    rows = []
    for name, group in groups.items():
        row = [name]
        for column in METRIC_COLUMNS:
            values = [getattr(r, column) for r in group]
            if not values or any(v is None for v in values):
                row.append(MISSING_CELL)
                continue
            values = np.asarray(values, dtype=float)
            row.append(f"{values.mean():.4f} ± {values.std(ddof=0):.4f}")
        rows.append(row)
    return _render(_frame(rows))


def _write_tables(text: str, csv_text: str, csv_path: Union[str, Path]) -> str:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(csv_text, encoding="utf-8")
    csv_path.with_suffix(".txt").write_text(text + "\n", encoding="utf-8")
    logger.info(f"Report written to {csv_path}")
    return text


def write_report(reports: Sequence[MetricsReport], csv_path: Union[str, Path]) -> str:
    """Write the CSV next to an aligned ``.txt`` table; returns the text table."""
    return _write_tables(*report(reports), csv_path)


def report_files(paths: Sequence[Union[str, Path]], csv_path: Union[str, Path]) -> str:
    """Evaluate results files and tabulate them; ``*_r<i>`` files are folded into mean ± std rows."""
    groups: Dict[str, List[MetricsReport]] = {}
    has_repeats = False
    for path in paths:
        stem = Path(path).stem
        base = _REPEAT_SUFFIX.sub("", stem)
        has_repeats = has_repeats or base != stem
        groups.setdefault(base, []).append(evaluate(path))
    if not has_repeats:
        return write_report([r for group in groups.values() for r in group], csv_path)

    return _write_tables(*report_repeats(groups), csv_path)


# ==================== Case study ====================


def casestudy(cfg: ExperimentConfig, results_path: Union[str, Path], sample_id: str) -> str:
    """Prompt, raw response, parsed places, reason and ground truth of one sample."""
    records, _ = read_records(results_path)
    if sample_id not in records:
        raise NextPlaceException(
            ErrorCode.COMMON_FIELD_INVALID, message_args={"field_error": f"sample '{sample_id}' not in {results_path}"}
        )
    record = records[sample_id]

    prompt_text = "<no prompt: baseline predictor>"
    if record.prompt_hash is not None:
        samples, _, _ = build_test_samples(load_sequences(cfg), cfg.window, cfg.ingest)
        sample = next((s for s in samples if s.sample_id == sample_id), None)
        if sample is None:
            prompt_text = "<sample not reproducible from the configured data>"
        else:
            prompt = render_prompt(sample, cfg.prompt.model_copy(update={"k": record.k}))
            prompt_text = prompt.text
            if prompt.prompt_hash != record.prompt_hash:
                logger.warning(f"Prompt of {sample_id} re-rendered with a different hash; config may have changed")

    sections = [
        ("Sample", sample_id),
        ("Prompt", prompt_text),
        ("Raw response", record.raw_text or "<none>"),
        ("Prediction", json.dumps(record.places)),
        ("Reason", record.reason or "<none>"),
        ("Ground truth", str(record.ground_truth)),
        ("Hit rank", str(score_sample(sample_id, record.places, record.ground_truth).hit_rank or MISSING_CELL)),
        ("Error", record.error or "<none>"),
    ]
    return "\n\n".join(f"== {title} ==\n{body}" for title, body in sections)
