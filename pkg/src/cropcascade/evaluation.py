"""Accuracy/confusion evaluation over manifest splits and results tables."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .cascade import PipelineVerdict, format_verdict_line
from .core import ClassRegistry, DatasetManifest, Image, Split, load_image, resolve_image_path
from .errors import EvaluationError

TABLE_COLUMNS = (
    ("model", None),
    ("train acc [%]", Split.TRAIN),
    ("val acc [%]", Split.VAL),
    ("test acc [%]", Split.TEST),
    ("final test acc [%]", Split.FINAL_TEST),
)


@dataclass(frozen=True)
class EvalReport:
    """One split's outcome: accuracy, confusion counts, per-image verdicts."""

    split: Split
    accuracy: float
    confusion: np.ndarray  # rows: true class, cols: predicted class
    verdicts: tuple[tuple[str, PipelineVerdict], ...]  # manifest order
    errors: tuple[tuple[str, str], ...]  # lenient-mode load failures
    wall_time: float

    @property
    def n_evaluated(self) -> int:
        return int(self.confusion.sum())


def evaluate(
    classify: Callable[[Image], PipelineVerdict],
    manifest: DatasetManifest,
    split: Split,
    registry: ClassRegistry,
    *,
    manifest_path: str | Path | None = None,
    strict: bool = True,
    jobs: int = 1,
) -> EvalReport:
    """Run `classify` over one split; deterministic regardless of `jobs`.

    In strict mode an unreadable image aborts the run; in lenient mode it
    becomes an error row and leaves the accuracy denominator. The verdict
    log keeps manifest order even under parallel evaluation.
    """
    records = manifest.for_split(split)
    if not records:
        raise EvaluationError(f"split {split.value!r} has no records; nothing to evaluate")
    start = time.perf_counter()

    def worker(record):
        path = (
            resolve_image_path(manifest_path, record)
            if manifest_path is not None
            else Path(record.image_path)
        )
        try:
            image = load_image(path)
        except Exception as exc:
            if strict:
                raise EvaluationError(f"cannot load {path}: {exc}") from exc
            return record, None, str(exc)
        return record, classify(image), None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(worker, records))
    else:
        outcomes = [worker(r) for r in records]

    n = len(registry)
    confusion = np.zeros((n, n), dtype=np.int64)
    verdicts: list[tuple[str, PipelineVerdict]] = []
    errors: list[tuple[str, str]] = []
    for record, verdict, error in outcomes:
        if error is not None:
            errors.append((record.image_path, error))
            continue
        true_id = registry.id_of(record.class_name)
        confusion[true_id, verdict.label.class_id] += 1
        verdicts.append((record.image_path, verdict))
    total = int(confusion.sum())
    if total == 0:
        raise EvaluationError(f"no image in split {split.value!r} could be evaluated")
    accuracy = float(np.trace(confusion)) / total
    return EvalReport(
        split=split,
        accuracy=accuracy,
        confusion=confusion,
        verdicts=tuple(verdicts),
        errors=tuple(errors),
        wall_time=time.perf_counter() - start,
    )


def emit_results_table(reports: Mapping[str, Mapping[Split, EvalReport]]) -> str:
    """Render one row per model with 2-decimal percents; absent splits print `-`."""
    rows = [[header for header, _ in TABLE_COLUMNS]]
    for model_name, by_split in reports.items():
        row = [model_name]
        for _, split in TABLE_COLUMNS[1:]:
            report = by_split.get(split)
            row.append("-" if report is None else f"{report.accuracy * 100:.2f}")
        rows.append(row)
    widths = [max(len(row[col]) for row in rows) for col in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "".join(line + "\n" for line in lines)


def write_verdicts(path: str | Path, report: EvalReport) -> None:
    """Persist the per-image verdict log in the standard record format."""
    lines = [format_verdict_line(p, v) for p, v in report.verdicts]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
