"""Detect-then-classify pipelines with threshold cascades and gated fallback.

Three strategies share one verdict type:

* ``whole_image``    -- classify the full frame, no detector involved.
* ``top_confidence`` -- cascade-filter the detections, classify every
  surviving crop, keep the most confident one, and fall back to the whole
  frame when its confidence misses the gate.
* ``per_box_loop``   -- walk surviving crops in descending detector score
  and stop at the first whose classification confidence clears the gate;
  fall back to the whole frame when none does.

Crop confidence is the maximum raw logit, not a probability: the gates
these pipelines run with sit well above 1. The cascade tries detector
thresholds strictly in descending order and keeps only the first
productive level, trading recall against false positives in one detector
pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .core import BoundingBox, ClassRegistry, ClassScores, Detection, Image, Label
from .errors import ConfigError, ParseError
from .imgeom import ResizePolicy, crop, resize, square_pad


class Strategy(str, Enum):
    WHOLE_IMAGE = "whole_image"
    TOP_CONFIDENCE = "top_confidence"
    PER_BOX_LOOP = "per_box_loop"

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        try:
            return cls(text.strip().lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ConfigError(f"unknown strategy {text!r}; expected one of {valid}")


class VerdictSource(str, Enum):
    CROP = "crop"
    FALLBACK_WHOLE_IMAGE = "fallback_whole_image"


@dataclass(frozen=True)
class CropPreprocess:
    """Crop -> pad-to-square -> resize, the crop classifier's expected diet."""

    policy: ResizePolicy
    pad_fill: tuple[int, int, int] = (0, 0, 0)

    def apply(self, image: Image, box: BoundingBox) -> Image:
        return resize(square_pad(crop(image, box), fill=self.pad_fill), self.policy)


def _check_thresholds(thresholds: tuple[float, ...]) -> None:
    if not thresholds:
        raise ConfigError("detector_thresholds must not be empty")
    for t in thresholds:
        if not (isinstance(t, (int, float)) and math.isfinite(t) and 0.0 < t <= 1.0):
            raise ConfigError(f"detector threshold {t} is outside (0, 1]")
    for hi, lo in zip(thresholds, thresholds[1:]):
        if not hi > lo:
            raise ConfigError(
                f"detector_thresholds must be strictly descending, got {thresholds}"
            )


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run needs beyond the image itself.

    `class_filter` restricts which detector class ids count as candidate
    objects (None keeps them all). The crop and fallback classifiers may
    be the same backend or two differently trained ones.
    """

    strategy: Strategy
    detector_thresholds: tuple[float, ...]
    classification_gate: float
    crop_preprocess: CropPreprocess
    crop_classifier: object
    fallback_classifier: object
    registry: ClassRegistry
    detector: object | None = None
    class_filter: frozenset[int] | None = None

    def __post_init__(self) -> None:
        _check_thresholds(self.detector_thresholds)
        if not math.isfinite(self.classification_gate):
            raise ConfigError("classification_gate must be finite")
        if self.strategy is not Strategy.WHOLE_IMAGE and self.detector is None:
            raise ConfigError(f"strategy {self.strategy.value} needs a detector")
        if self.class_filter is not None and len(self.class_filter) == 0:
            raise ConfigError("class_filter must be None or non-empty")


@dataclass(frozen=True)
class PipelineVerdict:
    """Final call for one image: a label, how sure, and where it came from."""

    label: Label
    confidence: float
    source: VerdictSource
    chosen_box: BoundingBox | None
    all_detections: tuple[Detection, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if (self.source is VerdictSource.CROP) != (self.chosen_box is not None):
            raise ConfigError("crop verdicts carry a box; fallback verdicts do not")


def cascade_filter(
    detections: list[Detection] | tuple[Detection, ...],
    thresholds: tuple[float, ...] | list[float],
    class_filter: frozenset[int] | set[int] | None = None,
) -> tuple[Detection, ...]:
    """Keep the detections surviving the first productive threshold level.

    Levels are tried strictly in the order given (descending). A level's
    survivors are the detections with score >= that threshold, restricted
    to `class_filter` when one is given. The first level with any survivor
    wins outright -- later, looser levels are never mixed in. Input order
    is preserved. Returns () when even the loosest level comes up empty.
    """
    thresholds = tuple(thresholds)
    _check_thresholds(thresholds)
    candidates = [
        d for d in detections if class_filter is None or d.class_id in class_filter
    ]
    for threshold in thresholds:
        survivors = tuple(d for d in candidates if d.score >= threshold)
        if survivors:
            return survivors
    return ()


def _verdict_from_scores(
    scores: ClassScores,
    registry: ClassRegistry,
    source: VerdictSource,
    box: BoundingBox | None,
    all_detections: tuple[Detection, ...] = (),
) -> PipelineVerdict:
    return PipelineVerdict(
        label=registry.label(scores.top_class()),
        confidence=scores.top_logit(),
        source=source,
        chosen_box=box,
        all_detections=all_detections,
    )


def run_whole_image(image: Image, classifier, registry: ClassRegistry) -> PipelineVerdict:
    """Classify the full frame; always yields a verdict."""
    scores = classifier.classify(image)
    return _verdict_from_scores(
        scores, registry, VerdictSource.FALLBACK_WHOLE_IMAGE, None
    )


def _fallback(image: Image, cfg: PipelineConfig, dets: tuple[Detection, ...]) -> PipelineVerdict:
    scores = cfg.fallback_classifier.classify(image)
    return _verdict_from_scores(
        scores, cfg.registry, VerdictSource.FALLBACK_WHOLE_IMAGE, None, dets
    )


def run_top_confidence(image: Image, cfg: PipelineConfig) -> PipelineVerdict:
    """Classify every surviving crop and keep the most confident call.

    The winning crop's confidence must still clear the classification
    gate; otherwise the whole frame goes to the fallback classifier. Ties
    on crop confidence keep the earliest crop in detector order.
    """
    if cfg.strategy is not Strategy.TOP_CONFIDENCE:
        raise ConfigError(f"config strategy is {cfg.strategy.value}, not top_confidence")
    detections = tuple(cfg.detector.detect(image))
    survivors = cascade_filter(detections, cfg.detector_thresholds, cfg.class_filter)
    best: tuple[float, ClassScores, Detection] | None = None
    for det in survivors:
        scores = cfg.crop_classifier.classify(cfg.crop_preprocess.apply(image, det.box))
        confidence = scores.top_logit()
        if best is None or confidence > best[0]:
            best = (confidence, scores, det)
    if best is not None and best[0] >= cfg.classification_gate:
        return _verdict_from_scores(
            best[1], cfg.registry, VerdictSource.CROP, best[2].box, detections
        )
    return _fallback(image, cfg, detections)


def run_per_box_loop(image: Image, cfg: PipelineConfig) -> PipelineVerdict:
    """Take the first crop, in descending detector score, that clears the gate.

    Later crops are never consulted once one passes. When no surviving
    crop clears the gate -- or nothing survives the cascade -- the whole
    frame goes to the fallback classifier.
    """
    if cfg.strategy is not Strategy.PER_BOX_LOOP:
        raise ConfigError(f"config strategy is {cfg.strategy.value}, not per_box_loop")
    detections = tuple(cfg.detector.detect(image))
    survivors = cascade_filter(detections, cfg.detector_thresholds, cfg.class_filter)
    for det in survivors:
        scores = cfg.crop_classifier.classify(cfg.crop_preprocess.apply(image, det.box))
        if scores.top_logit() >= cfg.classification_gate:
            return _verdict_from_scores(
                scores, cfg.registry, VerdictSource.CROP, det.box, detections
            )
    return _fallback(image, cfg, detections)


def run_pipeline(image: Image, cfg: PipelineConfig) -> PipelineVerdict:
    """Dispatch on the configured strategy. Total: every image gets a verdict."""
    if cfg.strategy is Strategy.WHOLE_IMAGE:
        return run_whole_image(image, cfg.fallback_classifier, cfg.registry)
    if cfg.strategy is Strategy.TOP_CONFIDENCE:
        return run_top_confidence(image, cfg)
    return run_per_box_loop(image, cfg)


# ---------------------------------------------------------------------------
# Verdict wire format: one tab-separated line per image.
# ---------------------------------------------------------------------------


def format_verdict_line(image_path: str, verdict: PipelineVerdict) -> str:
    """`path<TAB>class<TAB>confidence<TAB>source<TAB>box`, box as `-` on fallback."""
    if verdict.chosen_box is None:
        box_field = "-"
    else:
        b = verdict.chosen_box
        box_field = f"{b.x_min!r},{b.y_min!r},{b.x_max!r},{b.y_max!r}"
    return "\t".join(
        (
            image_path,
            verdict.label.class_name,
            format(verdict.confidence, ".6f"),
            verdict.source.value,
            box_field,
        )
    )


def parse_verdict_line(line: str, registry: ClassRegistry) -> tuple[str, PipelineVerdict]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise ParseError(f"verdict line needs 5 tab-separated fields, got {len(parts)}")
    path, class_name, conf_text, source_text, box_field = parts
    try:
        source = VerdictSource(source_text)
    except ValueError:
        raise ParseError(f"unknown verdict source {source_text!r}")
    if box_field == "-":
        box = None
    else:
        coords = [float(v) for v in box_field.split(",")]
        if len(coords) != 4:
            raise ParseError(f"box field needs 4 coordinates, got {box_field!r}")
        box = BoundingBox(*coords)
    verdict = PipelineVerdict(
        label=registry.label(registry.id_of(class_name)),
        confidence=float(conf_text),
        source=source,
        chosen_box=box,
    )
    return path, verdict
