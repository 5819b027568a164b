"""Crop-dataset generation and a ground-truth-annotated synthetic corpus.

Two producers live here. `generate_dataset2` runs a detector over a
manifest at a deliberately low score floor, writes every candidate crop
(square-padded, resized to one canonical size), and emits review records
so a human can strike false positives; `apply_review` folds the review
back into a clean manifest. `generate_synthetic_corpus` fabricates a
deterministic corpus of one-rectangle images with known boxes and labels,
sized for tests rather than photography.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .cascade import CropPreprocess
from .color import band_center, default_hue_bands, hsv_to_rgb_u8, validate_hue_bands
from .core import (
    BoundingBox,
    ClassRegistry,
    DatasetManifest,
    Detection,
    Image,
    ManifestRecord,
    Split,
    load_image,
    save_image,
    save_manifest,
)
from .errors import ConfigError, InvalidInputError, ParseError
from .imgeom import ResizeFilter, ResizePolicy

log = logging.getLogger(__name__)

CANONICAL_CROP_SIZE = 1024


class ReviewStatus(str, Enum):
    PENDING_REVIEW = "pending_review"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass
class CropRecord:
    """One written crop awaiting (or past) human review."""

    crop_path: str
    source_path: str
    class_name: str
    split: Split
    detection: Detection
    status: ReviewStatus = ReviewStatus.PENDING_REVIEW


@dataclass(frozen=True)
class Dataset2Result:
    """Crops actually written plus per-image failures (lenient collection)."""

    records: tuple[CropRecord, ...]
    errors: tuple[tuple[str, str], ...]  # (source path, message)


def generate_dataset2(
    manifest: DatasetManifest,
    detector,
    floor_threshold: float,
    out_dir: str | Path,
    *,
    base_dir: str | Path | None = None,
    class_filter: frozenset[int] | None = None,
    crop_size: int = CANONICAL_CROP_SIZE,
) -> Dataset2Result:
    """Write one crop per floor-clearing detection; label crops by source.

    Every detection with score >= `floor_threshold` (after class
    filtering) produces a square crop of `crop_size`, written under
    `out_dir/crops/<split>/`. Unreadable source images are collected as
    errors and the run continues. Crop paths in the returned records are
    relative to `out_dir`.
    """
    if not 0.0 < floor_threshold < 1.0:
        raise InvalidInputError(
            f"floor_threshold must lie in (0, 1), got {floor_threshold}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preprocess = CropPreprocess(ResizePolicy(crop_size, crop_size, ResizeFilter.BILINEAR))
    records: list[CropRecord] = []
    errors: list[tuple[str, str]] = []
    for record in manifest.records:
        path = Path(record.image_path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            image = load_image(path)
        except Exception as exc:
            errors.append((record.image_path, str(exc)))
            continue
        kept = [
            d
            for d in detector.detect(image)
            if d.score >= floor_threshold
            and (class_filter is None or d.class_id in class_filter)
        ]
        for index, det in enumerate(kept):
            crop_image = preprocess.apply(image, det.box)
            rel = Path("crops") / record.split.value / (
                f"{path.stem}_{index:02d}_s{det.score:.3f}.png"
            )
            save_image(crop_image, out_dir / rel)
            records.append(
                CropRecord(
                    crop_path=rel.as_posix(),
                    source_path=record.image_path,
                    class_name=record.class_name,
                    split=record.split,
                    detection=det,
                )
            )
    return Dataset2Result(tuple(records), tuple(errors))


def apply_review(
    records: list[CropRecord], review_file: str | Path
) -> tuple[DatasetManifest, int]:
    """Fold an accept/reject list into the records; rejection is opt-in.

    Crops never mentioned in the review file stay accepted. Review lines
    naming unknown crop paths are warned about and skipped. Returns the
    manifest of accepted crops plus how many were rejected.
    """
    decisions: dict[str, bool] = {}
    text = Path(review_file).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("accept", "reject"):
            raise ParseError(
                f"{review_file}:{lineno}: expected `<crop path>\\t<accept|reject>`"
            )
        decisions[parts[0]] = parts[1] == "accept"
    known = {r.crop_path for r in records}
    for crop_path in decisions:
        if crop_path not in known:
            log.warning("review names unknown crop %r; ignored", crop_path)
    rejections = 0
    accepted: list[ManifestRecord] = []
    for record in records:
        verdict = decisions.get(record.crop_path, True)
        record.status = ReviewStatus.ACCEPTED if verdict else ReviewStatus.REJECTED
        if verdict:
            accepted.append(
                ManifestRecord(record.crop_path, record.class_name, record.split)
            )
        else:
            rejections += 1
    return DatasetManifest(tuple(accepted)), rejections


# ---------------------------------------------------------------------------
# Crop-record persistence (the "pending review" list).
# ---------------------------------------------------------------------------


def save_crop_records(path: str | Path, records: list[CropRecord] | tuple[CropRecord, ...]) -> None:
    lines = []
    for r in records:
        b = r.detection.box
        lines.append(
            "\t".join(
                (
                    r.crop_path,
                    r.source_path,
                    r.class_name,
                    r.split.value,
                    r.status.value,
                    repr(r.detection.score),
                    str(r.detection.class_id),
                    f"{b.x_min!r},{b.y_min!r},{b.x_max!r},{b.y_max!r}",
                )
            )
        )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def load_crop_records(path: str | Path) -> list[CropRecord]:
    records: list[CropRecord] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            raise ParseError(
                f"{path}:{lineno}: expected 8 tab-separated fields, got {len(parts)}"
            )
        crop_path, source, name, split_text, status_text, score, class_id, box_text = parts
        try:
            coords = [float(v) for v in box_text.split(",")]
            if len(coords) != 4:
                raise ValueError(f"box needs 4 coordinates, got {box_text!r}")
            records.append(
                CropRecord(
                    crop_path=crop_path,
                    source_path=source,
                    class_name=name,
                    split=Split.parse(split_text),
                    detection=Detection(BoundingBox(*coords), float(score), int(class_id)),
                    status=ReviewStatus(status_text),
                )
            )
        except (ValueError, InvalidInputError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# Synthetic corpus: one colored rectangle per image on a noisy background.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseParams:
    """Background texture: gray static plus colored speckle.

    Speckle hues are drawn from a random half-circle arc per image rather
    than the full circle, so at high density they pull a whole-frame hue
    estimate coherently instead of cancelling out.
    """

    gray_low: int = 60
    gray_high: int = 200
    speckle_density: float = 0.03
    speckle_saturation: tuple[float, float] = (0.25, 0.95)
    speckle_value: tuple[float, float] = (0.3, 1.0)
    hue_arc: float = 0.5

    @classmethod
    def easy(cls) -> "NoiseParams":
        return cls(speckle_density=0.03)

    @classmethod
    def hard(cls) -> "NoiseParams":
        return cls(speckle_density=0.35)


NOISE_PRESETS = {"easy": NoiseParams.easy, "hard": NoiseParams.hard}


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for the deterministic rectangle-on-noise corpus."""

    n_classes: int
    image_size: int = 128
    rect_fraction: tuple[float, float] = (0.15, 0.6)
    hue_bands: tuple[tuple[float, float], ...] | None = None
    rect_saturation: tuple[float, float] = (0.85, 1.0)
    rect_value: tuple[float, float] = (0.75, 1.0)
    hue_jitter: float = 0.2  # fraction of the band's width, both directions
    noise: NoiseParams = field(default_factory=NoiseParams.easy)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 1:
            raise ConfigError("n_classes must be at least 1")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")
        lo, hi = self.rect_fraction
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"rect_fraction {self.rect_fraction} is not a valid range")
        if self.hue_bands is not None:
            validate_hue_bands(self.hue_bands)
            if len(self.hue_bands) != self.n_classes:
                raise ConfigError(
                    f"{len(self.hue_bands)} hue bands for {self.n_classes} classes"
                )

    def bands(self) -> tuple[tuple[float, float], ...]:
        return self.hue_bands if self.hue_bands is not None else default_hue_bands(self.n_classes)

    def class_names(self) -> tuple[str, ...]:
        return tuple(f"color_{i:02d}" for i in range(self.n_classes))


def _draw_image(
    spec: SyntheticSpec, class_id: int, rng: np.random.Generator
) -> tuple[Image, BoundingBox]:
    size = spec.image_size
    noise = spec.noise
    gray = rng.integers(noise.gray_low, noise.gray_high + 1, (size, size), dtype=np.uint8)
    pixels = np.repeat(gray[:, :, None], 3, axis=2)

    mask = rng.random((size, size)) < noise.speckle_density
    count = int(mask.sum())
    if count:
        arc_start = rng.random()
        hues = (arc_start + rng.random(count) * noise.hue_arc) % 1.0
        sats = rng.uniform(*noise.speckle_saturation, count)
        vals = rng.uniform(*noise.speckle_value, count)
        pixels[mask] = hsv_to_rgb_u8(hues, sats, vals)

    lo, hi = spec.rect_fraction
    w = max(2, round(size * rng.uniform(lo, hi)))
    h = max(2, round(size * rng.uniform(lo, hi)))
    x0 = int(rng.integers(0, size - w + 1))
    y0 = int(rng.integers(0, size - h + 1))
    band = spec.bands()[class_id]
    hue = (band_center(band) + rng.uniform(-1.0, 1.0) * spec.hue_jitter * (band[1] - band[0])) % 1.0
    sat = rng.uniform(*spec.rect_saturation)
    val = rng.uniform(*spec.rect_value)
    pixels[y0 : y0 + h, x0 : x0 + w] = hsv_to_rgb_u8(
        np.full((h, w), hue), np.full((h, w), sat), np.full((h, w), val)
    )
    box = BoundingBox(float(x0), float(y0), float(x0 + w), float(y0 + h))
    return Image(pixels), box


GroundTruth = dict[str, tuple[str, BoundingBox]]


def generate_synthetic_corpus(
    spec: SyntheticSpec,
    counts: dict[Split, int],
    out_dir: str | Path,
) -> tuple[DatasetManifest, GroundTruth]:
    """Write a seed-deterministic corpus; classes rotate round-robin.

    Produces `out_dir/images/<split>/...png`, `manifest.tsv`,
    `registry.txt` and `truth.tsv`; manifest and truth paths are relative
    to `out_dir`. Returns the manifest plus the path -> (class, box) table.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    names = spec.class_names()
    records: list[ManifestRecord] = []
    truth: GroundTruth = {}
    for split in Split:
        n_images = counts.get(split, 0)
        if n_images < 0:
            raise ConfigError(f"negative image count for split {split.value}")
        for index in range(n_images):
            class_id = index % spec.n_classes
            image, box = _draw_image(spec, class_id, rng)
            rel = (
                Path("images")
                / split.value
                / f"{names[class_id]}_{index // spec.n_classes:03d}.png"
            ).as_posix()
            save_image(image, out_dir / rel)
            records.append(ManifestRecord(rel, names[class_id], split))
            truth[rel] = (names[class_id], box)
    manifest = DatasetManifest(tuple(records))
    save_manifest(manifest, out_dir / "manifest.tsv")
    ClassRegistry(names).save(out_dir / "registry.txt")
    save_ground_truth(out_dir / "truth.tsv", truth)
    return manifest, truth


def save_ground_truth(path: str | Path, truth: GroundTruth) -> None:
    lines = []
    for image_path, (name, box) in truth.items():
        lines.append(
            f"{image_path}\t{name}\t"
            f"{box.x_min!r},{box.y_min!r},{box.x_max!r},{box.y_max!r}"
        )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def load_ground_truth(path: str | Path) -> GroundTruth:
    truth: GroundTruth = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(
                f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
            )
        image_path, name, box_text = parts
        try:
            coords = [float(v) for v in box_text.split(",")]
            if len(coords) != 4:
                raise ValueError(f"box needs 4 coordinates, got {box_text!r}")
            truth[image_path] = (name, BoundingBox(*coords))
        except (ValueError, InvalidInputError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return truth
