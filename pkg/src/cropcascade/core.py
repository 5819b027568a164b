"""Shared domain types: images, boxes, detections, class scores, manifests."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image as _PilImage

from .errors import (
    EmptyIntersectionError,
    InvalidInputError,
    ManifestError,
    RegistryError,
)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Normalize logits to a probability vector (max-subtraction form).

    Order-preserving and stable for large magnitudes; the output sums
    to 1 within 1e-9.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("softmax requires a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("softmax input contains non-finite entries")
    shifted = arr - arr.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


@dataclass(frozen=True, eq=False)
class Image:
    """Owned 8-bit RGB raster, shape (height, width, 3).

    The pixel buffer is copied on construction and frozen, so instances
    are immutable and safe to share across workers.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, dtype=np.uint8, copy=True, order="C")
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidInputError(
                f"image buffer must have shape (height, width, 3), got {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("image must be at least 1x1")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def fingerprint(self) -> str:
        """Content hash of dimensions plus the raw pixel buffer."""
        h = hashlib.sha256()
        h.update(self.width.to_bytes(4, "little"))
        h.update(self.height.to_bytes(4, "little"))
        h.update(self.pixels.tobytes())
        return h.hexdigest()

    @classmethod
    def filled(cls, width: int, height: int, color: tuple[int, int, int]) -> "Image":
        return cls(np.full((height, width, 3), color, dtype=np.uint8))


def load_image(path: str | Path) -> Image:
    with _PilImage.open(path) as pil:
        return Image(np.asarray(pil.convert("RGB")))


def save_image(image: Image, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _PilImage.fromarray(image.pixels, mode="RGB").save(path)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous image coordinates, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidInputError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    def pixel_bounds(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integerize (floor min, ceil max) and clamp to the image grid.

        Raises EmptyIntersectionError when the box lies fully outside.
        """
        x0 = min(max(math.floor(self.x_min), 0), width)
        y0 = min(max(math.floor(self.y_min), 0), height)
        x1 = min(max(math.ceil(self.x_max), 0), width)
        y1 = min(max(math.ceil(self.y_max), 0), height)
        if x1 <= x0 or y1 <= y0:
            raise EmptyIntersectionError(
                f"box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}) "
                f"does not intersect a {width}x{height} image"
            )
        return x0, y0, x1, y1

    def intersects(self, width: int, height: int) -> bool:
        try:
            self.pixel_bounds(width, height)
        except EmptyIntersectionError:
            return False
        return True

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    """One detector candidate: box, confidence in [0, 1], detector class."""

    box: BoundingBox
    score: float
    class_id: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise InvalidInputError(f"detection score {self.score} outside [0, 1]")
        if self.class_id < 0:
            raise InvalidInputError(f"negative class_id {self.class_id}")


@dataclass(frozen=True, eq=False)
class ClassScores:
    """Per-class raw logits with derived softmax probabilities."""

    logits: np.ndarray
    probabilities: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        arr = np.array(self.logits, dtype=np.float64, copy=True)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidInputError("logits must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("logits contain non-finite entries")
        arr.flags.writeable = False
        probs = softmax(arr)
        probs.flags.writeable = False
        object.__setattr__(self, "logits", arr)
        object.__setattr__(self, "probabilities", probs)

    @property
    def num_classes(self) -> int:
        return int(self.logits.size)

    def top_class(self) -> int:
        """Index of the highest logit; ties resolve to the lowest index."""
        return int(np.argmax(self.logits))

    def top_logit(self) -> float:
        return float(self.logits[self.top_class()])


@dataclass(frozen=True)
class Label:
    class_id: int
    class_name: str


class ClassRegistry:
    """Ordered list of class names; line index in the registry file is the id."""

    def __init__(self, names: list[str] | tuple[str, ...]):
        names = tuple(names)
        if not names:
            raise RegistryError("class registry is empty")
        if any(not n or any(c in n for c in "\t\n") for n in names):
            raise RegistryError("class names must be non-empty and tab/newline free")
        if len(set(names)) != len(names):
            raise RegistryError("class registry contains duplicate names")
        self._names = names
        self._ids = {name: i for i, name in enumerate(names)}

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ClassRegistry) and other._names == self._names

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self._names):
            raise InvalidInputError(
                f"class_id {class_id} outside registry of size {len(self._names)}"
            )
        return self._names[class_id]

    def id_of(self, name: str) -> int:
        if name not in self._ids:
            raise InvalidInputError(f"unknown class name: {name!r}")
        return self._ids[name]

    def label(self, class_id: int) -> Label:
        return Label(class_id, self.name_of(class_id))

    @classmethod
    def load(cls, path: str | Path) -> "ClassRegistry":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        names = [ln.strip() for ln in lines if ln.strip()]
        if not names:
            raise RegistryError(f"{path}: registry file holds no class names")
        return cls(names)

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(self._names) + "\n", encoding="utf-8")


class Split(str, Enum):
    """The four dataset splits; the manifest format admits no others."""

    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    FINAL_TEST = "final_test"

    @classmethod
    def parse(cls, text: str) -> "Split":
        try:
            return cls(text)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise InvalidInputError(f"unknown split {text!r} (expected one of {valid})")


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    class_name: str
    split: Split


@dataclass(frozen=True)
class DatasetManifest:
    """Split-tagged index of (image path, label) records, in file order."""

    records: tuple[ManifestRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def for_split(self, split: Split) -> tuple[ManifestRecord, ...]:
        return tuple(r for r in self.records if r.split is split)

    def splits(self) -> tuple[Split, ...]:
        seen: list[Split] = []
        for r in self.records:
            if r.split not in seen:
                seen.append(r.split)
        return tuple(seen)

    def validate(self, registry: ClassRegistry) -> None:
        for r in self.records:
            if r.class_name not in registry:
                raise ManifestError(
                    f"manifest record {r.image_path!r} carries unknown class "
                    f"{r.class_name!r}"
                )


def load_manifest(path: str | Path, registry: ClassRegistry) -> DatasetManifest:
    """Parse a tab-separated manifest file; errors name the offending line."""
    records: list[ManifestRecord] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(
                f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
            )
        image_path, class_name, split_text = parts
        if class_name not in registry:
            raise ManifestError(f"{path}:{lineno}: unknown class name {class_name!r}")
        try:
            split = Split.parse(split_text)
        except InvalidInputError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        records.append(ManifestRecord(image_path, class_name, split))
    return DatasetManifest(tuple(records))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{r.image_path}\t{r.class_name}\t{r.split.value}" for r in manifest.records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def resolve_image_path(manifest_path: str | Path, record: ManifestRecord) -> Path:
    """Record paths are relative to the manifest file unless absolute."""
    p = Path(record.image_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p
