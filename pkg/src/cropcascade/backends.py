"""Model-backend contracts plus scripted and synthetic implementations.

Three capability contracts cover the model roles: detector, classifier and
feature extractor. Scripted backends replay fixture files keyed by image
content hash; synthetic backends compute detections/logits analytically from
pixel statistics so whole pipelines run without any trained weights. A
TorchScript adapter wraps real serialized models behind the same contracts.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .color import (
    band_center,
    circular_hue_distance,
    default_hue_bands,
    validate_hue_bands,
    weighted_mean_hue,
)
from .core import BoundingBox, ClassScores, Detection, Image
from .errors import BackendError, ConfigError, FixtureError, FixtureMissError
from .imgeom import NormalizationSpec, ResizeFilter, ResizePolicy, to_model_input


class DetectorBackend(ABC):
    """Finds candidate boxes; emits every candidate at its operating floor.

    Threshold filtering is pipeline logic, never the backend's job.
    `detect` normalizes output at the contract boundary: detections come
    back sorted by descending score (stable) and each box must intersect
    the image.
    """

    @property
    @abstractmethod
    def vocabulary(self) -> tuple[str, ...]:
        """Detector class names; index is the emitted class_id."""

    @property
    def score_floor(self) -> float:
        """Minimum score this backend will ever emit."""
        return 0.0

    @abstractmethod
    def _detect(self, image: Image) -> list[Detection]: ...

    def detect(self, image: Image) -> list[Detection]:
        detections = self._detect(image)
        for det in detections:
            if not det.box.intersects(image.width, image.height):
                raise BackendError(
                    f"backend emitted box {det.box.as_tuple()} outside a "
                    f"{image.width}x{image.height} image"
                )
            if det.class_id >= len(self.vocabulary):
                raise BackendError(
                    f"backend emitted class_id {det.class_id} beyond its "
                    f"vocabulary of {len(self.vocabulary)}"
                )
        return sorted(detections, key=lambda d: -d.score)


class ClassifierBackend(ABC):
    """Maps an image to per-class logits over the dataset class registry."""

    @property
    @abstractmethod
    def num_classes(self) -> int: ...

    @abstractmethod
    def classify(self, image: Image) -> ClassScores: ...


class FeatureExtractorBackend(ABC):
    """Maps an image to a fixed-dimension real feature vector."""

    @property
    @abstractmethod
    def feature_dim(self) -> int: ...

    @abstractmethod
    def extract(self, image: Image) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Scripted backends: replay canned outputs keyed by image fingerprint.
# ---------------------------------------------------------------------------

_FIXTURE_KINDS = ("detections", "logits", "features")


@dataclass
class ScriptedFixture:
    """Canned backend outputs keyed by image content hash.

    Lookups are total over the fixture's corpus: a missing fingerprint is
    an error, never a silent default.
    """

    detections: dict[str, tuple[Detection, ...]] = field(default_factory=dict)
    logits: dict[str, np.ndarray] = field(default_factory=dict)
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def add_detections(self, image: Image, dets: list[Detection]) -> None:
        self.detections[image.fingerprint()] = tuple(dets)

    def add_logits(self, image: Image, logits: np.ndarray) -> None:
        self.logits[image.fingerprint()] = np.asarray(logits, dtype=np.float64)

    def add_features(self, image: Image, features: np.ndarray) -> None:
        self.features[image.fingerprint()] = np.asarray(features, dtype=np.float64)

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedFixture":
        fixture = cls()
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FixtureError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            fingerprint, kind, payload = parts
            if kind not in _FIXTURE_KINDS:
                raise FixtureError(f"{path}:{lineno}: unknown record kind {kind!r}")
            try:
                if kind == "detections":
                    fixture.detections[fingerprint] = _parse_detections(payload)
                elif kind == "logits":
                    fixture.logits[fingerprint] = _parse_vector(payload)
                else:
                    fixture.features[fingerprint] = _parse_vector(payload)
            except (ValueError, FixtureError) as exc:
                raise FixtureError(f"{path}:{lineno}: bad payload: {exc}") from exc
        return fixture

    def save(self, path: str | Path) -> None:
        lines: list[str] = []
        for fp, dets in self.detections.items():
            lines.append(f"{fp}\tdetections\t{_format_detections(dets)}")
        for fp, vec in self.logits.items():
            lines.append(f"{fp}\tlogits\t{_format_vector(vec)}")
        for fp, vec in self.features.items():
            lines.append(f"{fp}\tfeatures\t{_format_vector(vec)}")
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def _parse_detections(payload: str) -> tuple[Detection, ...]:
    payload = payload.strip()
    if not payload or payload == "-":
        return ()
    dets = []
    for chunk in payload.split(";"):
        fields = chunk.split(",")
        if len(fields) != 6:
            raise ValueError(f"detection needs 6 comma-separated values, got {chunk!r}")
        x0, y0, x1, y1, score = (float(v) for v in fields[:5])
        dets.append(Detection(BoundingBox(x0, y0, x1, y1), score, int(fields[5])))
    return tuple(dets)


def _format_detections(dets: tuple[Detection, ...]) -> str:
    if not dets:
        return "-"  # keeps the line at 3 fields; "" would be eaten by strip()
    return ";".join(
        f"{d.box.x_min!r},{d.box.y_min!r},{d.box.x_max!r},{d.box.y_max!r},"
        f"{d.score!r},{d.class_id}"
        for d in dets
    )


def _parse_vector(payload: str) -> np.ndarray:
    values = [float(v) for v in payload.split(",") if v.strip()]
    if not values:
        raise ValueError("empty vector payload")
    return np.asarray(values, dtype=np.float64)


def _format_vector(vec: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in vec)


def _fixture_lookup(table: dict, image: Image, kind: str):
    fp = image.fingerprint()
    if fp not in table:
        raise FixtureMissError(f"no {kind} scripted for image fingerprint {fp}")
    return table[fp]


class ScriptedDetector(DetectorBackend):
    def __init__(self, fixture: ScriptedFixture, vocabulary: tuple[str, ...] | None = None):
        self._fixture = fixture
        if vocabulary is None:
            max_id = max(
                (d.class_id for dets in fixture.detections.values() for d in dets),
                default=0,
            )
            vocabulary = tuple(f"class_{i}" for i in range(max_id + 1))
        self._vocabulary = vocabulary

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return self._vocabulary

    def _detect(self, image: Image) -> list[Detection]:
        return list(_fixture_lookup(self._fixture.detections, image, "detections"))


class ScriptedClassifier(ClassifierBackend):
    def __init__(self, fixture: ScriptedFixture, num_classes: int):
        self._fixture = fixture
        self._num_classes = num_classes

    @property
    def num_classes(self) -> int:
        return self._num_classes

    def classify(self, image: Image) -> ClassScores:
        logits = _fixture_lookup(self._fixture.logits, image, "logits")
        if logits.size != self._num_classes:
            raise BackendError(
                f"fixture logits length {logits.size} != registry size {self._num_classes}"
            )
        return ClassScores(logits)


class ScriptedFeatureExtractor(FeatureExtractorBackend):
    def __init__(self, fixture: ScriptedFixture, feature_dim: int):
        self._fixture = fixture
        self._feature_dim = feature_dim

    @property
    def feature_dim(self) -> int:
        return self._feature_dim

    def extract(self, image: Image) -> np.ndarray:
        vec = _fixture_lookup(self._fixture.features, image, "features")
        if vec.size != self._feature_dim:
            raise BackendError(
                f"fixture features length {vec.size} != declared dim {self._feature_dim}"
            )
        return vec


# ---------------------------------------------------------------------------
# Synthetic backends: analytic stand-ins for the trained detector/classifier,
# matched to the synthetic corpus generator.
# ---------------------------------------------------------------------------

# Pixels whose chroma (max-min channel) exceeds this 0..255 threshold count
# as part of a colored object rather than the gray/noise background.
CHROMA_THRESHOLD_U8 = 100
# Connected regions smaller than this fraction of the frame are treated as
# background speckle, not objects.
MIN_REGION_FRACTION = 0.002


class SyntheticShapeDetector(DetectorBackend):
    """Finds the single saturated rectangle of a synthetic image.

    Thresholds per-pixel chroma against the gray-noise background, takes
    the largest 8-connected region at least `min_region_fraction` of the
    frame, and returns its tight bounding box. Rows and columns carrying
    less than half the region's peak occupancy are trimmed first, so
    background speckle that happens to touch the rectangle cannot inflate
    the box. The score is the fraction of box pixels inside the region,
    so a solid rectangle scores ~1.
    """

    def __init__(
        self,
        chroma_threshold: int = CHROMA_THRESHOLD_U8,
        min_region_fraction: float = MIN_REGION_FRACTION,
    ):
        self._chroma_threshold = chroma_threshold
        self._min_region_fraction = min_region_fraction

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return ("object",)

    def _detect(self, image: Image) -> list[Detection]:
        p = image.pixels.astype(np.int16)
        chroma = p.max(axis=2) - p.min(axis=2)
        mask = chroma >= self._chroma_threshold
        if not mask.any():
            return []
        labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=np.int8))
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        biggest = int(sizes.argmax())
        min_area = self._min_region_fraction * image.width * image.height
        if sizes[biggest] < min_area:
            return []
        region = labels == biggest
        rows = region.sum(axis=1)
        cols = region.sum(axis=0)
        solid_rows = np.nonzero(rows >= 0.5 * rows.max())[0]
        solid_cols = np.nonzero(cols >= 0.5 * cols.max())[0]
        y0, y1 = int(solid_rows.min()), int(solid_rows.max()) + 1
        x0, x1 = int(solid_cols.min()), int(solid_cols.max()) + 1
        box = BoundingBox(float(x0), float(y0), float(x1), float(y1))
        score = float(region[y0:y1, x0:x1].mean())
        return [Detection(box, min(score, 1.0), 0)]


# Logit scale chosen so a clean hue match lands near gain/2 = 10, which
# clears the crop-confidence gates used by the shipped pipeline presets.
HUE_LOGIT_GAIN = 20.0


class SyntheticColorClassifier(ClassifierBackend):
    """Scores classes by how close the image's dominant hue sits to each band.

    The dominant hue is the chroma-weighted circular mean, so gray noise
    and black padding contribute almost nothing. Logits are
    gain * (0.5 - circular_distance(mean_hue, band_center)).
    """

    def __init__(
        self,
        hue_bands: tuple[tuple[float, float], ...],
        gain: float = HUE_LOGIT_GAIN,
    ):
        validate_hue_bands(hue_bands)
        self._centers = tuple(band_center(b) for b in hue_bands)
        self._gain = gain

    @classmethod
    def for_classes(cls, n_classes: int, gain: float = HUE_LOGIT_GAIN):
        return cls(default_hue_bands(n_classes), gain=gain)

    @property
    def num_classes(self) -> int:
        return len(self._centers)

    def classify(self, image: Image) -> ClassScores:
        mean_hue = weighted_mean_hue(image.pixels)
        logits = np.array(
            [
                self._gain * (0.5 - circular_hue_distance(mean_hue, center))
                for center in self._centers
            ],
            dtype=np.float64,
        )
        return ClassScores(logits)


# ---------------------------------------------------------------------------
# TorchScript adapter: real serialized-graph inference behind the contracts.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IoSpec:
    """Input layout and output decoding for a serialized model artifact."""

    role: str  # detector | classifier | feature_extractor
    input_policy: ResizePolicy
    normalization: NormalizationSpec
    outputs: dict[str, int]  # role-specific tensor indices
    score_floor: float = 0.0

    REQUIRED_OUTPUTS = {
        "detector": ("boxes", "scores", "classes"),
        "classifier": ("logits",),
        "feature_extractor": ("features",),
    }

    def __post_init__(self) -> None:
        if self.role not in self.REQUIRED_OUTPUTS:
            raise ConfigError(f"unknown io_spec role {self.role!r}")
        for name in self.REQUIRED_OUTPUTS[self.role]:
            if name not in self.outputs:
                raise ConfigError(
                    f"io_spec for role {self.role!r} is missing output.{name}"
                )


def load_io_spec(path: str | Path) -> IoSpec:
    from .config import KvConfig  # local import to avoid a cycle

    kv = KvConfig.load(path)
    role = kv.get_str("role")
    policy = ResizePolicy(
        width=kv.get_int("input.width"),
        height=kv.get_int("input.height"),
        filter=ResizeFilter(kv.get_str("input.filter", "bilinear")),
    )
    mean = kv.get_floats("norm.mean", [0.485, 0.456, 0.406])
    std = kv.get_floats("norm.std", [0.229, 0.224, 0.225])
    norm = NormalizationSpec(tuple(mean), tuple(std))
    outputs = {}
    for name in IoSpec.REQUIRED_OUTPUTS.get(role, ()):
        key = f"output.{name}"
        if kv.has(key):
            outputs[name] = kv.get_int(key)
    return IoSpec(
        role=role,
        input_policy=policy,
        normalization=norm,
        outputs=outputs,
        score_floor=kv.get_float("score_floor", 0.0),
    )


class _TorchScriptRunner:
    """Loads a TorchScript artifact and runs deterministic CPU inference.

    The wrapped module is not assumed thread-safe, so calls are serialized
    behind a lock; the backend as a whole stays safe for concurrent use.
    """

    def __init__(self, artifact: str | Path, spec: IoSpec):
        try:
            import torch
        except ImportError as exc:  # pragma: no cover - torch is an extra
            raise BackendError(
                "the torchscript adapter requires the 'torch' extra"
            ) from exc
        self._torch = torch
        torch.set_num_threads(1)
        try:
            self._module = torch.jit.load(str(artifact), map_location="cpu")
        except Exception as exc:
            raise BackendError(f"cannot load model artifact {artifact}: {exc}") from exc
        self._module.eval()
        self._spec = spec
        self._lock = threading.Lock()

    def run(self, image: Image) -> tuple[np.ndarray, ...]:
        tensor = to_model_input(image, self._spec.input_policy, self._spec.normalization)
        with self._lock, self._torch.no_grad():
            raw = self._module(self._torch.from_numpy(tensor[None, ...]))
        if not isinstance(raw, tuple):
            raw = (raw,)
        return tuple(t.detach().cpu().numpy() for t in raw)

    def output(self, raw: tuple[np.ndarray, ...], name: str) -> np.ndarray:
        idx = self._spec.outputs[name]
        if idx >= len(raw):
            raise ConfigError(
                f"io_spec points output.{name} at tensor {idx} but the model "
                f"returned only {len(raw)} outputs"
            )
        return raw[idx]


class TorchScriptClassifier(ClassifierBackend):
    def __init__(self, artifact: str | Path, spec: IoSpec, expected_classes: int):
        if spec.role != "classifier":
            raise ConfigError(f"io_spec role {spec.role!r} is not 'classifier'")
        self._runner = _TorchScriptRunner(artifact, spec)
        self._num_classes = expected_classes
        probe = Image.filled(spec.input_policy.width, spec.input_policy.height, (0, 0, 0))
        logits = self._decode(self._runner.run(probe))
        if logits.size != expected_classes:
            raise ConfigError(
                f"model emits {logits.size} logits but the class registry "
                f"holds {expected_classes} classes"
            )

    def _decode(self, raw: tuple[np.ndarray, ...]) -> np.ndarray:
        logits = np.asarray(self._runner.output(raw, "logits"), dtype=np.float64)
        return logits.reshape(-1)

    @property
    def num_classes(self) -> int:
        return self._num_classes

    def classify(self, image: Image) -> ClassScores:
        return ClassScores(self._decode(self._runner.run(image)))


class TorchScriptFeatureExtractor(FeatureExtractorBackend):
    def __init__(self, artifact: str | Path, spec: IoSpec, expected_dim: int | None = None):
        if spec.role != "feature_extractor":
            raise ConfigError(f"io_spec role {spec.role!r} is not 'feature_extractor'")
        self._runner = _TorchScriptRunner(artifact, spec)
        probe = Image.filled(spec.input_policy.width, spec.input_policy.height, (0, 0, 0))
        vec = self._decode(self._runner.run(probe))
        if expected_dim is not None and vec.size != expected_dim:
            raise ConfigError(
                f"model emits {vec.size} features but {expected_dim} were declared"
            )
        self._feature_dim = int(vec.size)

    def _decode(self, raw: tuple[np.ndarray, ...]) -> np.ndarray:
        return np.asarray(self._runner.output(raw, "features"), dtype=np.float64).reshape(-1)

    @property
    def feature_dim(self) -> int:
        return self._feature_dim

    def extract(self, image: Image) -> np.ndarray:
        vec = self._decode(self._runner.run(image))
        if vec.size != self._feature_dim:
            raise BackendError(
                f"model emitted {vec.size} features, expected {self._feature_dim}"
            )
        return vec


class TorchScriptDetector(DetectorBackend):
    """Detector adapter; boxes come back in the original image frame.

    The io_spec's box convention is xyxy in the model's input resolution;
    they are rescaled to the source image before being emitted.
    """

    def __init__(self, artifact: str | Path, spec: IoSpec, vocabulary: tuple[str, ...]):
        if spec.role != "detector":
            raise ConfigError(f"io_spec role {spec.role!r} is not 'detector'")
        self._runner = _TorchScriptRunner(artifact, spec)
        self._vocabulary = vocabulary
        self._spec = spec
        probe = Image.filled(spec.input_policy.width, spec.input_policy.height, (0, 0, 0))
        self._decode(self._runner.run(probe), probe)

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return self._vocabulary

    @property
    def score_floor(self) -> float:
        return self._spec.score_floor

    def _decode(self, raw: tuple[np.ndarray, ...], image: Image) -> list[Detection]:
        boxes = np.asarray(self._runner.output(raw, "boxes"), dtype=np.float64)
        scores = np.asarray(self._runner.output(raw, "scores"), dtype=np.float64).reshape(-1)
        classes = np.asarray(self._runner.output(raw, "classes")).reshape(-1)
        boxes = boxes.reshape(-1, 4) if boxes.size else boxes.reshape(0, 4)
        if not (boxes.shape[0] == scores.shape[0] == classes.shape[0]):
            raise ConfigError(
                "detector outputs disagree on candidate count: "
                f"{boxes.shape[0]} boxes, {scores.shape[0]} scores, "
                f"{classes.shape[0]} classes"
            )
        sx = image.width / self._spec.input_policy.width
        sy = image.height / self._spec.input_policy.height
        dets = []
        for (x0, y0, x1, y1), score, cid in zip(boxes, scores, classes):
            if not 0.0 <= score <= 1.0:
                raise BackendError(f"detector emitted score {score} outside [0, 1]")
            dets.append(
                Detection(
                    BoundingBox(x0 * sx, y0 * sy, x1 * sx, y1 * sy),
                    float(score),
                    int(cid),
                )
            )
        return dets

    def _detect(self, image: Image) -> list[Detection]:
        return self._decode(self._runner.run(image), image)


def load_torchscript_backend(
    artifact: str | Path,
    io_spec_path: str | Path,
    *,
    expected_classes: int | None = None,
    vocabulary: tuple[str, ...] | None = None,
):
    """Construct the adapter matching the io_spec's declared role."""
    if not Path(artifact).exists():
        raise BackendError(f"model artifact not found: {artifact}")
    spec = load_io_spec(io_spec_path)
    if spec.role == "classifier":
        if expected_classes is None:
            raise ConfigError("a classifier adapter needs the registry size")
        return TorchScriptClassifier(artifact, spec, expected_classes)
    if spec.role == "detector":
        if vocabulary is None:
            raise ConfigError("a detector adapter needs a vocabulary")
        return TorchScriptDetector(artifact, spec, vocabulary)
    return TorchScriptFeatureExtractor(artifact, spec)
