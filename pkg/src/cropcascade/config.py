"""Key-value config files, shipped presets, and config -> pipeline wiring.

The config grammar is deliberately tiny: UTF-8 lines of `key = value`,
`#` comments, dotted lowercase keys, values typed by the reader. Three
layers merge in increasing precedence: a named preset, a user config
file, then command-line flag overrides.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .backends import (
    ScriptedClassifier,
    ScriptedDetector,
    ScriptedFixture,
    SyntheticColorClassifier,
    SyntheticShapeDetector,
    load_torchscript_backend,
)
from .cascade import CropPreprocess, PipelineConfig, Strategy
from .core import ClassRegistry, Split
from .datagen import NOISE_PRESETS, SyntheticSpec
from .errors import ConfigError
from .imgeom import ResizeFilter, ResizePolicy

_MISSING = object()

PRESET_NAMES = ("model1", "model2", "model3", "model4", "model5", "model6")

# Keys holding file paths; resolved against their source's directory the
# moment a config layer is read, so later merging never loses the origin.
_PATH_KEYS = ("registry", "manifest", "out", "features", "model", "records", "review", "truth")
_PATH_SUFFIXES = (".fixture", ".artifact", ".io_spec")


class KvConfig:
    """An ordered key -> raw-string mapping with typed readers."""

    def __init__(self, values: dict[str, str] | None = None, origin: str = "<memory>"):
        self._values: dict[str, str] = dict(values or {})
        self.origin = origin

    @classmethod
    def parse(cls, text: str, origin: str = "<string>") -> "KvConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{origin}:{lineno}: expected `key = value`, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key or not all(c.isalnum() and c.islower() or c in "._" for c in key):
                raise ConfigError(
                    f"{origin}:{lineno}: keys are lowercase dotted words, got {key!r}"
                )
            if key in values:
                raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
            values[key] = value.strip()
        return cls(values, origin)

    @classmethod
    def load(cls, path: str | Path) -> "KvConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        kv = cls.parse(text, origin=str(path))
        kv._absolutize(path.parent)
        return kv

    def _absolutize(self, base_dir: Path) -> None:
        for key, value in self._values.items():
            is_path = key in _PATH_KEYS or any(key.endswith(s) for s in _PATH_SUFFIXES)
            if is_path and value and not Path(value).is_absolute():
                self._values[key] = str((base_dir / value).resolve())

    def merged(self, other: "KvConfig") -> "KvConfig":
        """New config where `other`'s keys win."""
        values = dict(self._values)
        values.update(other._values)
        return KvConfig(values, origin=f"{self.origin}+{other.origin}")

    def has(self, key: str) -> bool:
        return key in self._values

    def keys(self) -> tuple[str, ...]:
        return tuple(self._values)

    def _raw(self, key: str, default):
        if key in self._values:
            return self._values[key]
        if default is _MISSING:
            raise ConfigError(f"{self.origin}: missing required key {key!r}")
        return default

    def get_str(self, key: str, default=_MISSING) -> str:
        return self._raw(key, default)

    def get_int(self, key: str, default=_MISSING) -> int:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{self.origin}: key {key!r} needs an integer, got {value!r}")

    def get_float(self, key: str, default=_MISSING) -> float:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{self.origin}: key {key!r} needs a number, got {value!r}")

    def get_bool(self, key: str, default=_MISSING) -> bool:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        lowered = value.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ConfigError(f"{self.origin}: key {key!r} needs a boolean, got {value!r}")

    def get_floats(self, key: str, default=_MISSING) -> list[float]:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return list(value)
        try:
            return [float(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{self.origin}: key {key!r} needs comma-separated numbers")

    def get_ints(self, key: str, default=_MISSING) -> list[int]:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return list(value)
        try:
            return [int(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{self.origin}: key {key!r} needs comma-separated integers")


def load_preset(name: str) -> KvConfig:
    """Read one of the packaged pipeline presets."""
    if name not in PRESET_NAMES:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        )
    text = resources.files("cropcascade.presets").joinpath(f"{name}.kv").read_text("utf-8")
    return KvConfig.parse(text, origin=f"preset:{name}")


def compose_config(
    preset: str | None = None,
    config_path: str | Path | None = None,
    overrides: dict[str, str] | None = None,
) -> KvConfig:
    """Merge preset < config file < explicit overrides."""
    kv = KvConfig({}, origin="defaults")
    if preset:
        kv = kv.merged(load_preset(preset))
    if config_path:
        kv = kv.merged(KvConfig.load(config_path))
    if overrides:
        override_kv = KvConfig(dict(overrides), origin="flags")
        override_kv._absolutize(Path.cwd())
        kv = kv.merged(override_kv)
    return kv


_KNOWN_KEYS = {
    "registry", "manifest", "out", "jobs", "strict",
    "strategy", "detector_thresholds", "classification_gate", "class_filter",
    "floor_threshold", "crop.size", "crop.filter",
    "svm.c", "svm.gamma", "svm.tol", "pca.enabled", "pca.variance_fraction",
    "synth.classes", "synth.image_size", "synth.noise", "synth.seed",
    "synth.rect_min", "synth.rect_max",
    "synth.train", "synth.val", "synth.test", "synth.final_test",
    "features", "model", "records", "review", "truth",
}
_KNOWN_ROLE_KEYS = {"kind", "fixture", "artifact", "io_spec", "vocabulary"}
_ROLES = ("detector", "classifier", "fallback")


@dataclass(frozen=True)
class BackendSpec:
    """How to construct one backend: implementation kind plus its inputs."""

    kind: str  # synthetic | scripted | torchscript
    fixture: str | None = None
    artifact: str | None = None
    io_spec: str | None = None
    vocabulary: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("synthetic", "scripted", "torchscript"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "scripted" and not self.fixture:
            raise ConfigError("scripted backends need a fixture path")
        if self.kind == "torchscript" and not (self.artifact and self.io_spec):
            raise ConfigError("torchscript backends need artifact and io_spec paths")


def _backend_spec(kv: KvConfig, role: str, default_kind: str | None) -> BackendSpec | None:
    if not any(kv.has(f"{role}.{k}") for k in _KNOWN_ROLE_KEYS):
        if default_kind is None:
            return None
        return BackendSpec(kind=default_kind)
    vocab_text = kv.get_str(f"{role}.vocabulary", "")
    vocabulary = tuple(v.strip() for v in vocab_text.split(",") if v.strip()) or None
    return BackendSpec(
        kind=kv.get_str(f"{role}.kind", "synthetic"),
        fixture=kv.get_str(f"{role}.fixture", None),
        artifact=kv.get_str(f"{role}.artifact", None),
        io_spec=kv.get_str(f"{role}.io_spec", None),
        vocabulary=vocabulary,
    )


@dataclass(frozen=True)
class AppConfig:
    """Validated, typed view of a merged config."""

    registry_path: str | None
    manifest_path: str | None
    out_dir: str | None
    jobs: int
    strict: bool
    strategy: Strategy
    detector_thresholds: tuple[float, ...]
    classification_gate: float
    class_filter: frozenset[int] | None
    floor_threshold: float
    crop_size: int
    crop_filter: ResizeFilter
    detector: BackendSpec
    classifier: BackendSpec
    fallback: BackendSpec
    svm_c: float
    svm_gamma: float | str
    svm_tol: float
    pca_enabled: bool
    pca_variance_fraction: float
    synth: SyntheticSpec
    synth_counts: dict

    @classmethod
    def from_kv(cls, kv: KvConfig) -> "AppConfig":
        unknown = [
            key
            for key in kv.keys()
            if key not in _KNOWN_KEYS
            and not (
                "." in key
                and key.split(".", 1)[0] in _ROLES
                and key.split(".", 1)[1] in _KNOWN_ROLE_KEYS
            )
        ]
        if unknown:
            raise ConfigError(f"{kv.origin}: unknown config keys: {', '.join(sorted(unknown))}")
        gamma_text = kv.get_str("svm.gamma", "scale")
        svm_gamma: float | str = "scale"
        if gamma_text != "scale":
            try:
                svm_gamma = float(gamma_text)
            except ValueError:
                raise ConfigError(
                    f"{kv.origin}: svm.gamma must be a number or 'scale', got {gamma_text!r}"
                )
        filter_text = kv.get_str("crop.filter", "bilinear")
        try:
            crop_filter = ResizeFilter(filter_text)
        except ValueError:
            raise ConfigError(f"{kv.origin}: unknown crop.filter {filter_text!r}")
        class_filter_ids = kv.get_ints("class_filter", [])
        noise_name = kv.get_str("synth.noise", "easy")
        if noise_name not in NOISE_PRESETS:
            raise ConfigError(
                f"{kv.origin}: synth.noise must be one of {', '.join(NOISE_PRESETS)}"
            )
        synth = SyntheticSpec(
            n_classes=kv.get_int("synth.classes", 44),
            image_size=kv.get_int("synth.image_size", 128),
            rect_fraction=(
                kv.get_float("synth.rect_min", 0.15),
                kv.get_float("synth.rect_max", 0.6),
            ),
            noise=NOISE_PRESETS[noise_name](),
            seed=kv.get_int("synth.seed", 0),
        )
        counts = {
            split: kv.get_int(f"synth.{split.value}", 0) for split in Split
        }
        classifier = _backend_spec(kv, "classifier", "synthetic")
        fallback = _backend_spec(kv, "fallback", None) or classifier
        return cls(
            registry_path=kv.get_str("registry", None),
            manifest_path=kv.get_str("manifest", None),
            out_dir=kv.get_str("out", None),
            jobs=kv.get_int("jobs", 1),
            strict=kv.get_bool("strict", True),
            strategy=Strategy.parse(kv.get_str("strategy", "whole_image")),
            detector_thresholds=tuple(kv.get_floats("detector_thresholds", [0.3, 0.1, 0.01])),
            classification_gate=kv.get_float("classification_gate", 9.0),
            class_filter=frozenset(class_filter_ids) if class_filter_ids else None,
            floor_threshold=kv.get_float("floor_threshold", 0.05),
            crop_size=kv.get_int("crop.size", 1024),
            crop_filter=crop_filter,
            detector=_backend_spec(kv, "detector", "synthetic"),
            classifier=classifier,
            fallback=fallback,
            svm_c=kv.get_float("svm.c", 50.0),
            svm_gamma=svm_gamma,
            svm_tol=kv.get_float("svm.tol", 1e-3),
            pca_enabled=kv.get_bool("pca.enabled", True),
            pca_variance_fraction=kv.get_float("pca.variance_fraction", 0.99),
            synth=synth,
            synth_counts=counts,
        )

    # -- construction helpers -------------------------------------------------

    def load_registry(self) -> ClassRegistry:
        """The configured registry file, or the synthetic class names."""
        if self.registry_path:
            return ClassRegistry.load(self.registry_path)
        return ClassRegistry(self.synth.class_names())

    def build_detector(self):
        spec = self.detector
        if spec.kind == "synthetic":
            return SyntheticShapeDetector()
        if spec.kind == "scripted":
            return ScriptedDetector(ScriptedFixture.load(spec.fixture), spec.vocabulary)
        return load_torchscript_backend(
            spec.artifact, spec.io_spec, vocabulary=spec.vocabulary or ("object",)
        )

    def build_classifier(self, registry: ClassRegistry, spec: BackendSpec | None = None):
        spec = spec or self.classifier
        if spec.kind == "synthetic":
            return SyntheticColorClassifier.for_classes(len(registry))
        if spec.kind == "scripted":
            return ScriptedClassifier(ScriptedFixture.load(spec.fixture), len(registry))
        return load_torchscript_backend(
            spec.artifact, spec.io_spec, expected_classes=len(registry)
        )

    def build_pipeline(self, registry: ClassRegistry) -> PipelineConfig:
        classifier = self.build_classifier(registry)
        fallback = (
            classifier
            if self.fallback == self.classifier
            else self.build_classifier(registry, self.fallback)
        )
        detector = None
        if self.strategy is not Strategy.WHOLE_IMAGE:
            detector = self.build_detector()
        return PipelineConfig(
            strategy=self.strategy,
            detector_thresholds=self.detector_thresholds,
            classification_gate=self.classification_gate,
            crop_preprocess=CropPreprocess(
                ResizePolicy(self.crop_size, self.crop_size, self.crop_filter)
            ),
            crop_classifier=classifier,
            fallback_classifier=fallback,
            registry=registry,
            detector=detector,
            class_filter=self.class_filter,
        )
