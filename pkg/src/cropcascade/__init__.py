"""Two-stage detect-then-classify pipelines with confidence cascades.

The package splits into: exact image geometry (`imgeom`), pluggable model
backends (`backends`), the cascade pipeline engine (`cascade`), a
PCA + RBF-SVM baseline (`pca`, `svm`), dataset generation (`datagen`),
evaluation/reporting (`evaluation`), and config/CLI wiring (`config`,
`cli`).
"""

from .backends import (
    ClassifierBackend,
    DetectorBackend,
    FeatureExtractorBackend,
    ScriptedClassifier,
    ScriptedDetector,
    ScriptedFeatureExtractor,
    ScriptedFixture,
    SyntheticColorClassifier,
    SyntheticShapeDetector,
)
from .cascade import (
    CropPreprocess,
    PipelineConfig,
    PipelineVerdict,
    Strategy,
    VerdictSource,
    cascade_filter,
    format_verdict_line,
    parse_verdict_line,
    run_per_box_loop,
    run_pipeline,
    run_top_confidence,
    run_whole_image,
)
from .config import PRESET_NAMES, AppConfig, KvConfig, compose_config, load_preset
from .core import (
    BoundingBox,
    ClassRegistry,
    ClassScores,
    DatasetManifest,
    Detection,
    Image,
    Label,
    ManifestRecord,
    Split,
    load_image,
    load_manifest,
    resolve_image_path,
    save_image,
    save_manifest,
    softmax,
)
from .datagen import (
    CropRecord,
    Dataset2Result,
    NoiseParams,
    ReviewStatus,
    SyntheticSpec,
    apply_review,
    generate_dataset2,
    generate_synthetic_corpus,
    load_crop_records,
    load_ground_truth,
    save_crop_records,
    save_ground_truth,
)
from .errors import (
    BackendError,
    ConfigError,
    ConvergenceError,
    DegenerateDataError,
    DimensionMismatchError,
    EmptyIntersectionError,
    EvaluationError,
    FixtureError,
    FixtureMissError,
    InsufficientDataError,
    InvalidInputError,
    InvalidLabelsError,
    ManifestError,
    ParseError,
    RegistryError,
    ToolkitError,
)
from .evaluation import EvalReport, emit_results_table, evaluate, write_verdicts
from .imgeom import (
    IMAGENET_NORMALIZATION,
    NormalizationSpec,
    ResizeFilter,
    ResizePolicy,
    crop,
    resize,
    square_pad,
    to_model_input,
)
from .pca import VarianceCutoffPCA
from .svm import (
    BinaryRbfSvc,
    OneVsRestRbfSvc,
    SvmBaselineModel,
    load_feature_file,
    load_model,
    rbf_kernel_matrix,
    resolve_gamma,
    save_feature_file,
    save_model,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
