"""Independent oracles and case builders shared across the test modules.

Everything here is a *separate* implementation of the rules the package
implements, kept deliberately naive so that agreement is evidence rather
than tautology:

* the pipeline oracle walks the decision rules with plain Python loops,
  keyed by box coordinates instead of image content;
* the QP oracle solves the SVM dual by accelerated projected gradient with
  an exact bisection projection onto the box-hyperplane feasible set;
* the PCA oracle is an SVD of the centered data, not an eigendecomposition.
"""

from __future__ import annotations

import numpy as np

from cropcascade import (
    BoundingBox,
    ClassRegistry,
    CropPreprocess,
    Detection,
    Image,
    PipelineConfig,
    ResizeFilter,
    ResizePolicy,
    ScriptedClassifier,
    ScriptedDetector,
    ScriptedFixture,
    Strategy,
)

# ---------------------------------------------------------------------------
# Prose-rule pipeline oracle
# ---------------------------------------------------------------------------


def oracle_cascade_filter(detections, thresholds, class_filter=None):
    """First productive threshold level wins; order is preserved."""
    eligible = [
        d for d in detections if class_filter is None or d.class_id in class_filter
    ]
    for threshold in thresholds:
        level = [d for d in eligible if d.score >= threshold]
        if level:
            return level
    return []


def _argmax_lowest(values):
    """Index of the maximum; ties resolve to the lowest index."""
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def sort_detections(detections):
    """Backend contract order: descending score, ties keep original order."""
    indexed = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    return [detections[i] for i in indexed]


def oracle_pipeline(
    strategy: str,
    detections,
    thresholds,
    gate: float,
    class_filter,
    crop_logits: dict,
    whole_logits,
):
    """Expected (class_id, confidence, source, box tuple or None).

    `detections` is the raw backend output (any order); `crop_logits` maps a
    detection's box tuple to the logits its crop would classify to.
    """
    ordered = sort_detections(detections)
    survivors = oracle_cascade_filter(ordered, thresholds, class_filter)
    if strategy == "top_confidence":
        best_conf, best_det = None, None
        for det in survivors:
            logits = crop_logits[det.box.as_tuple()]
            conf = max(logits)
            if best_conf is None or conf > best_conf:
                best_conf, best_det = conf, det
        if best_conf is not None and best_conf >= gate:
            logits = crop_logits[best_det.box.as_tuple()]
            return (
                _argmax_lowest(logits),
                max(logits),
                "crop",
                best_det.box.as_tuple(),
            )
    elif strategy == "per_box_loop":
        for det in survivors:
            logits = crop_logits[det.box.as_tuple()]
            conf = max(logits)
            if conf >= gate:
                return (_argmax_lowest(logits), conf, "crop", det.box.as_tuple())
    else:
        raise ValueError(f"oracle does not know strategy {strategy!r}")
    return (
        _argmax_lowest(whole_logits),
        max(whole_logits),
        "fallback_whole_image",
        None,
    )


# ---------------------------------------------------------------------------
# Scripted-fixture case builder for the randomized pipeline comparison
# ---------------------------------------------------------------------------

BASE_SIZE = 6
CROP_POLICY = ResizePolicy(8, 8, ResizeFilter.NEAREST)
PREPROCESS = CropPreprocess(CROP_POLICY)
CASE_REGISTRY = ClassRegistry(("c0", "c1", "c2"))
DETECTOR_VOCAB = ("thing", "other", "misc")


def make_base_image(seed: int = 123) -> Image:
    """A BASE_SIZE x BASE_SIZE image whose red channel is distinct per pixel,
    so every distinct integer crop has distinct content."""
    rng = np.random.default_rng(seed)
    red = rng.permutation(256)[: BASE_SIZE * BASE_SIZE].reshape(BASE_SIZE, BASE_SIZE)
    pixels = np.empty((BASE_SIZE, BASE_SIZE, 3), dtype=np.uint8)
    pixels[:, :, 0] = red
    pixels[:, :, 1] = rng.integers(0, 256, (BASE_SIZE, BASE_SIZE))
    pixels[:, :, 2] = rng.integers(0, 256, (BASE_SIZE, BASE_SIZE))
    return Image(pixels)


def all_integer_boxes():
    boxes = []
    for x0 in range(BASE_SIZE):
        for x1 in range(x0 + 1, BASE_SIZE + 1):
            for y0 in range(BASE_SIZE):
                for y1 in range(y0 + 1, BASE_SIZE + 1):
                    boxes.append(BoundingBox(float(x0), float(y0), float(x1), float(y1)))
    return boxes


def crop_fingerprints(image: Image, boxes) -> dict:
    """box tuple -> fingerprint of the preprocessed crop the pipeline will see."""
    return {b.as_tuple(): PREPROCESS.apply(image, b).fingerprint() for b in boxes}


def build_random_case(rng: np.random.Generator, boxes):
    """One randomized pipeline case; returns a dict of its ingredients."""
    n_classes = len(CASE_REGISTRY)
    n_boxes = int(rng.integers(0, 7))
    chosen = [boxes[int(i)] for i in rng.integers(0, len(boxes), n_boxes)]

    if rng.random() < 0.5:
        thresholds = (0.3, 0.1, 0.01) if rng.random() < 0.5 else (0.5, 0.2, 0.01)
    else:
        raw = {round(float(v), 3) for v in rng.uniform(0.002, 1.0, int(rng.integers(1, 5)))}
        raw = {v for v in raw if v > 0.0} or {0.5}
        thresholds = tuple(sorted(raw, reverse=True))

    detections = []
    for box in chosen:
        if rng.random() < 0.35:
            score = float(thresholds[int(rng.integers(0, len(thresholds)))])
        else:
            score = float(rng.uniform(0.001, 1.0))
        detections.append(Detection(box, score, int(rng.integers(0, n_classes))))

    class_filter = None
    if rng.random() < 0.4:
        k = int(rng.integers(1, n_classes + 1))
        class_filter = frozenset(int(v) for v in rng.choice(n_classes, k, replace=False))

    crop_logits = {}
    for det in detections:
        logits = [float(v) for v in rng.normal(0.0, 5.0, n_classes)]
        if rng.random() < 0.2 and n_classes >= 2:
            logits[1] = logits[0]  # exercise the argmax tie rule
        crop_logits[det.box.as_tuple()] = logits
    whole_logits = [float(v) for v in rng.normal(0.0, 5.0, n_classes)]

    if crop_logits and rng.random() < 0.3:
        pick = list(crop_logits.values())[int(rng.integers(0, len(crop_logits)))]
        gate = max(pick)  # exact-boundary gate
    else:
        gate = float(rng.uniform(-8.0, 12.0))

    return {
        "detections": detections,
        "thresholds": thresholds,
        "gate": gate,
        "class_filter": class_filter,
        "crop_logits": crop_logits,
        "whole_logits": whole_logits,
    }


def scripted_pipeline_config(strategy: Strategy, case, base_image: Image, fp_by_box):
    """Wire a case into ScriptedDetector/ScriptedClassifier backends."""
    fixture = ScriptedFixture()
    fixture.detections[base_image.fingerprint()] = tuple(case["detections"])
    for box_tuple, logits in case["crop_logits"].items():
        fixture.logits[fp_by_box[box_tuple]] = np.asarray(logits, dtype=np.float64)
    fixture.logits[base_image.fingerprint()] = np.asarray(
        case["whole_logits"], dtype=np.float64
    )
    classifier = ScriptedClassifier(fixture, len(CASE_REGISTRY))
    return PipelineConfig(
        strategy=strategy,
        detector_thresholds=case["thresholds"],
        classification_gate=case["gate"],
        crop_preprocess=PREPROCESS,
        crop_classifier=classifier,
        fallback_classifier=classifier,
        registry=CASE_REGISTRY,
        detector=ScriptedDetector(fixture, DETECTOR_VOCAB),
        class_filter=case["class_filter"],
    )


# ---------------------------------------------------------------------------
# QP oracle for the SVM dual
# ---------------------------------------------------------------------------


def svm_dual_objective(alpha, K, y) -> float:
    """0.5 a'Qa - e'a with Q = (yy') * K."""
    Q = K * np.outer(y, y)
    return 0.5 * float(alpha @ Q @ alpha) - float(alpha.sum())


def project_box_hyperplane(v, y, C: float):
    """Exact Euclidean projection of v onto {0 <= a <= C, y'a = 0}, y in {-1,+1}.

    The projection is clip(v - lam*y, 0, C) for the lam making y'a zero;
    y'a(lam) is non-increasing in lam, so bisection finds it exactly.
    """
    bound = float(np.abs(v).max(initial=0.0)) + C + 1.0
    lo, hi = -bound, bound
    for _ in range(100):
        lam = 0.5 * (lo + hi)
        if float(y @ np.clip(v - lam * y, 0.0, C)) > 0.0:
            lo = lam
        else:
            hi = lam
    return np.clip(v - 0.5 * (lo + hi) * y, 0.0, C)


def qp_oracle(K, y, C: float, max_iters: int = 300_000):
    """Solve the SVM dual by accelerated projected gradient descent.

    Returns alpha with first-order optimality verified to 1e-10; raises if
    the iteration budget runs out first, so a non-converged oracle can never
    silently bless a wrong answer.
    """
    y = np.asarray(y, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    Q = K * np.outer(y, y)
    n = y.size
    step = 1.0 / max(float(np.linalg.eigvalsh(Q).max()), 1e-9)

    def pg_step(point):
        return project_box_hyperplane(point - step * (Q @ point - 1.0), y, C)

    a = project_box_hyperplane(np.zeros(n), y, C)
    z, t = a.copy(), 1.0
    f_a = svm_dual_objective(a, K, y)
    for iteration in range(max_iters):
        a_new = pg_step(z)
        f_new = svm_dual_objective(a_new, K, y)
        if f_new > f_a:  # momentum overshoot: restart from the best point
            z, t = a.copy(), 1.0
            a_new = pg_step(z)
            f_new = svm_dual_objective(a_new, K, y)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = a_new + ((t - 1.0) / t_next) * (a_new - a)
        moved = float(np.max(np.abs(a_new - a), initial=0.0))
        a, t, f_a = a_new, t_next, f_new
        if moved < 1e-13:
            if float(np.max(np.abs(pg_step(a) - a))) < 1e-10:
                return a
    raise AssertionError(f"QP oracle did not converge within {max_iters} iterations")


def kkt_max_violation(alpha, K, y, C: float, b: float) -> float:
    """Largest violation of the KKT margin conditions at a candidate solution."""
    f = (alpha * y) @ K + b
    worst = 0.0
    eps = 1e-9 * max(C, 1.0)
    for i in range(y.size):
        margin = float(y[i] * f[i])
        if alpha[i] <= eps:
            worst = max(worst, 1.0 - margin)
        elif alpha[i] >= C - eps:
            worst = max(worst, margin - 1.0)
        else:
            worst = max(worst, abs(margin - 1.0))
    return worst
