"""RBF-kernel SVMs trained by sequential minimal optimization.

The binary solver works on the standard dual

    min_a  0.5 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C,

with Q_ij = y_i y_j K(x_i, x_j), using maximal-violating-pair working-set
selection: stop once m(a) - M(a) <= tol, where m is the largest and M the
smallest of -y_i grad_i over the up/down index sets. Pair updates clip the
two coordinates exactly onto the feasible box, so alphas hit 0 and C
exactly and KKT bookkeeping stays crisp.

Multiclass is one-vs-rest over the binary machine; ties in the per-class
margins resolve to the lowest class id.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .core import ClassRegistry
from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    InvalidInputError,
    InvalidLabelsError,
    ParseError,
)
from .pca import VarianceCutoffPCA, _validate_matrix

_TAU = 1e-12  # floor for the pair update's quadratic coefficient


def rbf_kernel_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """K[i, j] = exp(-gamma * ||A_i - B_j||^2), computed by norm expansion."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (
        (A * A).sum(axis=1)[:, None]
        + (B * B).sum(axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.clip(sq, 0.0, None, out=sq)
    return np.exp(-gamma * sq)


def resolve_gamma(gamma: float | str, X: np.ndarray) -> float:
    """Turn the 'scale' shorthand (1 / (d * var(X))) into a number."""
    if isinstance(gamma, str):
        if gamma != "scale":
            raise InvalidInputError(f"gamma must be a positive number or 'scale', got {gamma!r}")
        variance = float(X.var())
        if variance <= 0.0:
            raise InvalidInputError("gamma='scale' needs data with nonzero variance")
        return 1.0 / (X.shape[1] * variance)
    gamma = float(gamma)
    if not gamma > 0.0:
        raise InvalidInputError(f"gamma must be positive, got {gamma}")
    return gamma


class BinaryRbfSvc(BaseEstimator, ClassifierMixin):
    """Two-class soft-margin RBF SVM solved by SMO.

    Follows the usual estimator conventions: `classes_` is the sorted label
    pair, the decision function is positive for `classes_[1]`.
    """

    def __init__(
        self,
        C: float = 50.0,
        gamma: float | str = "scale",
        tol: float = 1e-3,
        max_pair_updates: int = 1_000_000,
    ):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_pair_updates = max_pair_updates

    def fit(self, X, y):
        if not self.C > 0.0:
            raise InvalidInputError(f"C must be positive, got {self.C}")
        if not self.tol > 0.0:
            raise InvalidInputError(f"tol must be positive, got {self.tol}")
        X = _validate_matrix(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise DimensionMismatchError(
                f"y has shape {y.shape}, expected ({X.shape[0]},)"
            )
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise InvalidLabelsError(
                f"binary SVM needs exactly 2 classes, got {self.classes_.size}"
            )
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        self.gamma_ = resolve_gamma(self.gamma, X)
        kernel = rbf_kernel_matrix(X, X, self.gamma_)
        alpha, b, updates = _smo_solve(
            kernel, signs, self.C, self.tol, self.max_pair_updates
        )
        self.n_pair_updates_ = updates
        support = np.nonzero(alpha > 0.0)[0]
        self.support_ = support
        self.support_vectors_ = X[support].copy()
        self.dual_coef_ = alpha[support] * signs[support]
        self.intercept_ = b
        self.alpha_ = alpha
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "dual_coef_"):
            raise InvalidInputError("this SVM is not fitted yet")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = _validate_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        kernel = rbf_kernel_matrix(X, self.support_vectors_, self.gamma_)
        return kernel @ self.dual_coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        return self.classes_[(self.decision_function(X) > 0.0).astype(int)]


def _smo_solve(
    kernel: np.ndarray,
    y: np.ndarray,
    C: float,
    tol: float,
    max_pair_updates: int,
) -> tuple[np.ndarray, float, int]:
    """Run SMO to convergence; returns (alpha, intercept, pair updates)."""
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    q_sign = y[:, None] * y[None, :]

    updates = 0
    while True:
        neg_yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        m = neg_yg[up].max() if up.any() else -np.inf
        M = neg_yg[low].min() if low.any() else np.inf
        if m - M <= tol:
            break
        if updates >= max_pair_updates:
            raise ConvergenceError(
                f"SMO exceeded {max_pair_updates} pair updates "
                f"(violation {m - M:.3e} > tol {tol})"
            )
        i = int(np.where(up, neg_yg, -np.inf).argmax())
        j = int(np.where(low, neg_yg, np.inf).argmin())

        quad = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        if quad <= 0.0:
            quad = _TAU
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0.0:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0.0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = total
        d_i, d_j = alpha[i] - old_i, alpha[j] - old_j
        grad += (q_sign[:, i] * kernel[:, i]) * d_i + (q_sign[:, j] * kernel[:, j]) * d_j
        updates += 1

    free = (alpha > 0.0) & (alpha < C)
    neg_yg = -y * grad
    if free.any():
        b = float(neg_yg[free].mean())
    else:
        b = float((m + M) / 2.0)
    return alpha, b, updates


class OneVsRestRbfSvc(BaseEstimator, ClassifierMixin):
    """One binary RBF machine per class; highest margin wins, ties go low."""

    def __init__(
        self,
        C: float = 50.0,
        gamma: float | str = "scale",
        tol: float = 1e-3,
        max_pair_updates: int = 1_000_000,
    ):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_pair_updates = max_pair_updates

    def fit(self, X, y):
        X = _validate_matrix(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise DimensionMismatchError(
                f"y has shape {y.shape}, expected ({X.shape[0]},)"
            )
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise InvalidLabelsError("need at least 2 classes")
        self.gamma_ = resolve_gamma(self.gamma, X)
        self.estimators_ = []
        for cls in self.classes_:
            binary = BinaryRbfSvc(
                C=self.C,
                gamma=self.gamma_,
                tol=self.tol,
                max_pair_updates=self.max_pair_updates,
            )
            binary.fit(X, np.where(y == cls, 1, -1))
            self.estimators_.append(binary)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        if not hasattr(self, "estimators_"):
            raise InvalidInputError("this SVM is not fitted yet")
        return np.column_stack([est.decision_function(X) for est in self.estimators_])

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.decision_function(X).argmax(axis=1)]


# ---------------------------------------------------------------------------
# Feature files: one `class_name<TAB>v1,v2,...` line per sample.
# ---------------------------------------------------------------------------


def load_feature_file(
    path: str | Path, registry: ClassRegistry
) -> tuple[np.ndarray, np.ndarray]:
    """Read a feature table into (X, y) with y as registry class ids."""
    rows: list[np.ndarray] = []
    labels: list[int] = []
    dim: int | None = None
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(
                f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}"
            )
        name, payload = parts
        try:
            class_id = registry.id_of(name)
        except InvalidInputError:
            raise ParseError(f"{path}:{lineno}: unknown class name {name!r}")
        try:
            vec = np.array([float(v) for v in payload.split(",")], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad feature value: {exc}") from exc
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ParseError(
                f"{path}:{lineno}: feature length {vec.size} != {dim} from earlier rows"
            )
        rows.append(vec)
        labels.append(class_id)
    if not rows:
        raise ParseError(f"{path}: no feature rows")
    return np.vstack(rows), np.asarray(labels, dtype=np.int64)


def save_feature_file(
    path: str | Path, X: np.ndarray, y: np.ndarray, registry: ClassRegistry
) -> None:
    X = np.asarray(X, dtype=np.float64)
    lines = [
        registry.name_of(int(cls)) + "\t" + ",".join(repr(float(v)) for v in row)
        for row, cls in zip(X, y)
    ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Trained-baseline persistence: PCA projection + one-vs-rest SVM in one
# little-endian binary artifact.
# ---------------------------------------------------------------------------

_MODEL_MAGIC = b"SVPC"
_MODEL_VERSION = 1


@dataclass
class SvmBaselineModel:
    """A fitted compress-then-classify baseline: optional PCA, then OvR SVM."""

    svm: OneVsRestRbfSvc
    pca: VarianceCutoffPCA | None
    class_names: tuple[str, ...]

    @classmethod
    def train(
        cls,
        X: np.ndarray,
        y: np.ndarray,
        registry: ClassRegistry,
        *,
        C: float = 50.0,
        variance_fraction: float | None = 0.99,
        gamma: float | str = "scale",
        tol: float = 1e-3,
    ) -> "SvmBaselineModel":
        pca = None
        Z = np.asarray(X, dtype=np.float64)
        if variance_fraction is not None:
            pca = VarianceCutoffPCA(variance_fraction=variance_fraction).fit(Z)
            Z = pca.transform(Z)
        svm = OneVsRestRbfSvc(C=C, gamma=gamma, tol=tol).fit(Z, y)
        names = tuple(registry.name_of(int(c)) for c in svm.classes_)
        return cls(svm=svm, pca=pca, class_names=names)

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = np.asarray(X, dtype=np.float64)
        if self.pca is not None:
            Z = self.pca.transform(Z)
        return self.svm.predict(Z)

    def predict_names(self, X: np.ndarray) -> list[str]:
        by_id = {int(c): n for c, n in zip(self.svm.classes_, self.class_names)}
        return [by_id[int(c)] for c in self.predict(X)]


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return struct.pack("<I", arr.size) + arr.tobytes()


def _unpack_array(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    (size,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    end = offset + 8 * size
    if end > len(buf):
        raise ParseError("model file truncated inside an array block")
    return np.frombuffer(buf[offset:end], dtype="<f8").copy(), end


def save_model(path: str | Path, model: SvmBaselineModel) -> None:
    svm = model.svm
    parts = [_MODEL_MAGIC, struct.pack("<BB", _MODEL_VERSION, 1 if model.pca else 0)]
    parts.append(struct.pack("<Id", len(model.class_names), svm.gamma_))
    for name in model.class_names:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
    if model.pca is not None:
        pca = model.pca
        parts.append(struct.pack("<II", pca.n_components_, pca.n_features_in_))
        parts.append(_pack_array(pca.mean_))
        parts.append(_pack_array(pca.components_))
    for cls, est in zip(svm.classes_, svm.estimators_):
        parts.append(struct.pack("<iId", int(cls), est.support_vectors_.shape[1], est.intercept_))
        parts.append(_pack_array(est.dual_coef_))
        parts.append(_pack_array(est.support_vectors_))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> SvmBaselineModel:
    buf = Path(path).read_bytes()
    if buf[:4] != _MODEL_MAGIC:
        raise ParseError(f"{path}: not a baseline model file (bad magic)")
    version, has_pca = struct.unpack_from("<BB", buf, 4)
    if version != _MODEL_VERSION:
        raise ParseError(f"{path}: unsupported model version {version}")
    offset = 6
    n_classes, gamma = struct.unpack_from("<Id", buf, offset)
    offset += struct.calcsize("<Id")
    names = []
    for _ in range(n_classes):
        (length,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        names.append(buf[offset : offset + length].decode("utf-8"))
        offset += length
    pca = None
    if has_pca:
        k, d = struct.unpack_from("<II", buf, offset)
        offset += 8
        mean, offset = _unpack_array(buf, offset)
        flat, offset = _unpack_array(buf, offset)
        pca = VarianceCutoffPCA()
        pca.mean_ = mean
        pca.components_ = flat.reshape(k, d)
        pca.explained_variance_ = np.zeros(k)  # not persisted; projection only
        pca.explained_variance_ratio_ = np.zeros(k)
        pca.n_components_ = int(k)
        pca.n_features_in_ = int(d)
    svm = OneVsRestRbfSvc()
    svm.gamma_ = gamma
    classes = []
    estimators = []
    for _ in range(n_classes):
        cls, sv_dim, intercept = struct.unpack_from("<iId", buf, offset)
        offset += struct.calcsize("<iId")
        dual, offset = _unpack_array(buf, offset)
        flat, offset = _unpack_array(buf, offset)
        est = BinaryRbfSvc()
        est.classes_ = np.array([-1, 1])
        est.gamma_ = gamma
        est.intercept_ = intercept
        est.dual_coef_ = dual
        est.support_vectors_ = flat.reshape(-1, sv_dim) if sv_dim else flat.reshape(0, 0)
        est.n_features_in_ = int(sv_dim)
        classes.append(cls)
        estimators.append(est)
    if offset != len(buf):
        raise ParseError(f"{path}: {len(buf) - offset} trailing bytes after model data")
    svm.classes_ = np.asarray(classes, dtype=np.int64)
    svm.estimators_ = estimators
    svm.n_features_in_ = pca.n_components_ if pca else (
        estimators[0].n_features_in_ if estimators else 0
    )
    return SvmBaselineModel(svm=svm, pca=pca, class_names=tuple(names))
