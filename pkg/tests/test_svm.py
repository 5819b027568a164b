"""SMO-trained RBF SVMs checked against a projected-gradient QP oracle."""

import struct

import numpy as np
import pytest
from sklearn.base import clone

from cropcascade import (
    BinaryRbfSvc,
    ClassRegistry,
    ConvergenceError,
    DimensionMismatchError,
    InvalidInputError,
    InvalidLabelsError,
    OneVsRestRbfSvc,
    ParseError,
    SvmBaselineModel,
    load_feature_file,
    load_model,
    rbf_kernel_matrix,
    resolve_gamma,
    save_feature_file,
    save_model,
)

import support


def blobs(seed: int, centers, per: int, spread: float = 0.4):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for cls, center in enumerate(centers):
        X.append(rng.normal(0.0, spread, (per, len(center))) + np.asarray(center))
        y.extend([cls] * per)
    return np.vstack(X), np.asarray(y)


class TestKernel:
    def test_known_values(self):
        K = rbf_kernel_matrix(np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]), 0.5)
        assert K[0, 0] == pytest.approx(np.exp(-1.0), abs=1e-15)

    def test_diagonal_and_symmetry(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(12, 4))
        K = rbf_kernel_matrix(X, X, 0.7)
        assert np.allclose(np.diag(K), 1.0, atol=1e-12)
        assert np.allclose(K, K.T, atol=1e-12)
        assert np.all(K > 0.0) and np.all(K <= 1.0)

    def test_matches_pairwise_formula(self):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        K = rbf_kernel_matrix(A, B, 1.3)
        for i in range(5):
            for j in range(4):
                d2 = float(((A[i] - B[j]) ** 2).sum())
                assert K[i, j] == pytest.approx(np.exp(-1.3 * d2), rel=1e-12)


class TestResolveGamma:
    def test_scale_formula(self):
        X = np.array([[0.0, 2.0], [2.0, 0.0]])  # overall variance exactly 1
        assert resolve_gamma("scale", X) == pytest.approx(0.5, abs=1e-15)

    def test_numeric_passthrough(self):
        assert resolve_gamma(0.25, np.ones((2, 2))) == 0.25

    def test_rejections(self):
        with pytest.raises(InvalidInputError):
            resolve_gamma("auto", np.eye(2))
        with pytest.raises(InvalidInputError):
            resolve_gamma(-1.0, np.eye(2))
        with pytest.raises(InvalidInputError):
            resolve_gamma(0.0, np.eye(2))
        with pytest.raises(InvalidInputError):
            resolve_gamma("scale", np.ones((3, 2)))  # zero variance


class TestBinarySolver:
    def test_two_point_problem_is_solved_exactly(self):
        # One pair update reaches the optimum: alpha = 1/(1 - k) with
        # k = exp(-gamma * 4), margins exactly +-1 and intercept 0.
        X = np.array([[0.0], [2.0]])
        svc = BinaryRbfSvc(C=50.0, gamma=1.0, tol=1e-3).fit(X, np.array([0, 1]))
        k = np.exp(-4.0)
        expected = 1.0 / (1.0 - k)
        assert svc.alpha_ == pytest.approx([expected, expected], abs=1e-9)
        assert svc.intercept_ == pytest.approx(0.0, abs=1e-9)
        assert svc.decision_function(X) == pytest.approx([-1.0, 1.0], abs=1e-9)
        assert list(svc.predict(X)) == [0, 1]
        assert list(svc.classes_) == [0, 1]
        assert svc.n_pair_updates_ >= 1

    def test_xor_at_c50(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([0, 0, 1, 1])
        svc = BinaryRbfSvc(C=50.0, gamma=1.0, tol=1e-8).fit(X, y)
        assert list(svc.predict(X)) == list(y)

        signs = np.where(y == 1, 1.0, -1.0)
        K = rbf_kernel_matrix(X, X, 1.0)
        oracle_alpha = support.qp_oracle(K, signs, 50.0)
        got = support.svm_dual_objective(svc.alpha_, K, signs)
        want = support.svm_dual_objective(oracle_alpha, K, signs)
        assert abs(got - want) <= 1e-6
        assert support.kkt_max_violation(svc.alpha_, K, signs, 50.0, svc.intercept_) <= 1e-6

    def test_separable_blobs_classify_cleanly(self):
        X, y = blobs(7, [(-3.0, 0.0), (3.0, 0.0)], per=15)
        svc = BinaryRbfSvc(C=50.0).fit(X, y)
        assert np.array_equal(svc.predict(X), y)
        probes = np.array([[-3.0, 0.1], [3.0, -0.1]])
        assert list(svc.predict(probes)) == [0, 1]

    @pytest.mark.parametrize("n,C,seed", [(6, 1.0, 10), (12, 50.0, 11), (25, 5.0, 12)])
    def test_random_instances_match_qp_oracle(self, n, C, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 3))
        y = np.zeros(n, dtype=int)
        y[rng.permutation(n)[: n // 2]] = 1
        svc = BinaryRbfSvc(C=C, gamma=0.7, tol=1e-8).fit(X, y)

        signs = np.where(y == 1, 1.0, -1.0)
        K = rbf_kernel_matrix(X, X, 0.7)
        oracle_alpha = support.qp_oracle(K, signs, C)
        got = support.svm_dual_objective(svc.alpha_, K, signs)
        want = support.svm_dual_objective(oracle_alpha, K, signs)
        assert abs(got - want) <= 1e-6
        assert np.all(svc.alpha_ >= -1e-12)
        assert np.all(svc.alpha_ <= C + 1e-9)
        assert abs(float(signs @ svc.alpha_)) <= 1e-9
        assert support.kkt_max_violation(svc.alpha_, K, signs, C, svc.intercept_) <= 1e-6

    def test_support_vector_bookkeeping(self):
        X, y = blobs(13, [(-2.0, 0.0), (2.0, 0.0)], per=10)
        svc = BinaryRbfSvc(C=50.0).fit(X, y)
        assert svc.support_.size == svc.support_vectors_.shape[0]
        assert svc.dual_coef_.shape == (svc.support_.size,)
        assert np.all(svc.alpha_[svc.support_] > 0.0)
        untouched = np.setdiff1d(np.arange(len(y)), svc.support_)
        assert np.all(svc.alpha_[untouched] == 0.0)

    def test_update_budget_exhaustion(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([0, 0, 1, 1])
        with pytest.raises(ConvergenceError):
            BinaryRbfSvc(C=50.0, gamma=1.0, max_pair_updates=1).fit(X, y)

    def test_gamma_scale_is_resolved_at_fit(self):
        X, y = blobs(14, [(-2.0,), (2.0,)], per=5)
        svc = BinaryRbfSvc(gamma="scale").fit(X, y)
        assert svc.gamma_ == pytest.approx(1.0 / (X.shape[1] * X.var()), rel=1e-12)

    def test_label_and_input_validation(self):
        X = np.eye(3)
        with pytest.raises(InvalidLabelsError):
            BinaryRbfSvc().fit(X, np.array([1, 1, 1]))
        with pytest.raises(InvalidLabelsError):
            BinaryRbfSvc().fit(X, np.array([0, 1, 2]))
        with pytest.raises(DimensionMismatchError):
            BinaryRbfSvc().fit(X, np.array([0, 1]))
        with pytest.raises(InvalidInputError):
            BinaryRbfSvc(C=0.0).fit(X, np.array([0, 1, 0]))
        with pytest.raises(InvalidInputError):
            BinaryRbfSvc(tol=-1.0).fit(X, np.array([0, 1, 0]))
        with pytest.raises(InvalidInputError):
            BinaryRbfSvc().decision_function(X)

    def test_feature_count_checked_at_predict(self):
        X, y = blobs(15, [(-2.0, 0.0), (2.0, 0.0)], per=5)
        svc = BinaryRbfSvc().fit(X, y)
        with pytest.raises(DimensionMismatchError):
            svc.predict(np.zeros((2, 3)))

    def test_estimator_api(self):
        svc = BinaryRbfSvc(C=2.0, gamma=0.1, tol=1e-4, max_pair_updates=99)
        params = svc.get_params()
        assert params == {"C": 2.0, "gamma": 0.1, "tol": 1e-4, "max_pair_updates": 99}
        assert not hasattr(clone(svc), "alpha_")


class TestOneVsRest:
    def test_three_blobs(self):
        X, y = blobs(20, [(-4.0, 0.0), (0.0, 4.0), (4.0, 0.0)], per=12)
        ovr = OneVsRestRbfSvc(C=50.0).fit(X, y)
        assert np.array_equal(ovr.predict(X), y)
        assert ovr.decision_function(X).shape == (36, 3)
        assert len(ovr.estimators_) == 3

    def test_arbitrary_label_values(self):
        X, y = blobs(21, [(-4.0, 0.0), (0.0, 4.0), (4.0, 0.0)], per=8)
        relabeled = np.array([5, 2, 9])[y]
        ovr = OneVsRestRbfSvc(C=50.0).fit(X, relabeled)
        assert list(ovr.classes_) == [2, 5, 9]
        assert np.array_equal(ovr.predict(X), relabeled)

    def test_needs_two_classes(self):
        with pytest.raises(InvalidLabelsError):
            OneVsRestRbfSvc().fit(np.eye(3), np.array([1, 1, 1]))
        with pytest.raises(InvalidInputError):
            OneVsRestRbfSvc().decision_function(np.eye(3))


class TestFeatureFiles:
    def test_roundtrip_is_exact(self, tmp_path):
        registry = ClassRegistry(("ant", "bee", "cat"))
        rng = np.random.default_rng(30)
        X = rng.normal(size=(9, 4))
        y = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2])
        path = tmp_path / "features.tsv"
        save_feature_file(path, X, y, registry)
        X2, y2 = load_feature_file(path, registry)
        assert np.array_equal(X, X2)  # repr round-trips doubles exactly
        assert np.array_equal(y, y2)

    def test_comments_and_blanks_skipped(self, tmp_path):
        registry = ClassRegistry(("ant", "bee"))
        path = tmp_path / "f.tsv"
        path.write_text("# header\n\nant\t1.0,2.0\nbee\t3.0,4.0\n")
        X, y = load_feature_file(path, registry)
        assert X.shape == (2, 2) and list(y) == [0, 1]

    @pytest.mark.parametrize(
        "body,fragment",
        [
            ("ant\t1.0\textra\n", ":1:"),
            ("fox\t1.0\n", "fox"),
            ("ant\tone,two\n", ":1:"),
            ("ant\t1.0,2.0\nbee\t1.0\n", ":2:"),
            ("", "no feature rows"),
        ],
    )
    def test_malformed_files(self, tmp_path, body, fragment):
        registry = ClassRegistry(("ant", "bee"))
        path = tmp_path / "bad.tsv"
        path.write_text(body)
        with pytest.raises(ParseError, match=fragment.replace(".", r"\.")):
            load_feature_file(path, registry)


@pytest.fixture(scope="module")
def trained():
    X, y = blobs(40, [(-4.0, 0.0, 1.0), (0.0, 4.0, -1.0), (4.0, 0.0, 0.5)], per=10)
    registry = ClassRegistry(("ant", "bee", "cat"))
    return X, y, registry, SvmBaselineModel.train(X, y, registry, variance_fraction=0.99)


class TestModelPersistence:
    def test_train_predict(self, trained):
        X, y, registry, model = trained
        assert np.array_equal(model.predict(X), y)
        assert model.predict_names(X[:3]) == [registry.name_of(int(c)) for c in y[:3]]
        assert model.pca is not None

    def test_roundtrip_preserves_behavior(self, trained, tmp_path):
        X, y, _, model = trained
        path = tmp_path / "model.bin"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.class_names == model.class_names
        assert loaded.svm.gamma_ == model.svm.gamma_
        assert loaded.pca.n_components_ == model.pca.n_components_
        assert np.array_equal(loaded.pca.components_, model.pca.components_)
        rng = np.random.default_rng(41)
        probes = rng.normal(0.0, 3.0, (20, X.shape[1]))
        assert np.array_equal(loaded.predict(probes), model.predict(probes))
        assert np.array_equal(loaded.predict(X), y)
        decisions = np.column_stack(
            [est.decision_function(model.pca.transform(X)) for est in loaded.svm.estimators_]
        )
        want = np.column_stack(
            [est.decision_function(model.pca.transform(X)) for est in model.svm.estimators_]
        )
        assert np.allclose(decisions, want, atol=1e-12)

    def test_roundtrip_without_pca(self, tmp_path):
        X, y = blobs(42, [(-3.0, 0.0), (3.0, 0.0)], per=8)
        registry = ClassRegistry(("ant", "bee"))
        model = SvmBaselineModel.train(X, y, registry, variance_fraction=None)
        assert model.pca is None
        path = tmp_path / "nopca.bin"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.pca is None
        assert np.array_equal(loaded.predict(X), model.predict(X))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"JUNKxxxxxxxx")
        with pytest.raises(ParseError, match="magic"):
            load_model(path)

    def test_truncated_file(self, trained, tmp_path):
        _, _, _, model = trained
        path = tmp_path / "model.bin"
        save_model(path, model)
        whole = path.read_bytes()
        path.write_bytes(whole[: len(whole) // 2])
        with pytest.raises(ParseError):
            load_model(path)

    def test_trailing_bytes(self, trained, tmp_path):
        _, _, _, model = trained
        path = tmp_path / "model.bin"
        save_model(path, model)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ParseError, match="trailing"):
            load_model(path)

    def test_unsupported_version(self, trained, tmp_path):
        _, _, _, model = trained
        path = tmp_path / "model.bin"
        save_model(path, model)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(ParseError, match="version"):
            load_model(path)

    def test_deterministic_bytes(self, trained, tmp_path):
        _, _, _, model = trained
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_model(a, model)
        save_model(b, model)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes()[:4] == b"SVPC"
        assert struct.unpack_from("<BB", a.read_bytes(), 4) == (1, 1)
