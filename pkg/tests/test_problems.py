import numpy as np
import pytest

from newtonmr.core import dense_operator
from newtonmr.problems import (Dataset, QuadraticProblem, example2_instance,
                               finite_difference_gradcheck, finite_difference_hvpcheck,
                               gaussian_blobs, load_dataset, logistic_problem, nls_problem,
                               noisy_hessian, parse_label_rule, pl_quadratic, subsampled_hessian)


def blob_problem(kind, seed=0, n=60, d=5, reg=0.0):
    data = gaussian_blobs(n, d, 2.0, seed=seed)
    return logistic_problem(data, reg) if kind == "logistic" else nls_problem(data, reg)


def test_logistic_at_zero_is_ln2():
    p = blob_problem("logistic")
    assert p.value(np.zeros(5)) == pytest.approx(np.log(2), abs=1e-15)


def test_logistic_saturation():
    p = logistic_problem(Dataset(np.ones((1, 1)), np.ones(1)))
    assert 0 < p.value(np.array([40.0])) < 1e-15
    assert np.isfinite(p.value(np.array([-800.0])))


def test_nls_exact_and_constant_residual():
    X = np.random.default_rng(0).standard_normal((7, 3))
    assert nls_problem(Dataset(X, np.full(7, 0.5))).value(np.zeros(3)) == 0.0
    assert nls_problem(Dataset(X, np.ones(7))).value(np.zeros(3)) == pytest.approx(0.25)


@pytest.mark.parametrize("kind,tol", [("logistic", 1e-6), ("nls", 1e-5)])
def test_gradients_match_finite_differences(kind, tol):
    rng = np.random.default_rng(1)
    for seed in range(20):
        p = blob_problem(kind, seed=seed, reg=0.1 * (seed % 2))
        assert finite_difference_gradcheck(p, rng.standard_normal(5)) <= tol


@pytest.mark.parametrize("kind", ["logistic", "nls"])
def test_hvp_matches_gradient_differences(kind):
    rng = np.random.default_rng(2)
    p = blob_problem(kind, reg=0.1)
    for _ in range(10):
        assert finite_difference_hvpcheck(p, rng.standard_normal(5), rng.standard_normal(5)) <= 1e-5


def test_full_gradient_is_mean_of_samples():
    p = blob_problem("nls", reg=0.0)
    x = np.random.default_rng(3).standard_normal(5)
    np.testing.assert_allclose(p.gradient(x), p.sample_gradients(x).mean(axis=0), atol=1e-12)


def test_nls_hessian_can_be_indefinite():
    p = blob_problem("nls", n=200)
    x = 3 * np.random.default_rng(4).standard_normal(5)
    assert np.linalg.eigvalsh(p.hessian_dense(x)).min() < 0


def test_subsample_full_fraction_is_exact():
    p = blob_problem("logistic")
    x = np.random.default_rng(5).standard_normal(5)
    v = np.random.default_rng(6).standard_normal(5)
    op = subsampled_hessian(p, x, 1.0, np.random.default_rng(0))
    assert np.array_equal(op.matvec(v), p.hessian_operator(x).matvec(v))


def test_subsample_duplicate_data():
    X = np.array([[1.0, 2.0], [1.0, 2.0]])
    p = logistic_problem(Dataset(X, np.array([1.0, 1.0])))
    x, v = np.array([0.3, -0.1]), np.array([1.0, 1.0])
    op = subsampled_hessian(p, x, 0.5, np.random.default_rng(0))
    np.testing.assert_allclose(op.matvec(v), p.hvp(x, v), rtol=1e-14)
    assert op.cost_per_apply == 2


def test_subsample_error_shrinks_with_fraction():
    p = blob_problem("logistic", n=400, d=10)
    x = np.random.default_rng(7).standard_normal(10)
    H = p.hessian_dense(x)
    means = []
    for frac in (0.05, 0.2, 0.6):
        errs = [np.linalg.norm(subsampled_hessian(p, x, frac, np.random.default_rng(s)).to_dense()
                               - H, 2) for s in range(50)]
        means.append(np.mean(errs))
    assert means[0] > means[1] > means[2]


def test_subsample_rejects_bad_fraction():
    with pytest.raises(ValueError):
        subsampled_hessian(blob_problem("nls"), np.zeros(5), 0.0, np.random.default_rng(0))


def test_noisy_hessian_norm_equals_epsilon():
    rng = np.random.default_rng(8)
    H = rng.standard_normal((30, 30))
    H = H + H.T
    assert np.array_equal(noisy_hessian(H, 0.0, rng).to_dense(), H)
    for eps in (1.0, 0.1, 1e-3):
        op = noisy_hessian(H, eps, rng)
        assert abs(np.linalg.norm(op.to_dense() - H, 2) - eps) <= 1e-10


def test_example2_instance_spectrum():
    Hbar, E, g = example2_instance(0.0, seed=1)
    lam = np.linalg.eigvalsh(Hbar)
    assert np.sum(lam < 0) == 2
    assert lam.max() < 10 and lam.min() > -1
    Hbar1, E1, _ = example2_instance(0.1, seed=1)
    np.testing.assert_allclose(Hbar1 - E1, Hbar, atol=1e-12)


def test_pl_quadratic_scalar_case():
    p = pl_quadratic(1, 1.0, 1.0, seed=0)
    assert p.value(np.array([2.0])) == 2.0
    np.testing.assert_allclose(p.gradient(np.array([2.0])), [2.0])
    assert p.value(np.zeros(1)) == 0.0


def test_pl_inequality():
    mu = 0.1
    p = pl_quadratic(20, mu, 10.0, seed=1)
    rng = np.random.default_rng(9)
    for _ in range(100):
        x = rng.standard_normal(20)
        g = p.gradient(x)
        assert 0.5 * g @ g >= mu * p.value(x) * (1 - 1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(p.hessian_dense(x))[[0, -1]], [mu, 10.0])


def test_quadratic_gradcheck_is_tight():
    rng = np.random.default_rng(10)
    Q = rng.standard_normal((6, 6))
    p = QuadraticProblem(Q + Q.T, b=rng.standard_normal(6))
    assert finite_difference_gradcheck(p, rng.standard_normal(6)) <= 1e-9


def test_hessian_operator_is_symmetric():
    from newtonmr.core import symmetry_defect
    p = blob_problem("nls", reg=0.5)
    assert symmetry_defect(p.hessian_operator(np.ones(5)), 20, seed=0) <= 1e-10
    assert symmetry_defect(dense_operator(p.hessian_dense(np.ones(5))), 20, seed=0) <= 1e-10


def test_label_rules():
    assert parse_label_rule("sign")(-1) == 0.0
    assert parse_label_rule("sign")(2) == 1.0
    assert parse_label_rule("parity")(7) == 1.0
    assert parse_label_rule("threshold:0.5")(0.7) == 1.0
    with pytest.raises(ValueError):
        parse_label_rule("parity")(1.5)
    with pytest.raises(ValueError):
        parse_label_rule("bogus")


def test_load_dataset(tmp_path):
    path = tmp_path / "toy.svm"
    path.write_text("1 1:0.5 3:2\n-1 2:1.5\n# comment\n\n0 1:-1\n")
    data = load_dataset(path)
    assert data.n == 3 and data.d == 3
    np.testing.assert_array_equal(data.labels, [1.0, 0.0, 0.0])
    dense = data.features.toarray()
    np.testing.assert_array_equal(dense[0], [0.5, 0.0, 2.0])
    assert load_dataset(path, n_features=5).d == 5


@pytest.mark.parametrize("text,fragment", [
    ("", "empty"),
    ("1 0:1\n", "malformed"),
    ("1 1:1 1:2\n", "duplicate"),
    ("1 1:x\n", "malformed"),
    ("a 1:1\n", "bad label"),
])
def test_load_dataset_errors(tmp_path, text, fragment):
    path = tmp_path / "bad.svm"
    path.write_text(text)
    with pytest.raises(ValueError, match=fragment):
        load_dataset(path)


def test_loaded_dataset_drives_problem(tmp_path):
    path = tmp_path / "toy.svm"
    path.write_text("1 1:0.5 2:1\n0 1:-1 2:0.3\n1 2:2\n")
    p = logistic_problem(load_dataset(path))
    x = np.array([0.2, -0.4])
    assert finite_difference_gradcheck(p, x) <= 1e-6
    assert p.value(np.zeros(2)) == pytest.approx(np.log(2))
