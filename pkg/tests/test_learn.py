import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import hadamard

from tiestrength.learn import (
    ConvergenceError, Dataset, RankDeficientError, SchemaError, cross_validate, drop_aliased,
    fit_forest, fit_lasso, fit_ols, fit_poisson, fit_ridge, lambda_max, lasso_grid, load_model,
    predict, ridge_grid, save_model, standardize,
)


def names(p):
    return [f"x{i}" for i in range(p)]


def soft(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


# --- OLS ---------------------------------------------------------------------

def test_ols_exact_line():
    x = np.arange(10.0)[:, None]
    m = fit_ols(Dataset(x, 2 * x[:, 0], ["x"]))
    assert m.coef[0] == pytest.approx(2.0)
    assert m.intercept == pytest.approx(0.0, abs=1e-12)
    assert m.diagnostics["r2"] == pytest.approx(1.0)


def test_ols_noise_has_no_fit():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10_000, 5))
    m = fit_ols(Dataset(X, rng.normal(size=10_000), names(5)))
    assert m.diagnostics["adj_r2"] <= 0.05
    assert np.all(np.abs(m.coef) < 4 * m.se)


def test_ols_recovers_linear_truth():
    # realistic coefficient sizes on standardized predictors
    truth = {"k_diff": -0.35, "s_sum": -0.25, "cc_diff": 0.29, "same_zip": 0.23, "overlap": 0.27}
    rng = np.random.default_rng(4)
    n = 20_000
    X = rng.normal(size=(n, 5))
    X[:, 3] = rng.random(n) < 0.4
    d = standardize(Dataset(X, np.zeros(n), list(truth)))
    y = d.X @ np.array(list(truth.values())) + rng.normal(scale=1.0, size=n)
    m = fit_ols(Dataset(d.X, y, d.schema))
    assert np.all(np.abs(m.coef - np.array(list(truth.values()))) < 3 * m.se)


def test_ols_rank_deficient_names_columns():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    X = np.column_stack([X, X[:, 0] + 2 * X[:, 1], np.full(50, 3.0)])
    d = Dataset(X, rng.normal(size=50), ["a", "b", "c", "a_plus_2b", "const"])
    with pytest.raises(RankDeficientError) as err:
        fit_ols(d)
    assert err.value.columns == ["a_plus_2b", "const"]
    reduced, dropped = drop_aliased(d)
    assert dropped == ["a_plus_2b", "const"] and reduced.schema == ("a", "b", "c")
    fit_ols(reduced)


# --- Poisson -----------------------------------------------------------------

def test_poisson_constant_response():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 3))
    m = fit_poisson(Dataset(X, np.full(200, 4), names(3)))
    assert m.intercept == pytest.approx(np.log(4), abs=1e-9)
    np.testing.assert_allclose(m.coef, 0.0, atol=1e-9)


def test_poisson_two_group_closed_form():
    rng = np.random.default_rng(3)
    x = (rng.random(3000) < 0.3).astype(float)
    y = rng.poisson(np.where(x == 1, 5.0, 2.0))
    m = fit_poisson(Dataset(x[:, None], y, ["x"]))
    mean0, mean1 = y[x == 0].mean(), y[x == 1].mean()
    assert m.intercept == pytest.approx(np.log(mean0), abs=1e-9)
    assert m.coef[0] == pytest.approx(np.log(mean1 / mean0), abs=1e-9)


def simulate_india_eq(seed, n=20_000):
    rng = np.random.default_rng(seed)
    wov = rng.beta(2, 5, n)
    cc = rng.uniform(0, 2, n) * rng.random(n)
    fm = (rng.random(n) < 0.4).astype(float)
    X = np.column_stack([wov, cc, fm])
    y = rng.poisson(np.exp(1.62 + 2.41 * wov - 1.38 * cc - 0.2 * fm))
    return Dataset(X, y, ["weighted_overlap", "cc_sum", "is_fm"])


def test_poisson_recovers_log_linear_truth():
    d = simulate_india_eq(0)
    m = fit_poisson(d)
    est = np.r_[m.intercept, m.coef]
    se = np.r_[m.intercept_se, m.se]
    assert np.all(np.abs(est - [1.62, 2.41, -1.38, -0.2]) < 3 * se)
    # score equations hold at the optimum
    A = np.column_stack([np.ones(d.n), d.X])
    assert np.max(np.abs(A.T @ (d.y - np.exp(A @ est)))) < 1e-6 * d.n
    assert m.diagnostics["max_abs_score"] < 1e-6 * d.n
    assert np.all(predict(m, d.X[:10]) > 0)


def test_poisson_rejects_bad_response():
    with pytest.raises(ValueError, match="nonnegative integers"):
        fit_poisson(Dataset(np.ones((3, 1)), [1.5, 2, 3], ["x"]))


def test_poisson_divergence_reports_trace():
    # complete separation: the MLE runs off to -infinity
    x = np.r_[np.zeros(20), np.ones(20)]
    y = np.r_[np.zeros(20), np.full(20, 3)]
    with pytest.raises(ConvergenceError) as err:
        fit_poisson(Dataset(x[:, None], y, ["x"]))
    assert len(err.value.trace) > 0


# --- LASSO / ridge -----------------------------------------------------------

def correlated_design(seed, n=400, p=8):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, p))
    X = Z + 0.5 * Z[:, [0]]
    beta = np.zeros(p)
    beta[:3] = [1.5, -2.0, 0.7]
    y = 3.0 + X @ beta + rng.normal(size=n)
    return standardize(Dataset(X, y, names(p)))


def test_lasso_zero_penalty_is_ols():
    d = correlated_design(0)
    ols = fit_ols(d)
    las = fit_lasso(d, 0.0)
    np.testing.assert_allclose(las.coef, ols.coef, atol=1e-6)
    assert las.intercept == pytest.approx(ols.intercept, abs=1e-6)
    assert las.diagnostics["shrinkage_l1"] == pytest.approx(1.0, abs=1e-6)


def test_lasso_above_lambda_max_is_null():
    d = correlated_design(1)
    lm = lambda_max(d)
    assert np.all(fit_lasso(d, lm).coef == 0)
    assert np.all(fit_lasso(d, 10 * lm).coef == 0)
    assert np.any(fit_lasso(d, 0.9 * lm).coef != 0)


def test_lasso_zero_penalty_ill_conditioned():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 8)) @ (np.eye(8) + 0.4 * rng.normal(size=(8, 8)))
    d = standardize(Dataset(X, X @ rng.normal(size=8) + rng.normal(size=400), names(8)))
    assert np.linalg.eigvalsh(d.X.T @ d.X / d.n)[0] < 0.02
    np.testing.assert_allclose(fit_lasso(d, 0.0).coef, fit_ols(d).coef, atol=1e-6)


def test_lasso_orthonormal_soft_threshold():
    H = hadamard(64)[:, 1:9].astype(float)  # orthogonal, mean 0, unit variance columns
    rng = np.random.default_rng(2)
    y = H @ rng.normal(size=8) + rng.normal(size=64)
    d = Dataset(H, y, names(8))
    b_ols = H.T @ (y - y.mean()) / 64
    for lam in (0.0, 0.05, 0.3, 1.0):
        np.testing.assert_allclose(fit_lasso(d, lam).coef, soft(b_ols, lam), atol=1e-8)


@pytest.mark.parametrize("lam", [0.001, 0.02, 0.1, 0.4])
def test_lasso_kkt(lam):
    d = correlated_design(3)
    m = fit_lasso(d, lam)
    r = d.y - m.intercept - d.X @ m.coef
    g = d.X.T @ r / d.n
    zero = m.coef == 0
    assert np.all(np.abs(g[zero]) <= lam + 1e-6)
    np.testing.assert_allclose(g[~zero], lam * np.sign(m.coef[~zero]), atol=1e-6)


def test_lasso_requires_standardized():
    with pytest.raises(ValueError, match="standardized"):
        fit_lasso(Dataset(np.arange(10.0)[:, None] + 5, np.arange(10.0), ["x"]), 0.1)


def test_ridge_limits():
    d = correlated_design(4)
    ols = fit_ols(d)
    np.testing.assert_allclose(fit_ridge(d, 0.0).coef, ols.coef, atol=1e-8)
    np.testing.assert_allclose(fit_ridge(d, 1e-10).coef, ols.coef, atol=1e-6)
    norms = [np.linalg.norm(fit_ridge(d, lam).coef) for lam in np.logspace(-3, 4, 30)]
    assert np.all(np.diff(norms) < 0)
    assert norms[-1] < 1e-3


def test_ridge_single_feature_formula():
    rng = np.random.default_rng(5)
    x = rng.normal(size=50)
    d = standardize(Dataset(x[:, None], 2 * x + rng.normal(size=50), ["x"]))
    xs, y = d.X[:, 0], d.y - d.y.mean()
    for lam in (0.1, 1.0, 7.0):
        assert fit_ridge(d, lam).coef[0] == pytest.approx(xs @ y / (xs @ xs + 50 * lam), rel=1e-12)


def test_linear_predict_at_means_is_intercept():
    d = correlated_design(6)
    for m in (fit_ols(d), fit_lasso(d, 0.05), fit_ridge(d, 0.5)):
        assert predict(m, d.mean[None, :])[0] == pytest.approx(m.intercept, abs=1e-12)
        # zero row on the standardized scale
        assert m.intercept + np.zeros(d.p) @ m.coef == m.intercept


# --- cross-validation --------------------------------------------------------

def test_cv_duplicate_lambdas_equal_loss():
    d = correlated_design(7, n=200)
    grid = np.array([0.1, 0.01, 0.1, 1.0, 0.01])
    for family in ("lasso", "ridge"):
        cv = cross_validate(d, family, grid, k=10, seed=3)
        assert cv.mean_loss[0] == cv.mean_loss[2]
        assert cv.mean_loss[1] == cv.mean_loss[4]
        assert cv.mean_loss[cv.lambdas == cv.chosen].min() == cv.mean_loss.min()
        assert sorted(np.bincount(cv.folds)) == [20] * 10


def test_cv_rejects_empty_grid():
    with pytest.raises(ValueError):
        cross_validate(correlated_design(0, n=50), "lasso", [])


def test_cv_deterministic():
    d = correlated_design(8, n=150)
    a = cross_validate(d, "lasso", lasso_grid(20), seed=11)
    b = cross_validate(d, "lasso", lasso_grid(20), seed=11)
    np.testing.assert_array_equal(a.mean_loss, b.mean_loss)


@pytest.mark.slow
def test_cv_pure_noise_prefers_large_penalty():
    grid = lasso_grid(30)
    top = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        d = standardize(Dataset(rng.normal(size=(100, 5)), rng.normal(size=100), names(5)))
        cv = cross_validate(d, "lasso", grid, seed=seed)
        top += cv.chosen >= grid[-3]
    # chance level for the top 3 of 30 grid points is 10%
    assert top / 50 >= 0.5


def test_cv_planted_sparse_signal_beats_ols():
    rng = np.random.default_rng(9)
    n, p = 300, 40
    beta = np.zeros(p)
    beta[:4] = [2.0, -1.5, 1.0, 0.5]
    X = rng.normal(size=(2 * n, p))
    y = X @ beta + 2.0 * rng.normal(size=2 * n)
    train = standardize(Dataset(X[:n], y[:n], names(p)))
    cv = cross_validate(train, "lasso", lasso_grid(), k=10, seed=0)
    las = fit_lasso(train, cv.chosen)
    ols = fit_ols(train)
    mse = lambda m: np.mean((y[n:] - predict(m, X[n:])) ** 2)
    assert mse(las) <= 1.05 * mse(ols)


# --- forests -----------------------------------------------------------------

def test_forest_finds_signal_feature():
    rng = np.random.default_rng(0)
    X = rng.random((1500, 6))
    d = Dataset(X, X[:, 0], names(6))
    m = fit_forest(d, "regression", seed=1)
    assert m.n_trees == 200 and m.max_features == 6
    assert np.argmax(m.importance) == 0 and m.importance[0] > 0.5
    assert m.importance.sum() == pytest.approx(1.0, abs=1e-9)
    Xt = rng.random((500, 6))
    assert np.median(np.abs(m.predict(Xt) - Xt[:, 0])) < 0.05
    pred = m.predict(X)
    assert pred.min() >= X[:, 0].min() and pred.max() <= X[:, 0].max()
    assert np.median(np.abs(pred - X[:, 0])) < 1e-3


def test_forest_constant_target():
    rng = np.random.default_rng(1)
    d = Dataset(rng.random((100, 3)), np.full(100, 7.5), names(3))
    m = fit_forest(d, "regression", seed=0, n_trees=20)
    assert np.all(m.predict(rng.random((30, 3))) == 7.5)
    assert m.importance.sum() == pytest.approx(1.0)


def test_forest_classification_separable():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(-2, 0.7, (300, 4)), rng.normal(2, 0.7, (300, 4))])
    y = np.r_[np.zeros(300), np.ones(300)].astype(int) + 1
    perm = rng.permutation(600)
    X, y = X[perm], y[perm]
    m = fit_forest(Dataset(X[:400], y[:400], names(4)), "classification", seed=3)
    assert m.max_features == 2
    assert (m.predict(X[400:]) == y[400:]).mean() > 0.95
    proba = m.predict_proba(X[400:])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_forest_single_class_rejected():
    with pytest.raises(ValueError, match="single class"):
        fit_forest(Dataset(np.ones((10, 2)), np.ones(10, int), names(2)), "classification")


def test_forest_categorical_subset_split():
    rng = np.random.default_rng(4)
    sex = rng.integers(0, 3, 600).astype(float)  # MM, FF, FM codes
    noise = rng.random(600)
    y = np.where(sex == 1, 5.0, 1.0)  # FF differs from {MM, FM}: needs a subset split
    d = Dataset(np.column_stack([noise, sex]), y, ["noise", "sex_pair"], categorical=("sex_pair",))
    m = fit_forest(d, "regression", seed=0, n_trees=10)
    t = m.trees[0]
    # masks never include the last level, so isolating FF means left = {FF} (bit 1)
    assert t.feature[0] == 1 and t.cat_mask[0] == 0b010
    assert np.all(m.predict(np.array([[0.5, 0], [0.5, 1], [0.5, 2]])) == [1.0, 5.0, 1.0])
    assert m.importance[1] > 0.99


def test_forest_determinism_and_parallel_agree():
    rng = np.random.default_rng(5)
    X = rng.random((300, 5))
    y = X[:, 0] + rng.normal(scale=0.1, size=300)
    d = Dataset(X, y, names(5))
    a = fit_forest(d, "regression", seed=9, n_trees=30, max_features="sqrt")
    b = fit_forest(d, "regression", seed=9, n_trees=30, max_features="sqrt", n_jobs=4)
    c = fit_forest(d, "regression", seed=10, n_trees=30, max_features="sqrt")
    Xt = rng.random((50, 5))
    np.testing.assert_array_equal(a.predict(Xt), b.predict(Xt))
    np.testing.assert_array_equal(a.importance, b.importance)
    assert not np.array_equal(a.predict(Xt), c.predict(Xt))


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    X = rng.random((200, 4))
    X[:, 3] = rng.integers(0, 3, 200)
    y_reg = X[:, 0] * 3 + X[:, 3]
    y_cls = (y_reg > 2).astype(int) + 3
    d = standardize(Dataset(X[:, :3], y_reg, names(3)))
    models = [
        fit_forest(Dataset(X, y_reg, names(4), categorical=("x3",)), "regression", seed=1, n_trees=15),
        fit_forest(Dataset(X, y_cls, names(4), categorical=("x3",)), "classification", seed=1, n_trees=15),
        fit_ols(d), fit_lasso(d, 0.01), fit_ridge(d, 0.1),
        fit_poisson(Dataset(X[:, :3], rng.poisson(2, 200), names(3))),
    ]
    Xt = rng.random((40, 4))
    Xt[:, 3] = rng.integers(0, 3, 40)
    for k, m in enumerate(models):
        cols = Xt if len(m.schema) == 4 else Xt[:, :3]
        save_model(m, tmp_path / f"m{k}.json", meta={"seed": 1})
        back = load_model(tmp_path / f"m{k}.json")
        np.testing.assert_array_equal(back.predict(cols), m.predict(cols))
        assert back.schema == m.schema


def test_predict_schema_mismatch():
    d = Dataset(np.random.default_rng(0).random((20, 2)), np.arange(20.0), ["a", "b"])
    m = fit_ols(d)
    with pytest.raises(SchemaError, match="missing \\['b'\\]"):
        predict(m, np.zeros((1, 2)), schema=["a", "c"])
    with pytest.raises(SchemaError):
        m.predict(np.zeros((1, 3)))
