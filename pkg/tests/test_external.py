"""Cross-checks against an independent statistics library (skipped when it is not installed)."""
import numpy as np
import pytest

from selfbias.design import DesignMatrix
from selfbias.estimators import ols_fit, ordinal_fit

pytestmark = pytest.mark.filterwarnings("ignore:Maximum Likelihood optimization failed")

sm = pytest.importorskip("statsmodels.api")
ordinal_model = pytest.importorskip("statsmodels.miscmodels.ordinal_model")


@pytest.fixture
def heteroskedastic():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(80), rng.normal(size=(80, 3))])
    y = X @ [1, 2, 0, -1] + rng.normal(size=80) * (1 + np.abs(X[:, 1]))
    return X, y, rng.integers(0, 10, size=80)


@pytest.mark.parametrize("cov", ["HC0", "HC1"])
def test_ols_robust_errors(heteroskedastic, cov):
    X, y, _ = heteroskedastic
    ours = ols_fit(DesignMatrix.from_arrays(X, y), cov_type=cov)
    ref = sm.OLS(y, X).fit(cov_type=cov)
    np.testing.assert_allclose(ours.params, ref.params, atol=1e-12)
    np.testing.assert_allclose(ours.bse, ref.bse, atol=1e-12)


def test_cluster_errors_without_small_sample_factor(heteroskedastic):
    X, y, groups = heteroskedastic
    ours = ols_fit(DesignMatrix.from_arrays(X, y), cov_type="cluster", cluster_keys=groups)
    ref = sm.OLS(y, X).fit(cov_type="cluster", cov_kwds={"groups": groups, "use_correction": False})
    np.testing.assert_allclose(ours.bse, ref.bse, atol=1e-12)


def test_ordinal_logit_estimates_and_sandwich():
    rng = np.random.default_rng(0)
    n = 3000
    s = rng.uniform(size=n)
    own = (rng.uniform(size=n) < 0.5).astype(float)
    latent = 0.8 * s + 0.25 * own + rng.logistic(scale=0.2, size=n)
    levels = 1 + np.searchsorted([0.2, 0.5, 0.8, 1.1], latent, side="right")
    X = np.column_stack([s, own])
    ours = ordinal_fit(DesignMatrix.from_arrays(X, np.zeros(n)), levels)

    model = ordinal_model.OrderedModel(levels, X, distr="logit")
    ref = model.fit(method="bfgs", disp=False, maxiter=5000, gtol=1e-10)
    np.testing.assert_allclose(ours.params, ref.params[:2], atol=1e-5)
    np.testing.assert_allclose(ours.cutpoints, model.transform_threshold_params(ref.params)[1:-1], atol=1e-5)

    # the coefficient block of the sandwich does not depend on how cutpoints are parameterized
    at = np.concatenate([ours.params, ref.params[2:]])
    scores = model.score_obs(at)
    bread = np.linalg.inv(-model.hessian(at))
    sandwich = bread @ (scores.T @ scores) @ bread
    np.testing.assert_allclose(ours.sandwich_covariance, sandwich[:2, :2], rtol=1e-4)
