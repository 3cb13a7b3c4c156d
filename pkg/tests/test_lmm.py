import math

import numpy as np
import pytest
from scipy import stats

from repvine.dvine import density, logdensity
from repvine.lmm import (ErrorStructure, LmmSpec, NotPositiveDefiniteError, StructureKind,
                         corr_to_partials, gaussian_dvine, implied_correlation, implied_covariance,
                         lmm_as_gaussian_dvine, lmm_fit, lmm_loglik, partials_to_corr,
                         polynomial_in_index, random_intercept)
from repvine.margins import LongitudinalDataset, margins_loglik, pit
from repvine.simlab import random_correlation

from conftest import mvn_copula_logdensity, precision_partial


def ri_spec(tau2=1.0, err=None, beta=2.0):
    return LmmSpec({"intercept": beta}, [[tau2]], random_intercept, err or ErrorStructure("iid", 1.0))


def simulate_lmm(spec, n, d, seed):
    cov = implied_covariance(spec, d)
    rng = np.random.default_rng(seed)
    y = rng.multivariate_normal(np.full(d, spec.beta["intercept"]), cov, size=n)
    return LongitudinalDataset(list(range(n)), y)


class TestCovariance:
    def test_random_intercept_iid(self):
        cov = implied_covariance(ri_spec(0.7, ErrorStructure("iid", 0.4)), 3)
        assert np.allclose(cov, np.full((3, 3), 0.7) + 0.4 * np.eye(3))

    def test_ar1(self):
        spec = LmmSpec({"intercept": 0.0}, error=ErrorStructure("ar1", 1.0, rho=0.5))
        want = [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]]
        assert np.allclose(implied_covariance(spec, 3), want, atol=0)

    def test_exponential(self):
        spec = LmmSpec({"intercept": 0.0}, error=ErrorStructure("exp", 2.0, range_r=2.0))
        assert implied_covariance(spec, 2)[0, 1] == pytest.approx(2.0 * math.exp(-0.5))

    def test_cs(self):
        cov = ErrorStructure("cs", 2.0, rho=0.3).matrix(3)
        assert np.allclose(cov, 2.0 * (0.7 * np.eye(3) + 0.3))

    def test_correlations(self):
        assert np.allclose(implied_correlation(LmmSpec({"intercept": 0.0}), 4), np.eye(4))
        R = implied_correlation(ri_spec(1.0), 4)
        assert np.allclose(R[~np.eye(4, dtype=bool)], 0.5)
        ar = LmmSpec({"intercept": 0.0}, error=ErrorStructure("ar1", 3.0, rho=0.5))
        lag = np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
        assert np.allclose(implied_correlation(ar, 5), 0.5 ** lag)

    @pytest.mark.parametrize("spec", [
        ri_spec(0.8, ErrorStructure("ar1", 0.5, rho=0.7)),
        LmmSpec({"intercept": 0.0}, np.diag([1.0, 0.1]), polynomial_in_index(1),
                ErrorStructure("exp", 1.0, range_r=3.0)),
    ])
    def test_homogeneity(self, spec):
        R = implied_correlation(spec, 6)
        for m in range(1, 6):
            assert np.array_equal(implied_correlation(spec, m), R[:m, :m])

    def test_not_positive_definite(self):
        bad = np.array([[1.0, 0.9, 0.0], [0.9, 1.0, 0.9], [0.0, 0.9, 1.0]])
        lam = np.linalg.eigvalsh(bad).min()
        with pytest.raises(NotPositiveDefiniteError, match="eigenvalue") as info:
            ErrorStructure("general", full_matrix=bad)
        assert info.value.min_eigenvalue == pytest.approx(lam)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            ErrorStructure("ar1", 1.0, rho=1.0)
        with pytest.raises(ValueError):
            ErrorStructure("iid", 0.0)
        with pytest.raises(ValueError):
            StructureKind.parse("banded")
        with pytest.raises(ValueError):
            LmmSpec({"intercept": 0.0}, [[-1.0]], random_intercept)

    def test_parameter_counts(self):
        assert ri_spec().npars(4) == 3
        assert ErrorStructure("general", full_matrix=np.eye(4)).npars(4) == 10


class TestPartials:
    def test_identity(self):
        assert all(v == 0.0 for v in corr_to_partials(np.eye(4)).values())
        assert np.array_equal(partials_to_corr({}, 4), np.eye(4))

    def test_ar1_markov(self):
        lag = np.abs(np.subtract.outer(np.arange(6), np.arange(6)))
        p = corr_to_partials(0.6 ** lag)
        for (k, l), v in p.items():
            assert v == pytest.approx(0.6 if l - k == 1 else 0.0, abs=1e-12)

    def test_d3_inverse(self):
        R = partials_to_corr({(1, 2): 0.5, (2, 3): 0.5, (1, 3): 0.0}, 3)
        assert R[0, 2] == pytest.approx(0.25, abs=1e-15)

    def test_against_precision_oracle(self, rng):
        # the partial correlation given all intermediates equals the
        # precision-matrix partial correlation of the k..l block
        for _ in range(20):
            R = random_correlation(5, rng)
            for (k, l), v in corr_to_partials(R).items():
                assert v == pytest.approx(precision_partial(R, k, l), abs=1e-10)

    def test_roundtrip_many(self):
        worst_c = worst_p = 0.0
        for seed in range(1000):
            R = random_correlation(5, seed)
            p = corr_to_partials(R)
            worst_c = max(worst_c, np.abs(partials_to_corr(p, 5) - R).max())
            q = corr_to_partials(partials_to_corr(p, 5))
            worst_p = max(worst_p, max(abs(q[e] - p[e]) for e in p))
        assert worst_c < 1e-10 and worst_p < 1e-10

    def test_non_pd_rejected(self):
        with pytest.raises(ValueError):
            corr_to_partials(np.array([[1.0, 0.99, 0.0], [0.99, 1.0, 0.99], [0.0, 0.99, 1.0]]))
        with pytest.raises(ValueError):
            corr_to_partials(np.array([[1.0, 0.2], [0.2, 2.0]]))

    def test_any_partials_give_pd(self, rng):
        for _ in range(200):
            p = {(k, l): rng.uniform(-0.999, 0.999) for k in range(1, 6) for l in range(k + 1, 7)}
            assert np.linalg.eigvalsh(partials_to_corr(p, 6)).min() > 0


class TestBridge:
    def test_iid_is_independence(self):
        vine, _ = lmm_as_gaussian_dvine(LmmSpec({"intercept": 1.0}), 4)
        assert all(pc.theta == 0.0 for pc in vine.pairs.values())

    def test_random_intercept_density(self, rng):
        spec = ri_spec(1.3, ErrorStructure("iid", 0.6), beta=0.5)
        vine, margins = lmm_as_gaussian_dvine(spec, 3)
        cov = implied_covariance(spec, 3)
        y = rng.multivariate_normal(np.full(3, 0.5), cov * 2.0, size=100)
        u = np.column_stack([pit(margins[j], y[:, j]) for j in range(3)])
        joint = logdensity(vine, u) + sum(stats.norm.logpdf(y[:, j], 0.5, margins[j].sigma)
                                          for j in range(3))
        want = stats.multivariate_normal(np.full(3, 0.5), cov).logpdf(y)
        assert np.allclose(np.exp(joint), np.exp(want), rtol=1e-8, atol=0)

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_density_against_mvn(self, d, rng):
        spec = ri_spec(0.5, ErrorStructure("ar1", 1.0, rho=0.4))
        vine, _ = lmm_as_gaussian_dvine(spec, d)
        R = implied_correlation(spec, d)
        u = rng.uniform(size=(100, d))
        assert np.allclose(density(vine, u), np.exp(mvn_copula_logdensity(R, u)), rtol=1e-8)

    def test_ar1_truncated(self):
        spec = LmmSpec({"intercept": 0.0}, error=ErrorStructure("ar1", 2.0, rho=-0.3))
        vine, _ = lmm_as_gaussian_dvine(spec, 5)
        for (k, l), pc in vine.pairs.items():
            if l - k >= 2:
                assert abs(pc.theta) <= 1e-12

    def test_gaussian_dvine_from_corr(self, rng):
        R = random_correlation(4, rng)
        assert np.allclose(partials_to_corr({e: pc.theta for e, pc in gaussian_dvine(R).pairs.items()}, 4), R)

    def test_loglik_equals_vine_plus_margins(self, rng):
        spec = ri_spec(0.9, ErrorStructure("cs", 0.5, rho=0.2), beta=-1.0)
        data = simulate_lmm(spec, 40, 4, 3)
        data.y[:10, 2:] = np.nan
        vine, margins = lmm_as_gaussian_dvine(spec, 4)
        from repvine.dvine import loglik
        from repvine.margins import pit_dataset
        total = loglik(vine, pit_dataset(margins, data)) + margins_loglik(margins, data)
        assert lmm_loglik(spec, data) == pytest.approx(total, abs=1e-8)


class TestFit:
    def test_random_intercept_recovery(self):
        truth = ri_spec(1.0, ErrorStructure("iid", 1.0))
        data = simulate_lmm(truth, 500, 4, 10)
        est, ll = lmm_fit(data, "iid")
        assert est.D[0, 0] == pytest.approx(1.0, abs=0.2)
        assert est.error.sigma2 == pytest.approx(1.0, abs=0.2)
        assert ll >= lmm_loglik(truth, data) - 1e-4
        assert ll == pytest.approx(lmm_loglik(est, data), abs=1e-8)

    def test_boundary_zero_variance(self):
        truth = LmmSpec({"intercept": 0.0}, [[0.0]], random_intercept, ErrorStructure("iid", 1.0))
        data = simulate_lmm(truth, 500, 4, 11)
        est, _ = lmm_fit(data, "iid")
        assert est.D[0, 0] < 0.05

    def test_covariate_and_unbalanced(self, rng):
        n, d = 300, 4
        x = rng.normal(size=(n, d))
        truth = ri_spec(0.5, ErrorStructure("ar1", 1.0, rho=0.5), beta=1.0)
        y = rng.multivariate_normal(np.zeros(d), implied_covariance(truth, d), size=n) + 1.0 + 2.0 * x
        y[:100, 3] = np.nan
        y[:50, 2] = np.nan
        data = LongitudinalDataset(list(range(n)), y, {"x": x})
        est, ll = lmm_fit(data, "ar1", covariates=["x"])
        assert est.beta["x"] == pytest.approx(2.0, abs=0.1)
        truth_x = LmmSpec({"intercept": 1.0, "x": 2.0}, truth.D, random_intercept, truth.error)
        assert ll >= lmm_loglik(truth_x, data) - 1e-4

    @pytest.mark.parametrize("kind", ["cs", "exp", "general"])
    def test_other_structures_run(self, kind):
        data = simulate_lmm(ri_spec(0.5, ErrorStructure("ar1", 1.0, rho=0.4)), 200, 3, 12)
        est, ll = lmm_fit(data, kind)
        assert est.error.kind is StructureKind.parse(kind)
        assert ll == pytest.approx(lmm_loglik(est, data), abs=1e-6)
