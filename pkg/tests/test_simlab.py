import math

import numpy as np
import pytest

from repvine import bicop
from repvine.bicop import Family
from repvine.dvine import CopulaDataset, edges, simulate
from repvine.lmm import partials_to_corr
from repvine.simlab import (DEFAULT_POOL, PRUNE_D5, PRUNE_D10, PruneDistribution, StudyConfig,
                            default_prune, prune, random_correlation, random_dvine, run_study)

GAUSS = ((Family.GAUSSIAN, 0),)


class TestRandomDvine:
    def test_tree1_moments_d5(self):
        draws = np.concatenate([
            [random_dvine(5, GAUSS, s)[(k, k + 1)].theta for k in range(1, 5)] for s in range(2500)])
        assert draws.size == 10_000
        assert abs(draws.mean()) < 0.02
        assert draws.var() == pytest.approx(1 / 6, abs=0.01)

    def test_d2_uniform(self):
        rho = np.array([random_dvine(2, GAUSS, s)[(1, 2)].theta for s in range(4000)])
        assert abs(rho.mean()) < 0.03
        assert rho.var() == pytest.approx(1 / 3, abs=0.02)

    def test_higher_trees_shrink(self):
        # tree i draws have variance 1/(d - i + 2)
        th = np.array([[random_dvine(5, GAUSS, s)[(1, 1 + i)].theta for i in range(1, 5)]
                       for s in range(3000)])
        for i in range(1, 5):
            assert th[:, i - 1].var() == pytest.approx(1 / (5 - i + 2), abs=0.03)

    def test_gaussian_pool_pd(self):
        for s in range(1000):
            spec = random_dvine(5, GAUSS, s)
            R = partials_to_corr({e: pc.theta for e, pc in spec.pairs.items()}, 5)
            assert np.linalg.eigvalsh(R).min() > 0

    def test_random_correlation(self):
        R = random_correlation(6, 0)
        assert np.allclose(np.diag(R), 1.0) and np.linalg.eigvalsh(R).min() > 0

    def test_signs_and_pool(self):
        for s in range(200):
            spec = random_dvine(5, DEFAULT_POOL, s)
            for pc in spec.pairs.values():
                assert pc.family in {f for f, _ in DEFAULT_POOL}
                assert bicop.sign_compatible(pc.family, pc.rotation, pc.tau)

    def test_reproducible(self):
        assert random_dvine(5, DEFAULT_POOL, 3) == random_dvine(5, DEFAULT_POOL, 3)
        assert random_dvine(5, DEFAULT_POOL, 3) != random_dvine(5, DEFAULT_POOL, 4)


class TestPrune:
    def test_shares_d5(self):
        assert [PRUNE_D5.at_least(j) for j in range(2, 6)] == pytest.approx([1.0, 0.8, 0.6, 0.45])

    def test_shares_d10(self):
        want = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.45, 0.4, 0.35]
        assert [PRUNE_D10.at_least(j) for j in range(2, 11)] == pytest.approx(want)

    def test_point_mass_identity(self):
        data = simulate(random_dvine(4, DEFAULT_POOL, 0), 50, 1)
        out = prune(data, PruneDistribution.point_mass(4), 2)
        assert np.array_equal(out.values, data.values)

    def test_empirical_lengths(self):
        data = CopulaDataset(np.full((20_000, 5), 0.5))
        out = prune(data, PRUNE_D5, 3)
        assert out.is_gap_free()
        n = len(out)
        for j in range(2, 6):
            p = PRUNE_D5.at_least(j)
            assert abs((out.leading_lengths() >= j).sum() - n * p) <= 3 * math.sqrt(n * p * (1 - p)) + 1e-9

    def test_invalid(self):
        with pytest.raises(ValueError):
            PruneDistribution({1: 0.5, 2: 0.5})
        with pytest.raises(ValueError):
            PruneDistribution({2: 0.5, 3: 0.4})
        with pytest.raises(ValueError):
            StudyConfig(d=4, prune=PRUNE_D5)
        vals = np.full((3, 3), 0.5)
        vals[0, 2] = np.nan
        with pytest.raises(ValueError):
            prune(CopulaDataset(vals), PruneDistribution.point_mass(3))

    def test_default(self):
        assert default_prune(5) is PRUNE_D5 and default_prune(10) is PRUNE_D10
        assert default_prune(4).probabilities == pytest.approx({2: 1 / 3, 3: 1 / 3, 4: 1 / 3})


class TestStudy:
    def test_point_mass_zero(self):
        cfg = StudyConfig(d=4, n=300, replicates=1, prune=PruneDistribution.point_mass(4), seed=1)
        res = run_study(cfg)
        assert res.failures == 0
        for e in edges(4):
            assert res.mean_d_tau[e] == res.mean_d_lower[e] == res.mean_d_upper[e] == 0.0

    def test_small_study(self):
        cfg = StudyConfig(d=5, n=500, replicates=3, seed=7)
        res = run_study(cfg)
        assert res.replicates == 3 and res.failures == 0
        assert res.mean_d_tau[(1, 2)] == 0.0
        for (k, l) in edges(5):
            p = PRUNE_D5.at_least(l)
            assert res.mean_n_full[(k, l)] == 500
            sd = math.sqrt(500 * p * (1 - p) / 3)
            assert abs(res.mean_n_pruned[(k, l)] - 500 * p) <= 3 * sd + 1e-9
        text = res.to_delimited()
        lines = text.strip().splitlines()
        assert len(lines) == 12 and lines[0].startswith("edge,k,l,tree,d_tau")
        assert lines[-1] == "# replicates=3 failures=0"

    def test_reproducible_and_worker_independent(self):
        cfg = StudyConfig(d=4, n=200, replicates=2, seed=5)
        a = run_study(cfg).to_delimited()
        assert a == run_study(cfg).to_delimited()
        assert a == run_study(StudyConfig(d=4, n=200, replicates=2, seed=5, workers=2)).to_delimited()
        assert a != run_study(StudyConfig(d=4, n=200, replicates=2, seed=6)).to_delimited()
