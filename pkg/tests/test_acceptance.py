"""Acceptance criteria 1-10, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` to get one pass/fail line per
criterion in the terminal summary.
"""

import math
import time
import warnings

import numpy as np
import pytest

from repvine import bicop, cli, dvine
from repvine.bicop import Family, PairCopula
from repvine.dvine import CopulaDataset, DVineSpec, edges
from repvine.fit import FitConfig, sequential_fit
from repvine.lmm import (ErrorStructure, LmmSpec, corr_to_partials, gaussian_dvine,
                         implied_covariance, lmm_as_gaussian_dvine, lmm_fit, partials_to_corr,
                         random_intercept)
from repvine.margins import LongitudinalDataset, MarginalModel
from repvine.selectors import ParamLadder, adjusted_bic, bic, build_ladder
from repvine.simlab import PRUNE_D5, StudyConfig, random_correlation, run_study

from conftest import (ACCEPTANCE_DETAILS, ALL_FAMILY_ROTATIONS, brute_force_d4_loglik,
                      conditional_normal_quantile, copula_mass,
                      mixed_d4_spec, mvn_copula_logdensity)


def check(n, ok, detail):
    ACCEPTANCE_DETAILS[n] = detail
    assert ok, f"criterion {n}: {detail}"


def signed(fam, rot, tau):
    if rot in (90, 270) and fam in (Family.CLAYTON, Family.GUMBEL, Family.JOE):
        return -tau
    return tau


# 1 ------------------------------------------------------------------------

def test_criterion_1():
    t0 = time.perf_counter()
    g = np.linspace(0.05, 0.95, 7)
    u, v = (a.ravel() for a in np.meshgrid(g, g, indexing="ij"))
    step = 1e-6
    mass_err = fd_err = inv_err = 0.0
    for fam, rot in ALL_FAMILY_ROTATIONS:
        for tau in (0.2, 0.5, 0.8):
            pc = bicop.tau_to_param(fam, rot, signed(fam, rot, tau))
            mass_err = max(mass_err, abs(copula_mass(pc) - 1.0))
            fd1 = (bicop.cdf(pc, u + step, v) - bicop.cdf(pc, u - step, v)) / (2 * step)
            fd2 = (bicop.cdf(pc, u, v + step) - bicop.cdf(pc, u, v - step)) / (2 * step)
            fd_err = max(fd_err, np.abs(bicop.hfunc1(pc, u, v) - fd1).max(),
                         np.abs(bicop.hfunc2(pc, u, v) - fd2).max())
            inv_err = max(inv_err,
                          np.abs(bicop.hfunc1(pc, u, bicop.hinv1(pc, u, v)) - v).max(),
                          np.abs(bicop.hfunc2(pc, bicop.hinv2(pc, v, u), v) - u).max())
            w = bicop.hfunc1(pc, u, v)
            ok = (w > 1e-6) & (w < 1 - 1e-6)
            inv_err = max(inv_err, np.abs(bicop.hinv1(pc, u[ok], w[ok]) - v[ok]).max())
    secs = time.perf_counter() - t0
    check(1, mass_err < 1e-3 and fd_err < 1e-5 and inv_err < 1e-8 and secs < 60,
          f"mass err {mass_err:.1e}, h-vs-FD {fd_err:.1e}, hinv {inv_err:.1e}, {secs:.1f}s")


# 2 ------------------------------------------------------------------------

def test_criterion_2():
    grid = np.round(np.linspace(-0.8, 0.8, 17), 10)
    worst = 0.0
    for fam, rot in ALL_FAMILY_ROTATIONS:
        for tau in grid:
            if tau == 0 or not bicop.sign_compatible(fam, rot, tau):
                continue
            worst = max(worst, abs(bicop.param_to_tau(bicop.tau_to_param(fam, rot, tau)) - tau))
    rhos = np.linspace(-0.99, 0.99, 199)
    exact = all(bicop.param_to_tau(PairCopula(Family.GAUSSIAN, 0, r)) == 2 / math.pi * math.asin(r)
                for r in rhos)
    check(2, worst < 1e-8 and exact,
          f"max |tau - tau(theta(tau))| {worst:.1e}; gaussian arcsine exact: {exact}")


# 3 ------------------------------------------------------------------------

def test_criterion_3():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    dens_err = round_err = 0.0
    for seed in range(100):
        R = random_correlation(5, seed)
        vine = gaussian_dvine(R)
        u = rng.uniform(size=(100, 5))
        # relative density error, measured on the log scale
        dens_err = max(dens_err, np.abs(dvine.logdensity(vine, u) - mvn_copula_logdensity(R, u)).max())
        p = corr_to_partials(R)
        q = corr_to_partials(partials_to_corr(p, 5))
        round_err = max(round_err, np.abs(partials_to_corr(p, 5) - R).max(),
                        max(abs(q[e] - p[e]) for e in p))
    secs = time.perf_counter() - t0
    check(3, dens_err < 1e-8 and round_err < 1e-10 and secs < 60,
          f"max |log density diff| {dens_err:.1e}, roundtrip {round_err:.1e}, {secs:.1f}s")


# 4 ------------------------------------------------------------------------

def test_criterion_4():
    rng = np.random.default_rng(4)
    spec = mixed_d4_spec()

    def grouped(n, seed):
        vals = dvine.simulate(spec, n, seed).values
        lengths = rng.choice([2, 3, 4], size=n, p=[0.3, 0.3, 0.4])
        vals[np.arange(4)[None, :] >= lengths[:, None]] = np.nan
        return vals

    a, b = grouped(300, 40), grouped(200, 41)
    err = abs(dvine.loglik(spec, a) - brute_force_d4_loglik(spec, a))
    both = CopulaDataset(a).concat(CopulaDataset(b))
    la, lb, lab = (dvine.edge_logdensities(spec, x) for x in (a, b, both))
    terms_equal = all(np.array_equal(lab[e], np.concatenate([la[e], lb[e]]), equal_nan=True)
                      for e in lab)
    add_err = abs(dvine.loglik(spec, both) - dvine.loglik(spec, a) - dvine.loglik(spec, b))
    check(4, err < 1e-10 and terms_equal,
          f"|loglik - brute force| {err:.1e}; per-observation terms identical: {terms_equal} "
          f"(total differs by {add_err:.1e} from summation order)")


# 5 ------------------------------------------------------------------------

def test_criterion_5():
    rng = np.random.default_rng(5)
    q_err = rt_err = 0.0
    for seed in range(20):
        R = random_correlation(4, 500 + seed)
        vine = gaussian_dvine(R)
        hist = rng.uniform(0.02, 0.98, size=(10, 3))
        for alpha in (0.05, 0.5, 0.95):
            for h in hist:
                q = dvine.conditional_quantile(vine, h, alpha)
                want = conditional_normal_quantile(R, h[None, :], alpha)[0]
                q_err = max(q_err, abs(q - want))
                rt_err = max(rt_err, abs(dvine.conditional_cdf(vine, h, q) - alpha))
    check(5, q_err < 1e-6 and rt_err < 1e-8,
          f"quantile vs conditional normal {q_err:.1e}; cdf(quantile) roundtrip {rt_err:.1e}")


# 6 ------------------------------------------------------------------------

def test_criterion_6():
    balanced = ParamLadder((3, 2, 1, 4), (120,) * 4)
    collapse = adjusted_bic(-50.0, balanced) == bic(-50.0, 10, 120)
    worked = adjusted_bic(-100.0, ParamLadder((2, 1), (100, 50)))
    want = 200 + 2 * math.log(100) + math.log(50)
    pooled = [MarginalModel(j, {"intercept": 0.0, "a": 0.1, "b": 0.2, "c": 0.3, "e": 0.4}, 1.0,
                            pooled=True) for j in range(1, 6)]
    g = PairCopula(Family.GAUSSIAN, 0, 0.4)
    spec = DVineSpec.from_trees([[g, g, g, g]])
    lengths = np.repeat([2, 3, 4, 5], [20, 20, 15, 45])
    vals = np.where(np.arange(5)[None, :] < lengths[:, None], 0.5, np.nan)
    ladder = build_ladder(pooled, spec, CopulaDataset(vals))
    shape = ladder.total == 10 and ladder.delta_p == (6, 1, 1, 1, 1)
    check(6, collapse and abs(worked - want) < 1e-9 and shape,
          f"balanced collapse {collapse}; worked value {worked:.6f}; "
          f"ladder {ladder.delta_p} totals {ladder.total}")


# 7 ------------------------------------------------------------------------

def test_criterion_7():
    t0 = time.perf_counter()
    res = run_study(StudyConfig(d=5, n=2000, replicates=100, prune=PRUNE_D5, seed=2024))
    secs = time.perf_counter() - t0
    c12 = res.mean_d_tau[(1, 2)]
    max_tau = max(res.mean_d_tau.values())
    max_lam = max(max(res.mean_d_lower.values()), max(res.mean_d_upper.values()))
    check(7, res.failures == 0 and c12 == 0.0 and max_tau <= 0.03 and max_lam <= 0.04,
          f"c1,2 mean dtau {c12}; max mean dtau {max_tau:.4f}; max mean dlambda {max_lam:.4f}; "
          f"{res.replicates} replicates, {res.failures} failures, {secs:.0f}s")


# 8 ------------------------------------------------------------------------

def consistency_vines():
    t = bicop.tau_to_param
    a = DVineSpec.from_trees([
        [t(Family.CLAYTON, 0, 0.5), t(Family.GUMBEL, 0, 0.6), t(Family.FRANK, 0, -0.4),
         t(Family.JOE, 0, 0.3)],
        [t(Family.GAUSSIAN, 0, 0.3), t(Family.CLAYTON, 90, -0.2), t(Family.GUMBEL, 180, 0.25)],
        [t(Family.FRANK, 0, 0.15), t(Family.JOE, 270, -0.2)],
        [t(Family.GAUSSIAN, 0, -0.1)],
    ])
    b = DVineSpec.from_trees([
        [t(Family.GAUSSIAN, 0, 0.7), t(Family.CLAYTON, 180, 0.4), t(Family.GUMBEL, 90, -0.5),
         t(Family.FRANK, 0, 0.6)],
        [t(Family.JOE, 180, 0.2), t(Family.FRANK, 0, -0.3), t(Family.CLAYTON, 0, 0.3)],
        [t(Family.GUMBEL, 0, 0.2), t(Family.GAUSSIAN, 0, 0.1)],
        [t(Family.CLAYTON, 270, -0.15)],
    ])
    return [a, b]


def test_criterion_8():
    errs = {}
    for v, spec in enumerate(consistency_vines()):
        cfg = FitConfig.with_true_families(spec)
        seqs = np.random.SeedSequence(8 + v).spawn(50)
        for n in (200, 2000):
            per = []
            for s in seqs:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    rep = sequential_fit(dvine.simulate(spec, n, s), cfg)
                per.append([abs(rep.per_edge[e].tau_hat - spec[e].tau) for e in edges(5)])
            errs[(v, n)] = np.mean(per, axis=0)
    small = np.concatenate([errs[(v, 200)] for v in range(2)])
    large = np.concatenate([errs[(v, 2000)] for v in range(2)])
    share = float(np.mean(large < small))
    check(8, share >= 0.9 and large.max() <= 0.05,
          f"mean |tau_hat - tau| decreases on {share:.0%} of {large.size} edges; "
          f"max at n=2000 {large.max():.4f} (n=200: {small.max():.4f})")


# 9 ------------------------------------------------------------------------

def test_criterion_9():
    truth = LmmSpec({"intercept": 2.0}, [[1.0]], random_intercept,
                    ErrorStructure("ar1", 1.0, rho=0.6))
    rng = np.random.default_rng(9)
    y = rng.multivariate_normal(np.full(5, 2.0), implied_covariance(truth, 5), size=500)
    est, _ = lmm_fit(LongitudinalDataset(list(range(500)), y), "ar1")
    rel = {"tau2": abs(est.D[0, 0] - 1.0), "sigma2": abs(est.error.sigma2 - 1.0) / 1.0,
           "rho": abs(est.error.rho - 0.6) / 0.6}
    pure = LmmSpec({"intercept": 2.0}, error=truth.error)
    vine, _ = lmm_as_gaussian_dvine(pure, 5)
    higher = max(abs(pc.theta) for (k, l), pc in vine.pairs.items() if l - k >= 2)
    check(9, max(rel.values()) <= 0.25 and higher <= 1e-12,
          "relative errors " + ", ".join(f"{k} {v:.3f}" for k, v in rel.items())
          + f"; max |partial| in trees >= 2: {higher:.1e}")


# 10 -----------------------------------------------------------------------

def test_criterion_10(tmp_path):
    # the application data set is not distributed; the fit -> predict ->
    # compare workflow is exercised on synthetic data instead
    truth = LmmSpec({"intercept": 1.0}, [[0.8]], random_intercept, ErrorStructure("ar1", 1.0, rho=0.4))
    rng = np.random.default_rng(10)
    y = rng.multivariate_normal(np.ones(4), implied_covariance(truth, 4), size=150)
    y[:40, 3] = np.nan
    lines = ["id,meas_index,y"] + [f"{i},{j + 1},{float(y[i, j])!r}"
                                   for i in range(150) for j in range(4) if not np.isnan(y[i, j])]
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "h.csv").write_text("id,meas_index,y\n1,1,0.5\n1,2,1.0\n1,3,1.5\n")
    codes = [
        cli.main(["fit", "--data", str(tmp_path / "d.csv"), "--pooled", "1",
                  "--out", str(tmp_path / "fit")]),
        cli.main(["predict", "--model", str(tmp_path / "fit" / "model.txt"),
                  "--history", str(tmp_path / "h.csv"), "--out", str(tmp_path / "p.tsv")]),
        cli.main(["compare", "--data", str(tmp_path / "d.csv"),
                  "--models", "lmm-iid,lmm-ar1,dvine-gaussian,dvine", "--out", str(tmp_path / "c.tsv")]),
    ]
    preds = [float(r.split("\t")[3]) for r in (tmp_path / "p.tsv").read_text().splitlines()[1:]]
    table = (tmp_path / "c.tsv").read_text().splitlines()
    ok = codes == [0, 0, 0] and preds == sorted(preds) and len(table) == 5
    check(10, ok, "application tables not reproduced (data not distributed); "
                  "synthetic fit/predict/compare workflow ran, substituted by criteria 5, 8, 9")


if __name__ == "__main__":  # pragma: no cover
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
