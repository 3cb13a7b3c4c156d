"""
Linear mixed models as Gaussian D-vines
---------------------------------------
A homogeneous LMM implies one correlation matrix whose leading blocks serve
every individual. Its partial correlations parameterize an all-Gaussian
D-vine with the same joint density.
"""
import numpy as np

from repvine import dvine
from repvine.lmm import (ErrorStructure, LmmSpec, corr_to_partials, implied_correlation,
                         implied_covariance, lmm_as_gaussian_dvine, lmm_fit, random_intercept)
from repvine.margins import LongitudinalDataset, margins_loglik, pit_dataset

#%%
# Random intercept plus AR(1) errors.
spec = LmmSpec({"intercept": 2.0}, [[1.0]], random_intercept, ErrorStructure("ar1", 1.0, rho=0.6))
print(np.round(implied_correlation(spec, 5), 3))

#%%
# Pure AR(1) errors are Markov: partial correlations vanish beyond lag one.
ar1 = LmmSpec({"intercept": 0.0}, error=ErrorStructure("ar1", 1.0, rho=0.6))
print({e: round(p, 12) for e, p in corr_to_partials(implied_correlation(ar1, 4)).items()})

#%%
# Simulate, drop some late measurements, and fit by maximum likelihood.
rng = np.random.default_rng(3)
y = rng.multivariate_normal(np.full(5, 2.0), implied_covariance(spec, 5), size=500)
y[:150, 4] = np.nan
data = LongitudinalDataset(list(range(500)), y)
est, ll = lmm_fit(data, "ar1")
print("tau2", est.D[0, 0], "sigma2", est.error.sigma2, "rho", est.error.rho)

#%%
# The bridged vine plus normal margins reproduces the LMM log-likelihood.
vine, margins = lmm_as_gaussian_dvine(est, 5)
print(ll, dvine.loglik(vine, pit_dataset(margins, data)) + margins_loglik(margins, data))
