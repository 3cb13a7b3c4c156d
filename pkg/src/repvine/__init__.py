"""
Vine copula models for unbalanced repeated measurements.

Modules
-------
bicop      bivariate pair-copula families
dvine      D-vine density, likelihood, conditionals and simulation
margins    normal regression margins
fit        sequential and group-wise estimation
selectors  AIC and the sample-size-adjusted BIC
lmm        homogeneous linear mixed models and their Gaussian D-vine form
simlab     pruning simulation study
io         long-format data, model files and configs
cli        command-line front end
"""

from .bicop import Family, PairCopula, INDEPENDENCE
from .dvine import CopulaDataset, DVineSpec
from .fit import FitConfig, FitReport, sequential_fit
from .io import ingest
from .margins import LongitudinalDataset, MarginalModel

__all__ = ["Family", "PairCopula", "INDEPENDENCE", "CopulaDataset", "DVineSpec",
           "FitConfig", "FitReport", "sequential_fit", "ingest", "LongitudinalDataset",
           "MarginalModel"]
__version__ = "0.1.0"
