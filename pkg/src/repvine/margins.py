"""
Normal linear-regression margins for repeated measurements.

Each measurement position ``j`` gets its own regression
``Y_j | x ~ N(x'beta_j, sigma_j^2)``; a pooled mode shares one coefficient
vector and one residual scale across positions.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .bicop import EPS
from .dvine import CopulaDataset

logger = logging.getLogger(__name__)

INTERCEPT = "intercept"


@dataclass
class LongitudinalDataset:
    """Repeated measurements in wide form.

    Parameters
    ----------
    ids : list
        One identifier per individual, in row order.
    y : ndarray of shape (n, d)
        Responses, NaN where a measurement is absent.
    covariates : dict of str to ndarray of shape (n, d)
        Covariate values per individual and measurement position.
    """

    ids: list
    y: np.ndarray
    covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 2:
            raise ValueError("y must be a 2-d array (n, d)")
        if len(self.ids) != self.y.shape[0]:
            raise ValueError("ids must match the number of rows of y")
        covs = {}
        for name, arr in self.covariates.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != self.y.shape:
                raise ValueError(f"covariate {name!r} must have shape {self.y.shape}")
            if name == INTERCEPT:
                raise ValueError(f"{INTERCEPT!r} is reserved")
            covs[name] = arr
        self.covariates = covs

    @classmethod
    def from_records(cls, records: Iterable[tuple], dim: int | None = None):
        """Build from ``(id, meas_index, y, {covariate: value})`` records.

        ``meas_index`` is 1-based; individuals are ordered as first seen.
        """
        records = list(records)
        order: dict = {}
        for rec in records:
            order.setdefault(rec[0], len(order))
        dim = dim or max(int(rec[1]) for rec in records)
        names = sorted({k for rec in records for k in rec[3]})
        y = np.full((len(order), dim), np.nan)
        covs = {k: np.full((len(order), dim), np.nan) for k in names}
        for ident, j, val, cov in records:
            i, j = order[ident], int(j) - 1
            y[i, j] = np.nan if val is None else float(val)
            for k, x in cov.items():
                covs[k][i, j] = x
        return cls(list(order), y, covs)

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def covariate_names(self) -> list[str]:
        return list(self.covariates)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.y)

    def subset(self, rows) -> "LongitudinalDataset":
        rows = np.arange(len(self))[np.asarray(rows)]
        return LongitudinalDataset([self.ids[i] for i in rows], self.y[rows],
                                   {k: v[rows] for k, v in self.covariates.items()})


@dataclass(frozen=True)
class MarginalModel:
    """Normal regression margin of one measurement position."""

    index: int
    coefficients: Mapping[str, float]
    sigma: float
    pooled: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.coefficients:
            raise ValueError("a margin needs at least an intercept")
        object.__setattr__(self, "coefficients", dict(self.coefficients))

    @property
    def npars(self) -> int:
        return len(self.coefficients) + 1

    def mean(self, covariates: Mapping[str, object] | None = None):
        covariates = covariates or {}
        total = 0.0
        for name, coef in self.coefficients.items():
            if name == INTERCEPT:
                total = total + coef
                continue
            if name not in covariates:
                raise KeyError(f"covariate {name!r} required by margin {self.index} is missing")
            total = total + coef * np.asarray(covariates[name], dtype=float)
        return total


def pit(model: MarginalModel, y, covariates: Mapping[str, object] | None = None):
    """Probability integral transform of ``y`` under ``model``."""
    z = (np.asarray(y, dtype=float) - model.mean(covariates)) / model.sigma
    out = np.clip(ndtr(z), EPS, 1.0 - EPS)
    return float(out) if np.ndim(out) == 0 else out


def inverse_pit(model: MarginalModel, u, covariates: Mapping[str, object] | None = None):
    """Quantile ``x'beta + sigma * Phi^{-1}(u)``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie in (0, 1)")
    out = model.mean(covariates) + model.sigma * ndtri(u)
    return float(out) if np.ndim(out) == 0 else out


def _normal_loglik(resid: np.ndarray, sigma: float) -> np.ndarray:
    return -0.5 * math.log(2.0 * math.pi) - math.log(sigma) - 0.5 * (resid / sigma) ** 2


def _ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, float]:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    n = y.size
    sigma2 = float(resid @ resid) / n
    if sigma2 <= 0:
        raise ValueError("residual variance is zero; margin is degenerate")
    ll = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0)
    return beta, math.sqrt(sigma2), ll


def _forward_select(y: np.ndarray, cols: Mapping[str, np.ndarray],
                    candidates: Sequence[str]) -> tuple[list[str], np.ndarray, float]:
    n = y.size
    chosen: list[str] = []
    X = np.ones((n, 1))
    if n < 2:
        raise ValueError(f"need at least 2 observations to fit a margin, got {n}")
    beta, sigma, ll = _ols(X, y)
    best_bic = -2.0 * ll + (X.shape[1] + 1) * math.log(n)
    remaining = list(candidates)
    while remaining:
        trial = None
        for name in remaining:
            Xc = np.column_stack([X, cols[name]])
            if n < Xc.shape[1] + 1:
                continue
            if np.linalg.matrix_rank(Xc) < Xc.shape[1]:
                warnings.warn(f"covariate {name!r} is collinear with the design; dropped",
                              RuntimeWarning, stacklevel=3)
                remaining.remove(name)
                break
            b, s, l = _ols(Xc, y)
            bic = -2.0 * l + (Xc.shape[1] + 1) * math.log(n)
            if trial is None or bic < trial[0]:
                trial = (bic, name, Xc, b, s)
        else:
            if trial is None or trial[0] >= best_bic:
                break
            best_bic, name, X, beta, sigma = trial
            chosen.append(name)
            remaining.remove(name)
    return chosen, beta, sigma


def _columns(data: LongitudinalDataset, mask: np.ndarray, names: Sequence[str]):
    cols = {}
    for name in names:
        if name not in data.covariates:
            raise KeyError(f"unknown covariate {name!r}")
        vals = data.covariates[name][mask]
        if np.isnan(vals).any():
            raise ValueError(f"covariate {name!r} is missing for some present measurements")
        cols[name] = vals
    return cols


def fit_margin(data: LongitudinalDataset, j: int,
               candidate_covariates: Sequence[str] = ()) -> MarginalModel:
    """Fit the margin of measurement ``j`` (1-based) by BIC forward selection."""
    mask = np.zeros_like(data.y, dtype=bool)
    mask[:, j - 1] = data.present[:, j - 1]
    y = data.y[mask]
    cols = _columns(data, mask, candidate_covariates)
    chosen, beta, sigma = _forward_select(y, cols, list(candidate_covariates))
    coefs = {INTERCEPT: float(beta[0])}
    coefs.update({name: float(b) for name, b in zip(chosen, beta[1:])})
    return MarginalModel(j, coefs, sigma)


def fit_pooled_margin(data: LongitudinalDataset,
                      candidate_covariates: Sequence[str] = ()) -> list[MarginalModel]:
    """One regression over all present measurements, shared by every position."""
    mask = data.present
    y = data.y[mask]
    cols = _columns(data, mask, candidate_covariates)
    chosen, beta, sigma = _forward_select(y, cols, list(candidate_covariates))
    coefs = {INTERCEPT: float(beta[0])}
    coefs.update({name: float(b) for name, b in zip(chosen, beta[1:])})
    return [MarginalModel(j, coefs, sigma, pooled=True) for j in range(1, data.dim + 1)]


def fit_margins(data: LongitudinalDataset, candidate_covariates: Sequence[str] = (),
                pooled: bool = False) -> list[MarginalModel | None]:
    """Margins for every position; positions without data yield None."""
    if pooled:
        return fit_pooled_margin(data, candidate_covariates)
    out: list[MarginalModel | None] = []
    for j in range(1, data.dim + 1):
        if not data.present[:, j - 1].any():
            warnings.warn(f"no observations at measurement {j}; margin skipped",
                          RuntimeWarning, stacklevel=2)
            out.append(None)
            continue
        out.append(fit_margin(data, j, candidate_covariates))
    return out


def _covs_at(data: LongitudinalDataset, j: int, rows=slice(None)) -> dict:
    return {k: v[rows, j - 1] for k, v in data.covariates.items()}


def pit_dataset(models: Sequence[MarginalModel | None],
                data: LongitudinalDataset) -> CopulaDataset:
    """Transform every present measurement to the copula scale."""
    u = np.full(data.y.shape, np.nan)
    for j in range(1, data.dim + 1):
        rows = data.present[:, j - 1]
        if not rows.any():
            continue
        model = models[j - 1]
        if model is None:
            continue
        u[rows, j - 1] = pit(model, data.y[rows, j - 1], _covs_at(data, j, rows))
    return CopulaDataset(u, list(data.ids))


def margins_loglik(models: Sequence[MarginalModel | None], data: LongitudinalDataset) -> float:
    """Sum of normal log densities over all present measurements."""
    total = 0.0
    for j in range(1, data.dim + 1):
        rows = data.present[:, j - 1]
        if not rows.any():
            continue
        if j > len(models) or models[j - 1] is None:
            raise ValueError(f"no fitted margin for measurement {j}")
        model = models[j - 1]
        resid = data.y[rows, j - 1] - model.mean(_covs_at(data, j, rows))
        total += float(np.sum(_normal_loglik(np.asarray(resid, dtype=float), model.sigma)))
    return total


def margins_npars(models: Sequence[MarginalModel | None]) -> int:
    pooled = [m for m in models if m is not None and m.pooled]
    own = sum(m.npars for m in models if m is not None and not m.pooled)
    return own + (pooled[0].npars if pooled else 0)
