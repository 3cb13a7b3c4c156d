"""
Linear mixed models with homogeneous correlation and their Gaussian D-vine form.

A model ``Y_i = X_i beta + Z_i b_i + eps_i`` with ``b_i ~ N(0, D)`` and
``eps_i ~ N(0, Sigma_i)`` is homogeneous when each individual's correlation
matrix is the leading block of one ``d x d`` matrix. Such a model is a
Gaussian D-vine whose pair parameters are the partial correlations
``rho_{k,l; k+1..l-1}`` of that matrix, with normal margins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg, optimize

from .bicop import Family, PairCopula
from .dvine import DVineSpec, Edge, edges
from .margins import INTERCEPT, LongitudinalDataset, MarginalModel

logger = logging.getLogger(__name__)


class NotPositiveDefiniteError(ArithmeticError):
    """A covariance or correlation matrix failed the positive-definiteness check."""

    def __init__(self, what: str, min_eigenvalue: float):
        super().__init__(f"{what} is not positive definite "
                         f"(smallest eigenvalue {min_eigenvalue:.6g})")
        self.min_eigenvalue = min_eigenvalue


class LmmConvergenceError(RuntimeError):
    """Raised when the likelihood maximization fails; carries the best iterate."""

    def __init__(self, message: str, best_spec: "LmmSpec", best_loglik: float):
        super().__init__(message)
        self.best_spec = best_spec
        self.best_loglik = best_loglik


class StructureKind(str, Enum):
    IID = "iid"
    CS = "cs"
    AR1 = "ar1"
    EXP = "exp"
    GENERAL = "general"

    @classmethod
    def parse(cls, name: "str | StructureKind") -> "StructureKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        aliases = {"compoundsymmetry": "cs", "exponentialdecay": "exp",
                   "exponential": "exp", "unstructured": "general"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown error structure {name!r}") from None


@dataclass(frozen=True)
class ErrorStructure:
    """Residual covariance ``Sigma`` of an LMM.

    ``sigma2`` scales every structure except ``general``, which takes its
    covariance from ``full_matrix`` (leading blocks for shorter individuals).
    """

    kind: StructureKind = StructureKind.IID
    sigma2: float = 1.0
    rho: float = 0.0
    range_r: float = 1.0
    full_matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        kind = StructureKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is StructureKind.GENERAL:
            if self.full_matrix is None:
                raise ValueError("general structure needs full_matrix")
            m = np.array(self.full_matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
                raise ValueError("full_matrix must be a symmetric square matrix")
            _check_pd(m, "full_matrix")
            m.setflags(write=False)
            object.__setattr__(self, "full_matrix", m)
            return
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if kind is StructureKind.CS and not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if kind is StructureKind.AR1 and not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if kind is StructureKind.EXP and not self.range_r > 0:
            raise ValueError("range_r must be positive")

    def matrix(self, m: int) -> np.ndarray:
        lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
        k = self.kind
        if k is StructureKind.IID:
            return self.sigma2 * np.eye(m)
        if k is StructureKind.CS:
            return self.sigma2 * np.where(lag == 0, 1.0, self.rho)
        if k is StructureKind.AR1:
            return self.sigma2 * self.rho ** lag
        if k is StructureKind.EXP:
            return self.sigma2 * np.exp(-lag / self.range_r)
        if m > self.full_matrix.shape[0]:
            raise ValueError(f"general structure has dimension {self.full_matrix.shape[0]} < {m}")
        return np.array(self.full_matrix[:m, :m])

    def npars(self, d: int) -> int:
        return {StructureKind.IID: 1, StructureKind.CS: 2, StructureKind.AR1: 2,
                StructureKind.EXP: 2}.get(self.kind, d + d * (d - 1) // 2)


def no_random_effects(m: int) -> np.ndarray:
    return np.zeros((m, 0))


def random_intercept(m: int) -> np.ndarray:
    return np.ones((m, 1))


def polynomial_in_index(degree: int) -> Callable[[int], np.ndarray]:
    """Random effects ``1, j, ..., j^degree`` in the measurement index ``j``."""
    def build(m: int) -> np.ndarray:
        j = np.arange(1, m + 1, dtype=float)
        return np.vander(j, degree + 1, increasing=True)
    build.__name__ = f"polynomial_in_index_{degree}"
    return build


@dataclass(frozen=True)
class LmmSpec:
    """Fixed effects, random-effect covariance and residual structure.

    ``z_builder(m)`` returns the ``m x q`` design of an individual with ``m``
    measurements; it depends on ``m`` only, which makes the model homogeneous.
    """

    beta: Mapping[str, float]
    D: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)), compare=False)
    z_builder: Callable[[int], np.ndarray] = no_random_effects
    error: ErrorStructure = field(default_factory=ErrorStructure)

    def __post_init__(self):
        object.__setattr__(self, "beta", dict(self.beta))
        D = np.atleast_2d(np.array(self.D, dtype=float))
        if D.size == 0:
            D = np.zeros((0, 0))
        if D.shape[0] != D.shape[1] or not np.allclose(D, D.T, atol=1e-12):
            raise ValueError("D must be a symmetric square matrix")
        if D.size and np.linalg.eigvalsh(D).min() < -1e-12:
            raise ValueError("D must be positive semidefinite")
        q = self.z_builder(1).shape[1]
        if q != D.shape[0]:
            raise ValueError(f"random-effect design has {q} columns but D is {D.shape[0]}x{D.shape[0]}")
        D.setflags(write=False)
        object.__setattr__(self, "D", D)

    def npars(self, d: int) -> int:
        q = self.D.shape[0]
        return len(self.beta) + q * (q + 1) // 2 + self.error.npars(d)


def _check_pd(m: np.ndarray, what: str) -> None:
    w = np.linalg.eigvalsh(m)
    if w.min() <= 0.0:
        raise NotPositiveDefiniteError(what, float(w.min()))


def implied_covariance(spec: LmmSpec, m: int) -> np.ndarray:
    """``Z D Z' + Sigma`` for an individual with ``m`` measurements."""
    if m < 1:
        raise ValueError("m must be positive")
    Z = spec.z_builder(m)
    cov = Z @ spec.D @ Z.T + spec.error.matrix(m)
    cov = 0.5 * (cov + cov.T)
    _check_pd(cov, f"implied {m}x{m} covariance")
    return cov


def implied_correlation(spec: LmmSpec, m: int) -> np.ndarray:
    cov = implied_covariance(spec, m)
    s = 1.0 / np.sqrt(np.diag(cov))
    R = cov * np.outer(s, s)
    np.fill_diagonal(R, 1.0)
    return R


def _check_correlation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(R, R.T, atol=1e-10):
        raise ValueError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-10):
        raise ValueError("correlation matrix must have a unit diagonal")
    w = np.linalg.eigvalsh(R)
    if w.min() <= 0.0:
        raise ValueError(f"correlation matrix is not positive definite "
                         f"(smallest eigenvalue {w.min():.6g})")
    return R


def corr_to_partials(R) -> dict[Edge, float]:
    """D-vine partial correlations ``rho_{k,l; k+1..l-1}`` of ``R``.

    Uses the first-order recursion, removing the largest conditioning index
    at each step. Keys are 1-based edges.
    """
    R = _check_correlation(R)
    d = R.shape[0]
    memo: dict = {}

    def partial(i: int, j: int, cond: tuple) -> float:
        # 0-based indices; cond sorted
        if not cond:
            return R[i, j]
        key = (min(i, j), max(i, j), cond)
        if key in memo:
            return memo[key]
        m, rest = cond[-1], cond[:-1]
        rij = partial(i, j, rest)
        rim = partial(i, m, rest)
        rjm = partial(j, m, rest)
        val = (rij - rim * rjm) / math.sqrt((1.0 - rim * rim) * (1.0 - rjm * rjm))
        memo[key] = val
        return val

    return {(k, l): float(partial(k - 1, l - 1, tuple(range(k, l - 1))))
            for k, l in edges(d)}


def partials_to_corr(partials: Mapping[Edge, float], d: int) -> np.ndarray:
    """Correlation matrix with the given D-vine partial correlations."""
    R = np.eye(d)
    for k, l in edges(d):
        p = float(partials.get((k, l), 0.0))
        if not -1.0 < p < 1.0:
            raise ValueError(f"partial correlation of edge ({k},{l}) must lie in (-1, 1)")
        i, j = k - 1, l - 1
        if j - i == 1:
            R[i, j] = R[j, i] = p
            continue
        S = slice(i + 1, j)
        Rss = R[S, S]
        r1, r2 = R[i, S], R[j, S]
        a1 = linalg.solve(Rss, r1, assume_a="pos")
        a2 = linalg.solve(Rss, r2, assume_a="pos")
        val = r1 @ a2 + p * math.sqrt(max(1.0 - r1 @ a1, 0.0) * max(1.0 - r2 @ a2, 0.0))
        R[i, j] = R[j, i] = val
    return R


def gaussian_dvine(R) -> DVineSpec:
    """All-Gaussian D-vine with the copula of correlation matrix ``R``."""
    partials = corr_to_partials(R)
    return DVineSpec(len(R), {e: PairCopula(Family.GAUSSIAN, 0, p) for e, p in partials.items()})


def lmm_as_gaussian_dvine(spec: LmmSpec, d: int) -> tuple[DVineSpec, list[MarginalModel]]:
    """Gaussian D-vine and normal margins equivalent to a homogeneous LMM."""
    cov = implied_covariance(spec, d)
    R = implied_correlation(spec, d)
    vine = gaussian_dvine(R)
    beta = dict(spec.beta) or {INTERCEPT: 0.0}
    margins = [MarginalModel(j, beta, math.sqrt(cov[j - 1, j - 1]), pooled=True)
               for j in range(1, d + 1)]
    return vine, margins


# --------------------------------------------------------------------------
# maximum likelihood


@dataclass
class _Design:
    patterns: list  # (positions, y (n_p, m), X (n_p, m, p))
    names: list
    n_meas: int


def _design(data: LongitudinalDataset, covariates: Sequence[str]) -> _Design:
    present = data.present
    for name in covariates:
        if name not in data.covariates:
            raise KeyError(f"unknown covariate {name!r}")
        if np.isnan(data.covariates[name][present]).any():
            raise ValueError(f"covariate {name!r} is missing for some present measurements")
    groups: dict = {}
    for i, row in enumerate(present):
        if row.any():
            groups.setdefault(tuple(np.flatnonzero(row)), []).append(i)
    patterns = []
    for pos, rows in sorted(groups.items()):
        rows = np.asarray(rows)
        pos = np.asarray(pos)
        y = data.y[np.ix_(rows, pos)]
        cols = [np.ones_like(y)] + [data.covariates[c][np.ix_(rows, pos)] for c in covariates]
        X = np.stack(cols, axis=-1)
        patterns.append((pos, y, X))
    return _Design(patterns, [INTERCEPT, *covariates], int(present.sum()))


def _profile_loglik(design: _Design, cov: np.ndarray) -> tuple[float, np.ndarray]:
    """Log-likelihood with beta at its GLS estimate for covariance ``cov``."""
    p = len(design.names)
    XtX = np.zeros((p, p))
    Xty = np.zeros(p)
    logdet = 0.0
    whitened = []
    for pos, y, X in design.patterns:
        V = cov[np.ix_(pos, pos)]
        L = linalg.cholesky(V, lower=True)
        yw = linalg.solve_triangular(L, y.T, lower=True)                # (m, n_p)
        Xw = linalg.solve_triangular(L, X.transpose(1, 0, 2).reshape(len(pos), -1),
                                     lower=True).reshape(len(pos), y.shape[0], p)
        XtX += np.einsum("mnp,mnq->pq", Xw, Xw)
        Xty += np.einsum("mnp,mn->p", Xw, yw)
        logdet += y.shape[0] * 2.0 * np.sum(np.log(np.diag(L)))
        whitened.append((yw, Xw))
    beta = linalg.solve(XtX, Xty, assume_a="pos")
    rss = 0.0
    for yw, Xw in whitened:
        r = yw - Xw @ beta
        rss += float(np.sum(r * r))
    ll = -0.5 * (design.n_meas * math.log(2.0 * math.pi) + logdet + rss)
    return ll, beta


def _unpack(x: np.ndarray, kind: StructureKind, ri: bool, d: int):
    i = 0
    D = np.zeros((0, 0))
    if ri:
        D = np.array([[math.exp(x[0])]])
        i = 1
    if kind is StructureKind.GENERAL:
        sd = np.exp(0.5 * x[i:i + d])
        part = dict(zip(edges(d), np.tanh(x[i + d:])))
        M = partials_to_corr(part, d) * np.outer(sd, sd)
        return D, ErrorStructure(kind, full_matrix=0.5 * (M + M.T))
    s2 = math.exp(x[i])
    if kind is StructureKind.IID:
        return D, ErrorStructure(kind, s2)
    if kind is StructureKind.AR1:
        return D, ErrorStructure(kind, s2, rho=math.tanh(x[i + 1]))
    if kind is StructureKind.CS:
        # compound symmetry is positive definite for rho in (-1/(d-1), 1)
        lo = -1.0 / (d - 1) if d > 1 else -1.0
        return D, ErrorStructure(kind, s2, rho=lo + (1.0 - lo) * 0.5 * (1.0 + math.tanh(x[i + 1])))
    return D, ErrorStructure(kind, s2, range_r=math.exp(x[i + 1]))


def lmm_fit(data: LongitudinalDataset, structure: "str | StructureKind" = "iid",
            covariates: Sequence[str] = (), with_random_intercept: bool = True,
            ) -> tuple[LmmSpec, float]:
    """Maximum-likelihood fit of a homogeneous LMM.

    The fixed effects are profiled out by generalized least squares; the
    variance parameters are searched on log / atanh scales.

    Parameters
    ----------
    data : LongitudinalDataset
    structure : {"iid", "cs", "ar1", "exp", "general"}
        Residual covariance structure.
    covariates : sequence of str
        Fixed-effect covariates besides the intercept.
    with_random_intercept : bool
        Include an individual random intercept.

    Raises
    ------
    LmmConvergenceError
        When the optimizer fails; the exception carries the best iterate.
    """
    kind = StructureKind.parse(structure)
    d = data.dim
    design = _design(data, list(covariates))
    total_var = float(np.nanvar(data.y))
    if not total_var > 0:
        raise ValueError("responses have zero variance")
    x0 = []
    if with_random_intercept:
        x0.append(math.log(0.5 * total_var))
    if kind is StructureKind.GENERAL:
        x0 += [math.log(0.5 * total_var if with_random_intercept else total_var)] * d
        x0 += [0.0] * (d * (d - 1) // 2)
    else:
        x0.append(math.log(0.5 * total_var if with_random_intercept else total_var))
        if kind is StructureKind.AR1:
            x0.append(0.3)
        elif kind is StructureKind.CS:
            lo = -1.0 / (d - 1) if d > 1 else -1.0
            x0.append(math.atanh(2.0 * (0.3 - lo) / (1.0 - lo) - 1.0))
        elif kind is StructureKind.EXP:
            x0.append(0.0)
    x0 = np.asarray(x0, dtype=float)
    zb = random_intercept if with_random_intercept else no_random_effects
    lim = math.log(total_var) + 10.0
    bounds = []
    if with_random_intercept:
        bounds.append((-25.0, lim))
    if kind is StructureKind.GENERAL:
        bounds += [(-25.0, lim)] * d + [(-6.0, 6.0)] * (d * (d - 1) // 2)
    else:
        bounds.append((-25.0, lim))
        if kind in (StructureKind.CS, StructureKind.AR1):
            bounds.append((-6.0, 6.0))
        elif kind is StructureKind.EXP:
            bounds.append((-10.0, 10.0))

    best = {"ll": -math.inf, "x": x0}

    def nll(x):
        try:
            D, err = _unpack(x, kind, with_random_intercept, d)
            cov = zb(d) @ D @ zb(d).T + err.matrix(d)
            ll, _ = _profile_loglik(design, cov)
        except (linalg.LinAlgError, ValueError, NotPositiveDefiniteError):
            return 1e300
        if not math.isfinite(ll):
            return 1e300
        if ll > best["ll"]:
            best["ll"], best["x"] = ll, np.array(x)
        return -ll

    res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 2000, "ftol": 1e-13, "gtol": 1e-7})
    ok = res.success
    if not ok or res.nit <= 1:
        # a stalled or failed gradient search is retried derivative-free
        res2 = optimize.minimize(nll, best["x"], method="Powell", bounds=bounds,
                                 options={"maxiter": 20000, "xtol": 1e-8, "ftol": 1e-12})
        ok = ok or res2.success

    def make(x):
        D, err = _unpack(x, kind, with_random_intercept, d)
        cov = zb(d) @ D @ zb(d).T + err.matrix(d)
        ll, beta = _profile_loglik(design, cov)
        return LmmSpec(dict(zip(design.names, map(float, beta))), D, zb, err), ll

    spec, ll = make(best["x"])
    if not ok:
        raise LmmConvergenceError(f"LMM likelihood maximization did not converge "
                                  f"({res.message})", spec, ll)
    return spec, ll


def lmm_loglik(spec: LmmSpec, data: LongitudinalDataset) -> float:
    """Multivariate normal log-likelihood of ``data`` under ``spec``."""
    names = [n for n in spec.beta if n != INTERCEPT]
    design = _design(data, names)
    cov = implied_covariance(spec, data.dim)
    beta = np.array([spec.beta.get(n, 0.0) for n in design.names])
    total = 0.0
    for pos, y, X in design.patterns:
        V = cov[np.ix_(pos, pos)]
        L = linalg.cholesky(V, lower=True)
        r = linalg.solve_triangular(L, (y - X @ beta).T, lower=True)
        total += -0.5 * (y.size * math.log(2.0 * math.pi)
                         + y.shape[0] * 2.0 * np.sum(np.log(np.diag(L)))
                         + float(np.sum(r * r)))
    return total
