"""
Sequential estimation of D-vines on unbalanced copula data.

Trees are fitted in order; every edge uses exactly the observations whose
entries ``k..l`` are present, and its pseudo-observations come from the
already fitted lower trees.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from . import bicop
from .bicop import INDEPENDENCE, Family, PairCopula
from .dvine import CopulaDataset, DVineSpec, Edge, edge_counts, sweep

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES: tuple = (
    (Family.GAUSSIAN, 0),
    (Family.FRANK, 0),
    *((Family.CLAYTON, r) for r in bicop.ROTATIONS),
    *((Family.GUMBEL, r) for r in bicop.ROTATIONS),
    *((Family.JOE, r) for r in bicop.ROTATIONS),
)
GAUSSIAN_ONLY: tuple = ((Family.GAUSSIAN, 0),)


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`sequential_fit`.

    Parameters
    ----------
    candidate_families : sequence of (family, rotation)
        Pool searched for every edge.
    independence_level : float or None
        Level of the Kendall's tau independence pre-test; None disables it.
    selection_criterion : {"bic", "aic", "loglik"}
    truncation_level : int, optional
        Trees above this level are set to independence.
    joint_refine : bool
        Maximize the likelihood over all parameters after the sequential pass.
    min_edge_size : int
        Edges with fewer usable observations are set to independence.
    fixed_families : mapping of edge to (family, rotation), optional
        Skip selection on these edges and only estimate the parameter.
    """

    candidate_families: Sequence = DEFAULT_CANDIDATES
    independence_level: float | None = 0.05
    selection_criterion: str = "bic"
    truncation_level: int | None = None
    joint_refine: bool = False
    min_edge_size: int = 10
    fixed_families: Mapping | None = None

    def __post_init__(self):
        cands = tuple((Family.parse(f), int(r)) for f, r in self.candidate_families)
        if not cands:
            raise ValueError("candidate_families must not be empty")
        object.__setattr__(self, "candidate_families", cands)
        if self.independence_level is not None and not 0.0 < self.independence_level < 1.0:
            raise ValueError("independence_level must lie in (0, 1)")
        if self.selection_criterion.lower() not in ("bic", "aic", "loglik"):
            raise ValueError(f"unknown selection criterion {self.selection_criterion!r}")
        object.__setattr__(self, "selection_criterion", self.selection_criterion.lower())
        if self.truncation_level is not None and self.truncation_level < 0:
            raise ValueError("truncation_level must be nonnegative")
        if self.min_edge_size < 2:
            raise ValueError("min_edge_size must be at least 2")
        if self.fixed_families is not None:
            fixed = {(int(k), int(l)): (Family.parse(f), int(r))
                     for (k, l), (f, r) in self.fixed_families.items()}
            object.__setattr__(self, "fixed_families", fixed)

    @classmethod
    def with_true_families(cls, spec: DVineSpec, **kwargs) -> "FitConfig":
        """Config that re-estimates the parameters of ``spec``'s families."""
        fixed = {e: (pc.family, pc.rotation) for e, pc in spec.pairs.items()}
        kwargs.setdefault("independence_level", None)
        return cls(fixed_families=fixed, **kwargs)


@dataclass(frozen=True)
class EdgeFit:
    pair: PairCopula
    n_used: int
    tau_hat: float
    lambda_lower: float
    lambda_upper: float
    loglik: float
    empirical_tau: float


@dataclass
class FitReport:
    """Outcome of a sequential fit."""

    spec: DVineSpec
    per_edge: dict
    total_loglik: float
    n_obs: int
    warnings: list = field(default_factory=list)
    refined: bool = False

    @property
    def npars(self) -> int:
        return self.spec.npars

    def rows(self) -> list[dict]:
        out = []
        for (k, l), ef in self.per_edge.items():
            out.append({
                "k": k, "l": l, "tree": l - k, "family": ef.pair.family.value,
                "rotation": ef.pair.rotation, "theta": ef.pair.theta,
                "n_used": ef.n_used, "tau": ef.tau_hat,
                "lambda_lower": ef.lambda_lower, "lambda_upper": ef.lambda_upper,
                "loglik": ef.loglik,
            })
        return out


def _values(data) -> np.ndarray:
    if isinstance(data, CopulaDataset):
        return data.values
    return CopulaDataset(data).values


def _edge_fit(st, n_used: int) -> EdgeFit:
    pc, a, b = st.pair, st.a, st.b
    mask = ~(np.isnan(a) | np.isnan(b))
    ll = float(np.nansum(st.logpdf()))
    emp = bicop.empirical_tau(np.column_stack([a[mask], b[mask]])) if mask.sum() >= 2 else 0.0
    lo, up = bicop.tail_dependence(pc)
    return EdgeFit(pc, n_used, bicop.param_to_tau(pc), lo, up, ll, emp)


def sequential_fit(data, config: FitConfig | None = None) -> FitReport:
    """Tree-by-tree selection and estimation on possibly unbalanced data."""
    config = config or FitConfig()
    values = _values(data)
    d = values.shape[1]
    if d < 2:
        raise ValueError("need at least two measurements")
    if config.truncation_level is not None and config.truncation_level >= d:
        raise ValueError(f"truncation_level must be < {d}")
    counts = edge_counts(d, values)
    if max(counts.values()) < config.min_edge_size:
        raise ValueError(f"no edge has at least {config.min_edge_size} usable observations")
    trunc = d - 1 if config.truncation_level is None else config.truncation_level
    fixed = config.fixed_families or {}
    fitted: dict[Edge, PairCopula] = {}
    notes: list[str] = []

    def choose(edge, a, b):
        k, l = edge
        mask = ~(np.isnan(a) | np.isnan(b))
        n_used = int(mask.sum())
        assert n_used == counts[edge]
        if l - k > trunc:
            pc = INDEPENDENCE
        elif n_used < config.min_edge_size:
            msg = (f"edge ({k},{l}) has {n_used} usable observations "
                   f"(< {config.min_edge_size}); set to independence")
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
            notes.append(msg)
            pc = INDEPENDENCE
        elif edge in fixed:
            fam, rot = fixed[edge]
            if fam is Family.INDEPENDENCE:
                pc = INDEPENDENCE
            else:
                pc, _ = bicop.fit_pair_mle(fam, rot, np.column_stack([a[mask], b[mask]]))
        else:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                pc = bicop.select_pair(np.column_stack([a[mask], b[mask]]),
                                       config.candidate_families,
                                       config.selection_criterion,
                                       config.independence_level)
            for w in caught:
                notes.append(f"edge ({k},{l}): {w.message}")
        fitted[edge] = pc
        return pc

    per_edge = {}
    for edge, st in sweep(values, choose):
        per_edge[edge] = _edge_fit(st, counts[edge])
    spec = DVineSpec(d, fitted)
    total = float(sum(ef.loglik for ef in per_edge.values()))
    report = FitReport(spec, per_edge, total, values.shape[0], notes)
    if config.joint_refine:
        report = _refined_report(report, values)
    return report


def fit_model_a(data, config: FitConfig | None = None) -> list[FitReport]:
    """Independent fits for each group of equally long observations.

    Returns one report per group length ``j >= 2`` with data; the report's
    spec has dimension ``j``.
    """
    config = config or FitConfig()
    ds = data if isinstance(data, CopulaDataset) else CopulaDataset(data)
    if not ds.is_gap_free():
        raise ValueError("group-wise fitting needs gap-free observations")
    lengths = ds.leading_lengths()
    reports = []
    for j in range(2, ds.dim + 1):
        rows = lengths == j
        n_j = int(rows.sum())
        if n_j == 0:
            continue
        if n_j < config.min_edge_size:
            warnings.warn(f"group of length {j} has {n_j} observations; skipped",
                          RuntimeWarning, stacklevel=2)
            continue
        trunc = config.truncation_level
        cfg = config
        if trunc is not None and trunc >= j:
            cfg = replace(config, truncation_level=None)
        if cfg.fixed_families:
            cfg = replace(cfg, fixed_families={e: v for e, v in cfg.fixed_families.items()
                                               if e[1] <= j})
        reports.append(sequential_fit(ds.values[rows, :j], cfg))
    return reports


def _total_loglik(spec: DVineSpec, values: np.ndarray) -> float:
    total = 0.0
    for edge, st in sweep(values, lambda e, a, b: spec[e]):
        if st.pair.family is not Family.INDEPENDENCE:
            total += float(np.nansum(st.logpdf()))
    return total


def _search_bounds(pc: PairCopula) -> tuple[float, float]:
    lo, hi = bicop.theta_bounds(pc.family)
    if pc.family is Family.FRANK:
        # stay on the side of the starting value; theta = 0 is excluded
        return (1e-6, hi) if pc.theta > 0 else (lo, -1e-6)
    if pc.family is Family.GUMBEL:
        lo = 1.0 + 1e-9
    return lo, hi


def joint_refine(spec: DVineSpec, data) -> tuple[DVineSpec, float]:
    """Maximize the vine log-likelihood jointly over all edge parameters.

    Families stay fixed and the search starts at ``spec``. If the optimizer
    fails or ends below the starting value, ``spec`` is returned unchanged
    and a RuntimeWarning is issued.
    """
    values = _values(data)
    start_ll = _total_loglik(spec, values)
    free = [e for e, pc in spec.pairs.items() if pc.family is not Family.INDEPENDENCE]
    if not free:
        return spec, start_ll
    x0 = np.array([spec[e].theta for e in free])
    bounds = [_search_bounds(spec[e]) for e in free]
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])

    def build(x):
        return spec.replace({e: PairCopula(spec[e].family, spec[e].rotation, float(t))
                             for e, t in zip(free, x)})

    def nll(x):
        try:
            val = -_total_loglik(build(x), values)
        except (ValueError, FloatingPointError):
            return 1e300
        return val if math.isfinite(val) else 1e300

    try:
        res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 500, "ftol": 1e-12, "gtol": 1e-8})
    except Exception as exc:  # pragma: no cover - defensive
        warnings.warn(f"joint refinement failed ({exc}); keeping sequential estimates",
                      RuntimeWarning, stacklevel=2)
        return spec, start_ll
    new_ll = -float(res.fun)
    if not math.isfinite(new_ll) or new_ll < start_ll:
        if not res.success:
            warnings.warn(f"joint refinement did not converge ({res.message}); "
                          "keeping sequential estimates", RuntimeWarning, stacklevel=2)
        return spec, start_ll
    return build(res.x), new_ll


def _refined_report(report: FitReport, values: np.ndarray) -> FitReport:
    spec, _ = joint_refine(report.spec, values)
    per_edge = {}
    for edge, st in sweep(values, lambda e, a, b: spec[e]):
        per_edge[edge] = _edge_fit(st, report.per_edge[edge].n_used)
    total = float(sum(ef.loglik for ef in per_edge.values()))
    return FitReport(spec, per_edge, total, report.n_obs, list(report.warnings),
                     refined=spec is not report.spec)
