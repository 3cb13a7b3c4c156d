"""
D-vine copulas with order 1-2-...-d on possibly unbalanced data.

Edges are keyed ``(k, l)`` with ``1 <= k < l <= d`` (1-based measurement
positions); edge ``(k, l)`` carries the pair-copula of ``U_k`` and ``U_l``
given ``U_{k+1}, ..., U_{l-1}`` and lives in tree ``l - k``.

Copula data are stored as an ``(n, d)`` float array with NaN marking absent
measurements. An edge uses an observation iff the entries ``k..l`` are all
present; NaN propagation through the h-function cascade implements exactly
that rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import bicop
from .bicop import INDEPENDENCE, PairCopula

Edge = tuple[int, int]


def edges(dim: int) -> list[Edge]:
    """All edges of a ``dim``-dimensional D-vine, ordered tree by tree."""
    return [(k, k + t) for t in range(1, dim) for k in range(1, dim - t + 1)]


def edge_label(edge: Edge) -> str:
    k, l = edge
    cond = ",".join(str(m) for m in range(k + 1, l))
    return f"c{k},{l}" + (f";{cond}" if cond else "")


@dataclass(frozen=True)
class DVineSpec:
    """Pair-copula families and parameters of a D-vine."""

    dim: int
    pairs: Mapping[Edge, PairCopula]

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"a D-vine needs dimension >= 2, got {self.dim}")
        want = set(edges(self.dim))
        got = {(int(k), int(l)) for k, l in self.pairs}
        if got != want:
            missing = sorted(want - got)
            extra = sorted(got - want)
            raise ValueError(f"D-vine edges do not match dimension {self.dim}: "
                             f"missing {missing}, unexpected {extra}")
        pairs = {(int(k), int(l)): pc for (k, l), pc in self.pairs.items()}
        ordered = {e: pairs[e] for e in edges(self.dim)}
        object.__setattr__(self, "pairs", MappingProxyType(ordered))

    @classmethod
    def independence(cls, dim: int) -> "DVineSpec":
        return cls(dim, {e: INDEPENDENCE for e in edges(dim)})

    @classmethod
    def from_trees(cls, trees: Sequence[Sequence[PairCopula]]) -> "DVineSpec":
        """Build from ``trees[t-1][k-1]`` = pair-copula of edge ``(k, k+t)``."""
        dim = len(trees[0]) + 1
        pairs = {}
        for t, tree in enumerate(trees, start=1):
            if len(tree) != dim - t:
                raise ValueError(f"tree {t} must hold {dim - t} pair-copulas")
            for k, pc in enumerate(tree, start=1):
                pairs[(k, k + t)] = pc
        for e in edges(dim):
            pairs.setdefault(e, INDEPENDENCE)
        return cls(dim, pairs)

    def __getitem__(self, edge: Edge) -> PairCopula:
        return self.pairs[edge]

    @property
    def npars(self) -> int:
        return sum(pc.npars for pc in self.pairs.values())

    def replace(self, updates: Mapping[Edge, PairCopula]) -> "DVineSpec":
        pairs = dict(self.pairs)
        pairs.update(updates)
        return DVineSpec(self.dim, pairs)

    def truncation_level(self) -> int:
        """Highest tree containing a non-independence pair (0 if none)."""
        level = 0
        for (k, l), pc in self.pairs.items():
            if pc.family is not bicop.Family.INDEPENDENCE:
                level = max(level, l - k)
        return level


@dataclass
class CopulaDataset:
    """Copula-scale observations of varying length.

    Parameters
    ----------
    values : ndarray of shape (n, d)
        Entries in (0, 1); NaN marks an absent measurement.
    ids : sequence, optional
        Individual identifiers, one per row.
    """

    values: np.ndarray
    ids: list | None = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError("copula data must be a 2-d array (n, d)")
        present = vals[~np.isnan(vals)]
        if present.size and (present.min() < 0.0 or present.max() > 1.0):
            raise ValueError("copula data must lie in [0, 1]")
        self.values = vals
        if self.ids is not None and len(self.ids) != vals.shape[0]:
            raise ValueError("ids must match the number of observations")

    @classmethod
    def from_observations(cls, observations: Sequence[Sequence[float | None]],
                          dim: int | None = None) -> "CopulaDataset":
        dim = dim or max(len(o) for o in observations)
        arr = np.full((len(observations), dim), np.nan)
        for i, obs in enumerate(observations):
            if len(obs) > dim:
                raise ValueError(f"observation {i} is longer than dimension {dim}")
            for j, x in enumerate(obs):
                if x is not None:
                    arr[i, j] = x
        return cls(arr)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def leading_lengths(self) -> np.ndarray:
        """Length of the run of present entries starting at measurement 1."""
        run = np.cumprod(self.present, axis=1)
        return run.sum(axis=1)

    def group_counts(self) -> np.ndarray:
        """``n_j`` for j = 0..d: observations whose leading run has length j."""
        return np.bincount(self.leading_lengths(), minlength=self.dim + 1)

    def at_least_counts(self) -> np.ndarray:
        """``N_j`` for j = 1..d: observations with at least j leading entries."""
        n = self.group_counts()
        return np.cumsum(n[::-1])[::-1][1:]

    def is_gap_free(self) -> bool:
        return bool(np.all(self.leading_lengths() == self.present.sum(axis=1)))

    def subset(self, rows) -> "CopulaDataset":
        rows = np.asarray(rows)
        ids = None if self.ids is None else [self.ids[i] for i in np.arange(len(self))[rows]]
        return CopulaDataset(self.values[rows], ids)

    def concat(self, other: "CopulaDataset") -> "CopulaDataset":
        ids = None
        if self.ids is not None and other.ids is not None:
            ids = list(self.ids) + list(other.ids)
        return CopulaDataset(np.vstack([self.values, other.values]), ids)


def _as_array(data) -> np.ndarray:
    if isinstance(data, CopulaDataset):
        return data.values
    arr = np.asarray(data, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


# Pseudo-observations carry their normal score z = Phi^{-1}(u) next to u.
# Gaussian pairs work on z, where values within 1e-17 of one stay
# distinguishable; the other families work on u.
ZMAX = 37.5


def _z_of(h) -> np.ndarray:
    return np.clip(ndtri(np.asarray(h, dtype=float)), -ZMAX, ZMAX)


def _gauss_sd(rho: float) -> float:
    return math.sqrt((1.0 - rho) * (1.0 + rho))


class _Arg:
    """A pseudo-observation held on both the copula and the normal-score scale."""

    __slots__ = ("u", "z")

    def __init__(self, u=None, z=None):
        if u is None:
            u = ndtr(z)
        if z is None:
            z = _z_of(u)
        self.u, self.z = np.asarray(u, dtype=float), np.asarray(z, dtype=float)


def _gauss(pc: PairCopula) -> bool:
    return pc.family is bicop.Family.GAUSSIAN


def pair_h(pc: PairCopula, a: _Arg, b: _Arg) -> tuple[_Arg, _Arg]:
    """``C(a | b)`` and ``C(b | a)``."""
    if pc.family is bicop.Family.INDEPENDENCE:
        # C(a | b) = a, but a missing b must still mark the value unavailable
        if not (np.isnan(a.u).any() or np.isnan(b.u).any()):
            return a, b
        gap = np.isnan(a.u) | np.isnan(b.u)
        return (_Arg(u=np.where(gap, np.nan, a.u), z=np.where(gap, np.nan, a.z)),
                _Arg(u=np.where(gap, np.nan, b.u), z=np.where(gap, np.nan, b.z)))
    if _gauss(pc):
        r, s = pc.theta, _gauss_sd(pc.theta)
        return _Arg(z=(a.z - r * b.z) / s), _Arg(z=(b.z - r * a.z) / s)
    return _Arg(u=bicop.hfunc2(pc, a.u, b.u)), _Arg(u=bicop.hfunc1(pc, a.u, b.u))


def pair_logpdf(pc: PairCopula, a: _Arg, b: _Arg) -> np.ndarray:
    if pc.family is bicop.Family.INDEPENDENCE:
        return np.where(np.isnan(a.u) | np.isnan(b.u), np.nan, 0.0)
    if _gauss(pc):
        # evaluated on normal scores, exact far into the tails
        r = pc.theta
        q = (1.0 - r) * (1.0 + r)
        za, zb = a.z, b.z
        return -0.5 * math.log(q) - (r * r * (za * za + zb * zb) - 2.0 * r * za * zb) / (2.0 * q)
    return np.asarray(bicop.logpdf(pc, a.u, b.u), dtype=float)


def pair_hinv1(pc: PairCopula, a: _Arg, w: _Arg) -> _Arg:
    """``v`` solving ``C(v | a) = w``."""
    if pc.family is bicop.Family.INDEPENDENCE:
        return w
    if _gauss(pc):
        return _Arg(z=pc.theta * a.z + _gauss_sd(pc.theta) * w.z)
    return _Arg(u=bicop.hinv1(pc, a.u, w.u))


@dataclass
class _EdgeState:
    pair: PairCopula
    first: _Arg
    second: _Arg
    cond_first: _Arg   # C(a | b): first argument of the next tree
    cond_second: _Arg  # C(b | a): second argument of the next tree

    @property
    def a(self) -> np.ndarray:
        return self.first.u

    @property
    def b(self) -> np.ndarray:
        return self.second.u

    @property
    def h2(self) -> np.ndarray:
        return self.cond_first.u

    @property
    def h1(self) -> np.ndarray:
        return self.cond_second.u

    def logpdf(self) -> np.ndarray:
        return pair_logpdf(self.pair, self.first, self.second)


def _input_arg(u) -> _Arg:
    u = bicop._clip(np.asarray(u, dtype=float))
    return _Arg(u=u)


def sweep(
    values: np.ndarray,
    choose: Callable[[Edge, np.ndarray, np.ndarray], PairCopula],
    max_tree: int | None = None,
) -> Iterator[tuple[Edge, _EdgeState]]:
    """Walk the D-vine tree by tree, yielding per-edge arguments.

    ``choose(edge, a, b)`` returns the pair-copula of the edge given its
    pseudo-observations on the copula scale; fitting and evaluation both
    go through here, so each h-function value is computed once per
    observation.
    """
    dim = values.shape[1]
    max_tree = dim - 1 if max_tree is None else min(max_tree, dim - 1)
    cols = [_input_arg(values[:, j]) for j in range(dim)]
    first = {k: cols[k - 1] for k in range(1, dim)}
    second = {k: cols[k] for k in range(1, dim)}
    for t in range(1, max_tree + 1):
        new_first, new_second = {}, {}
        for k in range(1, dim - t + 1):
            a, b = first[k], second[k]
            pc = choose((k, k + t), a.u, b.u)
            h2, h1 = pair_h(pc, a, b)
            yield (k, k + t), _EdgeState(pc, a, b, h2, h1)
            new_first[k] = h2
            new_second[k] = h1
        # edge (k, k+t+1) pairs C(u_k | k+1..k+t) with C(u_{k+t+1} | k+1..k+t)
        first = {k: new_first[k] for k in range(1, dim - t)}
        second = {k: new_second[k + 1] for k in range(1, dim - t)}


def edge_logdensities(spec: DVineSpec, data) -> dict[Edge, np.ndarray]:
    """Per-edge log pair-copula densities, NaN where an edge is unusable."""
    values = _as_array(data)
    if values.shape[1] != spec.dim:
        raise ValueError(f"data dimension {values.shape[1]} != vine dimension {spec.dim}")
    out = {}
    for edge, st in sweep(values, lambda e, a, b: spec[e]):
        out[edge] = st.logpdf()
    return out


def logdensity(spec: DVineSpec, u) -> np.ndarray | float:
    """Log D-vine density at complete points of shape (d,) or (n, d)."""
    arr = np.asarray(u, dtype=float)
    values = _as_array(arr)
    if np.isnan(values).any():
        raise ValueError("density needs complete observations; use loglik for gaps")
    total = np.zeros(values.shape[0])
    for lp in edge_logdensities(spec, values).values():
        total += lp
    return float(total[0]) if arr.ndim == 1 else total


def density(spec: DVineSpec, u) -> np.ndarray | float:
    """D-vine copula density at complete points of shape (d,) or (n, d)."""
    return np.exp(logdensity(spec, u))


def subvine(spec: DVineSpec, j: int) -> DVineSpec:
    """Sub-vine on the first ``j`` measurements."""
    if not 2 <= j <= spec.dim:
        raise ValueError(f"sub-vine size must lie in [2, {spec.dim}], got {j}")
    return DVineSpec(j, {e: spec[e] for e in edges(j)})


def loglik(spec: DVineSpec, data) -> float:
    """Log-likelihood of possibly unbalanced copula data.

    Each edge contributes one term per observation whose entries ``k..l``
    are all present. Observations with fewer than two present entries add
    nothing.
    """
    values = _as_array(data)
    n_short = int(np.sum((~np.isnan(values)).sum(axis=1) < 2))
    if n_short:
        warnings.warn(f"{n_short} observation(s) with fewer than two measurements "
                      "do not contribute to the copula likelihood", RuntimeWarning,
                      stacklevel=2)
    terms = edge_logdensities(spec, values)
    return float(sum(np.nansum(lp) for lp in terms.values()))


def edge_counts(spec_or_dim, data) -> dict[Edge, int]:
    """Number of observations usable by each edge."""
    values = _as_array(data)
    dim = spec_or_dim.dim if isinstance(spec_or_dim, DVineSpec) else int(spec_or_dim)
    present = ~np.isnan(values)
    return {(k, l): int(np.all(present[:, k - 1:l], axis=1).sum()) for k, l in edges(dim)}


def _history(history) -> np.ndarray:
    h = np.asarray(history, dtype=float)
    return h[None, :] if h.ndim == 1 else h


def conditional_cdf(spec: DVineSpec, history, u_next):
    """``C_{j+1 | 1:j}(u_next | u_1..u_j)`` for histories of length j."""
    h = _history(history)
    j = h.shape[1]
    if not 1 <= j <= spec.dim - 1:
        raise ValueError(f"history length must lie in [1, {spec.dim - 1}], got {j}")
    un = np.broadcast_to(np.asarray(u_next, dtype=float), (h.shape[0],))
    values = np.column_stack([h, un])
    sub = subvine(spec, j + 1)
    out = None
    for edge, st in sweep(values, lambda e, a, b: sub[e]):
        if edge == (1, j + 1):
            out = st.h1
    out = np.asarray(out, dtype=float)
    out = np.where(un >= 1.0, 1.0, np.where(un <= 0.0, 0.0, out))
    scalar = np.ndim(history) == 1 and np.ndim(u_next) == 0
    return float(out[0]) if scalar else out


def conditional_quantile(spec: DVineSpec, history, alpha):
    """Inverse of :func:`conditional_cdf` in ``u_next``."""
    h = _history(history)
    j = h.shape[1]
    if not 1 <= j <= spec.dim - 1:
        raise ValueError(f"history length must lie in [1, {spec.dim - 1}], got {j}")
    alpha = np.asarray(alpha, dtype=float)
    if np.any((alpha <= 0.0) | (alpha >= 1.0)):
        raise ValueError("alpha must lie in (0, 1)")
    x = _input_arg(np.broadcast_to(alpha, (h.shape[0],)))
    # first arguments C(u_k | u_{k+1..j}) of the edges (k, j+1)
    firsts = {j: _input_arg(h[:, j - 1])}
    if j >= 2:
        sub = subvine(spec, j)
        for (k, l), st in sweep(h, lambda e, a, b: sub[e]):
            if l == j:
                firsts[k] = st.cond_first
    for k in range(1, j + 1):
        x = pair_hinv1(spec[(k, j + 1)], firsts[k], x)
    x = bicop._clip(x.u)
    scalar = np.ndim(history) == 1 and np.ndim(alpha) == 0
    return float(x[0]) if scalar else x


def simulate(spec: DVineSpec, n: int, seed=None) -> CopulaDataset:
    """Gap-free sample of size ``n`` by inverse Rosenblatt transform."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(n, spec.dim))
    u = np.empty_like(w)
    u[:, 0] = w[:, 0]
    for j in range(1, spec.dim):
        u[:, j] = conditional_quantile(spec, u[:, :j], w[:, j])
    return CopulaDataset(u)
