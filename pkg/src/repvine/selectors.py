"""
Model-selection criteria for unbalanced D-vine models.

The adjusted BIC charges each parameter ``log N_j``, where ``N_j`` counts
the individuals with at least ``j`` leading measurements and ``j`` is the
first measurement the parameter depends on. With balanced data it is the
usual BIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dvine import DVineSpec
from .margins import MarginalModel


@dataclass(frozen=True)
class ParamLadder:
    """New parameters per measurement and the matching sample counts.

    Parameters
    ----------
    delta_p : tuple of int
        ``delta_p[j-1]`` parameters first needed at measurement ``j``.
    n_at_least : tuple of int
        ``n_at_least[j-1]`` individuals with at least ``j`` leading entries.
    """

    delta_p: tuple
    n_at_least: tuple

    def __post_init__(self):
        dp = tuple(int(x) for x in self.delta_p)
        nj = tuple(int(x) for x in self.n_at_least)
        if len(dp) != len(nj):
            raise ValueError("delta_p and n_at_least must have the same length")
        if any(x < 0 for x in dp):
            raise ValueError("delta_p entries must be nonnegative")
        if any(x < 0 for x in nj) or any(a < b for a, b in zip(nj, nj[1:])):
            raise ValueError("n_at_least must be nonnegative and nonincreasing")
        object.__setattr__(self, "delta_p", dp)
        object.__setattr__(self, "n_at_least", nj)

    @property
    def total(self) -> int:
        return sum(self.delta_p)


def adjusted_bic(loglik: float, ladder: ParamLadder) -> float:
    """``-2 loglik + sum_j delta_p_j log N_j``."""
    penalty = 0.0
    for j, (dp, nj) in enumerate(zip(ladder.delta_p, ladder.n_at_least), start=1):
        if dp == 0:
            continue
        if nj == 0:
            raise ValueError(f"{dp} parameter(s) attributed to measurement {j}, "
                             "which no individual reaches")
        penalty += dp * math.log(nj)
    return -2.0 * loglik + penalty


def bic(loglik: float, p_total: int, n: int) -> float:
    return -2.0 * loglik + p_total * math.log(n)


def aic(loglik: float, p_total: int) -> float:
    if p_total < 0:
        raise ValueError("parameter count must be nonnegative")
    return -2.0 * loglik + 2.0 * p_total


def reach_counts(data) -> np.ndarray:
    """``N_j``: individuals whose last present measurement is at least ``j``.

    On gap-free data this is the number of observations with at least ``j``
    leading measurements.
    """
    present = data.present
    last = np.where(present.any(axis=1),
                    present.shape[1] - np.argmax(present[:, ::-1], axis=1), 0)
    return np.array([int((last >= j).sum()) for j in range(1, present.shape[1] + 1)])


def build_ladder(margins: Sequence[MarginalModel | None] | None, spec: DVineSpec,
                 data) -> ParamLadder:
    """Attribute margin and pair-copula parameters to measurements.

    Per-measurement margins count at their own index; pooled margins count
    once at measurement 1. Edge ``(k, l)`` counts at ``l``.
    """
    d = spec.dim
    dp = [0] * d
    pooled_done = False
    for m in margins or ():
        if m is None:
            continue
        if m.pooled:
            if not pooled_done:
                dp[0] += m.npars
                pooled_done = True
            continue
        dp[m.index - 1] += m.npars
    for (k, l), pc in spec.pairs.items():
        dp[l - 1] += pc.npars
    return ParamLadder(tuple(dp), tuple(int(x) for x in reach_counts(data)))
