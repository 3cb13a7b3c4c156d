"""
Bivariate parametric copulas.

One-parameter families (Gaussian, Clayton, Gumbel, Frank, Joe) and the
independence copula, each available in four rotations. Every function is
vectorised over ``u`` and ``v`` and propagates NaN entries untouched, which
is how missing measurements travel through the vine code.

Rotation convention (counter-clockwise data rotation, ``c0`` the unrotated
density and ``C0`` its distribution function)::

    rotation   density              distribution function
    0          c0(u, v)             C0(u, v)
    90         c0(1 - u, v)         v - C0(1 - u, v)
    180        c0(1 - u, 1 - v)     u + v - 1 + C0(1 - u, 1 - v)
    270        c0(u, 1 - v)         u - C0(u, 1 - v)

``hfunc1(u, v) = dC/du`` is the distribution of ``V`` given ``U = u`` and
``hfunc2(u, v) = dC/dv`` the distribution of ``U`` given ``V = v``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import digamma, ndtr, ndtri, owens_t, polygamma

EPS = 1e-10
ROTATIONS = (0, 90, 180, 270)
TAU_MAX = 0.99

__all__ = [
    "Family",
    "PairCopula",
    "CopulaDomainError",
    "ConvergenceError",
    "ROTATIONS",
    "INDEPENDENCE",
    "pdf",
    "logpdf",
    "cdf",
    "hfunc1",
    "hfunc2",
    "hinv1",
    "hinv2",
    "param_to_tau",
    "tau_to_param",
    "tail_dependence",
    "theta_bounds",
    "fit_pair_mle",
    "select_pair",
    "independence_test",
    "pair_loglik",
    "empirical_tau",
    "sign_compatible",
]


class CopulaDomainError(ValueError):
    """Parameter or input outside the admissible domain of a family."""


class ConvergenceError(RuntimeError):
    """A numerical routine failed to converge."""


class Family(str, Enum):
    INDEPENDENCE = "Independence"
    GAUSSIAN = "Gaussian"
    CLAYTON = "Clayton"
    GUMBEL = "Gumbel"
    FRANK = "Frank"
    JOE = "Joe"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).strip().lower()
        for fam in cls:
            if fam.value.lower() == key or fam.name.lower() == key:
                return fam
        raise ValueError(f"unknown copula family {name!r}")


# families whose unrotated version only models positive dependence
_POSITIVE_ONLY = (Family.CLAYTON, Family.GUMBEL, Family.JOE)


@dataclass(frozen=True)
class PairCopula:
    """A bivariate copula: family, rotation in degrees and parameter."""

    family: Family
    rotation: int = 0
    theta: float = 0.0

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        if int(self.rotation) not in ROTATIONS:
            raise CopulaDomainError(
                f"rotation must be one of {ROTATIONS}, got {self.rotation}"
            )
        object.__setattr__(self, "rotation", int(self.rotation))
        if fam is Family.INDEPENDENCE:
            object.__setattr__(self, "rotation", 0)
            object.__setattr__(self, "theta", 0.0)
            return
        theta = float(self.theta)
        object.__setattr__(self, "theta", theta)
        _check_theta(fam, theta)

    @property
    def npars(self) -> int:
        return 0 if self.family is Family.INDEPENDENCE else 1

    @property
    def tau(self) -> float:
        return param_to_tau(self)

    def __str__(self) -> str:
        if self.family is Family.INDEPENDENCE:
            return "Independence"
        rot = f" rot{self.rotation}" if self.rotation else ""
        return f"{self.family.value}{rot}(theta={self.theta:.4g})"


INDEPENDENCE = PairCopula(Family.INDEPENDENCE)


def _check_theta(fam: Family, theta: float) -> None:
    ok = math.isfinite(theta)
    if fam is Family.GAUSSIAN:
        ok = ok and -1.0 < theta < 1.0
    elif fam is Family.CLAYTON:
        ok = ok and theta > 0.0
    elif fam is Family.GUMBEL:
        ok = ok and theta >= 1.0
    elif fam is Family.FRANK:
        ok = ok and theta != 0.0
    elif fam is Family.JOE:
        ok = ok and theta > 1.0
    if not ok:
        raise CopulaDomainError(f"parameter {theta!r} outside the domain of {fam.value}")


# --------------------------------------------------------------------------
# helpers


def _clip(x):
    return np.clip(x, EPS, 1.0 - EPS)


def _log_expm1(x):
    # log(exp(x) - 1) for x >= 0
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > 30.0, x, np.log(np.expm1(np.minimum(x, 30.0))))


def _bvn_cdf(h, k, rho):
    """Standard bivariate normal distribution function via Owen's T."""
    s = math.sqrt(1.0 - rho * rho)
    h = np.where(h == 0.0, 1e-150, h)
    k = np.where(k == 0.0, 1e-150, k)
    with np.errstate(over="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * s)
        ak = (h - rho * k) / (k * s)
    beta = np.where(h * k > 0.0, 0.0, 0.5)
    return 0.5 * (ndtr(h) + ndtr(k)) - owens_t(h, ah) - owens_t(k, ak) - beta


def _bisect_unit(func, target, n_iter: int = 56):
    """Solve ``func(x) = target`` for increasing ``func`` on (0, 1)."""
    target = np.asarray(target, dtype=float)
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = func(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# unrotated families; h0(u, v) = dC0(u, v)/du, hi0 its inverse in v


def _logpdf0(fam, th, u, v):
    if fam is Family.GAUSSIAN:
        x, y = ndtri(u), ndtri(v)
        r2 = 1.0 - th * th
        return -0.5 * math.log(r2) - (th * th * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * r2)
    if fam is Family.CLAYTON:
        lu, lv = np.log(u), np.log(v)
        la = _clayton_logA(th, lu, lv)
        return math.log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * la
    if fam is Family.GUMBEL:
        x, y = -np.log(u), -np.log(v)
        lx, ly = np.log(x), np.log(y)
        la = np.logaddexp(th * lx, th * ly)
        a1 = np.exp(la / th)
        return (-a1 + x + y + (th - 1.0) * (lx + ly) + (2.0 / th - 2.0) * la
                + np.log1p((th - 1.0) / a1))
    if fam is Family.FRANK:
        if th < 0:
            return _logpdf0(fam, -th, u, 1.0 - v)
        lnum = math.log(-th * math.expm1(-th))
        return lnum - th * (u + v) - 2.0 * _frank_logmD(th, u, v)
    if fam is Family.JOE:
        lub, lvb = np.log1p(-u), np.log1p(-v)
        ld = _joe_logD(th, lub, lvb)
        return ((1.0 / th - 2.0) * ld + (th - 1.0) * (lub + lvb)
                + np.log(th - 1.0 + np.exp(ld)))
    raise AssertionError(fam)


def _cdf0(fam, th, u, v):
    if fam is Family.GAUSSIAN:
        return _bvn_cdf(ndtri(u), ndtri(v), th)
    if fam is Family.CLAYTON:
        return np.exp(-_clayton_logA(th, np.log(u), np.log(v)) / th)
    if fam is Family.GUMBEL:
        x, y = -np.log(u), -np.log(v)
        la = np.logaddexp(th * np.log(x), th * np.log(y))
        return np.exp(-np.exp(la / th))
    if fam is Family.FRANK:
        if th < 0:
            return u - _cdf0(fam, -th, u, 1.0 - v)
        # 1 + (e^-th*u - 1)(e^-th*v - 1)/(e^-th - 1) = D / (e^-th - 1)
        return -(_frank_logmD(th, u, v) - math.log(-math.expm1(-th))) / th
    if fam is Family.JOE:
        ld = _joe_logD(th, np.log1p(-u), np.log1p(-v))
        return -np.expm1(ld / th)
    raise AssertionError(fam)


def _h0(fam, th, u, v):
    if fam is Family.GAUSSIAN:
        return ndtr((ndtri(v) - th * ndtri(u)) / math.sqrt(1.0 - th * th))
    if fam is Family.CLAYTON:
        lu, lv = np.log(u), np.log(v)
        la = _clayton_logA(th, lu, lv)
        return np.exp(-(th + 1.0) * lu - (1.0 + 1.0 / th) * la)
    if fam is Family.GUMBEL:
        x, y = -np.log(u), -np.log(v)
        lx, ly = np.log(x), np.log(y)
        la = np.logaddexp(th * lx, th * ly)
        return np.exp(-np.exp(la / th) + (1.0 / th - 1.0) * la + (th - 1.0) * lx + x)
    if fam is Family.FRANK:
        if th < 0:
            return 1.0 - _h0(fam, -th, u, 1.0 - v)
        lnum = -th * u + np.log(-np.expm1(-th * v))
        return np.exp(lnum - _frank_logmD(th, u, v))
    if fam is Family.JOE:
        lub, lvb = np.log1p(-u), np.log1p(-v)
        ld = _joe_logD(th, lub, lvb)
        return np.exp((1.0 / th - 1.0) * ld + (th - 1.0) * lub + np.log1p(-np.exp(th * lvb)))
    raise AssertionError(fam)


def _hi0(fam, th, u, w):
    if fam is Family.GAUSSIAN:
        return ndtr(th * ndtri(u) + math.sqrt(1.0 - th * th) * ndtri(w))
    if fam is Family.CLAYTON:
        lu = np.log(u)
        a = -th * lu
        t = -th / (1.0 + th) * np.log(w) - th * lu
        linner = np.logaddexp(a + _log_expm1(t - a), 0.0)
        return np.exp(-linner / th)
    if fam is Family.FRANK:
        if th < 0:
            return 1.0 - _hi0(fam, -th, u, 1.0 - w)
        lw, lw1 = np.log(w), np.log1p(-w)
        la = -th * u + lw1
        top = np.logaddexp(lw - th, la)
        bottom = np.logaddexp(lw, la)
        return -(top - bottom) / th
    # Gumbel and Joe: no closed form
    u = np.asarray(u, dtype=float)
    return _bisect_unit(lambda x: _h0(fam, th, u, _clip(x)), w)


def _clayton_logA(th, lu, lv):
    # log(u^-th + v^-th - 1)
    a, b = -th * lu, -th * lv
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


def _frank_logmD(th, u, v):
    # log(-D), D = (e^-th - 1) + (e^-th*u - 1)(e^-th*v - 1), th > 0
    t1 = -th * u + np.log(-np.expm1(-th * v))
    t2 = -th * v + np.log(-np.expm1(-th * (1.0 - v)))
    return np.logaddexp(t1, t2)


def _joe_logD(th, lub, lvb):
    la, lb = th * lub, th * lvb
    return np.logaddexp(la, lb + np.log1p(-np.exp(la)))


# --------------------------------------------------------------------------
# rotated public interface


def _prep(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return _clip(u), _clip(v)


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def logpdf(pc: PairCopula, u, v):
    """Log copula density ``log c(u, v)``."""
    u, v = _prep(u, v)
    if pc.family is Family.INDEPENDENCE:
        return _out(np.where(np.isnan(u + v), np.nan, 0.0))
    fam, th, r = pc.family, pc.theta, pc.rotation
    if fam is Family.FRANK and abs(th) < 1e-10:
        return _out(np.where(np.isnan(u + v), np.nan, 0.0))
    if r == 90:
        u = 1.0 - u
    elif r == 180:
        u, v = 1.0 - u, 1.0 - v
    elif r == 270:
        v = 1.0 - v
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        return _out(_logpdf0(fam, th, u, v))


def pdf(pc: PairCopula, u, v):
    """Copula density ``c(u, v)``."""
    return _out(np.exp(logpdf(pc, u, v)))


def cdf(pc: PairCopula, u, v):
    """Copula distribution function ``C(u, v)`` on the closed unit square."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    uc, vc = _clip(u), _clip(v)
    fam, th, r = pc.family, pc.theta, pc.rotation
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        if fam is Family.INDEPENDENCE or (fam is Family.FRANK and abs(th) < 1e-10):
            val = uc * vc
        elif r == 0:
            val = _cdf0(fam, th, uc, vc)
        elif r == 90:
            val = vc - _cdf0(fam, th, 1.0 - uc, vc)
        elif r == 180:
            val = uc + vc - 1.0 + _cdf0(fam, th, 1.0 - uc, 1.0 - vc)
        else:
            val = uc - _cdf0(fam, th, uc, 1.0 - vc)
    lower = np.maximum(u + v - 1.0, 0.0)
    upper = np.minimum(u, v)
    val = np.clip(val, lower, upper)
    val = np.where(v >= 1.0, u, val)
    val = np.where(u >= 1.0, v, val)
    val = np.where((u <= 0.0) | (v <= 0.0), 0.0, val)
    return _out(val)


def hfunc1(pc: PairCopula, u, v):
    """Conditional distribution ``C(v | u) = dC(u, v)/du``."""
    uc, vc = _prep(u, v)
    fam, th, r = pc.family, pc.theta, pc.rotation
    if fam is Family.INDEPENDENCE or (fam is Family.FRANK and abs(th) < 1e-10):
        return _out(vc + 0.0 * uc)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        if r == 0:
            val = _h0(fam, th, uc, vc)
        elif r == 90:
            val = _h0(fam, th, 1.0 - uc, vc)
        elif r == 180:
            val = 1.0 - _h0(fam, th, 1.0 - uc, 1.0 - vc)
        else:
            val = 1.0 - _h0(fam, th, uc, 1.0 - vc)
    return _out(np.clip(val, 0.0, 1.0))


def hfunc2(pc: PairCopula, u, v):
    """Conditional distribution ``C(u | v) = dC(u, v)/dv``."""
    uc, vc = _prep(u, v)
    fam, th, r = pc.family, pc.theta, pc.rotation
    if fam is Family.INDEPENDENCE or (fam is Family.FRANK and abs(th) < 1e-10):
        return _out(uc + 0.0 * vc)
    # all families here are exchangeable: dC0(a, b)/db = h0(b, a)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        if r == 0:
            val = _h0(fam, th, vc, uc)
        elif r == 90:
            val = 1.0 - _h0(fam, th, vc, 1.0 - uc)
        elif r == 180:
            val = 1.0 - _h0(fam, th, 1.0 - vc, 1.0 - uc)
        else:
            val = _h0(fam, th, 1.0 - vc, uc)
    return _out(np.clip(val, 0.0, 1.0))


def hinv1(pc: PairCopula, u, w):
    """Inverse of :func:`hfunc1` in its second argument: ``v`` with ``C(v | u) = w``."""
    uc, wc = _prep(u, w)
    fam, th, r = pc.family, pc.theta, pc.rotation
    nan = np.isnan(uc + wc)
    if fam is Family.INDEPENDENCE or (fam is Family.FRANK and abs(th) < 1e-10):
        return _out(wc + 0.0 * uc)
    uc, wc = np.where(nan, 0.5, uc), np.where(nan, 0.5, wc)
    uc, wc = np.broadcast_arrays(uc, wc)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        if r == 0:
            val = _hi0(fam, th, uc, wc)
        elif r == 90:
            val = _hi0(fam, th, 1.0 - uc, wc)
        elif r == 180:
            val = 1.0 - _hi0(fam, th, 1.0 - uc, 1.0 - wc)
        else:
            val = 1.0 - _hi0(fam, th, uc, 1.0 - wc)
    val = np.where(nan, np.nan, val)
    if np.any(~np.isfinite(val) & ~nan):
        raise ConvergenceError(f"h-inverse failed for {pc}")
    return _out(np.clip(val, 0.0, 1.0))


def hinv2(pc: PairCopula, v, w):
    """Inverse of :func:`hfunc2` in its first argument: ``u`` with ``C(u | v) = w``."""
    vc, wc = _prep(v, w)
    fam, th, r = pc.family, pc.theta, pc.rotation
    nan = np.isnan(vc + wc)
    if fam is Family.INDEPENDENCE or (fam is Family.FRANK and abs(th) < 1e-10):
        return _out(wc + 0.0 * vc)
    vc, wc = np.where(nan, 0.5, vc), np.where(nan, 0.5, wc)
    vc, wc = np.broadcast_arrays(vc, wc)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        if r == 0:
            val = _hi0(fam, th, vc, wc)
        elif r == 90:
            val = 1.0 - _hi0(fam, th, vc, 1.0 - wc)
        elif r == 180:
            val = 1.0 - _hi0(fam, th, 1.0 - vc, 1.0 - wc)
        else:
            val = _hi0(fam, th, 1.0 - vc, wc)
    val = np.where(nan, np.nan, val)
    if np.any(~np.isfinite(val) & ~nan):
        raise ConvergenceError(f"h-inverse failed for {pc}")
    return _out(np.clip(val, 0.0, 1.0))


# --------------------------------------------------------------------------
# Kendall's tau and tail dependence


def _debye1(x: float) -> float:
    if x == 0.0:
        return 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda t: t / math.expm1(t) if t != 0.0 else 1.0, 0.0, x,
                                epsabs=1e-15, epsrel=1e-14, limit=200)
    return val / x


def _tau0(fam: Family, th: float) -> float:
    if fam is Family.GAUSSIAN:
        return 2.0 / math.pi * math.asin(th)
    if fam is Family.CLAYTON:
        return th / (th + 2.0)
    if fam is Family.GUMBEL:
        return 1.0 - 1.0 / th
    if fam is Family.FRANK:
        if abs(th) < 1e-4:
            return th / 9.0 - th ** 3 / 900.0
        return 1.0 - 4.0 * (1.0 - _debye1(th)) / th
    if fam is Family.JOE:
        delta = (2.0 - th) / th
        if abs(delta) < 1e-3:
            p1, p2, p3 = (float(polygamma(k, 2.0)) for k in (1, 2, 3))
            return 1.0 - 2.0 / th * (p1 + p2 * delta / 2.0 + p3 * delta * delta / 6.0)
        return 1.0 + 2.0 / (2.0 - th) * (digamma(2.0) - digamma(2.0 / th + 1.0))
    raise AssertionError(fam)


def param_to_tau(pc: PairCopula) -> float:
    """Kendall's tau implied by a pair-copula."""
    if pc.family is Family.INDEPENDENCE:
        return 0.0
    tau = _tau0(pc.family, pc.theta)
    return -tau if pc.rotation in (90, 270) else tau


@lru_cache(maxsize=4096)
def _theta_from_tau0(fam: Family, tau: float) -> float:
    if fam is Family.GAUSSIAN:
        return math.sin(math.pi / 2.0 * tau)
    if fam is Family.CLAYTON:
        return 2.0 * tau / (1.0 - tau)
    if fam is Family.GUMBEL:
        return 1.0 / (1.0 - tau)
    if fam is Family.FRANK:
        if tau < 0:
            return -_theta_from_tau0(fam, -tau)
        lo, hi = 1e-12, 10.0
        while _tau0(fam, hi) < tau:
            hi *= 2.0
        return optimize.brentq(lambda t: _tau0(fam, t) - tau, lo, hi, xtol=1e-14, rtol=1e-15)
    if fam is Family.JOE:
        lo, hi = 1.0 + 1e-12, 4.0
        while _tau0(fam, hi) < tau:
            hi *= 2.0
        return optimize.brentq(lambda t: _tau0(fam, t) - tau, lo, hi, xtol=1e-14, rtol=1e-15)
    raise AssertionError(fam)


def sign_compatible(family: Family, rotation: int, tau: float) -> bool:
    """Whether ``family`` at ``rotation`` can express a Kendall's tau of that sign."""
    family = Family.parse(family)
    if family not in _POSITIVE_ONLY:
        return True
    base = -tau if rotation in (90, 270) else tau
    return base > 0.0


def tau_to_param(family, rotation: int, tau: float) -> PairCopula:
    """Pair-copula of ``family``/``rotation`` with Kendall's tau ``tau``.

    Families that only model positive dependence return the independence
    copula at ``tau == 0`` (the boundary of their parameter domain).
    """
    family = Family.parse(family)
    tau = float(tau)
    if not -1.0 < tau < 1.0:
        raise CopulaDomainError(f"Kendall's tau must lie in (-1, 1), got {tau}")
    if family is Family.INDEPENDENCE:
        if tau != 0.0:
            raise CopulaDomainError("Independence copula has tau = 0")
        return INDEPENDENCE
    base = -tau if rotation in (90, 270) else tau
    if family in _POSITIVE_ONLY and base < 0.0:
        raise CopulaDomainError(
            f"{family.value} with rotation {rotation} cannot express tau = {tau}"
        )
    if base == 0.0 and family is not Family.GAUSSIAN:
        return INDEPENDENCE
    return PairCopula(family, rotation, _theta_from_tau0(family, base))


def tail_dependence(pc: PairCopula) -> tuple[float, float]:
    """Lower and upper tail dependence coefficients."""
    fam, th = pc.family, pc.theta
    lower = upper = 0.0
    if fam is Family.CLAYTON:
        lower = 2.0 ** (-1.0 / th)
    elif fam in (Family.GUMBEL, Family.JOE):
        upper = 2.0 - 2.0 ** (1.0 / th)
    if pc.rotation == 180:
        return upper, lower
    if pc.rotation in (90, 270):
        return 0.0, 0.0
    return lower, upper


# --------------------------------------------------------------------------
# estimation


def theta_bounds(family) -> tuple[float, float]:
    """Parameter search interval, the image of ``|tau| <= 0.99``."""
    family = Family.parse(family)
    if family is Family.GAUSSIAN:
        r = math.sin(math.pi / 2.0 * TAU_MAX)
        return -r, r
    if family is Family.CLAYTON:
        return 1e-6, _theta_from_tau0(family, TAU_MAX)
    if family is Family.GUMBEL:
        return 1.0, _theta_from_tau0(family, TAU_MAX)
    if family is Family.FRANK:
        t = _theta_from_tau0(family, TAU_MAX)
        return -t, t
    if family is Family.JOE:
        return 1.0 + 1e-6, _theta_from_tau0(family, TAU_MAX)
    raise CopulaDomainError("Independence copula has no parameter")


_TAU_GRID = (0.002, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, TAU_MAX)


@lru_cache(maxsize=None)
def _theta_grid(family: Family) -> tuple[float, ...]:
    taus = list(_TAU_GRID)
    if family in (Family.GAUSSIAN, Family.FRANK):
        taus = [-t for t in reversed(taus)] + taus
    return tuple(_theta_from_tau0(family, t) for t in taus)


def _as_pairs(data) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pair data must have shape (n, 2)")
    keep = ~np.isnan(arr).any(axis=1)
    arr = arr[keep]
    return _clip(arr[:, 0]), _clip(arr[:, 1])


def pair_loglik(pc: PairCopula, data) -> float:
    """Sum of log densities over the rows of an ``(n, 2)`` array."""
    u, v = _as_pairs(data)
    return float(np.sum(logpdf(pc, u, v)))


def fit_pair_mle(family, rotation: int, data) -> tuple[PairCopula, float]:
    """Maximum-likelihood fit of a one-parameter family at a fixed rotation.

    A coarse scan over a tau grid picks the starting bracket, which is then
    refined by bounded Brent search on the parameter.
    """
    family = Family.parse(family)
    u, v = _as_pairs(data)
    if u.size == 0:
        raise ValueError("cannot fit a pair-copula to empty data")
    if u.size < 2 or np.ptp(u) == 0.0 or np.ptp(v) == 0.0:
        raise ValueError("pair data are degenerate (fewer than two distinct points)")
    if family is Family.INDEPENDENCE:
        return INDEPENDENCE, 0.0

    def nll(th):
        val = -np.sum(logpdf(PairCopula(family, rotation, th), u, v))
        return val if np.isfinite(val) else 1e300

    grid = _theta_grid(family)
    vals = [nll(t) for t in grid]
    i = int(np.argmin(vals))
    lo_b, hi_b = theta_bounds(family)
    lo = grid[i - 1] if i > 0 else lo_b
    hi = grid[i + 1] if i < len(grid) - 1 else hi_b
    if family is Family.FRANK and lo < 0.0 < hi:
        # bracket straddling the independence point: search each side
        cands = []
        for a, b in ((lo, -1e-8), (1e-8, hi)):
            r = optimize.minimize_scalar(nll, bounds=(a, b), method="bounded",
                                         options={"xatol": 1e-9, "maxiter": 500})
            cands.append((r.fun, r.x))
        fun, x = min(cands)
    else:
        res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-9, "maxiter": 500})
        if not np.isfinite(res.fun) or res.fun >= 1e300:
            raise ConvergenceError(f"MLE failed for {family.value} rotation {rotation}")
        fun, x = res.fun, res.x
    if vals[i] < fun:
        fun, x = vals[i], grid[i]
    return PairCopula(family, rotation, float(x)), float(-fun)


def empirical_tau(data) -> float:
    u, v = _as_pairs(data)
    tau = stats.kendalltau(u, v).statistic
    return 0.0 if not np.isfinite(tau) else float(tau)


def independence_test(data, level: float = 0.05) -> tuple[float, float, bool]:
    """Asymptotic Kendall's tau test of independence.

    Returns
    -------
    tau_hat, p_value, reject
    """
    u, v = _as_pairs(data)
    n = u.size
    if n < 10:
        raise ValueError(f"independence test needs at least 10 observations, got {n}")
    tau_hat = empirical_tau(np.column_stack([u, v]))
    z = tau_hat * math.sqrt(9.0 * n * (n - 1) / (2.0 * (2 * n + 5)))
    p = float(2.0 * stats.norm.sf(abs(z)))
    return tau_hat, p, bool(p < level)


def _criterion(loglik: float, npars: int, n: int, criterion: str) -> float:
    criterion = criterion.lower()
    if criterion == "bic":
        return -2.0 * loglik + npars * math.log(n)
    if criterion == "aic":
        return -2.0 * loglik + 2.0 * npars
    if criterion == "loglik":
        return -loglik
    raise ValueError(f"unknown selection criterion {criterion!r}")


def select_pair(
    data,
    candidates: Sequence[tuple[Family, int]] | Iterable[tuple[str, int]],
    criterion: str = "bic",
    independence_level: float | None = 0.05,
) -> PairCopula:
    """Select and fit a pair-copula from a candidate list.

    The independence test runs first (skipped when ``independence_level`` is
    None); candidates unable to express the sign of the empirical tau are
    skipped. Ties go to the earlier candidate.
    """
    candidates = [(Family.parse(f), int(r)) for f, r in candidates]
    if not candidates:
        raise ValueError("candidate list is empty")
    u, v = _as_pairs(data)
    pairs = np.column_stack([u, v])
    n = u.size
    if independence_level is not None:
        tau_hat, _, reject = independence_test(pairs, independence_level)
        if not reject:
            return INDEPENDENCE
    else:
        tau_hat = empirical_tau(pairs)
    best, best_val = None, math.inf
    for fam, rot in candidates:
        if not sign_compatible(fam, rot, tau_hat):
            continue
        pc, ll = fit_pair_mle(fam, rot, pairs)
        val = _criterion(ll, pc.npars, n, criterion)
        if val < best_val:
            best, best_val = pc, val
    if best is None:
        warnings.warn(
            f"no candidate family matches the sign of tau_hat = {tau_hat:.3f}; "
            "using the independence copula",
            RuntimeWarning,
            stacklevel=2,
        )
        return INDEPENDENCE
    return best
