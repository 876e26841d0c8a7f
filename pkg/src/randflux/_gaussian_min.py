"""Deterministic quadrature for minimum events of a Gaussian vector.

Everything here is about one object: Y ~ N(mean, cov) in small dimension
(at most 7 or so), and probabilities of the form

    P{Y_c <= Y_k for all k}   and   P{min Y <= s},

plus the transition-density integrals that arise when the argmin of Y is
tracked along a scan parameter. The candidate-is-minimum probability is
an outer 1-d integral over the candidate's value s of the conditional
"upper orthant" probability P{others >= s | Y_c = s}.

Orthant probabilities use sequential conditioning on the Cholesky factor
driven by a fixed unscrambled Sobol point set, so every result is a pure
function of its inputs (no RNG state). Semidefinite matrices are handled
by a pivot-free Cholesky that zeroes exhausted columns; deterministic
coordinates turn into indicator factors.
"""

from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

_SQRT2PI = math.sqrt(2.0 * math.pi)
_SOBOL_POWER = 12


def _phi(u):
    return np.exp(-0.5 * u * u) / _SQRT2PI


@lru_cache(maxsize=16)
def _qmc_points(dim: int):
    if dim == 0:
        return None
    eng = qmc.Sobol(d=dim, scramble=False)
    pts = eng.random_base2(_SOBOL_POWER)
    pts[pts == 0.0] = 0.5 / len(pts)  # only the first row is exactly 0
    pts.setflags(write=False)
    return pts


@lru_cache(maxsize=16)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _floor_for(cov: np.ndarray) -> float:
    top = float(np.max(np.diag(cov))) if cov.size else 0.0
    return 1e-12 * max(top, 1.0)


def semidef_cholesky(a: np.ndarray, floor: float | None = None) -> np.ndarray:
    """Lower factor of a PSD matrix; rank-deficient columns become zero."""
    n = a.shape[0]
    if floor is None:
        floor = _floor_for(a)
    low = np.zeros_like(a, dtype=float)
    for i in range(n):
        d = a[i, i] - low[i, :i] @ low[i, :i]
        if d > floor:
            low[i, i] = math.sqrt(d)
            low[i + 1:, i] = (a[i + 1:, i] - low[i + 1:, :i] @ low[i, :i]) / low[i, i]
    return low


def upper_orthant(mean, cov, lo) -> float:
    """P{Z_i >= lo_i for all i} for Z ~ N(mean, cov).

    Dimension 0 gives 1, dimension 1 is exact, higher dimensions use
    sequential conditioning averaged over the cached Sobol set.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = len(mean)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    if d == 0:
        return 1.0
    b = lo - mean
    floor = _floor_for(cov)
    slack = 1e-9 * math.sqrt(max(floor, 0.0)) + 1e-12
    if d == 1:
        v = cov[0, 0]
        if v <= floor:
            return 1.0 if b[0] <= slack else 0.0
        return float(1.0 - ndtr(b[0] / math.sqrt(v)))
    low = semidef_cholesky(cov, floor)
    pts = _qmc_points(d - 1)
    npts = len(pts)
    z = np.zeros((d, npts))
    prob = np.ones(npts)
    col = 0
    for i in range(d):
        partial = low[i, :i] @ z[:i] if i else np.zeros(npts)
        if low[i, i] <= 0.0:
            prob *= (partial >= b[i] - slack).astype(float)
            continue
        ui = (b[i] - partial) / low[i, i]
        di = ndtr(ui)
        prob *= 1.0 - di
        if i < d - 1:
            u = pts[:, col]
            col += 1
            z[i] = ndtri(np.clip(di + u * (1.0 - di), 1e-16, 1.0 - 1e-16))
    return float(np.mean(prob))


def _conditional_given_coord(mean, cov, c):
    """Moments of the remaining coords given Y_c = s (mean affine in s)."""
    d = len(mean)
    o = [k for k in range(d) if k != c]
    vc = cov[c, c]
    floor = _floor_for(cov)
    if vc <= floor:
        beta = np.zeros(len(o))
    else:
        beta = cov[o, c] / vc
    cc = cov[np.ix_(o, o)] - np.outer(beta, cov[c, o])
    base = mean[o] - beta * mean[c]
    return o, beta, base, cc  # cond mean at Y_c = s is base + beta * s


def min_probability(mean, cov, c: int) -> float:
    """P{Y_c is the minimum of Y} by outer quadrature over Y_c's value."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = len(mean)
    if d == 1:
        return 1.0
    floor = _floor_for(cov)
    vc = cov[c, c]
    o, beta, base, cc = _conditional_given_coord(mean, cov, c)
    if vc <= floor:
        # deterministic candidate: single orthant at its value
        return upper_orthant(mean[o], cov[np.ix_(o, o)], mean[c])
    sc = math.sqrt(vc)

    def f(u):
        s = mean[c] + sc * u
        return _phi(u) * upper_orthant(base + beta * s, cc, s)

    with warnings.catch_warnings():
        # rank-deficient cov blocks make f piecewise constant in s; quad then
        # hits its subdivision cap hunting a step it cannot smooth, long after
        # the value itself has converged
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(f, -8.5, 8.5, epsabs=1e-10, epsrel=1e-9, limit=200)
    return float(val)


def min_cdf(mean, cov, s_values) -> np.ndarray:
    """F(s) = P{min_k Y_k <= s} = 1 - P{all Y_k > s}."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    return np.asarray([1.0 - upper_orthant(mean, cov, s) for s in np.atleast_1d(s_values)])


def append_linear(mean, cov, const: float, coef) -> tuple[np.ndarray, np.ndarray]:
    """Adjoin the coordinate const + coef . Z to a Gaussian vector."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    coef = np.asarray(coef, dtype=float)
    cross = cov @ coef
    var = float(coef @ cross)
    m2 = np.concatenate([mean, [const + float(coef @ mean)]])
    c2 = np.block([[cov, cross[:, None]], [cross[None, :], np.array([[var]])]])
    return m2, c2


def condition_on_difference(mean, cov, i: int, j: int):
    """Condition on Y_i - Y_j = 0.

    Returns (density_at_zero, conditioned mean, conditioned cov) for the
    FULL vector; the density factor is the 1-d normal density of the
    difference at 0. A deterministic difference gives density 0 when its
    value is nonzero and raises otherwise (the scan would see a
    persistent tie, which no instance here produces).
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    em = mean[i] - mean[j]
    cz = cov[:, i] - cov[:, j]
    ev = cov[i, i] + cov[j, j] - 2.0 * cov[i, j]
    floor = _floor_for(cov)
    if ev <= floor:
        if abs(em) > math.sqrt(max(floor, 0.0)) * 10.0:
            return 0.0, mean, cov
        raise ValueError("degenerate tie: Y_i - Y_j is deterministically 0")
    dens = math.exp(-0.5 * em * em / ev) / (_SQRT2PI * math.sqrt(ev))
    m2 = mean - cz * (em / ev)
    c2 = cov - np.outer(cz, cz) / ev
    return dens, m2, c2


def expected_positive_part(m: float, tau: float) -> float:
    """E (X)+ for X ~ N(m, tau^2)."""
    if tau <= 0.0:
        return max(m, 0.0)
    r = m / tau
    return m * float(ndtr(r)) + tau * float(_phi(r))


def transition_density(mean, cov, a: int, b: int, candidates,
                       drift_const: float, drift_coef=None,
                       n_outer: int = 128, n_inner: int = 64) -> float:
    """Density (per unit scan length) of the argmin handing over a -> b.

    The argmin among ``candidates`` switches from a to b where the two
    objectives cross; to first order the crossing rate is

        E (D_b - D_a)+ . density of {Y_a = Y_b = s, others >= s} in s,

    with D the per-candidate descent rate. ``drift_const`` plus
    ``drift_coef . Z`` is D_b - D_a (the coef covers random vertex rates,
    zero for segment-segment pairs). Inadmissible deterministic
    directions return exactly 0 without integrating.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    coef_zero = drift_coef is None or not np.any(np.asarray(drift_coef) != 0.0)
    if not coef_zero:
        # a coef row acting on zero-variance coordinates is a constant in
        # disguise; fold it so inadmissible deterministic rates gate exactly
        dc = np.asarray(drift_coef, dtype=float)
        if float(dc @ cov @ dc) <= _floor_for(cov):
            drift_const = drift_const + float(dc @ mean)
            coef_zero = True
    if coef_zero and drift_const <= 0.0:
        return 0.0

    if not coef_zero:
        mean, cov = append_linear(mean, cov, drift_const, drift_coef)
    dens0, m1, c1 = condition_on_difference(mean, cov, a, b)
    if dens0 == 0.0:
        return 0.0
    floor = _floor_for(cov)
    others = [k for k in candidates if k not in (a, b)]
    d_idx = len(m1) - 1 if not coef_zero else None

    va = c1[a, a]
    sa = math.sqrt(max(va, 0.0))
    xg, wg = _leggauss(n_outer)

    def inner(s: float) -> float:
        # condition the post-tie vector on Y_a = s
        if va <= floor:
            m2, c2 = m1, c1
        else:
            beta = c1[:, a] / va
            m2 = m1 + beta * (s - m1[a])
            c2 = c1 - np.outer(c1[:, a], c1[:, a]) / va
        if coef_zero:
            rate = drift_const
            if not others:
                return rate
            return rate * upper_orthant(m2[others], c2[np.ix_(others, others)], s)
        md = m2[d_idx]
        td = math.sqrt(max(c2[d_idx, d_idx], 0.0))
        if not others:
            return expected_positive_part(md, td)
        if td <= math.sqrt(floor):
            if md <= 0.0:
                return 0.0
            return md * upper_orthant(m2[others], c2[np.ix_(others, others)], s)
        # nested: integrate the rate against the conditional law of D
        lo_v = max(0.0, md - 9.0 * td)
        hi_v = md + 9.0 * td
        if hi_v <= lo_v:
            return 0.0
        xv, wv = _leggauss(n_inner)
        vs = 0.5 * (hi_v + lo_v) + 0.5 * (hi_v - lo_v) * xv
        wsum = 0.0
        vd = c2[d_idx, d_idx]
        beta_d = c2[:, d_idx] / vd
        for v, wt in zip(vs, wv):
            m3 = m2 + beta_d * (v - md)
            c3 = c2 - np.outer(c2[:, d_idx], c2[:, d_idx]) / vd
            orth = upper_orthant(m3[others], c3[np.ix_(others, others)], s)
            wsum += wt * v * math.exp(-0.5 * (v - md) ** 2 / vd) / (_SQRT2PI * td) * orth
        return wsum * 0.5 * (hi_v - lo_v)

    if va <= floor:
        return dens0 * inner(float(m1[a]))
    lo_s = m1[a] - 9.0 * sa
    hi_s = m1[a] + 9.0 * sa
    ss = 0.5 * (hi_s + lo_s) + 0.5 * (hi_s - lo_s) * xg
    total = 0.0
    for s, wt in zip(ss, wg):
        total += wt * math.exp(-0.5 * ((s - m1[a]) / sa) ** 2) / (_SQRT2PI * sa) * inner(float(s))
    return dens0 * total * 0.5 * (hi_s - lo_s)
