"""Closed-form argmin statistics and their Monte Carlo / quadrature engines.

The objects of study are the candidate values

    Y_k = g(r_k) + t L((x - r_k)/t)

on a variational grid: which candidate is the minimum (segment and vertex
probabilities), the expectation of the resulting solution value, the cdf
of segment minima, the density in x of argmin handovers (shocks), the
spectrum of the inverse covariance, and the convergence of the dyadic
discretization. Every quadrature result has a Monte Carlo twin built on
the blocked deterministic driver, so the two can be compared at stated
standard errors.

Probabilities are indexed by class: segments 0..N-1 ascending in y first,
then vertices 0..N. The ``process`` argument always describes the
DERIVATIVE data g' (the PDE initial condition); its running integral g is
derived internally via the joint covariance closed forms.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, eigvalsh
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from . import _mc
from ._gaussian_min import min_probability, transition_density, upper_orthant
from .flux_calculus import FluxSpec, legendre
from .hopf_lax_core import VariationalGrid, build_grid, solve_power_law
from .process_models import (
    CovarianceModel,
    ProcessSpec,
    build_covariance_model,
    build_joint_model,
    discretize_bm,
    sup_integral_difference,
)

__all__ = [
    "SegmentProbabilities",
    "ShockDensityResult",
    "SpectrumReport",
    "CdfCurve",
    "TruncatedSpectrumResult",
    "VarianceLawResult",
    "MonotonicityTable",
    "ConvergenceTable",
    "class_labels",
    "segment_probabilities_mc",
    "segment_probabilities_quadrature",
    "expected_solution",
    "minimum_cdf",
    "shock_density",
    "spectrum_report",
    "truncated_spectrum_probability",
    "variance_law",
    "shock_monotonicity_study",
    "convergence_study",
]

QUADRATURE_CAP = 7


def class_labels(n_segments: int) -> list[str]:
    return [f"S{i}" for i in range(n_segments)] + [f"V{j}" for j in range(n_segments + 1)]


# ---------------------------------------------------------------------------
# result types

@dataclass(frozen=True, eq=False)
class SegmentProbabilities:
    """Per-class argmin probabilities p (segments first, then vertices)."""

    p: np.ndarray
    se: np.ndarray
    expected_w: float
    expected_w_se: float
    method: str               # "mc" | "quadrature"
    trials: int
    x: float
    t: float
    counts: tuple[int, ...]
    labels: list[str]
    vertex_w: np.ndarray | None = None     # E{w 1{min at vertex j}}, MC only
    vertex_w_se: np.ndarray | None = None

    @property
    def n_segments(self) -> int:
        return len(self.counts)

    @property
    def segment_p(self) -> np.ndarray:
        return self.p[: self.n_segments]

    @property
    def vertex_p(self) -> np.ndarray:
        return self.p[self.n_segments:]


@dataclass(frozen=True, eq=False)
class ShockDensityResult:
    """Argmin-transition densities per unit x between all class pairs."""

    x: float
    t: float
    method: str
    labels: list[str]
    n_segments: int
    rates: np.ndarray               # (2N+1, 2N+1), zero diagonal
    rates_se: np.ndarray | None
    delta_x: tuple[float, ...] | None

    @property
    def segment_to_segment(self) -> np.ndarray:
        n = self.n_segments
        return self.rates[:n, :n]

    @property
    def segment_to_vertex(self) -> np.ndarray:
        n = self.n_segments
        return self.rates[:n, n:]

    @property
    def vertex_to_segment(self) -> np.ndarray:
        n = self.n_segments
        return self.rates[n:, :n]

    @property
    def vertex_to_vertex(self) -> np.ndarray:
        n = self.n_segments
        return self.rates[n:, n:]

    @property
    def total_density(self) -> float:
        return float(np.sum(self.rates))


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    n: int
    diag_values: np.ndarray
    eigenvalues: np.ndarray          # of the inverse, ascending
    median_diag: float               # literal 1/N^3 normalization
    median_diag_unit: float          # unit-spacing normalization
    concentration_fraction: float    # within 1% of the median
    eigen_ratio: float               # lambda_n / lambda_ceil(n/2)
    reference: float
    matches_reference_literal: bool
    matches_reference_unit: bool


@dataclass(frozen=True, eq=False)
class CdfCurve:
    s: np.ndarray
    values: np.ndarray
    target: str
    method: str


@dataclass(frozen=True, eq=False)
class TruncatedSpectrumResult:
    kept: int
    flattened: bool
    exact: SegmentProbabilities
    truncated: SegmentProbabilities
    qmc_p: np.ndarray        # rotated-coordinate QMC evaluation, per class
    max_error: float         # max |truncated - exact| over classes


@dataclass(frozen=True, eq=False)
class VarianceLawResult:
    j: float
    x: float
    t: float
    trials: int
    var_w: float
    var_w_se: float
    mean_w: float
    identity_residual_rel: float
    truncated_fraction: float
    t_grid: np.ndarray | None = None
    var_curve: np.ndarray | None = None
    mean_ystar_curve: np.ndarray | None = None
    fit_exponent: float | None = None


@dataclass(frozen=True, eq=False)
class MonotonicityTable:
    t_values: np.ndarray
    density: np.ndarray             # mean jump density per unit x, per t
    density_se: np.ndarray
    per_seed: np.ndarray            # (seeds, len(t_values))
    per_label: dict                 # label -> mean density per t
    step_prob: np.ndarray           # per-step transition probability, per t
    step_prob_se: np.ndarray
    seeds: int


@dataclass(frozen=True, eq=False)
class ConvergenceTable:
    m_values: tuple[int, ...]
    p_left: np.ndarray
    p_interior: np.ndarray
    p_right: np.ndarray
    diffs: np.ndarray               # |P_left step differences| along m_values
    sup_tail_freq: float
    sup_tail_bound: float
    alpha: float
    trials: int


# ---------------------------------------------------------------------------
# instance assembly

def _integrated(spec: ProcessSpec) -> ProcessSpec:
    return dataclasses.replace(spec, integrated=True)


@dataclass(frozen=True, eq=False)
class _Instance:
    grid: VariationalGrid
    mean: np.ndarray    # joint mean: candidates, then vertex derivatives
    sigma: np.ndarray
    chol: np.ndarray

    @property
    def n_candidates(self) -> int:
        return len(self.grid.points)


def _make_instance(flux, process, x, t, n_i, g_mean_fn=None, gprime_mean_fn=None) -> _Instance:
    grid = build_grid(flux, x, t, n_i)
    vpts = grid.vertex_positions()
    npts = len(grid.points)
    dim = npts + len(vpts)
    if process is not None:
        model = build_joint_model(process, grid.points, vpts)
        sigma, chol = model.sigma, model.chol
    else:
        # deterministic data: zero covariance, vanishing sampling noise
        sigma = np.zeros((dim, dim))
        chol = math.sqrt(1e-12) * np.eye(dim)
    mean = np.concatenate([grid.shift, np.zeros(len(vpts))])
    if g_mean_fn is not None:
        mean[:npts] = mean[:npts] + np.asarray(g_mean_fn(grid.points), dtype=float)
    if gprime_mean_fn is not None:
        mean[npts:] = mean[npts:] + np.asarray(gprime_mean_fn(vpts), dtype=float)
    return _Instance(grid=grid, mean=mean, sigma=sigma, chol=chol)


def _class_of_points(grid: VariationalGrid) -> np.ndarray:
    return np.where(grid.is_vertex, grid.n_segments + grid.point_index, grid.point_index)


def _greatest_argmin(y: np.ndarray) -> np.ndarray:
    """Row index of the largest minimizer per column of y (npts, nb)."""
    m = y.min(axis=0)
    mask = y == m
    return y.shape[0] - 1 - np.argmax(mask[::-1], axis=0)


# ---------------------------------------------------------------------------
# segment probabilities

def segment_probabilities_mc(flux, process, x, t, n_i, trials, master_seed, *,
                             threads=1, g_mean_fn=None, gprime_mean_fn=None) -> SegmentProbabilities:
    """Argmin class frequencies over seeded trials.

    Deterministic for fixed (master_seed, trials) regardless of
    ``threads``: trials are drawn in fixed blocks keyed by block index
    and folded in block order.
    """
    inst = _make_instance(flux, process, x, t, n_i, g_mean_fn, gprime_mean_fn)
    grid = inst.grid
    npts = inst.n_candidates
    nseg = grid.n_segments
    ncls = nseg + grid.n_vertices
    cls_of = _class_of_points(grid)
    vert_row = np.where(grid.is_vertex, grid.point_index, 0)
    if nseg:
        seg_val = np.where(grid.is_vertex, 0.0,
                           grid.segment_slope[np.minimum(grid.point_index, nseg - 1)])
    else:
        seg_val = np.zeros(npts)

    def blk(b, nb, rng):
        z = rng.standard_normal((len(inst.mean), nb))
        vals = inst.mean[:, None] + inst.chol @ z
        y = vals[:npts]
        gpv = vals[npts:]
        k = _greatest_argmin(y)
        cls = cls_of[k]
        w = np.where(grid.is_vertex[k], gpv[vert_row[k], np.arange(nb)], seg_val[k])
        return (
            np.bincount(cls, minlength=ncls),
            np.bincount(cls, weights=w, minlength=ncls),
            np.bincount(cls, weights=w * w, minlength=ncls),
        )

    counts = np.zeros(ncls, dtype=np.int64)
    wsum = np.zeros(ncls)
    w2sum = np.zeros(ncls)
    for c, s1, s2 in _mc.map_blocks(trials, master_seed, blk, threads):
        counts += c
        wsum += s1
        w2sum += s2
    p = counts / trials
    se = np.sqrt(p * (1.0 - p) / trials)
    mean_w = float(wsum.sum() / trials)
    var_w = max(float(w2sum.sum() / trials - mean_w**2), 0.0)
    vw = wsum[nseg:] / trials
    vw_se = np.sqrt(np.maximum(w2sum[nseg:] / trials - vw**2, 0.0) / trials)
    return SegmentProbabilities(
        p=p, se=se, expected_w=mean_w, expected_w_se=math.sqrt(var_w / trials),
        method="mc", trials=trials, x=grid.x, t=grid.t, counts=grid.counts,
        labels=class_labels(nseg), vertex_w=vw, vertex_w_se=vw_se,
    )


def segment_probabilities_quadrature(flux, process, x, t, n_i, *,
                                     g_mean_fn=None, gprime_mean_fn=None) -> SegmentProbabilities:
    """Exact per-candidate minimum probabilities by nested quadrature.

    The candidate count (interior points plus vertices) is capped at
    QUADRATURE_CAP; beyond it the nested integrals are not worth their
    cost and segment_probabilities_mc should be used instead. The
    reported expected_w carries only the segment part; vertex
    contributions need expected_solution (they involve the conditional
    mean of g' at a vertex, which this op does not integrate).
    """
    inst = _make_instance(flux, process, x, t, n_i, g_mean_fn, gprime_mean_fn)
    grid = inst.grid
    npts = inst.n_candidates
    if npts > QUADRATURE_CAP:
        raise ValueError(
            f"{npts} candidates exceed the quadrature cap {QUADRATURE_CAP}; "
            "use segment_probabilities_mc"
        )
    nseg = grid.n_segments
    ncls = nseg + grid.n_vertices
    mean_c = inst.mean[:npts]
    cov_c = inst.sigma[:npts, :npts]
    p_cand = np.array([min_probability(mean_c, cov_c, c) for c in range(npts)])
    p = np.bincount(_class_of_points(grid), weights=p_cand, minlength=ncls)
    seg_part = float(np.dot(p[:nseg], grid.segment_slope)) if nseg else 0.0
    return SegmentProbabilities(
        p=p, se=np.zeros(ncls), expected_w=seg_part, expected_w_se=0.0,
        method="quadrature", trials=0, x=grid.x, t=grid.t, counts=grid.counts,
        labels=class_labels(nseg),
    )


def expected_solution(probs: SegmentProbabilities, flux, process, *,
                      trials: int = 200_000, master_seed: int = 2024, threads: int = 1,
                      g_mean_fn=None, gprime_mean_fn=None) -> float:
    """E{w} = sum_i p_i (slope of L on segment i) + vertex terms.

    The segment part is the probability-weighted average of L's slopes.
    Vertex minima contribute E{g'(r_j) 1{min at vertex j}}; those terms
    come from the MC run when ``probs`` is a Monte Carlo result and are
    re-estimated by a fresh MC otherwise (they vanish only when the
    vertex values are deterministic, e.g. at an anchor).
    """
    grid = build_grid(flux, probs.x, probs.t, probs.counts)
    seg_part = float(np.dot(probs.segment_p, grid.segment_slope)) if grid.n_segments else 0.0
    if probs.vertex_w is not None:
        return seg_part + float(np.sum(probs.vertex_w))
    if process is None and gprime_mean_fn is None:
        return seg_part
    if process is None:
        vpts = grid.vertex_positions()
        vmeans = np.asarray(gprime_mean_fn(vpts), dtype=float)
        return seg_part + float(np.dot(probs.vertex_p, vmeans))
    mc = segment_probabilities_mc(
        flux, process, probs.x, probs.t, probs.counts, trials, master_seed,
        threads=threads, g_mean_fn=g_mean_fn, gprime_mean_fn=gprime_mean_fn,
    )
    return seg_part + float(np.sum(mc.vertex_w))


# ---------------------------------------------------------------------------
# minimum cdf

def _parse_target(target):
    if isinstance(target, str):
        kind = "segment" if target[0] == "S" else "vertex" if target[0] == "V" else None
        if kind is None:
            raise ValueError(f"bad cdf target {target!r}")
        return kind, int(target[1:])
    kind, idx = target
    if kind not in ("segment", "vertex"):
        raise ValueError(f"bad cdf target kind {kind!r}")
    return kind, int(idx)


def minimum_cdf(flux, process, x, t, target, s_grid, *, n_i=1, method="auto",
                trials: int = 200_000, master_seed: int = 7, threads: int = 1,
                g_mean_fn=None, gprime_mean_fn=None) -> CdfCurve:
    """Cdf of a segment minimum (min of its interior candidates) or of a
    single vertex candidate value, on the given s grid."""
    inst = _make_instance(flux, process, x, t, n_i, g_mean_fn, gprime_mean_fn)
    grid = inst.grid
    s = np.asarray(s_grid, dtype=float)
    kind, idx = _parse_target(target)
    if kind == "vertex":
        pos = int(np.flatnonzero(grid.is_vertex & (grid.point_index == idx))[0])
        mu = inst.mean[pos]
        sd = math.sqrt(max(inst.sigma[pos, pos], 0.0))
        if sd == 0.0:
            vals = (s >= mu).astype(float)
        else:
            vals = np.asarray(ndtr((s - mu) / sd))
        return CdfCurve(s=s, values=vals, target=f"V{idx}", method="exact")
    sel = np.flatnonzero(~grid.is_vertex & (grid.point_index == idx))
    if len(sel) == 0:
        raise ValueError(f"segment {idx} has no interior candidates")
    mu = inst.mean[sel]
    cov = inst.sigma[np.ix_(sel, sel)]
    if method == "quadrature" or (method == "auto" and len(sel) <= QUADRATURE_CAP):
        vals = np.array([1.0 - upper_orthant(mu, cov, sv) for sv in s])
        return CdfCurve(s=s, values=vals, target=f"S{idx}", method="quadrature")

    low = np.linalg.cholesky(cov + 1e-12 * max(np.max(np.diag(cov)), 1.0) * np.eye(len(sel)))

    def blk(b, nb, rng):
        yv = mu[:, None] + low @ rng.standard_normal((len(sel), nb))
        m = yv.min(axis=0)
        return (m[None, :] <= s[:, None]).sum(axis=1)

    hits = np.zeros(len(s), dtype=np.int64)
    for h in _mc.map_blocks(trials, master_seed, blk, threads):
        hits += h
    return CdfCurve(s=s, values=hits / trials, target=f"S{idx}", method="mc")


# ---------------------------------------------------------------------------
# shock densities

def _drift_data(inst: _Instance):
    """Per-candidate descent rate D = -dY/dx as (const, coef on joint)."""
    grid = inst.grid
    npts = inst.n_candidates
    dim = len(inst.mean)
    consts = np.zeros(npts)
    coefs = np.zeros((npts, dim))
    for k in range(npts):
        if grid.is_vertex[k]:
            # vertex candidate rides with x: dY/dx = g'(r_j), so D = -V_j
            coefs[k, npts + grid.point_index[k]] = -1.0
            consts[k] = -inst.mean[npts + grid.point_index[k]]
        else:
            consts[k] = grid.drift[grid.point_index[k]]
    return consts, coefs


def _quadrature_rates(inst: _Instance, cells=None) -> np.ndarray:
    grid = inst.grid
    npts = inst.n_candidates
    nseg = grid.n_segments
    ncls = nseg + grid.n_vertices
    cls_of = _class_of_points(grid)
    consts, coefs = _drift_data(inst)
    # center the joint so the coef rows act on the fluctuation only
    if cells is None:
        rates = np.zeros((ncls, ncls))
    else:
        rates = np.full((ncls, ncls), np.nan)
        np.fill_diagonal(rates, 0.0)
        for i, j in cells:
            rates[i, j] = 0.0
    cand = list(range(npts))
    for a in cand:
        for b in cand:
            if a == b or cls_of[a] == cls_of[b]:
                continue
            if cells is not None and (cls_of[a], cls_of[b]) not in cells:
                continue
            dconst = consts[b] - consts[a]
            dcoef = coefs[b] - coefs[a]
            if not np.any(dcoef):
                dcoef = None
            dens = transition_density(inst.mean, inst.sigma, a, b, cand, dconst, dcoef)
            rates[cls_of[a], cls_of[b]] += dens
    return rates


def _fd_pair_layout(grid: VariationalGrid, dxv: float):
    """Candidate points/shifts for the comparison grid at x + dxv.

    The transition-density convention keeps interior candidates at fixed
    y and slides only the vertices, so the comparison grid reuses the
    interior points and recomputes their L-arguments.
    """
    pts2 = np.where(grid.is_vertex, grid.points + dxv, grid.points)
    q2 = np.where(grid.is_vertex, grid.q, (grid.x + dxv - grid.points) / grid.t)
    shift2 = grid.t * np.asarray(grid.transform.value(q2), dtype=float)
    if np.any(np.diff(pts2) <= 0):
        raise ValueError("delta_x too large: shifted vertices cross interior points")
    if not np.all(np.isfinite(shift2)):
        raise ValueError("delta_x too large: interior point left the finite support")
    return pts2, shift2


def _fd_rates_one(flux, process, grid, dxv, trials, seed_key, threads,
                  g_mean_fn) -> tuple[np.ndarray, np.ndarray]:
    nseg = grid.n_segments
    ncls = nseg + grid.n_vertices
    cls_of = _class_of_points(grid)
    pts2, shift2 = _fd_pair_layout(grid, dxv)
    union = np.unique(np.concatenate([grid.points, pts2]))
    i1 = np.searchsorted(union, grid.points)
    i2 = np.searchsorted(union, pts2)
    if process is not None:
        model = build_covariance_model(_integrated(process), union)
        chol = model.chol
    else:
        chol = math.sqrt(1e-12) * np.eye(len(union))
    gm = np.asarray(g_mean_fn(union), dtype=float) if g_mean_fn else np.zeros(len(union))

    def blk(b, nb, rng):
        g = gm[:, None] + chol @ rng.standard_normal((len(union), nb))
        c1 = cls_of[_greatest_argmin(g[i1] + grid.shift[:, None])]
        c2 = cls_of[_greatest_argmin(g[i2] + shift2[:, None])]
        return np.bincount(c1 * ncls + c2, minlength=ncls * ncls)

    counts = np.zeros(ncls * ncls, dtype=np.int64)
    for c in _mc.map_blocks(trials, seed_key, blk, threads):
        counts += c
    counts = counts.reshape(ncls, ncls)
    np.fill_diagonal(counts, 0)
    p = counts / trials
    rates = p / dxv
    se = np.sqrt(p * (1.0 - p) / trials) / dxv
    return rates, se


def _richardson_weights(hs: np.ndarray) -> np.ndarray:
    v = np.vander(hs, 3, increasing=True).T  # rows: 1, h, h^2
    return np.linalg.solve(v, np.array([1.0, 0.0, 0.0]))


def shock_density(flux, process, x, t, n_i, method, *,
                  delta_x=(1e-2, 5e-3, 2.5e-3), trials: int = 200_000,
                  master_seed: int = 11, threads: int = 1,
                  g_mean_fn=None, gprime_mean_fn=None,
                  pairs=None) -> ShockDensityResult:
    """Density per unit x of argmin transitions between candidate classes.

    method "quadrature": the crossing-rate integrals, exact inadmissible
    zeros included (a transition needs the descent-rate difference to be
    positive). method "fd": Monte Carlo finite differences of the
    two-point class probabilities at each delta_x, Richardson
    extrapolated to delta_x -> 0.

    ``pairs`` (quadrature only) restricts the evaluation to the given
    (from_label, to_label) cells; every other off-diagonal entry is NaN.
    Each cell costs a handful of adaptive integrals, so a full matrix on
    a 5-candidate instance runs the better part of a minute while four
    chosen cells take seconds.
    """
    inst = _make_instance(flux, process, x, t, n_i, g_mean_fn, gprime_mean_fn)
    grid = inst.grid
    nseg = grid.n_segments
    labels = class_labels(nseg)
    if method in ("quadrature", "SmallInstanceQuadrature"):
        if inst.n_candidates > QUADRATURE_CAP:
            raise ValueError(
                f"{inst.n_candidates} candidates exceed the quadrature cap "
                f"{QUADRATURE_CAP}; use the fd method"
            )
        cells = None
        if pairs is not None:
            index = {lb: k for k, lb in enumerate(labels)}
            try:
                cells = {(index[a], index[b]) for a, b in pairs}
            except KeyError as bad:
                raise ValueError(f"unknown class label {bad.args[0]!r}") from None
        rates = _quadrature_rates(inst, cells)
        return ShockDensityResult(x=grid.x, t=grid.t, method="quadrature",
                                  labels=labels, n_segments=nseg, rates=rates,
                                  rates_se=None, delta_x=None)
    if method not in ("fd", "FiniteDifferenceOfP"):
        raise ValueError(f"unknown shock-density method {method!r}")
    if pairs is not None:
        raise ValueError("pairs only applies to the quadrature method")
    hs = np.asarray(delta_x, dtype=float)
    if len(hs) < 2 or np.any(np.diff(hs) >= 0):
        raise ValueError("delta_x must be a strictly decreasing sequence")
    per_h = [
        _fd_rates_one(flux, process, grid, h, trials, (master_seed, k), threads, g_mean_fn)
        for k, h in enumerate(hs)
    ]
    if len(hs) >= 3:
        wts = _richardson_weights(hs[:3])
        rates = sum(w * per_h[k][0] for k, w in enumerate(wts))
        se = np.sqrt(sum((w * per_h[k][1]) ** 2 for k, w in enumerate(wts)))
    else:
        rates, se = per_h[-1]
    return ShockDensityResult(x=grid.x, t=grid.t, method="fd", labels=labels,
                              n_segments=nseg, rates=rates, rates_se=se,
                              delta_x=tuple(float(h) for h in hs))


# ---------------------------------------------------------------------------
# spectrum

def spectrum_report(n: int, *, reference: float = 14.354) -> SpectrumReport:
    """Inverse-covariance concentration for the integrated walk matrix.

    Sigma_ij = (1/n^3) min(i,j)^2 (max(i,j)/2 - min(i,j)/6), the
    integrated-BM covariance on the uniform grid i/n. The diagonal of the
    inverse is reported under this literal normalization and under unit
    spacing (drop the 1/n^3), and each is compared against the reference
    constant; neither comparison is asserted here.
    """
    if n < 8:
        raise ValueError("spectrum_report needs n >= 8")
    i = np.arange(1, n + 1, dtype=float)
    mn = np.minimum.outer(i, i)
    mx = np.maximum.outer(i, i)
    sigma = mn * mn * (mx / 2.0 - mn / 6.0) / n**3
    c = cho_factor(sigma, lower=True)
    a = cho_solve(c, np.eye(n))
    diag = np.diag(a).copy()
    med = float(np.median(diag))
    frac = float(np.mean(np.abs(diag - med) <= 0.01 * abs(med)))
    lam = eigvalsh(a)
    ratio = float(lam[-1] / lam[(n + 1) // 2 - 1])
    med_unit = med / n**3
    return SpectrumReport(
        n=n, diag_values=diag, eigenvalues=lam, median_diag=med,
        median_diag_unit=med_unit, concentration_fraction=frac,
        eigen_ratio=ratio, reference=reference,
        matches_reference_literal=abs(med - reference) <= 0.01 * reference,
        matches_reference_unit=abs(med_unit - reference) <= 0.01 * reference,
    )


def truncated_spectrum_probability(model: CovarianceModel, keep: int,
                                   grid: VariationalGrid, *, flatten: bool = False,
                                   qmc_power: int = 14) -> TruncatedSpectrumResult:
    """Candidate-minimum probabilities with a spectrally truncated Sigma.

    ``model`` must be the covariance of g on ``grid.points``. The top
    ``keep`` eigendirections are retained (optionally with their
    eigenvalues flattened to the largest kept one) and the same
    quadrature runs on the reconstructed covariance. A rotated-coordinate
    QMC evaluation is returned as a consistency check: the minimum event
    is invariant under the orthogonal change of variables.
    """
    npts = len(grid.points)
    if model.dim != npts:
        raise ValueError("model dimension must match the grid point count")
    if not 1 <= keep <= npts:
        raise ValueError(f"keep must be in [1, {npts}], got {keep}")
    mean = grid.shift
    lam, u = model.eigenvalues, model.eigenvectors
    lam_k = np.maximum(lam[-keep:], 0.0)
    u_k = u[:, -keep:]
    vals = np.full(keep, lam_k[-1]) if flatten else lam_k
    sigma_t = (u_k * vals) @ u_k.T
    sigma_t = 0.5 * (sigma_t + sigma_t.T)

    nseg = grid.n_segments
    ncls = nseg + grid.n_vertices
    cls_of = _class_of_points(grid)

    def pack(sig, tag):
        pc = np.array([min_probability(mean, sig, c) for c in range(npts)])
        p = np.bincount(cls_of, weights=pc, minlength=ncls)
        seg_part = float(np.dot(p[:nseg], grid.segment_slope)) if nseg else 0.0
        return SegmentProbabilities(
            p=p, se=np.zeros(ncls), expected_w=seg_part, expected_w_se=0.0,
            method=tag, trials=0, x=grid.x, t=grid.t, counts=grid.counts,
            labels=class_labels(nseg),
        )

    exact = pack(model.sigma, "quadrature")
    trunc = pack(sigma_t, "quadrature")

    pts = qmc.Sobol(d=keep, scramble=False).random_base2(qmc_power)
    pts[pts == 0.0] = 0.5 / len(pts)
    z = ndtri(np.clip(pts, 1e-15, 1.0 - 1e-15))      # (npts_qmc, keep)
    y = mean[:, None] + (u_k * np.sqrt(vals)) @ z.T  # (npts, n_qmc)
    k = _greatest_argmin(y)
    qp = np.bincount(cls_of[k], minlength=ncls) / y.shape[1]

    return TruncatedSpectrumResult(
        kept=keep, flattened=flatten, exact=exact, truncated=trunc,
        qmc_p=qp, max_error=float(np.max(np.abs(trunc.p - exact.p))),
    )


# ---------------------------------------------------------------------------
# variance law (power-law flux, BM data)

def _bm_dense_block(ys: np.ndarray, ia: int, rng: np.random.Generator, nb: int) -> np.ndarray:
    """Exact joint samples of g = integral of BM at the grid ys.

    ys must contain the anchor at index ia. Conditioned on the walk
    skeleton, each integral increment is trapezoid plus an independent
    N(0, step^3/12) bridge residual, which reproduces the joint law of
    (W, int W) at the grid exactly. The left branch mirrors with the
    sign flip of the integral.
    """
    n = len(ys)
    g = np.empty((nb, n))
    g[:, ia] = 0.0
    for side in (+1, -1):
        tau = (ys[ia:] - ys[ia]) if side > 0 else (ys[ia] - ys[: ia + 1][::-1])
        if len(tau) <= 1:
            continue
        d = np.diff(tau)
        zw = rng.standard_normal((nb, len(d)))
        w = np.cumsum(zw * np.sqrt(d), axis=1)
        wl = np.concatenate([np.zeros((nb, 1)), w[:, :-1]], axis=1)
        zs = rng.standard_normal((nb, len(d)))
        incr = 0.5 * (wl + w) * d + zs * np.sqrt(d**3 / 12.0)
        s = np.cumsum(incr, axis=1)
        if side > 0:
            g[:, ia + 1:] = s
        else:
            g[:, :ia] = -s[:, ::-1]
    return g


def _anchored_grid(lo: float, hi: float, anchor: float, n: int) -> tuple[np.ndarray, int]:
    lo = min(lo, anchor)
    hi = max(hi, anchor)
    step = (hi - lo) / (n - 1)
    left = anchor - step * np.arange(math.ceil((anchor - lo) / step - 1e-9), 0, -1)
    right = anchor + step * np.arange(0, math.ceil((hi - anchor) / step - 1e-9) + 1)
    ys = np.concatenate([left, right])
    return ys, len(left)


def variance_law(flux: FluxSpec, process: ProcessSpec | None, x: float, t: float,
                 trials: int, master_seed: int, *, threads: int = 1,
                 gprime_bound: float = 4.0, n_dense: int = 1025,
                 t_grid=None, g_fn=None) -> VarianceLawResult:
    """Var(w) and the per-sample identity residual for power-law flux.

    w and t^{-1/(j-1)} sgn(x - y*) |x - y*|^{1/(j-1)} are the same
    function of the minimizer evaluated two ways, so the difference of
    their variances is pure rounding; it is reported relative to Var(w).
    With ``t_grid`` set, Var(w(0, t)) and E{y*(0, t)} are measured on the
    grid and a log-log slope is fitted (reported, never asserted).

    ``process=None`` with a deterministic ``g_fn`` short-circuits the
    sampling: every draw is the same path, so Var(w) is exactly 0 and the
    identity residual is exactly 0.
    """
    if flux.variant != "power_law":
        raise ValueError("variance_law needs a power-law flux")
    lt = legendre(flux)
    j = flux.j
    expo = 1.0 / (j - 1.0)
    if process is None:
        if g_fn is None:
            raise ValueError("deterministic variance_law needs g_fn")
        if t_grid is not None:
            raise ValueError("the t-grid curve is for stochastic data")
        res = solve_power_law(flux, g_fn, x, t, gprime_bound=gprime_bound,
                              n_points=n_dense)
        return VarianceLawResult(
            j=j, x=x, t=t, trials=trials, var_w=0.0, var_w_se=0.0,
            mean_w=res.w, identity_residual_rel=0.0,
            truncated_fraction=float(res.truncated),
        )
    if process.kind != "bm" or process.integrated:
        raise ValueError("variance_law samples plain Brownian derivative data")

    def run(xv, tv, seed_key):
        qmax = (gprime_bound + 1.0) ** (j - 1.0)
        ys, ia = _anchored_grid(xv - qmax * tv, xv + qmax * tv, process.anchor, n_dense)
        shift = tv * np.asarray(lt.value((xv - ys) / tv), dtype=float)

        def blk(b, nb, rng):
            g = _bm_dense_block(ys, ia, rng, nb)
            k = _greatest_argmin((g + shift).T)
            ystar = ys[k]
            u = xv - ystar
            w = np.asarray(lt.derivative(u / tv))
            alt = np.sign(u) * np.abs(u) ** expo
            edge = np.count_nonzero((k == 0) | (k == len(ys) - 1))
            return (w.sum(), (w * w).sum(), alt.sum(), (alt * alt).sum(),
                    ystar.sum(), edge)

        acc = [0.0] * 5
        edges = 0
        for r in _mc.map_blocks(trials, seed_key, blk, threads):
            for i in range(5):
                acc[i] += r[i]
            edges += r[5]
        mw = acc[0] / trials
        vw = acc[1] / trials - mw * mw
        ma = acc[2] / trials
        va = (acc[3] / trials - ma * ma) * tv ** (-2.0 * expo)
        return mw, vw, va, acc[4] / trials, edges / trials

    mw, vw, va, _, edge_frac = run(x, t, master_seed)
    resid = abs(vw - va) / max(vw, 1e-300)
    # crude se for a variance estimate (Gaussian-moment approximation)
    vw_se = vw * math.sqrt(2.0 / max(trials - 1, 1))
    out = dict(j=j, x=x, t=t, trials=trials, var_w=vw, var_w_se=vw_se, mean_w=mw,
               identity_residual_rel=resid, truncated_fraction=edge_frac)
    if t_grid is not None:
        tg = np.asarray(t_grid, dtype=float)
        curve = np.empty(len(tg))
        ymean = np.empty(len(tg))
        for k, tv in enumerate(tg):
            _, curve[k], _, ymean[k], _ = run(0.0, float(tv), (master_seed, 500 + k))
        slope = float(np.polyfit(np.log(tg), np.log(curve), 1)[0])
        out.update(t_grid=tg, var_curve=curve, mean_ystar_curve=ymean, fit_exponent=slope)
    return VarianceLawResult(**out)


# ---------------------------------------------------------------------------
# shock monotonicity in t (absolute-value flux)

def shock_monotonicity_study(process: ProcessSpec | None, t_grid, x_range, dx: float,
                             seeds: int, master_seed: int, *, n_i: int = 8,
                             threads: int = 1, g_fn=None) -> MonotonicityTable:
    """Empirical per-unit-x argmin jump density for each t, same paths.

    One realization of g per seed is sampled jointly on the union of all
    candidate grids over every (x, t), so the per-seed densities at
    different t are coupled and the t-comparison can be made pairwise.
    Classes for the absolute-value flux are I (left endpoint), II
    (interior), III (right endpoint); transitions are labeled I->II etc.
    ``process=None`` with a deterministic ``g_fn`` makes every seed the
    same path (zero jumps whenever that path's argmin moves continuously).
    """
    flux = FluxSpec.absolute_value()
    tg = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(tg) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    lo, hi = float(x_range[0]), float(x_range[1])
    nx = int(round((hi - lo) / dx)) + 1
    xs = lo + dx * np.arange(nx)
    span = xs[-1] - xs[0]

    per_t_grids = [[build_grid(flux, float(xv), float(tv), n_i) for xv in xs] for tv in tg]
    union = np.unique(np.concatenate([g.points for row in per_t_grids for g in row]))
    if process is None:
        if g_fn is None:
            raise ValueError("deterministic study needs g_fn")
        g_det = np.asarray(g_fn(union), dtype=float)[:, None]
        model = None
    else:
        model = build_covariance_model(_integrated(process), union)

    npts = len(per_t_grids[0][0].points)
    idx = np.empty((len(tg), nx, npts), dtype=np.int64)
    shifts = np.empty((len(tg), nx, npts))
    for a, row in enumerate(per_t_grids):
        for b, gr in enumerate(row):
            idx[a, b] = np.searchsorted(union, gr.points)
            shifts[a, b] = gr.shift
    region_of_ordinal = np.full(npts, 1)
    region_of_ordinal[0] = 0
    region_of_ordinal[-1] = 2

    n_lab = 9  # ordered (from, to) region pairs

    def blk(b, nb, rng):
        if model is None:
            g = np.broadcast_to(g_det, (len(union), nb))
        else:
            g = model.chol @ rng.standard_normal((len(union), nb))
        jumps = np.empty((nb, len(tg)), dtype=np.int64)
        labels = np.zeros((len(tg), n_lab), dtype=np.int64)
        for a in range(len(tg)):
            cls = np.empty((nx, nb), dtype=np.int64)
            for (bx, gi), sh in zip(enumerate(idx[a]), shifts[a]):
                y = g[gi] + sh[:, None]
                cls[bx] = region_of_ordinal[_greatest_argmin(y)]
            changed = cls[1:] != cls[:-1]
            jumps[:, a] = changed.sum(axis=0)
            pair = (cls[:-1] * 3 + cls[1:])[changed]
            labels[a] += np.bincount(pair, minlength=n_lab)
        return jumps, labels

    per_seed = np.zeros((seeds, len(tg)), dtype=np.int64)
    label_counts = np.zeros((len(tg), n_lab), dtype=np.int64)
    row = 0
    for jumps, labels in _mc.map_blocks(seeds, master_seed, blk, threads):
        per_seed[row: row + len(jumps)] = jumps
        label_counts += labels
        row += len(jumps)

    dens = per_seed / span
    names = ["I", "II", "III"]
    per_label = {
        f"{names[i]}->{names[k]}": label_counts[:, 3 * i + k] / (seeds * span)
        for i in range(3)
        for k in range(3)
        if i != k and label_counts[:, 3 * i + k].any()
    }
    steps = nx - 1
    sp = per_seed.mean(axis=0) / steps
    sp_se = per_seed.std(axis=0, ddof=1) / steps / math.sqrt(seeds)
    return MonotonicityTable(
        t_values=tg, density=dens.mean(axis=0),
        density_se=dens.std(axis=0, ddof=1) / math.sqrt(seeds),
        per_seed=dens, per_label=per_label, step_prob=sp, step_prob_se=sp_se,
        seeds=seeds,
    )


# ---------------------------------------------------------------------------
# dyadic-walk convergence (absolute-value flux)

def convergence_study(x: float, t: float, m_grid, trials: int, master_seed: int,
                      *, alpha: float = 0.5, threads: int = 1) -> ConvergenceTable:
    """Endpoint/interior case probabilities of the discretized minimization.

    Each trial draws one level-m_grid[0] walk and refines it through the
    top level, so all levels see the same underlying path and the per-m
    probabilities are coupled (their differences measure discretization
    movement, not sampling noise). The tail of sup|I_M - I_top| over the
    unit interval is compared against the bound 3 (2^-M)^2 / alpha^4.
    """
    ms = tuple(int(m) for m in m_grid)
    if any(ms[k] >= ms[k + 1] for k in range(len(ms) - 1)):
        raise ValueError("m_grid must be strictly increasing")
    a, b = x - t, x + t
    if not (0.0 <= a < b <= 1.0):
        raise ValueError("the window [x-t, x+t] must sit inside [0, 1]")

    def classify(walk) -> int:
        n2 = 2**walk.level
        k0 = math.ceil(a * n2)
        k1 = math.floor(b * n2)
        cand = np.unique(np.concatenate([[a, b], np.arange(k0, k1 + 1) / n2]))
        vals = walk.integral_at(cand)
        k = int(np.flatnonzero(vals == vals.min())[-1])
        if cand[k] == a:
            return 0
        if cand[k] == b:
            return 2
        return 1

    counts = np.zeros((len(ms), 3), dtype=np.int64)
    exceed = 0
    for trial in range(trials):
        rng = _mc.block_rng(master_seed, trial)
        walk = discretize_bm(ms[0], rng)
        base = walk
        for mi, m in enumerate(ms):
            while walk.level < m:
                walk = walk.refine(rng)
            counts[mi, classify(walk)] += 1
        if sup_integral_difference(base, walk) > alpha:
            exceed += 1
    p = counts / trials
    return ConvergenceTable(
        m_values=ms, p_left=p[:, 0], p_interior=p[:, 1], p_right=p[:, 2],
        diffs=np.abs(np.diff(p[:, 0])),
        sup_tail_freq=exceed / trials,
        sup_tail_bound=3.0 * (2.0 ** -ms[0]) ** 2 / alpha**4,
        alpha=alpha, trials=trials,
    )
