"""Conservative finite-difference solvers used as an independent oracle.

Two monotone schemes (Lax-Friedrichs and Engquist-Osher) march the
conservation law w_t + H(w)_x = 0 forward from gridded initial data, for
cross-checking the variational solver: deterministic runs compare cell
values against the closed-form minimization and measure the empirical
convergence order; ensemble runs track total variation decay and the
variance of the solution at the domain center across seeded initial
paths.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _mc
from .flux_calculus import FluxSpec
from .hopf_lax_core import solve_power_law
from .process_models import build_covariance_model

__all__ = [
    "FdConfig",
    "FdComparison",
    "EnsembleComparison",
    "cell_centers",
    "evolve",
    "compare_with_hopf_lax",
]

_SCHEMES = ("lax_friedrichs", "engquist_osher")


@dataclass(frozen=True)
class FdConfig:
    dx: float
    cfl: float = 0.9
    domain: tuple[float, float] = (-4.0, 4.0)
    periodic: bool = False
    scheme: str = "lax_friedrichs"

    def __post_init__(self):
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.domain[1] <= self.domain[0]:
            raise ValueError("domain must satisfy lo < hi")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}")


def cell_centers(config: FdConfig) -> np.ndarray:
    lo, hi = config.domain
    ratio = (hi - lo) / config.dx
    n = int(round(ratio))
    if n < 2 or abs(ratio - n) > 1e-9 * max(n, 1):
        raise ValueError("domain width must be an integer multiple of dx")
    return lo + (np.arange(n) + 0.5) * config.dx


def _sonic_point(flux: FluxSpec) -> float:
    """Global minimizer of H, required by the Engquist-Osher splitting."""
    if flux.variant in ("power_law", "absolute_value"):
        return 0.0
    slopes = np.asarray(flux.slopes)
    if slopes[0] > 0.0 or slopes[-1] < 0.0:
        raise ValueError("flux has no finite minimizer; Engquist-Osher needs one")
    if slopes[0] == 0.0:
        return float(flux.breakpoints[0])
    k = int(np.argmax(slopes >= 0.0))
    return float(flux.breakpoints[k - 1])


def _pad(w: np.ndarray, periodic: bool) -> tuple[np.ndarray, np.ndarray]:
    if periodic:
        return np.roll(w, 1, axis=1), np.roll(w, -1, axis=1)
    left = np.concatenate([w[:, :1], w[:, :-1]], axis=1)
    right = np.concatenate([w[:, 1:], w[:, -1:]], axis=1)
    return left, right


def evolve(flux: FluxSpec, w0, t_end: float, config: FdConfig) -> np.ndarray:
    """March w0 (one row per path, or a single 1-d profile) to time t_end.

    The time step is cfl * dx / max|H'| over the data range, then evened
    out so the steps tile t_end exactly. Non-periodic runs use outflow
    (edge-copy) boundaries, so results near the edges are only
    meaningful while the domain contains the dependence cone.
    """
    arr = np.asarray(w0, dtype=float)
    single = arr.ndim == 1
    w = arr[None, :].copy() if single else arr.copy()
    if w.ndim != 2 or w.shape[1] < 3:
        raise ValueError("w0 must be a profile of at least 3 cells")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    speed = flux.max_speed(float(w.min()), float(w.max()))
    if t_end > 0 and speed > 0:
        dt = config.cfl * config.dx / speed
        n_steps = max(int(math.ceil(t_end / dt - 1e-12)), 1)
        dt = t_end / n_steps
        lam = dt / config.dx
        ham = flux.hamiltonian
        if config.scheme == "lax_friedrichs":
            for _ in range(n_steps):
                wl, wr = _pad(w, config.periodic)
                w = 0.5 * (wl + wr) - 0.5 * lam * (ham(wr) - ham(wl))
        else:
            omega = _sonic_point(flux)
            h_omega = float(ham(omega))
            for _ in range(n_steps):
                if config.periodic:
                    ext = np.concatenate([w[:, -1:], w, w[:, :1]], axis=1)
                else:
                    ext = np.concatenate([w[:, :1], w, w[:, -1:]], axis=1)
                # interface flux F(a, b) = H(max(a, omega)) + H(min(b, omega)) - H(omega)
                f = (ham(np.maximum(ext[:, :-1], omega))
                     + ham(np.minimum(ext[:, 1:], omega)) - h_omega)
                w = w - lam * (f[:, 1:] - f[:, :-1])
    return w[0] if single else w


@dataclass(frozen=True, eq=False)
class FdComparison:
    scheme: str
    t: float
    dx_values: tuple[float, ...]
    l1_errors: tuple[float, ...]
    order: float


@dataclass(frozen=True, eq=False)
class EnsembleComparison:
    scheme: str
    t_values: np.ndarray
    tv_mean: np.ndarray
    tv_se: np.ndarray
    center_mean: np.ndarray
    center_var: np.ndarray
    center_var_se: np.ndarray
    seeds: int


def _central_mask(xs: np.ndarray, config: FdConfig, fraction: float) -> np.ndarray:
    lo, hi = config.domain
    mid = 0.5 * (lo + hi)
    return np.abs(xs - mid) <= 0.5 * fraction * (hi - lo)


def _deterministic_compare(flux, g_fn, gprime_fn, t, config, gprime_bound,
                           central_fraction, ref_points) -> FdComparison:
    if flux.variant != "power_law":
        raise ValueError("the closed-form reference requires a power-law flux")
    dxs, errs = [], []
    for f in (1, 2, 4):
        cfg = dataclasses.replace(config, dx=config.dx / f)
        xs = cell_centers(cfg)
        wt = evolve(flux, np.asarray(gprime_fn(xs), dtype=float), t, cfg)
        mask = _central_mask(xs, cfg, central_fraction)
        # the variational reference must resolve y* far below the FD error
        ref = np.array([
            solve_power_law(flux, g_fn, float(xc), t, gprime_bound=gprime_bound,
                            n_points=ref_points).w
            for xc in xs[mask]
        ])
        dxs.append(cfg.dx)
        errs.append(float(np.sum(np.abs(wt[mask] - ref)) * cfg.dx))
    order = float(np.polyfit(np.log(dxs), np.log(errs), 1)[0])
    return FdComparison(scheme=config.scheme, t=t, dx_values=tuple(dxs),
                        l1_errors=tuple(errs), order=order)


def _ensemble_compare(flux, process, t_values, config, seeds, master_seed,
                      central_fraction, threads) -> EnsembleComparison:
    xs = cell_centers(config)
    model = build_covariance_model(process, xs)
    tvs = np.asarray(t_values, dtype=float)
    if np.any(np.diff(tvs) <= 0) or tvs[0] < 0:
        raise ValueError("t_values must be nonnegative and strictly increasing")
    cmask = _central_mask(xs, config, central_fraction)
    i_mid = int(np.argmin(np.abs(xs - 0.5 * (config.domain[0] + config.domain[1]))))

    def blk(b, nb, rng):
        w = (model.chol @ rng.standard_normal((len(xs), nb))).T
        tv = np.empty((nb, len(tvs)))
        center = np.empty((nb, len(tvs)))
        prev = 0.0
        for k, tk in enumerate(tvs):
            w = evolve(flux, w, float(tk) - prev, config)
            prev = float(tk)
            tv[:, k] = np.abs(np.diff(w[:, cmask], axis=1)).sum(axis=1)
            center[:, k] = w[:, i_mid]
        return tv, center

    parts = _mc.map_blocks(seeds, master_seed, blk, threads)
    tv = np.concatenate([p[0] for p in parts], axis=0)
    center = np.concatenate([p[1] for p in parts], axis=0)
    cvar = center.var(axis=0, ddof=1)
    return EnsembleComparison(
        scheme=config.scheme, t_values=tvs,
        tv_mean=tv.mean(axis=0), tv_se=tv.std(axis=0, ddof=1) / math.sqrt(seeds),
        center_mean=center.mean(axis=0), center_var=cvar,
        center_var_se=cvar * math.sqrt(2.0 / max(seeds - 1, 1)), seeds=seeds,
    )


def compare_with_hopf_lax(flux, t, config: FdConfig, *, g_fn=None, gprime_fn=None,
                          process=None, t_values=None, seeds: int = 256,
                          master_seed: int = 3, gprime_bound: float = 2.0,
                          central_fraction: float = 0.5, ref_points: int = 32769,
                          threads: int = 1):
    """Check the difference scheme against the variational solution.

    Deterministic mode (pass g_fn and gprime_fn): evolves gprime_fn on
    grids at dx, dx/2, dx/4 and reports the central-region L1 errors
    against the exact minimization, plus the fitted convergence order.
    Ensemble mode (pass process, describing the derivative data, and
    t_values): evolves seeded initial paths and reports total-variation
    decay and the across-seed variance at the domain center.
    """
    det = g_fn is not None or gprime_fn is not None
    if det and (g_fn is None or gprime_fn is None):
        raise ValueError("deterministic mode needs both g_fn and gprime_fn")
    if det == (process is not None):
        raise ValueError("pass exactly one of (g_fn, gprime_fn) or process")
    if det:
        return _deterministic_compare(flux, g_fn, gprime_fn, t, config,
                                      gprime_bound, central_fraction, ref_points)
    if t_values is None:
        raise ValueError("ensemble mode needs t_values")
    return _ensemble_compare(flux, process, t_values, config, seeds,
                             master_seed, central_fraction, threads)
