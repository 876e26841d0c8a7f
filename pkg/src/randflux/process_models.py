"""Gaussian process construction, covariance algebra, and path sampling.

Supported kinds: Brownian motion (anchored at a configurable point),
Brownian bridge (pinned at 0 and T), and the stationary
Ornstein-Uhlenbeck process. Each comes in a plain and an integrated
flavor; the integrated process is the running integral from the anchor,

    S(y) = integral from `anchor` to y of X(r) dr,

which is again Gaussian. All covariances here are exact closed forms,
including the cross covariance Cov(S(s), X(t)) needed when a model mixes
integral values with derivative values at the flux vertices.

Anchored BM is two-sided: independent branches run left and right of the
anchor. With u = s - anchor, v = t - anchor,

    Cov(X(s), X(t)) = min(|u|, |v|)   if u, v on the same side, else 0.

The left branch of S flips sign, S(u) = -int_0^{|u|} Xtilde for u < 0, so
the same-side integrated covariance is symmetric while the cross
covariance carries sgn(u).

The bridge is pinned on [0, T]; its derivative is 0 outside. For the
integrated bridge two tail behaviors are exposed: "hold" keeps Z constant
outside [0, T] (so Var Z stays T^3/12 to the right), "zero" sets it to 0.

The OU definition in the source material has a malformed time change; we
implement the standard stationary process with Cov = e^{-a|s-t|}/(2a),
which is what the stationarity arguments actually use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, eigh
from scipy.linalg.lapack import dpotrf

__all__ = [
    "ProcessSpec",
    "CovarianceModel",
    "DyadicWalk",
    "covariance",
    "cross_covariance",
    "build_covariance_model",
    "build_joint_model",
    "sample_joint",
    "discretize_bm",
    "sup_integral_difference",
]

_INF = math.inf


# ---------------------------------------------------------------------------
# kernels (vectorized; u, v are anchor-shifted coordinates)

def _bm_kernel(u, v):
    same = np.sign(u) * np.sign(v) > 0
    return np.where(same, np.minimum(np.abs(u), np.abs(v)), 0.0)


def _ibm_pos(a, b):
    # Cov(int_0^a W, int_0^b W) for a, b >= 0
    m = np.minimum(a, b)
    big = np.maximum(a, b)
    return m * m * (big / 2.0 - m / 6.0)


def _ibm_kernel(u, v):
    same = np.sign(u) * np.sign(v) > 0
    return np.where(same, _ibm_pos(np.abs(u), np.abs(v)), 0.0)


def _crossbm_pos(a, b):
    # Cov(int_0^a W, W(b)) for a, b >= 0
    return np.where(b >= a, a * a / 2.0, b * a - b * b / 2.0)


def _cross_bm_kernel(u, v):
    same = np.sign(u) * np.sign(v) > 0
    return np.where(same, np.sign(u) * _crossbm_pos(np.abs(u), np.abs(v)), 0.0)


def _bb_kernel(s, t, T):
    inside = (s >= 0) & (s <= T) & (t >= 0) & (t <= T)
    return np.where(inside, np.minimum(s, t) - s * t / T, 0.0)


def _ibb_pin(s, t, T):
    # integrated-bridge covariance for s, t in [0, T]
    return _ibm_pos(s, t) - s * s * t * t / (4.0 * T)


def _ibb_kernel(s, t, T, tail):
    if tail == "hold":
        return _ibb_pin(np.clip(s, 0.0, T), np.clip(t, 0.0, T), T)
    inside = (s >= 0) & (s <= T) & (t >= 0) & (t <= T)
    return np.where(inside, _ibb_pin(np.clip(s, 0.0, T), np.clip(t, 0.0, T), T), 0.0)


def _crossbb_pin(s, t, T):
    # Cov(int_0^s bridge, bridge(t)) for s, t in [0, T]
    return _crossbm_pos(s, t) - s * s * t / (2.0 * T)


def _cross_bb_kernel(s, t, T, tail):
    t_in = (t >= 0) & (t <= T)
    if tail == "hold":
        return np.where(t_in, _crossbb_pin(np.clip(s, 0.0, T), np.clip(t, 0.0, T), T), 0.0)
    s_in = (s >= 0) & (s <= T)
    return np.where(
        s_in & t_in, _crossbb_pin(np.clip(s, 0.0, T), np.clip(t, 0.0, T), T), 0.0
    )


def _ou_kernel(u, v, alpha):
    return np.exp(-alpha * np.abs(u - v)) / (2.0 * alpha)


def _iou_K_same(a, b, alpha):
    # double integral of e^{-alpha|r-r'|} over [0,a]x[0,b], a, b >= 0
    m = np.minimum(a, b)
    big = np.maximum(a, b)
    return (
        2.0 * m
        - (1.0 - np.exp(-alpha * m)) / alpha
        - (np.exp(-alpha * (big - m)) - np.exp(-alpha * big)) / alpha
    ) / alpha


def _iou_kernel(u, v, alpha):
    same = np.sign(u) * np.sign(v) >= 0
    k_same = _iou_K_same(np.abs(u), np.abs(v), alpha)
    k_opp = -(1.0 - np.exp(-alpha * np.abs(u))) * (1.0 - np.exp(-alpha * np.abs(v))) / alpha**2
    return np.where(same, k_same, k_opp) / (2.0 * alpha)


def _iou_J_nonneg(u, v, alpha):
    # int_0^u e^{-alpha|r-v|} dr for u >= 0, v anywhere
    upper = (np.exp(-alpha * np.maximum(v - u, 0.0)) - np.exp(-alpha * np.abs(v))) / alpha
    middle = (2.0 - np.exp(-alpha * np.maximum(v, 0.0)) - np.exp(-alpha * np.abs(u - v))) / alpha
    lower = np.exp(-alpha * np.abs(v)) * (1.0 - np.exp(-alpha * u)) / alpha
    return np.where(v >= u, upper, np.where(v >= 0, middle, lower))


def _cross_ou_kernel(u, v, alpha):
    j = np.where(
        u >= 0,
        _iou_J_nonneg(np.maximum(u, 0.0), v, alpha),
        -_iou_J_nonneg(np.maximum(-u, 0.0), -v, alpha),
    )
    return j / (2.0 * alpha)


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class ProcessSpec:
    """A Gaussian process kind plus the parameters fixing its law.

    ``integrated`` selects the running-integral flavor. ``anchor`` is the
    coordinate where the path (and its integral) vanish; for the bridge it
    must stay at 0 because the pinning already fixes the gauge.
    """

    kind: str  # "bm" | "bb" | "ou" | "custom"
    integrated: bool = False
    anchor: float = 0.0
    domain: tuple[float, float] = (-_INF, _INF)
    T: float = 0.0
    alpha: float = 0.0
    bridge_tail: str = "hold"  # "hold" | "zero", integrated-bridge value outside [0, T]

    def __post_init__(self) -> None:
        if self.kind not in ("bm", "bb", "ou", "custom"):
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind == "bb":
            if not self.T > 0:
                raise ValueError(f"bridge needs T > 0, got {self.T}")
            if self.anchor != 0.0:
                raise ValueError("bridge is pinned at 0; anchor must be 0")
            if self.bridge_tail not in ("hold", "zero"):
                raise ValueError(f"unknown bridge tail mode {self.bridge_tail!r}")
        if self.kind == "ou" and not self.alpha > 0:
            raise ValueError(f"OU needs alpha > 0, got {self.alpha}")
        if not self.domain[0] < self.domain[1]:
            raise ValueError(f"empty domain {self.domain}")

    @staticmethod
    def brownian_motion(integrated: bool = False, anchor: float = 0.0,
                        domain=(-_INF, _INF)) -> "ProcessSpec":
        return ProcessSpec("bm", integrated=integrated, anchor=float(anchor),
                           domain=(float(domain[0]), float(domain[1])))

    @staticmethod
    def brownian_bridge(T: float, integrated: bool = False, tail: str = "hold",
                        domain=(-_INF, _INF)) -> "ProcessSpec":
        return ProcessSpec("bb", integrated=integrated, T=float(T), bridge_tail=tail,
                           domain=(float(domain[0]), float(domain[1])))

    @staticmethod
    def ornstein_uhlenbeck(alpha: float, integrated: bool = False, anchor: float = 0.0,
                           domain=(-_INF, _INF)) -> "ProcessSpec":
        return ProcessSpec("ou", integrated=integrated, alpha=float(alpha),
                           anchor=float(anchor),
                           domain=(float(domain[0]), float(domain[1])))

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all((y >= self.domain[0]) & (y <= self.domain[1])))


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """A zero-mean Gaussian vector: points, Sigma, and its factorizations.

    ``chol``/``inverse``/``eigen`` refer to Sigma + jitter*I, the matrix
    actually factorized; ``jitter`` records the regularization applied.
    Eigenvalues are ascending, U's columns the matching eigenvectors.
    """

    points: tuple[float, ...]
    mean: np.ndarray
    sigma: np.ndarray
    inverse: np.ndarray
    chol: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    jitter: float

    @property
    def eigen(self):
        return self.eigenvectors, self.eigenvalues

    @property
    def dim(self) -> int:
        return len(self.points)


class DyadicWalk:
    """Level-M random-walk discretization of BM on [0, 1].

    The unit interval is split into 2^M equal pieces. The path is constant
    on each piece; piece i carries the walk value after i+1 Gaussian steps
    of variance 2^{-M}, so the variance at the right edge is exactly 1 at
    every level. ``integral_at`` evaluates the exact (piecewise linear)
    integral. ``refine`` produces the level M+1 walk of the SAME underlying
    Brownian path by conditional midpoint insertion, which is what makes
    convergence in M testable path by path.
    """

    def __init__(self, level: int, values: np.ndarray):
        if level < 0:
            raise ValueError("level must be >= 0")
        values = np.asarray(values, dtype=float)
        if values.shape != (2**level,):
            raise ValueError(f"level {level} walk needs {2**level} values")
        self.level = level
        self.values = values
        self.breakpoints = np.linspace(0.0, 1.0, 2**level + 1)
        # exact integral of the piecewise-constant path at the breakpoints
        self.integral_knots = np.concatenate(([0.0], np.cumsum(values) * 2.0**-level))

    def value_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip((t * 2**self.level).astype(int), 0, 2**self.level - 1)
        out = self.values[idx]
        return out if out.shape else float(out)

    def integral_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip((t * 2**self.level).astype(int), 0, 2**self.level - 1)
        out = self.integral_knots[idx] + self.values[idx] * (t - self.breakpoints[idx])
        return out if out.shape else float(out)

    def refine(self, rng: np.random.Generator) -> "DyadicWalk":
        """Level M+1 walk consistent with this one (midpoint insertion)."""
        n = 2**self.level
        left = np.concatenate(([0.0], self.values[:-1]))  # walk value entering piece i
        mids = 0.5 * (left + self.values) + rng.standard_normal(n) * math.sqrt(2.0**-self.level / 4.0)
        out = np.empty(2 * n)
        out[0::2] = mids
        out[1::2] = self.values
        return DyadicWalk(self.level + 1, out)


# ---------------------------------------------------------------------------
# operations

def _closed_form_guard(spec: ProcessSpec) -> None:
    if spec.kind == "custom":
        raise ValueError("custom processes have no closed-form covariance")


def _domain_guard(spec: ProcessSpec, *arrays) -> None:
    lo, hi = spec.domain
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any((a < lo) | (a > hi)):
            bad = a[np.argmax((a < lo) | (a > hi))] if a.shape else float(a)
            raise ValueError(f"point {bad} outside process domain [{lo}, {hi}]")


def _pair_kernel(spec: ProcessSpec, s, t):
    """Cov of the spec's own process (integrated flag respected)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if spec.kind == "bm":
        u, v = s - spec.anchor, t - spec.anchor
        return _ibm_kernel(u, v) if spec.integrated else _bm_kernel(u, v)
    if spec.kind == "bb":
        if spec.integrated:
            return _ibb_kernel(s, t, spec.T, spec.bridge_tail)
        return _bb_kernel(s, t, spec.T)
    if spec.kind == "ou":
        u, v = s - spec.anchor, t - spec.anchor
        return _iou_kernel(u, v, spec.alpha) if spec.integrated else _ou_kernel(u, v, spec.alpha)
    raise ValueError(f"no covariance for kind {spec.kind!r}")


def covariance(spec: ProcessSpec, s: float, t: float) -> float:
    """Exact covariance of the process at times (s, t).

    BM: min rule on the anchored branches. Integrated BM:
    s^2 (t/2 - s/6) for 0 <= s <= t. Integrated bridge:
    the same minus t^2 s^2 / (4T) on [0, T]. OU: e^{-alpha|s-t|}/(2 alpha).
    """
    _closed_form_guard(spec)
    _domain_guard(spec, s, t)
    out = _pair_kernel(spec, s, t)
    return float(out) if np.ndim(out) == 0 else out


def cross_covariance(spec: ProcessSpec, s: float, t: float) -> float:
    """Cov(integrated process at s, underlying process at t)."""
    _closed_form_guard(spec)
    _domain_guard(spec, s, t)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if spec.kind == "bm":
        out = _cross_bm_kernel(s - spec.anchor, t - spec.anchor)
    elif spec.kind == "bb":
        out = _cross_bb_kernel(s, t, spec.T, spec.bridge_tail)
    elif spec.kind == "ou":
        out = _cross_ou_kernel(s - spec.anchor, t - spec.anchor, spec.alpha)
    else:
        raise ValueError(f"no covariance for kind {spec.kind!r}")
    return float(out) if np.ndim(out) == 0 else out


def _factorize(points, sigma) -> CovarianceModel:
    n = sigma.shape[0]
    scale = float(np.max(np.diag(sigma))) if n else 0.0
    if scale <= 0.0:
        scale = 1.0
    jitter = 1e-12 * scale
    reg = sigma + jitter * np.eye(n)
    c, info = dpotrf(reg, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        k = int(info) - 1
        bad = points[k] if 0 <= k < n else points[-1]
        raise ValueError(
            f"singular covariance: factorization failed at point {bad} (index {k})"
        )
    inverse = cho_solve((c, True), np.eye(n))
    lam, u = eigh(reg)
    return CovarianceModel(
        points=tuple(float(p) for p in points),
        mean=np.zeros(n),
        sigma=sigma,
        inverse=inverse,
        chol=c,
        eigenvalues=lam,
        eigenvectors=u,
        jitter=jitter,
    )


def build_covariance_model(spec: ProcessSpec, points) -> CovarianceModel:
    """Covariance model of the spec's process on a strictly increasing grid.

    Zero-variance rows (the anchor, pinned bridge endpoints) are kept and
    handled by a diagonal jitter of 1e-12 times the largest variance.
    """
    _closed_form_guard(spec)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1 or len(pts) == 0:
        raise ValueError("points must be a nonempty 1-d sequence")
    if np.any(np.diff(pts) <= 0):
        raise ValueError("points must be strictly increasing")
    _domain_guard(spec, pts)
    sigma = np.asarray(_pair_kernel(spec, pts[:, None], pts[None, :]), dtype=float)
    sigma = 0.5 * (sigma + sigma.T)
    return _factorize(pts, sigma)


def build_joint_model(spec: ProcessSpec, integral_points, base_points) -> CovarianceModel:
    """Joint Gaussian model of (S at integral_points, X at base_points).

    The stacked covariance uses the integrated, cross, and base kernels of
    the spec's kind; the order of ``points`` is integral block first. The
    ``integrated`` flag on the spec is ignored, both blocks are explicit.
    """
    _closed_form_guard(spec)
    sp = np.asarray(integral_points, dtype=float)
    bp = np.asarray(base_points, dtype=float)
    _domain_guard(spec, sp, bp)
    base = ProcessSpec(spec.kind, integrated=False, anchor=spec.anchor,
                       domain=spec.domain, T=spec.T, alpha=spec.alpha,
                       bridge_tail=spec.bridge_tail)
    integ = ProcessSpec(spec.kind, integrated=True, anchor=spec.anchor,
                        domain=spec.domain, T=spec.T, alpha=spec.alpha,
                        bridge_tail=spec.bridge_tail)
    ss = np.asarray(_pair_kernel(integ, sp[:, None], sp[None, :]), dtype=float)
    xx = np.asarray(_pair_kernel(base, bp[:, None], bp[None, :]), dtype=float)
    sx = np.asarray(cross_covariance(spec, sp[:, None], bp[None, :]), dtype=float)
    sx = sx.reshape(len(sp), len(bp))
    sigma = np.block([[ss, sx], [sx.T, xx]])
    sigma = 0.5 * (sigma + sigma.T)
    return _factorize(np.concatenate([sp, bp]), sigma)


def sample_joint(model: CovarianceModel, rng: np.random.Generator, size: int | None = None):
    """mu + chol z with z standard normal from ``rng``.

    Returns a vector, or an (dim, size) array when ``size`` is given.
    Deterministic given the stream state.
    """
    n = model.dim
    if size is None:
        return model.mean + model.chol @ rng.standard_normal(n)
    z = rng.standard_normal((n, size))
    return model.mean[:, None] + model.chol @ z


def discretize_bm(level: int, rng: np.random.Generator) -> DyadicWalk:
    """Fresh level-M dyadic random walk (per-step variance 2^{-M})."""
    steps = rng.standard_normal(2**level) * math.sqrt(2.0**-level)
    return DyadicWalk(level, np.cumsum(steps))


def sup_integral_difference(a: DyadicWalk, b: DyadicWalk) -> float:
    """sup_t |I_a(t) - I_b(t)| for two walks (exact for refined pairs).

    Both integrals are piecewise linear with knots at the finer level's
    breakpoints, so the sup is attained at one of those knots.
    """
    fine = a if a.level >= b.level else b
    t = fine.breakpoints
    return float(np.max(np.abs(a.integral_at(t) - b.integral_at(t))))
