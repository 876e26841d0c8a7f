"""Convex flux functions and their exact Legendre transforms.

Three flux families are supported:

* polygonal: piecewise linear convex H with strictly increasing slopes
  m_1 < ... < m_{N+1} and breakpoints c_1 < ... < c_N,
* power law: H(p) = |p|^j / j with j >= 2,
* absolute value: H(p) = |p| (the polygonal case with slopes -1, 1 and a
  single breakpoint at 0).

The Legendre transform L(q) = sup_p (p q - H(p)) is computed in closed form.
For polygonal H it is again polygonal, finite exactly on [m_1, m_{N+1}],
with slope c_k on the k-th knot interval; it is built by direct conjugation
over the breakpoints rather than from any index bookkeeping, so convexity
and the finite support come out by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FluxSpec",
    "LegendreTransform",
    "legendre",
    "eval_shifted",
    "polygonalize",
]


@dataclass(frozen=True)
class FluxSpec:
    """A convex flux function H.

    ``variant`` selects the family. Polygonal fluxes carry ``slopes``
    (length N+1) and ``breakpoints`` (length N); ``h0`` fixes the additive
    constant as H(c_1) (or H(0) in the degenerate single-slope case) and
    cancels in every argmin. Power-law fluxes carry the exponent ``j``.
    """

    variant: str
    slopes: tuple[float, ...] = ()
    breakpoints: tuple[float, ...] = ()
    j: float = 0.0
    h0: float = 0.0

    def __post_init__(self) -> None:
        if self.variant == "polygonal":
            m = self.slopes
            c = self.breakpoints
            if len(m) != len(c) + 1:
                raise ValueError(
                    f"polygonal flux needs len(slopes) == len(breakpoints) + 1, "
                    f"got {len(m)} slopes and {len(c)} breakpoints"
                )
            if any(m[i] >= m[i + 1] for i in range(len(m) - 1)):
                raise ValueError("polygonal slopes must be strictly increasing")
            if any(c[i] >= c[i + 1] for i in range(len(c) - 1)):
                raise ValueError("polygonal breakpoints must be strictly increasing")
        elif self.variant == "power_law":
            if not self.j >= 2:
                raise ValueError(f"power-law exponent must satisfy j >= 2, got {self.j}")
        elif self.variant == "absolute_value":
            pass
        else:
            raise ValueError(f"unknown flux variant {self.variant!r}")

    @staticmethod
    def polygonal(slopes, breakpoints, h0: float = 0.0) -> "FluxSpec":
        return FluxSpec(
            "polygonal",
            slopes=tuple(float(s) for s in slopes),
            breakpoints=tuple(float(c) for c in breakpoints),
            h0=float(h0),
        )

    @staticmethod
    def power_law(j: float) -> "FluxSpec":
        return FluxSpec("power_law", j=float(j))

    @staticmethod
    def absolute_value() -> "FluxSpec":
        return FluxSpec("absolute_value")

    @property
    def n_breakpoints(self) -> int:
        return len(self.breakpoints)

    def breakpoint_values(self) -> np.ndarray:
        """H evaluated at the breakpoints (cumulative from h0 = H(c_1))."""
        if self.variant != "polygonal":
            raise ValueError("breakpoint_values is defined for polygonal fluxes")
        c = np.asarray(self.breakpoints)
        v = np.empty(len(c))
        if len(c):
            v[0] = self.h0
            # interior slope between c_k and c_{k+1} is m_{k+2} (1-based m_1..m_{N+1})
            for k in range(len(c) - 1):
                v[k + 1] = v[k] + self.slopes[k + 1] * (c[k + 1] - c[k])
        return v

    def hamiltonian(self, p):
        """Vectorized H(p)."""
        p = np.asarray(p, dtype=float)
        if self.variant == "power_law":
            return np.abs(p) ** self.j / self.j
        if self.variant == "absolute_value":
            return np.abs(p)
        c = np.asarray(self.breakpoints)
        if len(c) == 0:
            # single affine piece anchored at H(0) = h0
            return self.h0 + self.slopes[0] * p
        v = self.breakpoint_values()
        # segment index: 0 means p < c_1 (slope m_1), k means c_k <= p < c_{k+1}
        idx = np.searchsorted(c, p, side="right")
        anchor = np.where(idx == 0, c[0], c[np.maximum(idx - 1, 0)])
        anchor_val = np.where(idx == 0, v[0], v[np.maximum(idx - 1, 0)])
        slope = np.asarray(self.slopes)[idx]
        return anchor_val + slope * (p - anchor)

    def max_speed(self, lo: float, hi: float) -> float:
        """max |H'| over the data range [lo, hi] (CFL bound)."""
        if self.variant == "absolute_value":
            return 1.0
        if self.variant == "power_law":
            return max(abs(lo), abs(hi)) ** (self.j - 1.0)
        return max(abs(self.slopes[0]), abs(self.slopes[-1]))


@dataclass(frozen=True)
class LegendreTransform:
    """The convex conjugate L of a FluxSpec, with an exact evaluator.

    Polygonal case: ``knots`` are the breakpoints of L in q (the slopes
    m_1..m_{N+1} of H), ``slopes`` the slope c_k on [knots[k], knots[k+1]],
    and ``intercepts`` the matching affine offsets, so
    L(q) = slopes[k] * q + intercepts[k] there. L is +inf outside
    [q_min, q_max]. Power-law case: L(q) = ((j-1)/j) |q|^{j/(j-1)} on all
    of R handled by the closed form; ``knots``/``slopes`` are unused.
    """

    kind: str  # "polygonal" | "power_law"
    q_min: float
    q_max: float
    knots: tuple[float, ...] = ()
    slopes: tuple[float, ...] = ()
    intercepts: tuple[float, ...] = ()
    j: float = 0.0

    @property
    def n_segments(self) -> int:
        return len(self.slopes)

    def value(self, q):
        """Vectorized L(q), +inf outside the finite support."""
        q = np.asarray(q, dtype=float)
        if self.kind == "power_law":
            e = self.j / (self.j - 1.0)
            return (self.j - 1.0) / self.j * np.abs(q) ** e
        out = np.full(q.shape, np.inf)
        if len(self.slopes) == 0:
            # degenerate conjugate of an affine flux: finite at one point
            np.copyto(out, self.intercepts[0], where=(q == self.q_min))
            return out if out.shape else float(out)
        inside = (q >= self.q_min) & (q <= self.q_max)
        idx = np.clip(np.searchsorted(self.knots, q, side="right") - 1, 0, len(self.slopes) - 1)
        vals = np.asarray(self.slopes)[idx] * q + np.asarray(self.intercepts)[idx]
        np.copyto(out, vals, where=inside)
        return out if out.shape else float(out)

    def derivative(self, q):
        """L'(q) inside the support; at an interior knot the right slope."""
        q = np.asarray(q, dtype=float)
        if self.kind == "power_law":
            return np.sign(q) * np.abs(q) ** (1.0 / (self.j - 1.0))
        if len(self.slopes) == 0:
            raise ValueError("degenerate transform has no slope")
        idx = np.clip(np.searchsorted(self.knots, q, side="right") - 1, 0, len(self.slopes) - 1)
        out = np.asarray(self.slopes)[idx]
        return out if out.shape else float(out)

    def segments(self):
        """List of (q_lo, q_hi, slope, intercept) for polygonal transforms."""
        return [
            (self.knots[k], self.knots[k + 1], self.slopes[k], self.intercepts[k])
            for k in range(len(self.slopes))
        ]


def legendre(flux: FluxSpec) -> LegendreTransform:
    """Exact Legendre transform L(q) = sup_p (p q - H(p)) of a flux.

    Power law: L(q) = ((j-1)/j) |q|^{j/(j-1)}.
    Absolute value: L = 0 on [-1, 1], +inf outside.
    Polygonal: direct conjugation; the sup over p is attained at a
    breakpoint, so on the knot interval [m_k, m_{k+1}] one has
    L(q) = c_k q - H(c_k). Finite exactly on [m_1, m_{N+1}].
    """
    if flux.variant == "power_law":
        return LegendreTransform("power_law", -math.inf, math.inf, j=flux.j)
    if flux.variant == "absolute_value":
        return LegendreTransform("polygonal", -1.0, 1.0, knots=(-1.0, 1.0), slopes=(0.0,), intercepts=(0.0,))
    m = flux.slopes
    if len(flux.breakpoints) == 0:
        # affine H(p) = m p + h0: conjugate finite only at q = m, value -h0
        return LegendreTransform(
            "polygonal", m[0], m[0], knots=(m[0],), slopes=(), intercepts=(-flux.h0,)
        )
    v = flux.breakpoint_values()
    slopes = tuple(float(c) for c in flux.breakpoints)
    intercepts = tuple(float(-vk) for vk in v)
    return LegendreTransform(
        "polygonal", m[0], m[-1], knots=tuple(m), slopes=slopes, intercepts=intercepts
    )


def eval_shifted(lt: LegendreTransform, x: float, t: float, y):
    """t L((x - y) / t), +inf exactly when (x - y)/t leaves the support.

    For the absolute-value flux this is +inf iff y is outside [x-t, x+t].
    """
    if not t > 0:
        raise ValueError(f"time must be positive, got t={t}")
    q = (x - np.asarray(y, dtype=float)) / t
    return t * lt.value(q)


def polygonalize(samples) -> FluxSpec:
    """Secant-slope polygonal flux through samples of a strictly convex H.

    ``samples`` is a sequence of (p, H(p)) pairs. The interpolant's slopes
    are the secant slopes, its breakpoints the interior sample abscissae.
    Two samples give the degenerate single-slope flux. Samples whose secant
    slopes fail to increase strictly are rejected.
    """
    pts = sorted((float(p), float(h)) for p, h in samples)
    if len(pts) < 2:
        raise ValueError("polygonalize needs at least two samples")
    p = np.array([a for a, _ in pts])
    h = np.array([b for _, b in pts])
    if np.any(np.diff(p) <= 0):
        raise ValueError("sample abscissae must be distinct")
    sec = np.diff(h) / np.diff(p)
    if len(sec) == 1:
        return FluxSpec.polygonal(sec, (), h0=h[0] - sec[0] * p[0])
    if np.any(np.diff(sec) <= 0):
        raise ValueError("samples are not strictly convex")
    return FluxSpec.polygonal(sec, p[1:-1], h0=h[1])
