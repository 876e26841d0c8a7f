"""Variational (Hopf-Lax / Lax-Oleinik) solver on the finite candidate grid.

The solution of w_t + H(w)_x = 0 with initial data w(y, 0) = g'(y) is read
off the minimizer of

    Y(y) = g(y) + t L((x - y) / t),

where L is the Legendre transform of H. For polygonal H, L has finite
support [m_1, m_{N+1}], so the minimization lives on the interval
I = [x - m_{N+1} t, x - m_1 t]. The candidate grid consists of the N+1
interval endpoints in y where L kinks (the "vertices", images of L's
knots) plus a configurable number of interior points per segment. With
piecewise-linear data the discrete minimum is the continuum one.

Solution dichotomy at the greatest minimizer y* (largest y attaining the
minimum): at a vertex the solution is the initial datum there,
w = g'(y*); at an interior point it is the segment slope of L,
w = L'((x - y*)/t). Segments are numbered ascending in y, so segment i
carries slope c_{N-i} in 0-based knot order (y ascends as q descends).

Exact ties are kept and reported: the result carries the value at the
smallest minimizer as ``w_left`` (the left x-limit of the solution) and
the greatest-minimizer value as ``w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flux_calculus import FluxSpec, LegendreTransform, legendre
from .process_models import ProcessSpec, build_joint_model, sample_joint

__all__ = [
    "VariationalGrid",
    "SamplePath",
    "MinimizerResult",
    "ScanProfile",
    "build_grid",
    "make_sample_path",
    "sample_path_from_callables",
    "solve_path",
    "solve_power_law",
    "scan_x",
]


@dataclass(frozen=True, eq=False)
class VariationalGrid:
    """Candidate points for one (x, t), with exact L-arguments attached.

    ``points`` are ascending in y; ``q`` holds the matching (x - y)/t
    values, stored exactly (vertex entries are the knots of L themselves,
    so the objective can never fall off the finite support by rounding).
    ``point_index`` gives the vertex number for vertex rows and the
    segment number for interior rows, both ascending in y.
    """

    flux: FluxSpec
    transform: LegendreTransform
    x: float
    t: float
    counts: tuple[int, ...]
    points: np.ndarray
    q: np.ndarray
    shift: np.ndarray          # t L(q), the deterministic objective part
    is_vertex: np.ndarray
    point_index: np.ndarray
    segment_slope: np.ndarray  # solution value on segment i (ascending y)

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    @property
    def n_vertices(self) -> int:
        return int(self.is_vertex.sum())

    @property
    def n_segments(self) -> int:
        return len(self.counts)

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    @property
    def drift(self) -> np.ndarray:
        """d_i = -(segment slope), the y-slope of the deterministic part."""
        return -self.segment_slope

    def vertex_positions(self) -> np.ndarray:
        return self.points[self.is_vertex]


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Initial-data values on a grid: g, g', and the objective Y."""

    g: np.ndarray
    gprime: np.ndarray
    objective: np.ndarray


@dataclass(frozen=True)
class MinimizerLocation:
    kind: str  # "interior" | "vertex" | "coincident"
    segment: int = -1
    vertex: int = -1

    def label(self) -> str:
        if self.kind == "interior":
            return f"S{self.segment}"
        if self.kind == "vertex":
            return f"V{self.vertex}"
        return f"C(S{self.segment},V{self.vertex})"


@dataclass(frozen=True)
class MinimizerResult:
    y_star: float
    location: MinimizerLocation
    q_value: float
    w: float
    w_left: float
    truncated: bool = False


def build_grid(flux: FluxSpec, x: float, t: float, points_per_segment) -> VariationalGrid:
    """Vertices of L mapped to y, plus uniform interior points per segment.

    ``points_per_segment`` is one count per segment of L (ascending in y)
    or a single int applied to all. Power-law fluxes have no finite
    support and are rejected; use solve_power_law instead.
    """
    if flux.variant == "power_law":
        raise ValueError("power-law flux has unbounded support; grid undefined")
    if not t > 0:
        raise ValueError(f"time must be positive, got t={t}")
    lt = legendre(flux)
    knots = np.asarray(lt.knots)         # ascending in q
    n_seg = len(lt.slopes)
    if isinstance(points_per_segment, (int, np.integer)):
        counts = (int(points_per_segment),) * n_seg
    else:
        counts = tuple(int(c) for c in points_per_segment)
    if len(counts) != n_seg:
        raise ValueError(f"need {n_seg} interior counts, got {len(counts)}")
    if any(c < 1 for c in counts):
        raise ValueError("each segment needs at least one interior point")

    # y ascends as q descends: vertex j sits at q = knots[-1 - j]
    pts, qs, isv, idx = [], [], [], []
    for j in range(n_seg + 1):
        qv = knots[-1 - j]
        pts.append(x - t * qv)
        qs.append(qv)
        isv.append(True)
        idx.append(j)
        if j < n_seg:
            a = x - t * knots[-1 - j]
            b = x - t * knots[-2 - j]
            k = np.arange(1, counts[j] + 1)
            ys = a + k * (b - a) / (counts[j] + 1)
            pts.extend(ys)
            qs.extend((x - ys) / t)
            isv.extend([False] * counts[j])
            idx.extend([j] * counts[j])
    points = np.asarray(pts)
    q = np.asarray(qs)
    if np.any(np.diff(points) <= 0):
        raise ValueError("grid points failed to be strictly increasing")
    # segment i (ascending y) lies on L's knot interval n_seg-1-i
    seg_slope = np.asarray([lt.slopes[n_seg - 1 - i] for i in range(n_seg)])
    shift = t * np.asarray(lt.value(q), dtype=float)
    if not np.all(np.isfinite(shift)):
        raise ValueError("objective shift not finite on the grid")
    return VariationalGrid(
        flux=flux, transform=lt, x=float(x), t=float(t), counts=counts,
        points=points, q=q, shift=shift,
        is_vertex=np.asarray(isv), point_index=np.asarray(idx, dtype=int),
        segment_slope=seg_slope,
    )


def make_sample_path(grid: VariationalGrid, g, gprime) -> SamplePath:
    g = np.asarray(g, dtype=float)
    gprime = np.asarray(gprime, dtype=float)
    if g.shape != grid.points.shape or gprime.shape != grid.points.shape:
        raise ValueError("path values must match the grid point count")
    return SamplePath(g=g, gprime=gprime, objective=g + grid.shift)


def sample_path_from_callables(grid: VariationalGrid, g_fn, gprime_fn) -> SamplePath:
    return make_sample_path(grid, g_fn(grid.points), gprime_fn(grid.points))


def _value_at(grid: VariationalGrid, path: SamplePath, k: int) -> float:
    if grid.is_vertex[k]:
        return float(path.gprime[k])
    return float(grid.segment_slope[grid.point_index[k]])


def solve_path(grid: VariationalGrid, path: SamplePath) -> MinimizerResult:
    """Greatest-minimizer solve on the grid.

    Ties are resolved to the largest y. When the tied set mixes a vertex
    and an interior point the location is reported as coincident and both
    one-sided solution values are filled in (w_left from the smallest
    minimizer, w from the greatest).
    """
    y = path.objective
    if y.shape != grid.points.shape:
        raise ValueError("path/grid length mismatch")
    m = float(np.min(y))
    ties = np.flatnonzero(y == m)
    k = int(ties[-1])
    w = _value_at(grid, path, k)
    w_left = _value_at(grid, path, int(ties[0]))
    tied_vertex = ties[grid.is_vertex[ties]]
    tied_interior = ties[~grid.is_vertex[ties]]
    if len(tied_vertex) and len(tied_interior):
        loc = MinimizerLocation(
            "coincident",
            segment=int(grid.point_index[tied_interior[-1]]),
            vertex=int(grid.point_index[tied_vertex[-1]]),
        )
    elif grid.is_vertex[k]:
        loc = MinimizerLocation("vertex", vertex=int(grid.point_index[k]))
    else:
        loc = MinimizerLocation("interior", segment=int(grid.point_index[k]))
    return MinimizerResult(
        y_star=float(grid.points[k]), location=loc, q_value=m, w=w, w_left=w_left
    )


def solve_power_law(flux: FluxSpec, g, x: float, t: float, *,
                    gprime_bound: float = 1.0, n_points: int = 2049) -> MinimizerResult:
    """Dense brute-force minimization for a power-law flux.

    ``g`` is a callable for the integrated initial data. The window is
    [x - Q t, x + Q t] with Q = (gprime_bound + 1)^(j-1); the result is
    flagged ``truncated`` when the argmin lands on the window edge, which
    means the bound did not actually dominate the path.
    """
    if flux.variant != "power_law":
        raise ValueError("solve_power_law needs a power-law flux")
    if not t > 0:
        raise ValueError(f"time must be positive, got t={t}")
    lt = legendre(flux)
    qmax = (float(gprime_bound) + 1.0) ** (flux.j - 1.0)
    ys = np.linspace(x - qmax * t, x + qmax * t, int(n_points))
    obj = np.asarray(g(ys), dtype=float) + t * lt.value((x - ys) / t)
    m = float(np.min(obj))
    k = int(np.flatnonzero(obj == m)[-1])
    y_star = float(ys[k])
    qq = (x - y_star) / t
    w = float(lt.derivative(qq))
    # the solution value is by construction the conjugate-derivative form
    assert math.isclose(w, math.copysign(abs(qq) ** (1.0 / (flux.j - 1.0)), qq), rel_tol=1e-12, abs_tol=1e-300)
    return MinimizerResult(
        y_star=y_star,
        location=MinimizerLocation("interior"),
        q_value=m,
        w=w,
        w_left=float(lt.derivative((x - ys[int(np.flatnonzero(obj == m)[0])]) / t)),
        truncated=(k == 0 or k == len(ys) - 1),
    )


@dataclass(frozen=True, eq=False)
class ScanProfile:
    """Solution profile along x for one path realization."""

    x: np.ndarray
    t: float
    w: np.ndarray
    y_star: np.ndarray
    location: list          # MinimizerLocation per x
    region: list            # "I"/"II"/"III" for absolute-value flux, else S/V labels
    shock_flag: np.ndarray  # True at k when a jump is detected between k-1 and k
    transition: list        # "" or e.g. "I->II" at class changes
    y_jump: np.ndarray

    def rows(self):
        for k in range(len(self.x)):
            loc = self.location[k]
            yield {
                "x": self.x[k],
                "w": self.w[k],
                "y_star": self.y_star[k],
                "location_class": loc.kind,
                "segment_index": loc.segment,
                "vertex_index": loc.vertex,
                "region": self.region[k],
                "shock_flag": int(self.shock_flag[k]),
                "region_transition": self.transition[k],
            }


def _region_label(flux: FluxSpec, loc: MinimizerLocation) -> str:
    if flux.variant == "absolute_value":
        if loc.kind == "vertex":
            return "I" if loc.vertex == 0 else "III"
        if loc.kind == "interior":
            return "II"
        return "C"
    return loc.label()


def _grid_family(flux: FluxSpec, xs, t: float, n_i):
    grids = [build_grid(flux, float(xv), t, n_i) for xv in xs]
    stacked = np.concatenate([gr.points for gr in grids])
    union, inverse = np.unique(stacked, return_inverse=True)
    npts = len(grids[0].points)
    index = inverse.reshape(len(grids), npts)
    return grids, union, index


def scan_x(flux: FluxSpec, process: ProcessSpec | None, t: float, x_range, dx: float, *,
           n_i=8, rng: np.random.Generator | None = None, path=None,
           g_fn=None, gprime_fn=None,
           y_jump_tol: float | None = None, w_jump_tol: float | None = None) -> ScanProfile:
    """Solve along an x-grid on ONE coherent realization of the data.

    The process is sampled once on the union of all per-x candidate grids
    (jointly with its derivative at every point), so consecutive x see the
    same path. Alternatively pass deterministic callables ``g_fn`` and
    ``gprime_fn``, or a precomputed ``path`` triple (points, g, gprime)
    whose points must cover every candidate point exactly.

    A shock is flagged where the RUNNING MAXIMUM of the minimizer advances
    by more than ``y_jump_tol`` in one step. The greatest minimizer is
    nondecreasing in x for a fixed path, so any real jump raises the
    running max; tracking the max instead of raw increments suppresses
    quantization chatter, where near-tied wells make the discrete argmin
    flip back and forth as the candidate grid slides. The default
    tolerance is max(3 dx, 1.5 * widest candidate spacing): a continuous
    minimizer moves at most ~dx per step (the grid translates with x) or
    hops between the two grid points straddling a fixed feature of the
    path. Class boundaries crossed by a continuous minimizer stay
    unflagged, but every class change is recorded in ``transition``. Pass
    ``w_jump_tol`` to additionally flag solution jumps above that size at
    class changes.
    """
    if not dx > 0:
        raise ValueError(f"dx must be positive, got {dx}")
    lo, hi = float(x_range[0]), float(x_range[1])
    nx = int(round((hi - lo) / dx)) + 1
    xs = lo + dx * np.arange(nx)
    grids, union, index = _grid_family(flux, xs, t, n_i)

    sources = sum(arg is not None for arg in (rng, path, g_fn))
    if sources != 1:
        raise ValueError("provide exactly one of rng, path, or g_fn/gprime_fn")
    if g_fn is not None:
        if gprime_fn is None:
            raise ValueError("g_fn needs a matching gprime_fn")
        g_union = np.asarray(g_fn(union), dtype=float)
        gp_union = np.asarray(gprime_fn(union), dtype=float)
    elif path is not None:
        pts, gvals, gpvals = path
        pts = np.asarray(pts, dtype=float)
        pos = np.searchsorted(pts, union)
        pos = np.minimum(pos, len(pts) - 1)
        if not np.array_equal(pts[pos], union):
            raise ValueError("supplied path does not cover the scan's candidate points")
        g_union = np.asarray(gvals, dtype=float)[pos]
        gp_union = np.asarray(gpvals, dtype=float)[pos]
    else:
        if process is None:
            raise ValueError("sampling a path requires a process spec")
        # g' is only ever read at vertex candidates, so the joint sample
        # carries the derivative at the (much smaller) union of vertex
        # positions; interior slots stay zero and unread
        stacked_v = np.concatenate([gr.points[gr.is_vertex] for gr in grids])
        vunion = np.unique(stacked_v)
        model = build_joint_model(process, union, vunion)
        z = sample_joint(model, rng)
        g_union = z[: len(union)]
        gp_union = np.zeros(len(union))
        gp_union[np.searchsorted(union, vunion)] = z[len(union):]

    if y_jump_tol is None:
        widths = np.diff(np.asarray(grids[0].transform.knots)) * t
        counts = np.asarray(grids[0].counts, dtype=float)
        spacing = float(np.max(widths / (counts + 1.0))) if len(widths) else 0.0
        y_jump_tol = max(3.0 * dx, 1.5 * spacing)

    w = np.empty(nx)
    ystar = np.empty(nx)
    locs, regions, trans = [], [], []
    shock = np.zeros(nx, dtype=bool)
    yjump = np.zeros(nx)
    running_max = -np.inf
    for k, gr in enumerate(grids):
        sp = make_sample_path(gr, g_union[index[k]], gp_union[index[k]])
        res = solve_path(gr, sp)
        w[k] = res.w
        ystar[k] = res.y_star
        locs.append(res.location)
        regions.append(_region_label(flux, res.location))
        if k == 0:
            running_max = ystar[0]
            trans.append("")
            continue
        yjump[k] = ystar[k] - ystar[k - 1]
        changed = regions[k] != regions[k - 1]
        trans.append(f"{regions[k - 1]}->{regions[k]}" if changed else "")
        if ystar[k] - running_max > y_jump_tol:
            shock[k] = True
        elif w_jump_tol is not None and changed and abs(w[k] - w[k - 1]) > w_jump_tol:
            shock[k] = True
        running_max = max(running_max, ystar[k])
    return ScanProfile(
        x=xs, t=t, w=w, y_star=ystar, location=locs, region=regions,
        shock_flag=shock, transition=trans, y_jump=yjump,
    )
