"""Gaussian process kernels, factorized models, and dyadic walks.

Integrated and cross kernels are validated against trapezoid double
integrals of the base kernel, which never touch the closed forms.
"""

import math

import numpy as np
import pytest

from randflux import (
    ProcessSpec,
    build_covariance_model,
    build_joint_model,
    covariance,
    cross_covariance,
    discretize_bm,
    sample_joint,
    sup_integral_difference,
)
from randflux.process_models import DyadicWalk


def base_cov(spec, u, v):
    """Covariance of the non-integrated process (broadcasting)."""
    base = ProcessSpec(spec.kind, anchor=spec.anchor, T=spec.T,
                       alpha=spec.alpha, bridge_tail=spec.bridge_tail)
    from randflux.process_models import _pair_kernel

    return _pair_kernel(base, u, v)


def trapz_integrated(spec, s, t, n=2001):
    # Cov(int_0^s X, int_0^t X) = double integral of the base kernel
    u = np.linspace(0.0, s, n) if s >= 0 else np.linspace(s, 0.0, n)
    v = np.linspace(0.0, t, n) if t >= 0 else np.linspace(t, 0.0, n)
    k = base_cov(spec, u[:, None], v[None, :])
    inner = np.trapezoid(k, v, axis=1)
    out = float(np.trapezoid(inner, u))
    return out * math.copysign(1.0, s) * math.copysign(1.0, t)


def trapz_cross(spec, s, t, n=4001):
    # Cov(int_0^s X, X(t)) = single integral of the base kernel;
    # s < 0 flips the orientation of int_0^s
    u = np.linspace(0.0, s, n) if s >= 0 else np.linspace(s, 0.0, n)
    k = base_cov(spec, u, t)
    return float(np.trapezoid(k, u)) * math.copysign(1.0, s)


# ---------------------------------------------------------------------------
# closed-form kernels


def test_bm_min_rule(bm):
    assert covariance(bm, 0.5, 1.5) == pytest.approx(0.5)
    assert covariance(bm, -0.5, -1.5) == pytest.approx(0.5)
    # opposite branches are independent
    assert covariance(bm, -0.5, 1.5) == 0.0
    assert covariance(bm, 0.0, 1.0) == 0.0


def test_bm_anchor_shift():
    spec = ProcessSpec.brownian_motion(anchor=2.0)
    assert covariance(spec, 2.0, 5.0) == 0.0
    assert covariance(spec, 2.5, 3.5) == pytest.approx(0.5)
    assert covariance(spec, 1.0, 1.5) == pytest.approx(0.5)


def test_integrated_bm_closed_form():
    """Var/cov of int_0^t W: s^2 (t/2 - s/6) for 0 <= s <= t."""
    spec = ProcessSpec.brownian_motion(integrated=True)
    assert covariance(spec, 1.0, 1.0) == pytest.approx(1.0 / 3.0)
    assert covariance(spec, 1.0, 2.0) == pytest.approx(1.0 * (1.0 - 1.0 / 6.0))
    assert covariance(spec, 2.0, 1.0) == covariance(spec, 1.0, 2.0)


@pytest.mark.parametrize("s,t", [(0.7, 1.3), (1.3, 0.7), (-0.6, -1.1), (0.5, -0.5)])
def test_integrated_bm_vs_trapezoid(s, t):
    spec = ProcessSpec.brownian_motion(integrated=True)
    assert covariance(spec, s, t) == pytest.approx(trapz_integrated(spec, s, t), abs=2e-6)


@pytest.mark.parametrize("s,t", [(0.7, 1.3), (1.3, 0.7), (-0.6, -1.1), (0.8, 0.8)])
def test_cross_bm_vs_trapezoid(s, t):
    spec = ProcessSpec.brownian_motion()
    assert cross_covariance(spec, s, t) == pytest.approx(trapz_cross(spec, s, t), abs=2e-6)


def test_integrated_bridge_endpoint_variance():
    # Var(int_0^T bridge) = T^3 / 12
    for T in (1.0, 2.0):
        spec = ProcessSpec.brownian_bridge(T, integrated=True)
        assert covariance(spec, T, T) == pytest.approx(T**3 / 12.0)


@pytest.mark.parametrize("s,t", [(0.3, 0.9), (0.9, 0.3), (0.5, 0.5)])
def test_integrated_bridge_vs_trapezoid(s, t):
    spec = ProcessSpec.brownian_bridge(1.0, integrated=True)
    assert covariance(spec, s, t) == pytest.approx(trapz_integrated(spec, s, t), abs=2e-6)


@pytest.mark.parametrize("s,t", [(0.3, 0.9), (0.9, 0.3), (0.7, 0.7)])
def test_cross_bridge_vs_trapezoid(s, t):
    spec = ProcessSpec.brownian_bridge(1.0)
    assert cross_covariance(spec, s, t) == pytest.approx(trapz_cross(spec, s, t), abs=2e-6)


def test_bridge_tail_modes():
    hold = ProcessSpec.brownian_bridge(1.0, integrated=True, tail="hold")
    zero = ProcessSpec.brownian_bridge(1.0, integrated=True, tail="zero")
    # held integral is frozen at its T value outside [0, T]
    assert covariance(hold, 1.7, 1.7) == pytest.approx(1.0 / 12.0)
    assert covariance(hold, 1.7, 0.5) == pytest.approx(covariance(hold, 1.0, 0.5))
    assert covariance(zero, 1.7, 1.7) == 0.0
    assert covariance(zero, 1.7, 0.5) == 0.0
    # base bridge itself vanishes off [0, T] either way
    assert covariance(ProcessSpec.brownian_bridge(1.0), 1.7, 0.5) == 0.0


def test_ou_stationarity():
    spec = ProcessSpec.ornstein_uhlenbeck(alpha=1.5)
    assert covariance(spec, 0.0, 0.0) == pytest.approx(1.0 / 3.0)
    assert covariance(spec, 2.0, 2.7) == pytest.approx(covariance(spec, -1.0, -0.3))
    assert covariance(spec, 0.0, 1.0) == pytest.approx(math.exp(-1.5) / 3.0)


@pytest.mark.parametrize("s,t", [(0.7, 1.3), (-0.6, 1.1), (-0.9, -0.4), (0.5, 0.5)])
def test_integrated_ou_vs_trapezoid(s, t):
    spec = ProcessSpec.ornstein_uhlenbeck(alpha=0.8, integrated=True)
    assert covariance(spec, s, t) == pytest.approx(trapz_integrated(spec, s, t), abs=2e-6)


@pytest.mark.parametrize("s,t", [(0.7, 1.3), (1.3, 0.7), (-0.6, 1.1), (0.6, -1.1), (-0.9, -0.4)])
def test_cross_ou_vs_trapezoid(s, t):
    spec = ProcessSpec.ornstein_uhlenbeck(alpha=0.8)
    assert cross_covariance(spec, s, t) == pytest.approx(trapz_cross(spec, s, t), abs=2e-6)


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown process kind"):
        ProcessSpec("poisson")
    with pytest.raises(ValueError, match="T > 0"):
        ProcessSpec.brownian_bridge(0.0)
    with pytest.raises(ValueError, match="anchor must be 0"):
        ProcessSpec("bb", T=1.0, anchor=0.5)
    with pytest.raises(ValueError, match="tail mode"):
        ProcessSpec.brownian_bridge(1.0, tail="reflect")
    with pytest.raises(ValueError, match="alpha > 0"):
        ProcessSpec.ornstein_uhlenbeck(0.0)
    with pytest.raises(ValueError, match="empty domain"):
        ProcessSpec.brownian_motion(domain=(1.0, 1.0))
    with pytest.raises(ValueError, match="no closed-form covariance"):
        covariance(ProcessSpec("custom"), 0.0, 1.0)


def test_domain_enforced():
    spec = ProcessSpec.brownian_motion(domain=(-1.0, 1.0))
    assert spec.contains([-1.0, 0.3, 1.0])
    assert not spec.contains(1.5)
    with pytest.raises(ValueError, match="outside process domain"):
        covariance(spec, 0.0, 2.0)
    with pytest.raises(ValueError, match="outside process domain"):
        build_covariance_model(spec, [-0.5, 0.5, 1.5])


# ---------------------------------------------------------------------------
# factorized models


class TestCovarianceModel:
    def test_matches_pair_kernel(self, bm):
        pts = np.array([-1.0, -0.25, 0.5, 2.0])
        model = build_covariance_model(bm, pts)
        for i, s in enumerate(pts):
            for k, t in enumerate(pts):
                assert model.sigma[i, k] == pytest.approx(covariance(bm, s, t))

    def test_factorization_consistency(self):
        spec = ProcessSpec.ornstein_uhlenbeck(alpha=1.0, integrated=True)
        model = build_covariance_model(spec, np.linspace(-1.0, 1.0, 7))
        reg = model.sigma + model.jitter * np.eye(model.dim)
        np.testing.assert_allclose(model.chol @ model.chol.T, reg, atol=1e-12)
        np.testing.assert_allclose(model.inverse @ reg, np.eye(model.dim), atol=1e-8)
        u, lam = model.eigen
        assert np.all(np.diff(lam) >= 0)
        np.testing.assert_allclose(u @ np.diag(lam) @ u.T, reg, atol=1e-12)

    def test_zero_variance_point_survives(self, bm):
        # the anchor row is exactly zero; jitter keeps the factorization alive
        model = build_covariance_model(bm, [0.0, 1.0])
        assert model.sigma[0, 0] == 0.0
        assert model.jitter > 0

    def test_rejects_bad_grids(self, bm):
        with pytest.raises(ValueError, match="strictly increasing"):
            build_covariance_model(bm, [0.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="nonempty"):
            build_covariance_model(bm, [])

    def test_joint_model_blocks(self, bm):
        sp = np.array([-0.5, 0.5, 1.0])
        bp = np.array([0.5, 1.0])
        model = build_joint_model(bm, sp, bp)
        assert model.dim == 5
        ispec = ProcessSpec.brownian_motion(integrated=True)
        for i, s in enumerate(sp):
            for k, t in enumerate(sp):
                assert model.sigma[i, k] == pytest.approx(covariance(ispec, s, t))
        for i, s in enumerate(sp):
            for k, t in enumerate(bp):
                assert model.sigma[i, 3 + k] == pytest.approx(cross_covariance(bm, s, t))
        for i, s in enumerate(bp):
            for k, t in enumerate(bp):
                assert model.sigma[3 + i, 3 + k] == pytest.approx(covariance(bm, s, t))

    def test_sampling_is_deterministic(self, bm):
        model = build_covariance_model(bm, [0.5, 1.0, 2.0])
        a = sample_joint(model, np.random.default_rng(7))
        b = sample_joint(model, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)
        batch = sample_joint(model, np.random.default_rng(7), size=4)
        assert batch.shape == (3, 4)
        batch2 = sample_joint(model, np.random.default_rng(7), size=4)
        np.testing.assert_array_equal(batch, batch2)

    def test_sample_covariance_converges(self, rng):
        spec = ProcessSpec.ornstein_uhlenbeck(alpha=1.2)
        model = build_covariance_model(spec, [-0.7, 0.1, 0.9])
        z = sample_joint(model, rng, size=200_000)
        emp = np.cov(z)
        np.testing.assert_allclose(emp, model.sigma, atol=6e-3)


# ---------------------------------------------------------------------------
# dyadic walks


def test_walk_shape_contract():
    with pytest.raises(ValueError, match="level must be >= 0"):
        DyadicWalk(-1, np.array([]))
    with pytest.raises(ValueError, match="needs 4 values"):
        DyadicWalk(2, np.array([1.0, 2.0]))


def test_walk_evaluators_by_hand():
    w = DyadicWalk(1, np.array([2.0, -1.0]))
    assert w.value_at(0.25) == 2.0
    assert w.value_at(0.75) == -1.0
    # integral: 2t on [0, 1/2], then 1 - (t - 1/2)
    assert w.integral_at(0.25) == pytest.approx(0.5)
    assert w.integral_at(0.5) == pytest.approx(1.0)
    assert w.integral_at(1.0) == pytest.approx(0.5)


def test_fresh_walk_terminal_variance(rng):
    vals = np.array([discretize_bm(4, rng).values[-1] for _ in range(20_000)])
    assert np.var(vals) == pytest.approx(1.0, abs=0.03)


def test_refine_keeps_the_coarse_path(rng):
    w = discretize_bm(3, rng)
    f = w.refine(rng)
    assert f.level == 4
    # the refined walk agrees wherever the coarse one is already resolved
    t = w.breakpoints[1:] - 1e-9
    np.testing.assert_array_equal(f.value_at(t), w.value_at(t))
    # each inserted midpoint shifts the integral by (mid - value) * dt/2
    mids = f.values[0::2]
    corr = np.concatenate(([0.0], np.cumsum(mids - w.values) * 2.0 ** -(w.level + 1)))
    np.testing.assert_allclose(
        f.integral_at(w.breakpoints), w.integral_knots + corr, atol=1e-12
    )


def test_refinement_cascade_contracts(rng):
    """sup-norm distance between consecutive refinements shrinks with level."""
    w = discretize_bm(2, rng)
    gaps = []
    for _ in range(6):
        f = w.refine(rng)
        gaps.append(sup_integral_difference(w, f))
        w = f
    assert all(g > 0 for g in gaps)
    # geometric-ish decay; compare level pairs two apart to dodge noise
    assert gaps[4] < gaps[0] and gaps[5] < gaps[1]


def test_sup_difference_by_hand():
    a = DyadicWalk(0, np.array([1.0]))
    b = DyadicWalk(1, np.array([0.0, 1.0]))
    # I_a(t) = t, I_b(t) = 0 then (t - 1/2); gap is largest at t = 1/2
    assert sup_integral_difference(a, b) == pytest.approx(0.5)
    assert sup_integral_difference(b, a) == pytest.approx(0.5)
