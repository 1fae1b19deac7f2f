import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracneumann.kernel import ParameterError
from fracneumann.variational import (ConeSpec, build_initial_path, energy, flow_step, gradient, hs_norm,
                                     measure_alpha, mountain_pass, newton_polish, residual, solve_linear,
                                     tilde_T)

from conftest import make_forms


def random_cone_point(rng, N, cone, scale=3.0):
    u = np.cumsum(rng.exponential(size=N) * (rng.random(N) < 0.5)) + rng.random()
    u = scale * u / u.max()
    if cone.orientation == "nonincreasing":
        u = u[::-1]
    return cone.project(u, np.ones(N))


def test_cone_validation():
    with pytest.raises(ParameterError):
        ConeSpec("sideways")
    with pytest.raises(ParameterError):
        ConeSpec("nondecreasing", 2.0, 1.0)
    with pytest.raises(ParameterError):
        ConeSpec("nonincreasing").validate_domain(0.0)
    ConeSpec("nonincreasing").validate_domain(1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=40), st.sampled_from(["nondecreasing", "nonincreasing"]),
       st.floats(0, 1), st.floats(1.5, 4))
def test_cone_projection_exact(vals, orientation, lo, hi):
    cone = ConeSpec(orientation, lo, hi)
    x = np.array(vals)
    p = cone.project(x, np.linspace(1, 2, x.size))
    assert cone.contains(p)
    np.testing.assert_array_equal(cone.project(p, np.linspace(1, 2, x.size)), p)


def test_solve_linear(ball_forms, rng):
    h = rng.normal(size=len(ball_forms.m))
    v = solve_linear(h, ball_forms, 2.5)
    lhs = ball_forms.A_red @ v + 2.5 * ball_forms.m * v
    np.testing.assert_allclose(lhs, ball_forms.m * h, atol=1e-10 * np.abs(ball_forms.m * h).max())


def test_energy_of_constants(proto):
    forms, tr, _ = proto
    for t in (0.5, tr.u0_list[0], 2.5):
        e = energy(np.full(len(forms.m), t), forms, tr)
        assert e == pytest.approx(float(tr.constant_energy(t, forms.measure)), rel=1e-9, abs=1e-12)


def test_constant_fixed_point_is_critical(proto):
    forms, tr, _ = proto
    u0 = np.full(len(forms.m), tr.u0_list[0])
    assert residual(u0, forms, tr) < 1e-9


def test_gradient_identity(proto, rng):
    forms, tr, _ = proto
    N = len(forms.m)
    c = 1 + tr.shift
    for _ in range(20):
        u = 2 * rng.random(N)
        v = rng.normal(size=N)
        h = 1e-5
        fd = (energy(u + h * v, forms, tr) - energy(u - h * v, forms, tr)) / (2 * h)
        an = forms.hs_inner(gradient(u, forms, tr), v, c)
        assert fd == pytest.approx(an, rel=1e-5, abs=1e-9 * hs_norm(v, forms, tr))


def test_flow_step_contract(proto, rng):
    forms, tr, _ = proto
    cone = ConeSpec("nondecreasing", 0.0)
    N = len(forms.m)
    for _ in range(10):
        u = random_cone_point(rng, N, cone)
        e = energy(u, forms, tr)
        for _ in range(5):
            st_ = flow_step(u, 0.5, forms, tr, cone)
            assert cone.contains(st_.u)
            assert st_.energy <= e + 1e-12 * max(1.0, abs(e))
            u, e = st_.u, st_.energy
    with pytest.raises(ParameterError):
        flow_step(u, 0.0, forms, tr, cone)


def test_tilde_T_boundary_defect_is_localized(proto):
    """T applied to an increasing profile is increasing except in a thin layer at r = R."""
    forms, tr, _ = proto
    r = forms.radii
    cone = ConeSpec("nondecreasing", 0.0)
    info = {}
    u = 1 + r / r[-1]
    v = tilde_T(u, forms, tr, cone, info)
    raw = solve_linear(tr.g(u), forms, 1 + tr.shift)
    bad = np.where(np.diff(raw) < 0)[0]
    assert info["violation"] < 1e-3 * np.abs(raw).max()
    assert bad.size == 0 or r[bad.min()] > 0.9 * r[-1]
    assert cone.contains(v)


def test_initial_path_geometry(proto):
    forms, tr, ep = proto
    cone = ConeSpec("nondecreasing", tr.u_minus[0], tr.u_plus[0])
    ip = build_initial_path(forms, tr, cone, ep)
    u0, um = tr.u0_list[0], tr.u_minus[0]
    assert um < ip.t_minus * u0 < u0 < ip.t_plus * u0
    assert ip.max_energy < ip.E_u0
    assert ip.alpha > 0
    assert len(ip.points) == 33
    assert all(cone.contains(p) for p in ip.points)
    assert energy(ip.points[0], forms, tr) < ip.E_u_minus + ip.alpha / 2
    assert energy(ip.points[-1], forms, tr) < ip.E_u_minus


def test_degenerate_path_reaches_u0_level(proto):
    forms, tr, ep = proto
    cone = ConeSpec("nondecreasing", tr.u_minus[0], tr.u_plus[0])
    ip = build_initial_path(forms, tr, cone, ep, tau_bar=0.0, alpha=0.4)
    assert ip.max_energy == pytest.approx(ip.E_u0, rel=1e-14)


def test_alpha_positive_and_sphere(proto):
    forms, tr, _ = proto
    cone = ConeSpec("nondecreasing", 0.0)
    a = measure_alpha(forms, tr, cone, 0.0, 0.5 * tr.u0_list[0])
    assert a > 0


def test_mountain_pass_prototype(proto):
    forms, tr, ep = proto
    cone = ConeSpec("nondecreasing", tr.u_minus[0], tr.u_plus[0])
    res = mountain_pass(forms, tr, cone, ep)
    assert res.status == "converged" and res.certificate
    assert res.residual < 1e-6 * max(1.0, hs_norm(res.u_star, forms, tr))
    assert res.level < res.E_u0
    assert res.nonconstancy_linf > 1e-5
    m = forms.m
    assert np.dot(m, res.u_star) == pytest.approx(np.dot(m, tr.f(res.u_star)), rel=1e-6)
    # level bounded below by the geometry constant
    assert res.level >= res.E_u_minus + res.alpha - 1e-9
    assert res.u_star.min() > 0


def test_newton_polish_from_constant(proto):
    forms, tr, _ = proto
    u = np.full(len(forms.m), tr.u0_list[0] * (1 + 1e-3))
    v, r, ok = newton_polish(u, forms, tr)
    assert ok and r < 1e-10
    np.testing.assert_allclose(v, tr.u0_list[0], rtol=1e-9)


def test_annulus_nonincreasing_cone_path():
    from fracneumann.nonlinearity import NonlinearitySpec, truncate
    from fracneumann.spectral import lambda2_increasing
    forms = make_forms(n=3, R0=1.0, R=2.0, N=32, N_ext=16)
    tr = truncate(NonlinearitySpec.prototype(6, 2), 50.0, 3.0, 0.75, 3)
    ep = lambda2_increasing(forms, "nonincreasing")
    cone = ConeSpec("nonincreasing", tr.u_minus[0], tr.u_plus[0])
    ip = build_initial_path(forms, tr, cone, ep)
    assert ip.max_energy < ip.E_u0
    assert all(np.all(np.diff(p) <= 0) for p in ip.points)
