import numpy as np
import pytest
from scipy import optimize

from fracneumann.discretization import DomainSpec, RadialFunction, build_grid, assemble_forms, neumann_extension
from fracneumann.kernel import KernelParams
from fracneumann.nonlinearity import NonlinearitySpec
from fracneumann.variational import ConeSpec, mountain_pass
from fracneumann.verification import (check_integration_by_parts, constancy_criterion, embedding_scan,
                                      maximum_principle_check, oracle_compare, verify_solution)

from conftest import R_PROTO, make_forms


@pytest.fixture(scope="module")
def solved(proto):
    forms, tr, ep = proto
    cone = ConeSpec("nondecreasing", tr.u_minus[0], tr.u_plus[0])
    res = mountain_pass(forms, tr, cone, ep)
    return forms, tr, cone, res


def test_solution_report(solved):
    forms, tr, cone, res = solved
    rep = verify_solution(res.u_star, forms, tr, cone)
    for name in ("residual", "identity", "laplacian_sum", "neumann_exterior", "l1_bound", "linf_bound",
                 "hs_bound", "positivity", "cone_bounds", "nonconstancy"):
        assert rep.checks[name].passed, name
    # the monotone ordering fails in a thin layer next to r = R (documented boundary dip)
    mono = rep.checks["monotone"]
    assert mono.value < 5e-3 * res.u_star.max()
    d = rep.to_dict()
    assert set(d) == {"passed", "checks"}


def test_constant_fixed_point_fails_nonconstancy(proto):
    forms, tr, _ = proto
    cone = ConeSpec("nondecreasing", 0.0)
    u0 = np.full(len(forms.m), tr.u0_list[0])
    rep = verify_solution(u0, forms, tr, cone)
    assert rep.checks["residual"].passed and rep.checks["identity"].passed
    assert rep.checks["monotone"].passed
    assert not rep.checks["nonconstancy"].passed
    assert not rep.passed


def test_corrupted_solution_is_rejected(solved):
    forms, tr, cone, res = solved
    u = res.u_star.copy()
    u[len(u) // 2:] *= 1.01
    rep = verify_solution(u, forms, tr, cone)
    assert not rep.checks["residual"].passed
    assert not rep.checks["identity"].passed
    assert "residual" in rep.failed()


def test_bounds_override(solved):
    forms, tr, cone, res = solved
    rep = verify_solution(res.u_star, forms, tr, cone, K=(1e-3, 1e-3, 1e-3))
    assert not rep.checks["l1_bound"].passed
    assert not rep.checks["linf_bound"].passed
    assert not rep.checks["hs_bound"].passed


def test_by_parts_same_matrix(ball_forms, rng):
    N = len(ball_forms.m)
    for _ in range(5):
        u, v = rng.normal(size=N), rng.normal(size=N)
        assert check_integration_by_parts(u, v, ball_forms).passed
        ne = ball_forms.grid.exterior_index.size
        U = RadialFunction(u, rng.normal(size=ne), rng.normal(), True)
        V = RadialFunction(v, rng.normal(size=ne), rng.normal(), True)
        assert check_integration_by_parts(U, V, ball_forms).passed


@pytest.mark.parametrize("n,R0", [(1, 0.0), (3, 1.0)])
def test_by_parts_independent(n, R0, rng):
    R = 1.0 if R0 == 0 else 2.0
    forms = assemble_forms(build_grid(DomainSpec(n, 0.75, R0, R), 5, 4), KernelParams.standard(n, 0.75))
    N = len(forms.m)
    for _ in range(3):
        rep = check_integration_by_parts(rng.normal(size=N), rng.normal(size=N), forms, independent=True)
        assert rep.passed, rep.summary_lines()


def test_constancy_criterion_values():
    spec = NonlinearitySpec.prototype(4, 3)   # f' = 3t^2 - 2t
    ok, margin = constancy_criterion(spec, 2.0, 10.0)
    assert ok and margin == pytest.approx(11 - 8, rel=1e-6)
    ok, margin = constancy_criterion(spec, 3.0, 10.0)
    assert not ok and margin == pytest.approx(11 - 21, rel=1e-6)


def test_constancy_threshold_by_bisection():
    spec = NonlinearitySpec.prototype(4, 3)
    lam = 5.0
    Kc = optimize.brentq(lambda K: constancy_criterion(spec, K, lam)[1], 0.7, 10.0, xtol=1e-12)
    assert Kc == pytest.approx((2 + np.sqrt(4 + 12 * (lam + 1))) / 6, rel=1e-4)
    assert constancy_criterion(spec, 0.99 * Kc, lam)[0]
    assert not constancy_criterion(spec, 1.01 * Kc, lam)[0]


def test_embedding_scan_properties():
    cone = ConeSpec("nondecreasing")
    forms = make_forms(R=R_PROTO, N=64, N_ext=32)
    out = embedding_scan(forms, cone, n_samples=200, seed=1)
    assert out["C_sample"] >= out["C_const"] > 0
    assert out["C_emb"] == pytest.approx(2.0 * max(out["C_sample"], out["C_green"]))
    fine = embedding_scan(make_forms(R=R_PROTO, N=128, N_ext=64), cone, n_samples=200, seed=1)
    assert fine["C_emb"] == pytest.approx(out["C_emb"], rel=0.2)
    with pytest.raises(Exception):
        embedding_scan(forms, cone, n_samples=10)


def test_embedding_scan_nonincreasing(annulus_forms):
    out = embedding_scan(annulus_forms, ConeSpec("nonincreasing"), n_samples=100)
    assert out["C_sample"] >= out["C_const"]


def test_maximum_principle(ball_forms, rng):
    N = len(ball_forms.m)
    r = maximum_principle_check(np.full(N, 2.0), ball_forms)
    assert r["premise"] and r["conclusion"] and r["holds"]
    # a nonnegative function touching zero inside cannot satisfy the premise
    u = np.ones(N)
    u[N // 2] = 0.0
    r = maximum_principle_check(u, ball_forms)
    assert not r["premise"] and r["holds"]
    for _ in range(20):
        assert maximum_principle_check(np.abs(rng.normal(size=N)), ball_forms)["holds"]
    assert maximum_principle_check(np.zeros(N), ball_forms)["holds"]


def test_neumann_extension_roundtrip(ball_forms):
    U = neumann_extension(np.ones(len(ball_forms.m)), ball_forms)
    np.testing.assert_allclose(U.exterior_values, 1.0, rtol=1e-10)


@pytest.mark.parametrize("spec", [DomainSpec(1, 0.75, 0.0, 1.0), DomainSpec(3, 0.6, 1.0, 2.0)])
def test_oracle_compare_passes(spec):
    rep = oracle_compare(spec, n_pava=200)
    assert rep.passed, rep.summary_lines()


def test_oracle_compare_self_test():
    rep = oracle_compare(DomainSpec(1, 0.75, 0.0, 1.0), c_scale=2.0, n_pava=50)
    assert not rep.checks["eigenvalues"].passed
    assert not rep.checks["A_red"].passed
    assert rep.checks["pava"].passed
