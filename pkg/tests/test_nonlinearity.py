import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fracneumann.kernel import ParameterError
from fracneumann.nonlinearity import (ExtrapolationError, HypothesisFailure, NonlinearitySpec, apriori_constants,
                                      ar_holds, check_hypotheses, critical_exponent, default_ell,
                                      fixed_points, growth_witness, shift_constant, truncate)

GOLDEN = (1 + math.sqrt(5)) / 2


def test_critical_exponent():
    assert critical_exponent(3, 0.75) == pytest.approx(4.0)
    assert math.isinf(critical_exponent(1, 0.75))
    assert 2 < default_ell(3, 0.75) < 4
    assert default_ell(1, 0.75) > 2


def test_prototype_fixed_points():
    fx = fixed_points(NonlinearitySpec.prototype(4, 3))
    assert fx.roots[0] == 0.0
    assert fx.u0_list == [pytest.approx(GOLDEN, rel=1e-14)]
    assert fx.u_minus == [0.0] and math.isinf(fx.u_plus[0])
    # f'(u0) = 3 u0^2 - 2 u0 = u0 + 3
    assert NonlinearitySpec.prototype(4, 3).fprime(fx.u0_list[0]) == pytest.approx(GOLDEN + 3, rel=1e-14)


def test_prototype_r2_fixed_point():
    fx = fixed_points(NonlinearitySpec.prototype(6, 2))
    assert fx.u0_list[0] == pytest.approx(2 ** 0.25, rel=1e-14)


def test_multiple_fixed_points():
    c = np.polynomial.Polynomial([0.0, -11.0, 22.0, -12.0, 2.0])
    spec = NonlinearitySpec.from_callables(c, c.deriv(), c.integ())
    fx = fixed_points(spec)
    np.testing.assert_allclose(fx.roots, [0, 1, 2, 3], atol=1e-12)
    np.testing.assert_allclose(fx.u0_list, [1, 3], atol=1e-12)
    np.testing.assert_allclose(fx.u_minus, [0, 2], atol=1e-12)
    assert fx.u_plus[0] == pytest.approx(2.0) and math.isinf(fx.u_plus[1])


def test_no_admissible_fixed_point():
    with pytest.raises(HypothesisFailure):
        fixed_points(NonlinearitySpec.from_callables(lambda t: 0.5 * t, lambda t: 0.5 + 0 * t))


def test_growth_witness_prototype():
    (M, delta), _ = growth_witness(NonlinearitySpec.prototype(4, 3), 1e3)
    assert delta == 0.5
    # t^3 - t^2 >= 1.5 t  <=>  t >= (1 + sqrt 7) / 2
    assert M == pytest.approx((1 + math.sqrt(7)) / 2, rel=1e-12)


def test_shift_constant():
    # prototype: min f' = min 3t^2 - 2t = -1/3 at t = 1/3
    c = shift_constant(NonlinearitySpec.prototype(4, 3).fprime, 10.0)
    assert c == pytest.approx(1 / 3, rel=1e-9) and c >= 1 / 3
    assert shift_constant(lambda t: 1 + 0 * t, 5.0) == 0.0


def test_hypothesis_report():
    spec = NonlinearitySpec.prototype(4, 3)
    rep = check_hypotheses(spec, 3.0)
    assert rep.passed
    assert rep.margins[0] == pytest.approx(GOLDEN + 3 - 4.0, rel=1e-12)
    assert not check_hypotheses(spec, 4.0).passed
    d = rep.to_dict()
    assert d["fixed_points"]["u_plus"] == [None]


def test_damped_linear_fails_f3():
    spec = NonlinearitySpec.from_callables(lambda t: 2 * t - 1.5 * t * np.exp(-t),
                                           lambda t: 2 - 1.5 * np.exp(-t) + 1.5 * t * np.exp(-t))
    rep = check_hypotheses(spec, 3.0)
    assert not rep.results["f3"].passed
    assert rep.fixed.u0_list[0] == pytest.approx(math.log(1.5), rel=1e-12)


def test_numeric_antiderivative():
    spec = NonlinearitySpec.from_callables(lambda t: 2 * t - 1.5 * t * np.exp(-t), None)
    t = np.array([0.0, 0.3, 1.0, 5.5, 100.0, 1234.5])
    exact = t ** 2 - 1.5 * (1 - np.exp(-t) * (1 + t))
    np.testing.assert_allclose(spec.F(t), exact, rtol=1e-13, atol=1e-15)


def test_table_nonlinearity(tmp_path):
    t = np.linspace(0, 5, 501)
    p = tmp_path / "f.csv"
    p.write_text("t,f\n" + "\n".join(f"{float(a)!r},{float(a ** 3 - a ** 2)!r}" for a in t))
    spec = NonlinearitySpec.from_csv(p)
    assert spec.f(2.0) == pytest.approx(4.0, rel=1e-12)
    assert spec.F(5.0) == pytest.approx(5 ** 4 / 4 - 5 ** 3 / 3, rel=1e-3)
    with pytest.raises(ExtrapolationError):
        spec.f(6.0)
    with pytest.raises(ParameterError):
        NonlinearitySpec.from_table([0.5, 1.0], [0.0, 1.0])
    with pytest.raises(ParameterError):
        NonlinearitySpec.from_table([0.0, 1.0, 0.5], [0.0, 1.0, 2.0])


@pytest.fixture(scope="module")
def tr():
    return truncate(NonlinearitySpec.prototype(4, 3), 20.0, None, 0.75, 1)


def test_truncation_is_c1_and_agrees_below(tr):
    base = NonlinearitySpec.prototype(4, 3)
    t = np.linspace(0, 0.999 * tr.t_star, 1000)
    np.testing.assert_array_equal(tr.f(t), base.f(t))
    for x in (tr.t_star, tr.t_blend):
        eps = 1e-9 * x
        assert tr.f(x - eps) == pytest.approx(tr.f(x + eps), rel=1e-7)
        assert tr.fprime(x - eps) == pytest.approx(tr.fprime(x + eps), rel=1e-7)
    assert tr.t_star >= 20.0


def test_truncation_growth_and_antiderivative(tr):
    big = 1e3 * tr.t_star
    assert tr.f(big) / big ** (tr.ell - 1) == pytest.approx(1.0, rel=1e-6)
    for a, b in [(0.0, 30.0), (30.0, 50.0), (1.0, 5000.0)]:
        pts = [x for x in (tr.t_star, tr.t_blend) if a < x < b]
        ref = integrate.quad(lambda x: float(tr.f(x)), a, b, points=pts or None, epsabs=0,
                             epsrel=1e-13, limit=200)[0]
        assert tr.F(b) - tr.F(a) == pytest.approx(ref, rel=1e-11)
    assert ar_holds(tr, tr.mu, tr.T0)
    assert tr.mu > 2


TR = truncate(NonlinearitySpec.prototype(4, 3), 20.0, None, 0.75, 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 500.0), st.floats(0.0, 500.0))
def test_shifted_nonlinearity_nondecreasing(a, b):
    tr = TR
    lo, hi = min(a, b), max(a, b)
    assert tr.g(hi) >= tr.g(lo) - 1e-12 * (1 + abs(tr.g(hi)))
    assert tr.g(lo) >= 0


def test_constant_energy_extremum_at_fixed_point(tr):
    u0 = tr.u0_list[0]
    e = lambda t: float(tr.constant_energy(t, 2.0))  # noqa: E731
    h = 1e-5
    assert (e(u0 + h) - e(u0 - h)) / (2 * h) == pytest.approx(0.0, abs=1e-8)
    assert e(u0) > e(u0 + 0.1) and e(u0) > e(u0 - 0.1)


def test_truncate_errors():
    spec = NonlinearitySpec.prototype(4, 3)
    with pytest.raises(ParameterError):
        truncate(spec, 10.0, 4.0, 0.75, 3)
    with pytest.raises(ParameterError):
        truncate(spec, -1.0, None, 0.75, 1)


@pytest.mark.parametrize("M,delta,meas,C,K1", [(2.0, 0.5, 2.0, 1.0, 12.0), (1.5, 0.25, 4.0, 2.0, 30.0),
                                               (0.5, 1.0, 8.0, 0.5, 8.0)])
def test_apriori_constants(M, delta, meas, C, K1):
    k1, kinf, k2 = apriori_constants(M, delta, meas, C)
    assert k1 == K1
    assert kinf == C * C * K1 and k2 == C * K1
