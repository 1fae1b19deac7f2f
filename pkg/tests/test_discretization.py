import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracneumann import oracles
from fracneumann.discretization import (ContractError, DomainSpec, RadialFunction, apply_fractional_laplacian,
                                        assemble_forms, build_grid, dump_forms_coo, farfield_flux,
                                        neumann_derivative, neumann_extension, norms, write_profile_csv)
from fracneumann.kernel import KernelParams, ParameterError, RadialKernel
from fracneumann.spectral import neumann_eigs

from conftest import make_forms


@pytest.mark.parametrize("kw", [dict(n=1, s=0.4, R0=0, R=1), dict(n=1, s=1.0, R0=0, R=1),
                                dict(n=0, s=0.75, R0=0, R=1), dict(n=1, s=0.75, R0=2, R=1),
                                dict(n=1, s=0.75, R0=0, R=1, R_ext=0.5)])
def test_domain_validation(kw):
    with pytest.raises(ParameterError):
        DomainSpec(**kw)


def test_domain_measure():
    assert DomainSpec(1, 0.75, 0, 2).measure == pytest.approx(4.0)
    assert DomainSpec(3, 0.75, 1, 2).measure == pytest.approx(4 / 3 * np.pi * 7)
    assert DomainSpec(1, 0.75, 0, 1).R_ext == 8.0


def test_grid_structure():
    grid = build_grid(DomainSpec(3, 0.75, 1.0, 2.0), 16, 8)
    nodes = grid.all_nodes
    assert np.all(np.diff(nodes) > 0)
    assert nodes[0] == 0.0 and nodes[-1] == grid.R_ext
    assert grid.interior_nodes[0] == 1.0 and grid.interior_nodes[-1] == 2.0
    assert grid.masses.sum() == pytest.approx(grid.spec.measure, rel=1e-12)
    # geometric exterior starts with the interface step
    h_in = grid.interior_nodes[-1] - grid.interior_nodes[-2]
    assert grid.exterior_nodes[1] - grid.exterior_nodes[0] == pytest.approx(h_in, rel=1e-8)
    assert grid.is_interior_element.sum() == 16


def test_reduced_form_properties(ball_forms, annulus_forms):
    for forms in (ball_forms, annulus_forms):
        A = forms.A_red
        np.testing.assert_allclose(A, A.T, atol=0)
        assert np.abs(A @ np.ones(len(A))).max() <= 1e-11 * np.abs(A).max()
        lam = np.linalg.eigvalsh(A)
        assert lam[0] >= -1e-10 * lam[-1]
        # exterior coupling only lowers the energy relative to the interior-only form plus tail
        u = np.linspace(0, 1, len(A))
        assert u @ A @ u >= u @ forms.A_omega @ u


def test_general_dimension_assembles():
    forms = make_forms(n=2, s=0.6, R0=0.5, R=1.5, N=12, N_ext=8)
    lam = [p.value for p in neumann_eigs(forms, 4)]
    assert abs(lam[0]) < 1e-9 * lam[1]
    assert np.all(np.diff(lam) > 0)


@pytest.mark.parametrize("cfg", [dict(n=1, R0=0.0, R=1.0), dict(n=3, R0=1.0, R=2.0)])
def test_matches_oracle_tiny(cfg):
    spec = DomainSpec(cfg["n"], 0.75, cfg["R0"], cfg["R"])
    grid = build_grid(spec, 6, 4)
    forms = assemble_forms(grid, KernelParams.standard(cfg["n"], 0.75))
    S, A = oracles.oracle_reduced(grid, RadialKernel(forms.params))
    assert np.abs(forms.A_full - A).max() <= 1e-10 * np.abs(A).max()
    assert np.abs(forms.A_red - S).max() <= 1e-10 * np.abs(S).max()


def test_eigenvalues_scale_with_radius():
    # homogeneity: the whole discrete problem is self-similar in R
    lam1 = [p.value for p in neumann_eigs(make_forms(R=1.0, N=24, N_ext=12), 4)]
    lam2 = [p.value for p in neumann_eigs(make_forms(R=2.0, N=24, N_ext=12), 4)]
    np.testing.assert_allclose(np.array(lam2[1:]) * 2 ** 1.5, lam1[1:], rtol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0))
def test_kernel_scaling_scales_form(beta):
    spec = DomainSpec(1, 0.75, 0.0, 1.0)
    grid = build_grid(spec, 8, 4)
    A1 = assemble_forms(grid, KernelParams.standard(1, 0.75)).A_red
    A2 = assemble_forms(grid, KernelParams.standard(1, 0.75, scale=beta)).A_red
    np.testing.assert_allclose(A2, beta * A1, rtol=1e-11, atol=1e-13 * beta * np.abs(A1).max())


def test_neumann_extension_zero_normal_derivative(ball_forms, rng):
    u = rng.normal(size=len(ball_forms.m))
    U = neumann_extension(u, ball_forms)
    A = np.abs(ball_forms.A_full).max()
    assert np.abs(neumann_derivative(U, ball_forms)).max() <= 1e-10 * A * np.abs(u).max()
    assert abs(farfield_flux(U, ball_forms)) <= 1e-10 * A * np.abs(u).max()
    lap = apply_fractional_laplacian(U, ball_forms)
    np.testing.assert_allclose(ball_forms.m * lap, ball_forms.A_red @ u,
                               atol=1e-10 * np.abs(ball_forms.A_red @ u).max())
    # constants extend to constants
    C = neumann_extension(np.full(len(u), 2.5), ball_forms)
    np.testing.assert_allclose(C.exterior_values, 2.5, rtol=1e-10)


def test_contract_errors(ball_forms):
    with pytest.raises(ContractError):
        apply_fractional_laplacian(RadialFunction(np.ones(len(ball_forms.m))), ball_forms)
    bad = np.ones(len(ball_forms.m))
    bad[3] = np.nan
    with pytest.raises(ContractError):
        neumann_extension(bad, ball_forms)


def test_norms_and_io(ball_forms, tmp_path):
    u = np.ones(len(ball_forms.m))
    nr = norms(u, ball_forms)
    assert nr.seminorm < 1e-5
    assert nr.l2 == pytest.approx(np.sqrt(ball_forms.measure), rel=1e-12)
    write_profile_csv(tmp_path / "p.csv", ball_forms.radii, u)
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "r,u" and len(rows) == len(u) + 1
    dump_forms_coo(tmp_path / "a.txt", ball_forms.A_red[:4, :4])
    assert len((tmp_path / "a.txt").read_text().splitlines()) == 16
