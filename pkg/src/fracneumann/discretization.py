"""Radial P1 mesh, assembly of the Neumann seminorm and discrete operators.

Unknowns of the full form are the nodal values on the whole radial line
[0, R_ext] (interior nodes on [R0, R] plus exterior nodes) and one far-field
value standing for the constant extension beyond R_ext.  The form is

    1/2 int_{I x I} W (u(r) - u(rho))^2 + int_{I x E} W (u(r) - w(rho))^2
        + int_I tau(r) (u(r) - w_inf)^2,

exterior-exterior pairs being excluded.  Minimizing over the exterior and
far-field unknowns (Schur complement) gives the reduced form A_red.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .kernel import (Element, KernelParams, ParameterError, QuadratureOrders, RadialKernel,
                     element_pair_integral, gauss_legendre, sphere_area, tail_weight)

log = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    n: int
    s: float
    R0: float
    R: float
    R_ext: Optional[float] = None

    def __post_init__(self):
        if self.R_ext is None:
            object.__setattr__(self, "R_ext", 8.0 * self.R)
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError("n must be a positive integer")
        if not (0.5 < self.s < 1):
            raise ParameterError(f"s={self.s} outside (1/2, 1)")
        if not (0 <= self.R0 < self.R < self.R_ext):
            raise ParameterError("need 0 <= R0 < R < R_ext")

    @property
    def is_ball(self) -> bool:
        return self.R0 == 0

    @property
    def measure(self) -> float:
        return sphere_area(self.n) * (self.R ** self.n - self.R0 ** self.n) / self.n


def _geometric_nodes(start: float, stop: float, h0: float, count: int) -> np.ndarray:
    """count+1 nodes from start to stop whose first step is about h0.

    Steps grow geometrically; falls back to uniform spacing when h0 is too
    large to need growth.
    """
    L = abs(stop - start)
    sign = 1.0 if stop > start else -1.0
    if h0 * count >= L:
        steps = np.full(count, L / count)
    else:
        hi = (L / h0) ** (1.0 / (count - 1)) + 1.0
        g = optimize.brentq(lambda x: h0 * (x ** count - 1) / (x - 1) - L, 1 + 1e-12, hi)
        steps = h0 * g ** np.arange(count)
        steps *= L / steps.sum()
    x = start + sign * np.concatenate([[0.0], np.cumsum(steps)])
    x[-1] = stop
    return x


@dataclass
class RadialGrid:
    spec: DomainSpec
    interior_nodes: np.ndarray
    exterior_nodes: np.ndarray          # [R, ..., R_ext], first node shared
    inner_exterior_nodes: np.ndarray    # [0, ..., R0), empty for the ball
    masses: np.ndarray = field(init=False)
    exterior_masses: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = self.all_nodes
        if np.any(np.diff(nodes) <= 0):
            raise ParameterError("grid nodes must be strictly increasing")
        interior = self.is_interior_element
        self.masses = _lumped_masses(self.interior_nodes, self.spec.n)
        ext_full = np.zeros(len(nodes))
        for k in range(len(nodes) - 1):
            if not interior[k]:
                ext_full[k:k + 2] += _element_masses(nodes[k], nodes[k + 1], self.spec.n)
        self.exterior_masses = ext_full[self.exterior_index]

    @property
    def R_ext(self) -> float:
        return self.spec.R_ext

    @property
    def all_nodes(self) -> np.ndarray:
        return np.concatenate([self.inner_exterior_nodes, self.interior_nodes, self.exterior_nodes[1:]])

    @property
    def interior_index(self) -> np.ndarray:
        k = len(self.inner_exterior_nodes)
        return np.arange(k, k + len(self.interior_nodes))

    @property
    def exterior_index(self) -> np.ndarray:
        return np.setdiff1d(np.arange(len(self.all_nodes)), self.interior_index)

    @property
    def exterior_radii(self) -> np.ndarray:
        return self.all_nodes[self.exterior_index]

    @property
    def is_interior_element(self) -> np.ndarray:
        nodes = self.all_nodes
        mid = 0.5 * (nodes[:-1] + nodes[1:])
        return (mid > self.spec.R0) & (mid < self.spec.R)

    @property
    def n_interior(self) -> int:
        return len(self.interior_nodes)


def _element_masses(a, b, n):
    x, w = gauss_legendre(8)
    r = a + (b - a) * x
    wt = sphere_area(n) * (b - a) * w * r ** (n - 1)
    return np.array([np.dot(wt, (b - r) / (b - a)), np.dot(wt, (r - a) / (b - a))])


def _lumped_masses(nodes, n):
    m = np.zeros(len(nodes))
    for k in range(len(nodes) - 1):
        m[k:k + 2] += _element_masses(nodes[k], nodes[k + 1], n)
    return m


def build_grid(spec: DomainSpec, N_int: int = 128, N_ext: int = 64, grading: float = 1.0,
               N_inner: Optional[int] = None) -> RadialGrid:
    """Graded interior mesh plus geometric exterior meshes matched at the interface."""
    if N_int < 4 or N_ext < 2:
        raise ParameterError("need N_int >= 4 and N_ext >= 2")
    if grading < 1:
        raise ParameterError("grading exponent must be >= 1")
    xi = np.linspace(0.0, 1.0, N_int + 1)
    if spec.is_ball:
        psi = 1 - (1 - xi) ** grading
    else:
        psi = np.where(xi <= 0.5, 0.5 * (2 * xi) ** grading, 1 - 0.5 * (2 * (1 - xi)) ** grading)
    interior = spec.R0 + (spec.R - spec.R0) * psi
    interior[0], interior[-1] = spec.R0, spec.R
    outer = _geometric_nodes(spec.R, spec.R_ext, interior[-1] - interior[-2], N_ext)
    if spec.is_ball:
        inner = np.zeros(0)
    else:
        k = N_inner if N_inner is not None else max(2, N_ext // 2)
        inner = _geometric_nodes(spec.R0, 0.0, interior[1] - interior[0], k)[::-1][:-1]
        inner[0] = 0.0
    return RadialGrid(spec, interior, outer, inner)


@dataclass
class RadialFunction:
    interior_values: np.ndarray
    exterior_values: Optional[np.ndarray] = None
    farfield_value: Optional[float] = None
    extended: bool = False

    @property
    def u(self) -> np.ndarray:
        return self.interior_values


@dataclass
class AssembledForms:
    grid: RadialGrid
    params: KernelParams
    A_full: np.ndarray      # global nodes followed by the far-field unknown
    A_omega: np.ndarray     # interior-only form 1/2 int_{Omega x Omega}
    A_red: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> np.ndarray:
        return self.grid.masses

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.grid.masses)

    @property
    def I(self) -> np.ndarray:
        return self.grid.interior_index

    @property
    def E(self) -> np.ndarray:
        """Exterior unknowns (finite exterior nodes, then the far field)."""
        return np.append(self.grid.exterior_index, self.A_full.shape[0] - 1)

    @property
    def A_II(self) -> np.ndarray:
        return self.A_omega

    @property
    def D_I(self) -> np.ndarray:
        return self.A_full[np.ix_(self.I, self.I)] - self.A_omega

    @property
    def C_IE(self) -> np.ndarray:
        return -self.A_full[np.ix_(self.I, self.E)]

    @property
    def G_EE(self) -> np.ndarray:
        return self.A_full[np.ix_(self.E, self.E)]

    @property
    def measure(self) -> float:
        return self.grid.spec.measure

    @property
    def radii(self) -> np.ndarray:
        return self.grid.interior_nodes

    def gee_factor(self):
        if "gee" not in self._cache:
            try:
                self._cache["gee"] = linalg.cho_factor(self.G_EE)
            except linalg.LinAlgError as exc:
                raise AssemblyError("exterior Gram matrix is not positive definite") from exc
        return self._cache["gee"]

    def linear_factor(self, coef: float = 1.0):
        """Cholesky factor of A_red + coef * B (cached per coefficient)."""
        key = ("lin", float(coef))
        if key not in self._cache:
            M = self.A_red + coef * np.diag(self.m)
            self._cache[key] = linalg.cho_factor(M)
        return self._cache[key]

    def hs_inner(self, u, v, coef: float = 1.0) -> float:
        """(u, v) = u^T A_red v + coef * u^T B v."""
        return float(u @ (self.A_red @ v) + coef * np.dot(self.m * u, v))


def assemble_forms(grid: RadialGrid, params: KernelParams,
                   orders: QuadratureOrders = QuadratureOrders(), check: bool = True) -> AssembledForms:
    ker = RadialKernel(params)
    nodes = grid.all_nodes
    nn = len(nodes)
    A = np.zeros((nn + 1, nn + 1))
    A_om = np.zeros((nn, nn))
    interior = grid.is_interior_element
    elems = [Element(nodes[k], nodes[k + 1], (k, k + 1)) for k in range(nn - 1)]
    for i, e in enumerate(elems):
        if not interior[i]:
            continue
        for j, f in enumerate(elems):
            if interior[j] and j < i:
                continue
            ids, blk = element_pair_integral(e, f, ker, orders)
            if i == j:
                blk = 0.5 * blk
            ix = np.ix_(ids, ids)
            A[ix] += blk
            if interior[j]:
                A_om[ix] += blk
    # far-field coupling: int_I tau(r) (u(r) - w_inf)^2 dr
    x, w = gauss_legendre(10)
    for i, e in enumerate(elems):
        if not interior[i]:
            continue
        r = e.a + e.h * x
        tau = tail_weight(r, grid.R_ext, ker)
        psi = np.array([(e.b - r) / e.h, (r - e.a) / e.h, -np.ones_like(r)])
        ids = [i, i + 1, nn]
        A[np.ix_(ids, ids)] += (psi * (tau * w * e.h)) @ psi.T
    A = 0.5 * (A + A.T)
    I = grid.interior_index
    A_om = A_om[np.ix_(I, I)]
    A_om = 0.5 * (A_om + A_om.T)
    forms = AssembledForms(grid, params, A, A_om, np.zeros((len(I), len(I))))
    cf = forms.gee_factor()
    AIE = A[np.ix_(I, forms.E)]
    red = A[np.ix_(I, I)] - AIE @ linalg.cho_solve(cf, AIE.T)
    forms.A_red = 0.5 * (red + red.T)
    if check:
        one = np.ones(len(I))
        scale = np.abs(forms.A_red).max()
        if np.abs(forms.A_red @ one).max() > 1e-10 * scale * len(I):
            raise AssemblyError("reduced form does not annihilate constants")
    return forms


def _full_vector(U: RadialFunction, forms: AssembledForms) -> np.ndarray:
    if U.exterior_values is None or U.farfield_value is None:
        raise ContractError("operation needs exterior and far-field values")
    v = np.empty(forms.A_full.shape[0])
    v[forms.I] = U.interior_values
    v[forms.grid.exterior_index] = U.exterior_values
    v[-1] = U.farfield_value
    return v


def neumann_extension(u, forms: AssembledForms) -> RadialFunction:
    """Exterior values minimizing the full form at fixed interior values."""
    u = np.asarray(getattr(u, "interior_values", u), float)
    if not np.all(np.isfinite(u)):
        raise ContractError("interior values must be finite")
    w = linalg.cho_solve(forms.gee_factor(), forms.C_IE.T @ u)
    return RadialFunction(u.copy(), w[:-1], float(w[-1]), extended=True)


def apply_fractional_laplacian(U: RadialFunction, forms: AssembledForms) -> np.ndarray:
    if not U.extended:
        raise ContractError("fractional Laplacian needs a Neumann-extended function")
    return (forms.A_full @ _full_vector(U, forms))[forms.I] / forms.m


def neumann_derivative(U: RadialFunction, forms: AssembledForms) -> np.ndarray:
    return (forms.A_full @ _full_vector(U, forms))[forms.grid.exterior_index] / forms.grid.exterior_masses


def farfield_flux(U: RadialFunction, forms: AssembledForms) -> float:
    return float((forms.A_full @ _full_vector(U, forms))[-1])


def full_bilinear(U: RadialFunction, V: RadialFunction, forms: AssembledForms) -> float:
    return float(_full_vector(V, forms) @ forms.A_full @ _full_vector(U, forms))


@dataclass(frozen=True)
class Norms:
    seminorm: float
    l2: float
    full_norm: float
    interior_seminorm: float


def norms(u, forms: AssembledForms) -> Norms:
    u = np.asarray(getattr(u, "interior_values", u), float)
    semi = np.sqrt(max(u @ forms.A_red @ u, 0.0))
    l2 = np.sqrt(np.dot(forms.m, u * u))
    inner = np.sqrt(max(u @ forms.A_omega @ u, 0.0))
    return Norms(float(semi), float(l2), float(semi + l2), float(inner))


def write_profile_csv(path, r, u) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r", "u"])
        for a, b in zip(r, u):
            wr.writerow([repr(float(a)), repr(float(b))])


def dump_forms_coo(path, A, tol: float = 0.0) -> None:
    """Coordinate-format text dump (row, col, value) for debugging."""
    rows, cols = np.nonzero(np.abs(A) > tol)
    with open(path, "w") as fh:
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {A[i, j]!r}\n")
