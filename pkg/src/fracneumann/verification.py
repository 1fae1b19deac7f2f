"""Invariant battery for computed solutions plus oracle comparisons on tiny grids."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import oracles
from .discretization import (AssembledForms, DomainSpec, RadialFunction, apply_fractional_laplacian,
                             assemble_forms, build_grid, farfield_flux, full_bilinear,
                             neumann_derivative, neumann_extension, norms)
from .kernel import KernelParams, ParameterError, RadialKernel
from .nonlinearity import NonlinearitySpec, TruncatedNonlinearity, _scan_grid
from .spectral import lambda2_increasing, neumann_eigs, pava_project
from .variational import ConeSpec, hs_norm, residual


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    note: str = ""
    required: bool = True
    data: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {"value": _json_float(self.value), "tolerance": _json_float(self.tolerance),
               "passed": self.passed, "required": self.required, "note": self.note}
        if self.data is not None and not self.passed:
            out["data"] = self.data
        return out


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class VerificationReport:
    checks: dict = field(default_factory=dict)

    def add(self, name, value, tolerance, passed, note="", required=True, data=None):
        self.checks[name] = Check(name, float(value), float(tolerance), bool(passed), note, required, data)
        return self.checks[name]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values() if c.required)

    def failed(self) -> list:
        return [k for k, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": {k: c.to_dict() for k, c in self.checks.items()}}

    def summary_lines(self) -> list:
        return [f"{'PASS' if c.passed else 'FAIL'} {k}: {c.value:.3e} (tol {c.tolerance:.1e})"
                for k, c in self.checks.items()]


# ---------------------------------------------------------------------------

def verify_solution(u_star, forms: AssembledForms, trunc: TruncatedNonlinearity, cone: ConeSpec,
                    tol: float = 1e-6, K: Optional[tuple] = None) -> VerificationReport:
    """Run every solution check; failures are recorded, never raised.

    ``K`` overrides (K1, K_inf, K2); by default they come from ``trunc``.
    """
    u = np.asarray(u_star, float)
    m, r = forms.m, forms.radii
    rep = VerificationReport()
    snap = lambda: {"u": u.tolist()}  # noqa: E731
    K1, Kinf, K2 = K if K is not None else (trunc.K1, trunc.K_inf, trunc.K2)

    nrm = hs_norm(u, forms, trunc)
    res = residual(u, forms, trunc)
    rep.add("residual", res, tol * max(1.0, nrm), res < tol * max(1.0, nrm),
            "||u - T(u)|| in the shifted H^s norm", data=None)
    lhs, rhs = float(np.dot(m, u)), float(np.dot(m, trunc.f(u)))
    rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    rep.add("identity", rel, 1e-6, rel <= 1e-6, "sum m u = sum m f(u), relative",
            data={"lhs": lhs, "rhs": rhs})
    U = neumann_extension(u, forms)
    lap = apply_fractional_laplacian(U, forms)
    scale = np.abs(forms.A_red).max() * max(np.abs(u).max(), 1e-300) * len(u)
    total = abs(float(np.dot(m, lap)))
    rep.add("laplacian_sum", total, 1e-6 * scale, total <= 1e-6 * scale,
            "sum m (-Delta)^s u vanishes")
    ns = np.abs(neumann_derivative(U, forms))
    ff = abs(farfield_flux(U, forms))
    nmax = max(float(ns.max()) if ns.size else 0.0, ff)
    lscale = np.abs(forms.A_full).max() * max(np.abs(u).max(), 1e-300)
    rep.add("neumann_exterior", nmax, 1e-10 * lscale, nmax <= 1e-10 * lscale,
            "nonlocal normal derivative at exterior nodes and far field")
    l1 = float(np.dot(m, np.abs(u)))
    rep.add("l1_bound", l1, K1, l1 <= K1, "||u||_1 <= K1")
    linf = float(np.abs(u).max())
    rep.add("linf_bound", linf, Kinf, linf <= Kinf, "||u||_inf <= K_inf")
    hs1 = math.sqrt(max(forms.hs_inner(u, u, 1.0), 0.0))
    rep.add("hs_bound", hs1, K2, hs1 <= K2, "||u||_{H^s} <= K2")
    pos = u[r > 0]
    mn = float(pos.min()) if pos.size else math.inf
    rep.add("positivity", mn, 0.0, mn > 0, "u > 0 at nodes with r > 0",
            data=None if mn > 0 else snap())
    viol = cone.violation(u)
    rep.add("monotone", viol, 0.0, viol == 0.0, f"exact {cone.orientation} ordering",
            data=None if viol == 0 else {"worst_index": int(np.argmin(np.diff(u) * (1 if cone.orientation == "nondecreasing" else -1))),
                                         "tail": u[-8:].tolist(), "head": u[:8].tolist()})
    inside = bool(u.min() >= cone.lower and u.max() <= cone.upper)
    rep.add("cone_bounds", 0.0 if inside else 1.0, 0.0, inside, "u within [u_minus, u_plus]")
    osc = float(u.max() - u.min())
    thr = 10 * tol * max(1.0, nrm)
    rep.add("nonconstancy", osc, thr, osc > thr, "oscillation above 10x the residual tolerance")
    return rep


def check_integration_by_parts(u, v, forms: AssembledForms, independent: bool = False,
                               A_oracle: Optional[np.ndarray] = None) -> VerificationReport:
    """Discrete nonlocal Green identity.

    ``u`` and ``v`` are RadialFunctions with exterior and far-field values
    (plain interior vectors are Neumann-extended).  With ``independent`` the
    normal-derivative terms come from the brute-force oracle matrix.
    """
    U = u if isinstance(u, RadialFunction) and u.exterior_values is not None else neumann_extension(u, forms)
    V = v if isinstance(v, RadialFunction) and v.exterior_values is not None else neumann_extension(v, forms)
    lhs = full_bilinear(U, V, forms)
    vint, uint = V.interior_values, U.interior_values
    lap = apply_fractional_laplacian(RadialFunction(uint, U.exterior_values, U.farfield_value, True), forms)
    vin = float(np.dot(forms.m * vint, lap))
    if independent:
        A = oracles.oracle_full_matrix(forms.grid, RadialKernel(forms.params)) if A_oracle is None else A_oracle
        full = np.empty(A.shape[0])
        full[forms.I] = uint
        full[forms.grid.exterior_index] = U.exterior_values
        full[-1] = U.farfield_value
        Au = A @ full
        ext = float(np.dot(V.exterior_values, Au[forms.grid.exterior_index]) + V.farfield_value * Au[-1])
        tol_rel = 1e-6
    else:
        Ufull = RadialFunction(U.interior_values, U.exterior_values, U.farfield_value, True)
        ext = float(np.dot(forms.grid.exterior_masses * V.exterior_values, neumann_derivative(Ufull, forms))
                    + V.farfield_value * farfield_flux(Ufull, forms))
        tol_rel = 1e-12

    def _vec(F):
        return np.concatenate([F.interior_values, F.exterior_values, [F.farfield_value]])

    scale = np.abs(forms.A_full).max() * np.abs(_vec(U)).sum() * np.abs(_vec(V)).max()
    err = abs(lhs - vin - ext)
    rep = VerificationReport()
    rep.add("by_parts_independent" if independent else "by_parts", err, tol_rel * scale,
            err <= tol_rel * scale, "bilinear - interior term - exterior term",
            data={"bilinear": lhs, "interior": vin, "exterior": ext})
    return rep


def constancy_criterion(spec: NonlinearitySpec, K_inf: float, lambda2_rad: float):
    """(holds, margin) with margin = lambda2_rad + 1 - max_{[0, K_inf]} f'."""
    t = _scan_grid(K_inf)
    top = float(np.max(spec.fprime(t)))
    margin = lambda2_rad + 1 - top
    return bool(margin > 0), float(margin)


def embedding_scan(forms: AssembledForms, cone: ConeSpec, n_samples: int = 500, seed: int = 0,
                   safety: float = 2.0) -> dict:
    """Empirical ||u||_inf / ||u||_{H^s} over the cone.

    The norm is (u^T A_red u + u^T B u)^{1/2}.  Besides random monotone
    samples the scan includes the constant function and the extremal vector
    (A_red + B)^{-1} e_k at the node where cone functions peak, whose ratio
    bounds the cone supremum from above.
    """
    if n_samples < 100:
        raise ParameterError("embedding_scan needs n_samples >= 100")
    rng = np.random.default_rng(seed)
    A, m = forms.A_red, forms.m
    N = len(m)
    Hn = lambda u: math.sqrt(max(u @ A @ u + np.dot(m * u, u), 0.0))  # noqa: E731
    inc = cone.orientation == "nondecreasing"
    const_ratio = 1.0 / Hn(np.ones(N))
    best = const_ratio
    for _ in range(n_samples):
        steps = rng.exponential(size=N) * (rng.random(N) < rng.uniform(0.05, 1.0))
        u = np.cumsum(steps) + rng.exponential()
        if not inc:
            u = u[::-1]
        best = max(best, np.abs(u).max() / Hn(u))
    k = N - 1 if inc else 0
    e = np.zeros(N)
    e[k] = 1.0
    w = linalg.cho_solve(forms.linear_factor(1.0), e)
    green = math.sqrt(w[k])
    # project the extremal vector into the cone as one more admissible sample
    wp = pava_project(np.maximum(w, 0.0), m, cone.orientation)
    if np.any(wp):
        best = max(best, np.abs(wp).max() / Hn(wp))
    C = max(best, green)
    return {"C_sample": float(best), "C_green": float(green), "C_const": float(const_ratio),
            "safety": safety, "C_emb": float(safety * C), "n_samples": n_samples, "seed": seed}


def maximum_principle_check(u, forms: AssembledForms, tol: float = 1e-10) -> dict:
    """Discrete check of: nonnegative u, (-Delta)^s u >= 0, N_s u >= 0  =>  u > 0 or u = 0."""
    u = np.asarray(u, float)
    U = neumann_extension(u, forms)
    lap = apply_fractional_laplacian(U, forms)
    ns = neumann_derivative(U, forms)
    scale = max(np.abs(u).max(), 1e-300)
    opscale = np.abs(forms.A_full).max() / forms.m.min() * scale
    premise = bool(u.min() >= 0 and lap.min() >= -tol * opscale
                   and (ns.size == 0 or ns.min() >= -tol * opscale))
    conclusion = bool(u.min() > 0 or np.abs(u).max() <= tol)
    return {"premise": premise, "conclusion": conclusion, "holds": (not premise) or conclusion,
            "min_u": float(u.min()), "min_laplacian": float(lap.min()),
            "min_neumann": float(ns.min()) if ns.size else 0.0}


def oracle_compare(spec: DomainSpec, N_int: int = 5, N_ext: int = 4, c_scale: float = 1.0,
                   n_pava: int = 1000, seed: int = 0) -> VerificationReport:
    """Production assembly and solvers against brute-force oracles (dimension <= 10).

    ``c_scale`` multiplies the kernel constant of the production side only;
    a value other than 1 must make the eigenvalue rows fail (self-test).
    """
    if N_int + 1 > 10:
        raise ParameterError("oracle comparison is limited to 10 interior nodes")
    grid = build_grid(spec, N_int, N_ext)
    base = KernelParams.standard(spec.n, spec.s)
    forms = assemble_forms(grid, KernelParams.standard(spec.n, spec.s, scale=c_scale))
    S, _ = oracles.oracle_reduced(grid, RadialKernel(base))
    m = forms.m
    rep = VerificationReport()
    d = float(np.abs(forms.A_red - S).max() / np.abs(S).max())
    rep.add("A_red", d, 1e-8, d <= 1e-8, "entrywise, relative to max |A|")
    lam_o, V_o = oracles.oracle_eigs(S, m)
    pairs = neumann_eigs(forms)
    lam_p = np.array([p.value for p in pairs])
    dl = float(np.abs(lam_p - lam_o).max() / max(1.0, np.abs(lam_o).max()))
    rep.add("eigenvalues", dl, 1e-10, dl <= 1e-10, "relative to max(1, lambda_max)",
            data={"production": lam_p.tolist(), "oracle": lam_o.tolist()})
    dv = 0.0
    for k in range(1, len(m)):
        a, b = pairs[k].vector, V_o[:, k]
        b = b / math.sqrt(np.dot(m * b, b))
        if np.dot(m * a, b) < 0:
            b = -b
        dv = max(dv, float(np.abs(a - b).max()))
    gaps = np.diff(lam_o)
    simple = bool(np.all(gaps[1:] > 1e-6 * max(1.0, lam_o.max())))
    rep.add("eigenvectors", dv, 1e-10, dv <= 1e-10 or not simple, "B-normalized, simple spectrum")
    lp = lambda2_increasing(forms)
    lo, _ = oracles.brute_force_lambda2_plus(S, m)
    de = abs(lp.value - lo) / max(1.0, abs(lo))
    rep.add("lambda2_plus", de, 1e-9, de <= 1e-9, "against pooling-pattern enumeration",
            data={"production": lp.value, "oracle": lo})
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pava):
        n = int(rng.integers(2, 9))
        y, w = rng.normal(size=n), rng.uniform(0.1, 2.0, size=n)
        inc = bool(rng.random() < 0.5)
        p = pava_project(y, w, "nondecreasing" if inc else "nonincreasing")
        q = oracles.brute_force_isotonic(y, w, inc)
        worst = max(worst, float(np.abs(p - q).max()))
    rep.add("pava", worst, 1e-12, worst <= 1e-12, f"{n_pava} random vectors against enumeration")
    return rep


def norms_report(u, forms) -> dict:
    nr = norms(u, forms)
    return {"seminorm": nr.seminorm, "l2": nr.l2, "full_norm": nr.full_norm,
            "interior_seminorm": nr.interior_seminorm}
