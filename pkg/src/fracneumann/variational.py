"""Energy, solution operator, cone-preserving flow and the mountain-pass search.

The energy of a nodal vector u is

    E(u) = 1/2 u^T A_red u + 1/2 u^T B u - sum_a m_a F(u_a).

With the shift c >= 0 making g = f + c t nondecreasing, the solution operator
is T(h) = (A_red + (1+c) B)^{-1} B h and T~(u) = T(g(u)).  Critical points of
E are the fixed points of T~, and u - T~(u) is the gradient of E in the inner
product (u, v) = u^T A_red v + (1+c) u^T B v.

The minimax point is located with a string method: the path points descend
by the convex-combination flow, the path is re-spaced by arclength, and the
highest point climbs along the path tangent.  Once close, Newton's method on
(A_red + B) u - B f(u) = 0 polishes the saddle to round-off.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .discretization import AssembledForms
from .kernel import ParameterError
from .nonlinearity import TruncatedNonlinearity
from .spectral import pava_project

log = logging.getLogger(__name__)


class GeometryFailure(RuntimeError):
    def __init__(self, msg, profile=None):
        super().__init__(msg)
        self.profile = profile


class NonConvergence(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class ConeSpec:
    orientation: str = "nondecreasing"
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if self.orientation not in ("nondecreasing", "nonincreasing"):
            raise ParameterError(f"unknown orientation {self.orientation!r}")
        if self.lower < 0 or not self.upper > self.lower:
            raise ParameterError("cone bounds need 0 <= lower < upper")

    def validate_domain(self, R0: float) -> None:
        if self.orientation == "nonincreasing" and R0 <= 0:
            raise ParameterError("nonincreasing cone requires an annulus (R0 > 0)")

    def project(self, u, m) -> np.ndarray:
        """Clamp, isotonic projection, clamp; repeated twice."""
        x = np.asarray(u, float)
        for _ in range(2):
            x = np.clip(x, self.lower, self.upper)
            x = pava_project(x, m, self.orientation)
            x = np.clip(x, self.lower, self.upper)
        return x

    def violation(self, u) -> float:
        """Largest monotonicity defect of u (0 when monotone)."""
        d = np.diff(np.asarray(u, float))
        if self.orientation == "nonincreasing":
            d = -d
        return float(max(0.0, -d.min())) if d.size else 0.0

    def contains(self, u) -> bool:
        u = np.asarray(u, float)
        return bool(self.violation(u) == 0.0 and u.min() >= self.lower and u.max() <= self.upper
                    and u.min() >= 0.0)

    def to_dict(self) -> dict:
        return {"orientation": self.orientation, "lower": self.lower,
                "upper": None if math.isinf(self.upper) else self.upper}


# ---------------------------------------------------------------------------
# basic operators

def energy(u, forms: AssembledForms, trunc: TruncatedNonlinearity) -> float:
    u = np.asarray(u, float)
    return float(0.5 * u @ (forms.A_red @ u) + 0.5 * np.dot(forms.m * u, u)
                 - np.dot(forms.m, trunc.F(u)))


def energy_gradient_euclid(u, forms, trunc) -> np.ndarray:
    """Euclidean gradient (A_red + B) u - B f(u)."""
    return forms.A_red @ u + forms.m * (u - trunc.f(u))


def solve_linear(h, forms: AssembledForms, coef: float = 1.0) -> np.ndarray:
    """Solve (A_red + coef B) v = B h."""
    h = np.asarray(h, float)
    return linalg.cho_solve(forms.linear_factor(coef), forms.m * h)


def hs_norm(u, forms, trunc=None) -> float:
    coef = 1.0 + (trunc.shift if trunc is not None else 0.0)
    return math.sqrt(max(forms.hs_inner(u, u, coef), 0.0))


def tilde_T(u, forms: AssembledForms, trunc: TruncatedNonlinearity,
            cone: Optional[ConeSpec] = None, info: Optional[dict] = None) -> np.ndarray:
    """T(f(u) + c u) with (A_red + (1+c)B); projected into the cone when given.

    When ``info`` is a dict the pre-projection monotonicity violation is
    stored under ``"violation"``.
    """
    u = np.asarray(u, float)
    v = solve_linear(trunc.g(u), forms, 1.0 + trunc.shift)
    if cone is None:
        return v
    viol = cone.violation(v)
    if info is not None:
        info["violation"] = viol
    if viol > 0:
        log.debug("tilde_T: monotonicity violation %.3e before projection", viol)
    return cone.project(v, forms.m)


def gradient(u, forms, trunc) -> np.ndarray:
    """u - T~(u): the gradient of E in the shifted H^s inner product."""
    return np.asarray(u, float) - tilde_T(u, forms, trunc)


def residual(u, forms, trunc) -> float:
    return hs_norm(gradient(u, forms, trunc), forms, trunc)


@dataclass
class FlowStep:
    u: np.ndarray
    step: float
    accepted: bool
    energy: float


def flow_step(u, lam: float, forms, trunc, cone: ConeSpec, backtrack: bool = True,
              Tu: Optional[np.ndarray] = None, E_u: Optional[float] = None) -> FlowStep:
    """Projected convex combination (1 - lam) u + lam T~(u).

    With backtracking, lam is halved until the energy does not increase;
    when lam falls below 1e-12 the input is returned unchanged
    (``accepted=False``), which signals a stationary point.
    """
    if not (0 < lam <= 1):
        raise ParameterError("step must lie in (0, 1]")
    u = np.asarray(u, float)
    Tu = tilde_T(u, forms, trunc, cone) if Tu is None else Tu
    E0 = energy(u, forms, trunc) if E_u is None else E_u
    while True:
        v = cone.project((1 - lam) * u + lam * Tu, forms.m)
        Ev = energy(v, forms, trunc)
        if not backtrack or Ev <= E0:
            return FlowStep(v, lam, True, Ev)
        lam *= 0.5
        if lam < 1e-12:
            return FlowStep(u, 0.0, False, E0)


# ---------------------------------------------------------------------------
# geometry and initial path

def _boxed_descent(fun, grad, project, x0, m, max_iter=3000, tol=1e-10):
    """Projected gradient in the B-metric with Barzilai-Borwein steps."""
    x = project(x0)
    fx = fun(x)
    g = grad(x) / m
    eta = 1e-2
    for _ in range(max_iter):
        while True:
            y = project(x - eta * g)
            fy = fun(y)
            if fy <= fx - 1e-4 * np.dot(m * (x - y), x - y) / eta or eta < 1e-14:
                break
            eta *= 0.5
        gy = grad(y) / m
        s, d = y - x, gy - g
        step = math.sqrt(np.dot(m * s, s))
        sd = np.dot(m * s, d)
        x, fx, g = y, fy, gy
        if step < tol * (1 + math.sqrt(np.dot(m * x, x))):
            break
        eta = float(np.clip(np.dot(m * s, s) / sd if sd > 0 else 2 * eta, 1e-12, 1e3))
    return x, fx


def measure_alpha(forms, trunc, cone: ConeSpec, center: float, tau: float, side: str = "above",
                  seed: int = 0) -> float:
    """min E(u) - E(center) over cone functions with sup |u - center| = tau.

    ``side="above"`` explores u in [center, center + tau] (used at u_minus),
    ``"below"`` explores [center - tau, center] (used at u_plus).
    """
    m = forms.m
    N = len(m)
    inc = cone.orientation == "nondecreasing"
    lo, hi = (center, center + tau) if side == "above" else (center - tau, center)
    # the sup distance is attained at the end where the monotone function is furthest from center
    pin = (N - 1 if inc else 0) if side == "above" else (0 if inc else N - 1)
    pin_val = hi if side == "above" else lo
    free = np.ones(N, bool)
    free[pin] = False
    sub = ConeSpec(cone.orientation, max(lo, 0.0), hi)

    def project(x):
        y = x.copy()
        y[free] = sub.project(x[free], m[free])
        y[pin] = pin_val
        return y

    fun = lambda x: energy(x, forms, trunc)  # noqa: E731
    grad = lambda x: energy_gradient_euclid(x, forms, trunc)  # noqa: E731
    rng = np.random.default_rng(seed)
    r = forms.radii
    ramp = (r - r[0]) / (r[-1] - r[0])
    if not inc:
        ramp = 1 - ramp
    if side == "below":
        ramp = 1 - ramp
    starts = [np.full(N, pin_val), lo + (hi - lo) * ramp, lo + (hi - lo) * ramp ** 4]
    starts += [lo + (hi - lo) * np.sort(rng.random(N))[:: (1 if inc else -1)] for _ in range(2)]
    E_c = energy(np.full(N, center), forms, trunc)
    best = min(_boxed_descent(fun, grad, project, x0, m)[1] for x0 in starts)
    return float(best - E_c)


@dataclass
class InitialPath:
    points: list
    t_values: np.ndarray
    tau_bar: float
    t_minus: float
    t_plus: float
    alpha: float
    E_u0: float
    E_u_minus: float
    max_energy: float
    profile: dict = field(default_factory=dict)


def _path_point(t, w, cone, m):
    return cone.project(t * w, m)


def build_initial_path(forms, trunc, cone: ConeSpec, v2, n_points: int = 33, band: int = 0,
                       tau_bar: Optional[float] = None, strict: bool = True,
                       alpha: Optional[float] = None) -> InitialPath:
    """Path t -> t (u0 + tau v2) between the sublevel neighbourhoods of u_- and u_+."""
    m, meas = forms.m, forms.measure
    N = len(m)
    u0, um, up = trunc.u0_list[band], trunc.u_minus[band], trunc.u_plus[band]
    v = np.asarray(getattr(v2, "vector", v2), float)
    if cone.orientation == "nondecreasing" and v[-1] < v[0]:
        v = -v
    if cone.orientation == "nonincreasing" and v[-1] > v[0]:
        v = -v
    if cone.violation(v) > 1e-12 * np.abs(v).max():
        raise ParameterError("v2 must be monotone in the cone orientation")
    v = v / np.abs(v).max()
    E = lambda x: energy(x, forms, trunc)  # noqa: E731
    Ec = lambda t: float(trunc.constant_energy(t, meas))  # noqa: E731
    E0, Em = E(np.full(N, u0)), E(np.full(N, um))
    tau_geo = 0.5 * min(u0 - um, (up - u0) if math.isfinite(up) else math.inf)
    if alpha is None:
        alpha = measure_alpha(forms, trunc, cone, um, tau_geo, "above")
        if math.isfinite(up):
            alpha = min(alpha, measure_alpha(forms, trunc, cone, up, tau_geo, "below"))
    margin = 1e-8 * max(abs(E0), 1.0)

    def endpoints(w):
        # lower end: t u0 slightly above u_minus
        eps = 0.5 * tau_geo
        for _ in range(60):
            tm = (um + eps) / u0
            p = _path_point(tm, w, cone, m)
            if E(p) < Em + alpha / 2 and np.abs(p - um).max() < tau_geo:
                break
            eps *= 0.5
        else:
            return None
        if math.isfinite(up):
            eps = 0.5 * tau_geo
            Ep = E(np.full(N, up))
            for _ in range(60):
                tp = (up - eps) / u0
                p = _path_point(tp, w, cone, m)
                if E(p) < Ep + alpha / 2 and np.abs(p - up).max() < tau_geo:
                    break
                eps *= 0.5
            else:
                return None
        else:
            tp = 1.0 + tau_geo / u0
            for _ in range(200):
                p = _path_point(tp, w, cone, m)
                if Ec(tp * u0) < Em and E(p) < Em and tp * u0 - um > tau_geo:
                    break
                tp *= 1.25
            else:
                return None
        return tm, tp

    def path_max(w, tm, tp):
        ts = np.linspace(tm, tp, 801)
        if tm < 1.0 < tp:
            ts = np.union1d(ts, [1.0])
        vals = np.array([E(_path_point(t, w, cone, m)) for t in ts])
        k = int(np.argmax(vals))
        a, b = ts[max(k - 1, 0)], ts[min(k + 1, ts.size - 1)]
        res = optimize.minimize_scalar(lambda t: -E(_path_point(t, w, cone, m)), bounds=(a, b),
                                       method="bounded", options={"xatol": 1e-12})
        return max(vals[k], -res.fun), ts, vals

    tau = (u0 - um) if tau_bar is None else tau_bar
    profile = {}
    chosen = None
    for _ in range(50):
        w = u0 + tau * v
        ends = endpoints(w)
        if ends is not None:
            mx, ts, vals = path_max(w, *ends)
            profile[tau] = mx
            if mx < E0 - margin or tau_bar is not None:
                chosen = (tau, ends, mx)
                break
        tau *= 0.5
    if chosen is None:
        if strict:
            raise GeometryFailure("no tau_bar gives a path below E(u0)", profile)
        tau = tau if tau > 0 else 1e-6
        w = u0 + tau * v
        ends = endpoints(w) or ((um + 0.5 * tau_geo) / u0, 1.5)
        mx, _, _ = path_max(w, *ends)
        chosen = (tau, ends, mx)
    tau, (tm, tp), mx = chosen
    w = u0 + tau * v
    ts = np.linspace(tm, tp, n_points)
    pts = [_path_point(t, w, cone, m) for t in ts]
    return InitialPath(pts, ts, tau, tm, tp, alpha, E0, Em, mx,
                       {str(k): val for k, val in profile.items()})


# ---------------------------------------------------------------------------
# minimax

@dataclass
class MinimaxResult:
    u_star: np.ndarray
    radii: np.ndarray
    level: float
    residual: float
    residual_rel: float
    path: list
    path_energies: np.ndarray
    iterations: int
    t_minus: float
    t_plus: float
    tau_bar: float
    alpha: float
    E_u0: float
    E_u_minus: float
    u0: float
    u_minus: float
    u_plus: float
    cone: ConeSpec
    status: str
    nonconstancy_linf: float
    oscillation: float
    certificate: bool
    max_violation: float = 0.0
    cone_violation: float = 0.0
    min_value: float = 0.0
    string_residual: float = math.nan
    history: list = field(default_factory=list)

    @property
    def in_cone(self) -> bool:
        return self.cone_violation == 0.0 and self.min_value >= 0.0

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "unresolved")

    def to_dict(self) -> dict:
        fin = lambda x: None if not math.isfinite(x) else x  # noqa: E731
        return {"c": self.level, "residual": self.residual, "residual_rel": self.residual_rel,
                "energy_u0": self.E_u0, "energy_u_minus": self.E_u_minus, "u0": self.u0,
                "u_minus": self.u_minus, "u_plus": fin(self.u_plus), "alpha": self.alpha,
                "t_minus": self.t_minus, "t_plus": self.t_plus, "tau_bar": self.tau_bar,
                "iterations": self.iterations, "status": self.status,
                "nonconstancy_linf": self.nonconstancy_linf, "oscillation": self.oscillation,
                "certificate": self.certificate, "cone": self.cone.to_dict(),
                "max_tildeT_violation": self.max_violation, "cone_violation": self.cone_violation,
                "in_cone": self.in_cone, "string_residual": self.string_residual}


def _reparametrize(path, forms, trunc, energies, cone, fixed=()):
    """Equal energy-weighted arclength spacing; points in ``fixed`` stay put."""
    coef = 1.0 + trunc.shift
    anchors = sorted({0, len(path) - 1, *fixed})
    out = list(path)
    e = np.asarray(energies)
    span = max(e.max() - e.min(), 1e-300)
    for a, b in zip(anchors[:-1], anchors[1:]):
        if b - a < 2:
            continue
        seg = path[a:b + 1]
        d = np.array([math.sqrt(max(forms.hs_inner(q - p, q - p, coef), 0.0)) for p, q in zip(seg[:-1], seg[1:])])
        wgt = 1.0 + (0.5 * (e[a:b] + e[a + 1:b + 1]) - e.min()) / span
        s = np.concatenate([[0.0], np.cumsum(d * wgt)])
        if s[-1] <= 0:
            continue
        s /= s[-1]
        targets = np.linspace(0, 1, b - a + 1)
        P = np.array(seg)
        for k in range(1, b - a):
            j = min(np.searchsorted(s, targets[k], side="right") - 1, len(seg) - 2)
            th = (targets[k] - s[j]) / max(s[j + 1] - s[j], 1e-300)
            out[a + k] = cone.project((1 - th) * P[j] + th * P[j + 1], forms.m)
    return out


def newton_polish(u, forms, trunc, tol: float = 1e-12, max_iter: int = 40):
    """Newton's method on (A_red + B) u - B f(u) = 0 with residual line search.

    Returns (u, residual, converged).  No cone constraint is imposed: the
    caller inspects the cone membership of the result.
    """
    u = np.asarray(u, float).copy()
    m, A = forms.m, forms.A_red
    res = residual(u, forms, trunc)
    for _ in range(max_iter):
        scale = max(1.0, hs_norm(u, forms, trunc))
        if res < tol * scale:
            break
        F = energy_gradient_euclid(u, forms, trunc)
        J = A + np.diag(m * (1 - trunc.fprime(u)))
        try:
            du = linalg.solve(J, -F, assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            return u, res, False
        lam = 1.0
        while lam > 1e-6:
            cand = u + lam * du
            r2 = residual(cand, forms, trunc)
            if r2 < res:
                break
            lam *= 0.5
        else:
            return u, res, False
        u, res = cand, r2
    return u, res, bool(res < 1e3 * tol * max(1.0, hs_norm(u, forms, trunc)))


def cone_residual(u, forms, trunc, cone: ConeSpec) -> float:
    """||u - P(T~(u))||: zero at critical points of E restricted to the cone."""
    return hs_norm(u - tilde_T(u, forms, trunc, cone), forms, trunc)


def _tangent(path, k, forms, coef):
    t = path[k + 1] - path[k - 1]
    nrm = math.sqrt(max(forms.hs_inner(t, t, coef), 0.0))
    return t / nrm if nrm > 0 else t


def mountain_pass(forms, trunc, cone: ConeSpec, v2, band: int = 0, n_points: int = 33,
                  tol: float = 1e-6, max_outer: int = 3000, step: float = 0.5,
                  climb_after: int = 10, climb_step: float = 0.2, polish_every: int = 25, strict: bool = True,
                  init: Optional[InitialPath] = None, alpha: Optional[float] = None) -> MinimaxResult:
    """Mountain-pass critical point via a climbing-image string method in the cone.

    The string stays in the cone throughout.  Every ``polish_every``
    iterations the climbing image seeds a Newton polish; the polished point
    is accepted when it is a critical point below E(u0) that differs from
    the constant fixed points.  Its cone defect (if any) is reported in
    ``cone_violation`` rather than hidden by a projection.
    """
    m = forms.m
    coef = 1.0 + trunc.shift
    u0, um, up = trunc.u0_list[band], trunc.u_minus[band], trunc.u_plus[band]
    if init is None:
        init = build_initial_path(forms, trunc, cone, v2, n_points, band, strict=strict, alpha=alpha)
    path = [p.copy() for p in init.points]
    K = len(path)
    E = lambda x: energy(x, forms, trunc)  # noqa: E731
    energies = np.array([E(p) for p in path])
    steps = np.full(K, step)
    max_viol = 0.0
    history = []
    best = None
    it = 0
    u_star = None
    constant_limit = False
    const_pts = [u0, um] + ([up] if math.isfinite(up) else [])

    def acceptable(u, r):
        nrm = max(1.0, hs_norm(u, forms, trunc))
        thresh = 10 * tol * nrm
        return (r < tol * nrm and E(u) < init.E_u0
                and all(np.abs(u - c).max() > thresh for c in const_pts)
                and u.max() - u.min() > thresh)

    climb_start = None
    const_hits = 0
    for it in range(1, max_outer + 1):
        kc = int(np.argmax(energies[1:-1])) + 1
        climbing = climb_start is not None
        # images below both end levels stay put: the energy is unbounded below
        floor = max(energies[0], energies[-1])
        for k in range(1, K - 1):
            if (climbing and k == kc) or energies[k] <= floor:
                continue
            info = {}
            Tu = tilde_T(path[k], forms, trunc, cone, info)
            max_viol = max(max_viol, info["violation"])
            st = flow_step(path[k], steps[k], forms, trunc, cone, Tu=Tu, E_u=energies[k])
            if st.accepted:
                path[k], energies[k] = st.u, st.energy
                steps[k] = min(step, 2 * st.step)
            else:
                steps[k] = step
        if climbing:
            p = path[kc]
            g = gradient(p, forms, trunc)
            tau_hat = _tangent(path, kc, forms, coef)
            gt = forms.hs_inner(g, tau_hat, coef)
            path[kc] = cone.project(p - climb_step * (g - 2 * gt * tau_hat), m)
            energies[kc] = E(path[kc])
        path = _reparametrize(path, forms, trunc, energies, cone, fixed=(kc,) if climbing else ())
        energies = np.array([E(p) for p in path])
        kc = int(np.argmax(energies[1:-1])) + 1
        rc = cone_residual(path[kc], forms, trunc, cone)
        history.append((it, float(energies[kc]), float(rc)))
        if best is None or rc < best[1]:
            best = (path[kc].copy(), rc)
        if not climbing:
            # climb once the string maximum has settled
            if it >= climb_after and (abs(history[-1][1] - history[-climb_after][1])
                                      < 1e-5 * max(1.0, abs(history[-1][1])) or it >= max_outer // 3):
                climb_start = it
            continue
        if (it - climb_start) % polish_every == 0:
            cand, r_pol, ok = newton_polish(path[kc], forms, trunc)
            if ok and acceptable(cand, r_pol):
                u_star = cand
                break
            if ok and cand.max() - cand.min() <= 10 * tol * max(1.0, hs_norm(cand, forms, trunc)):
                const_hits += 1
                if not strict and const_hits >= 3:
                    u_star, constant_limit = cand, True
                    break
    status = "converged"
    if constant_limit:
        status = "unresolved"
    elif u_star is None:
        if strict:
            raise NonConvergence(f"mountain pass did not converge in {max_outer} iterations",
                                 best=None if best is None else best[0])
        status = "no_convergence"
        u_star = best[0]
    res = residual(u_star, forms, trunc)
    nrm = hs_norm(u_star, forms, trunc)
    dist0 = float(np.abs(u_star - u0).max())
    osc = float(u_star.max() - u_star.min())
    certificate = bool(status == "converged" and acceptable(u_star, res))
    if status == "converged" and not certificate:
        status = "unresolved"
    return MinimaxResult(u_star, forms.radii.copy(), E(u_star), res, res / max(1.0, nrm), path,
                         np.array([E(p) for p in path]), it, init.t_minus, init.t_plus, init.tau_bar,
                         init.alpha, init.E_u0, init.E_u_minus, u0, um, up, cone, status, dist0, osc,
                         certificate, max_viol, cone.violation(u_star), float(u_star.min()),
                         float(cone_residual(path[kc], forms, trunc, cone)), history)


@dataclass
class MultiResult:
    results: list
    errors: dict
    interleaving_ok: bool
    distinct_ok: bool


def multi_solve(forms, trunc, orientation: str, v2, bands=None, **kw) -> MultiResult:
    """One mountain pass per admissible fixed point; failures are recorded per band."""
    bands = range(len(trunc.u0_list)) if bands is None else bands
    results, errors = [], {}
    for b in bands:
        cone = ConeSpec(orientation, trunc.u_minus[b], trunc.u_plus[b])
        try:
            results.append(mountain_pass(forms, trunc, cone, v2, band=b, **kw))
        except (GeometryFailure, NonConvergence) as exc:
            errors[b] = str(exc)
    inter, dist = True, True
    for r in results:
        inter &= bool(np.all(r.u_star >= r.u_minus) and np.all(r.u_star <= r.u_plus))
    for r1, r2 in zip(results[:-1], results[1:]):
        inter &= r1.u_plus <= r2.u_minus
        dist &= float(np.abs(r1.u_star - r2.u_star).max()) > r1.residual + r2.residual
    return MultiResult(results, errors, bool(inter), bool(dist))
