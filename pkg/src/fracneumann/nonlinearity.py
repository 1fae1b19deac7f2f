"""Nonlinearity f: hypothesis checks, fixed points, truncation and constants."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .kernel import ParameterError


class HypothesisFailure(RuntimeError):
    """A required structural hypothesis on f does not hold."""


class ConstructionError(RuntimeError):
    pass


class ExtrapolationError(ParameterError):
    pass


def critical_exponent(n: int, s: float) -> float:
    """Fractional Sobolev exponent 2n/(n - 2s), infinite when 2s >= n."""
    return 2 * n / (n - 2 * s) if 2 * s < n else math.inf


def default_ell(n: int, s: float) -> float:
    crit = critical_exponent(n, s)
    return 4.0 if math.isinf(crit) else min(4.0, (2 + crit) / 2)


class _Antiderivative:
    """F(t) = int_0^t f for a vectorized f.

    Cumulative 20-point Gauss-Legendre sums on cells of width ``h`` are
    tabulated (and extended on demand); a query adds the same rule on the
    partial cell, so every evaluation is fully vectorized.
    """

    def __init__(self, f, h: float = 1.0 / 16, t_max: float = 64.0):
        self.f, self.h = f, h
        x, w = np.polynomial.legendre.leggauss(20)
        self._x, self._w = 0.5 * (x + 1), 0.5 * w
        self._cum = np.zeros(1)
        self._extend(t_max)

    def _extend(self, t_max):
        n_old = self._cum.size - 1
        n_new = int(math.ceil(t_max / self.h))
        if n_new <= n_old:
            return
        a = self.h * np.arange(n_old, n_new)
        vals = np.asarray(self.f(a[:, None] + self.h * self._x[None, :]), float) @ self._w * self.h
        self._cum = np.concatenate([self._cum, self._cum[-1] + np.cumsum(vals)])

    def __call__(self, t):
        t = np.asarray(t, float)
        tt = np.maximum(t, 0.0)
        top = float(tt.max()) if tt.size else 0.0
        if top >= (self._cum.size - 1) * self.h:
            self._extend(2 * top + self.h)
        k = np.floor(tt / self.h).astype(int)
        a = k * self.h
        d = tt - a
        part = np.asarray(self.f(a[..., None] + d[..., None] * self._x), float) @ self._w * d
        return self._cum[k] + part


@dataclass
class NonlinearitySpec:
    f: Callable
    fprime: Callable
    F: Callable
    kind: str = "user"
    params: dict = field(default_factory=dict)
    domain_max: float = math.inf

    @classmethod
    def prototype(cls, q: float, r: float) -> "NonlinearitySpec":
        """f(t) = t^{q-1} - t^{r-1} with 2 <= r < q."""
        if not (2 <= r < q):
            raise ParameterError(f"prototype needs 2 <= r < q, got q={q}, r={r}")

        def f(t):
            t = np.maximum(np.asarray(t, float), 0.0)
            return t ** (q - 1) - t ** (r - 1)

        def fp(t):
            t = np.maximum(np.asarray(t, float), 0.0)
            # r = 2 gives the constant derivative 1 of t^{r-1}
            return (q - 1) * t ** (q - 2) - (r - 1) * t ** (r - 2)

        def F(t):
            t = np.maximum(np.asarray(t, float), 0.0)
            return t ** q / q - t ** r / r

        return cls(f, fp, F, "prototype", {"q": q, "r": r})

    @classmethod
    def from_callables(cls, f, fprime, F=None, name="user") -> "NonlinearitySpec":
        if F is None:
            F = _Antiderivative(f)
        return cls(lambda t: np.asarray(f(np.asarray(t, float)), float),
                   lambda t: np.asarray(fprime(np.asarray(t, float)), float),
                   F, "user", {"name": name})

    @classmethod
    def from_table(cls, t, fv, fpv=None) -> "NonlinearitySpec":
        """Piecewise-linear f from samples; evaluation outside the table is an error.

        The table must start at t = 0.  ``fpv`` (derivative column) is used
        for derivative queries at the nodes; between nodes the slope of the
        interpolant is returned.
        """
        t, fv = np.asarray(t, float), np.asarray(fv, float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ParameterError("table abscissae must be strictly increasing")
        if t[0] != 0.0:
            raise ParameterError("table must start at t = 0")
        slopes = np.diff(fv) / np.diff(t)
        cumF = np.concatenate([[0.0], np.cumsum(0.5 * (fv[1:] + fv[:-1]) * np.diff(t))])
        tmax = t[-1]
        fpn = None if fpv is None else np.asarray(fpv, float)

        def _guard(x):
            x = np.asarray(x, float)
            if np.any(x > tmax * (1 + 1e-12)):
                raise ExtrapolationError(f"t={np.max(x)} beyond table end {tmax}")
            return np.clip(x, 0.0, tmax)

        def f(x):
            return np.interp(_guard(x), t, fv)

        def fp(x):
            x = _guard(x)
            k = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
            out = slopes[k]
            if fpn is not None:
                at = np.isclose(x, t[k], rtol=0, atol=1e-14 * max(1.0, tmax))
                out = np.where(at, fpn[k], out)
            return out

        def F(x):
            x = _guard(x)
            k = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
            dx = x - t[k]
            return cumF[k] + fv[k] * dx + 0.5 * slopes[k] * dx * dx

        return cls(f, fp, F, "table", {"n_rows": int(t.size)}, domain_max=float(tmax))

    @classmethod
    def from_csv(cls, path) -> "NonlinearitySpec":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or not {"t", "f"} <= set(rows[0]):
            raise ParameterError(f"{path}: expected header t,f[,fprime]")
        t = [float(r["t"]) for r in rows]
        fv = [float(r["f"]) for r in rows]
        fpv = [float(r["fprime"]) for r in rows] if "fprime" in rows[0] else None
        spec = cls.from_table(t, fv, fpv)
        spec.params["path"] = str(path)
        return spec

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params}


# ---------------------------------------------------------------------------
# fixed points

@dataclass
class FixedPoints:
    roots: list            # all roots of f(t) - t found on the interval
    slopes: list           # f'(root) - 1
    u0_list: list
    u_minus: list
    u_plus: list           # math.inf when no fixed point lies above


def _scan_grid(T: float, n_lin: int = 20001) -> np.ndarray:
    g = np.concatenate([np.linspace(0.0, T, n_lin), np.geomspace(1e-8 * T, T, 2001)])
    return np.unique(g)


def fixed_points(spec: NonlinearitySpec, search_interval=(0.0, None)) -> FixedPoints:
    """All roots of f(t) = t on the interval, classified by f' - 1."""
    lo, hi = search_interval
    if hi is None:
        hi = min(spec.domain_max, 1e3)
    t = _scan_grid(hi)
    t = t[t >= lo]
    g = spec.f(t) - t
    if not np.all(np.isfinite(g)):
        raise ParameterError("nonlinearity not evaluable on the search interval")
    scale = 1e-13 * (1 + np.abs(t))
    zero = np.abs(g) <= scale
    if zero.mean() > 0.5:
        raise HypothesisFailure("f(t) - t vanishes on a set of positive measure: no isolated fixed point")
    roots = [float(x) for x in t[zero]]
    sgn = np.sign(np.where(zero, 0.0, g))
    for k in np.where(sgn[:-1] * sgn[1:] < 0)[0]:
        roots.append(optimize.brentq(lambda x: float(spec.f(x)) - x, t[k], t[k + 1],
                                     xtol=1e-14, rtol=4 * np.finfo(float).eps))
    roots = sorted(roots)
    merged = []
    for x in roots:
        if not merged or x - merged[-1] > 1e-10 * (1 + x):
            merged.append(x)
    slopes = [float(spec.fprime(x)) - 1 for x in merged]
    u0 = [x for x, sl in zip(merged, slopes) if x > 0 and sl > 0]
    if not u0:
        raise HypothesisFailure("no fixed point with f'(u0) > 1")
    um, up = [], []
    for x in u0:
        below = [y for y in merged if y < x]
        above = [y for y in merged if y > x]
        if not below:
            raise HypothesisFailure(f"no fixed point below u0={x}")
        um.append(below[-1])
        up.append(above[0] if above else math.inf)
    return FixedPoints(merged, slopes, u0, um, up)


# ---------------------------------------------------------------------------
# hypotheses

@dataclass
class HypothesisResult:
    name: str
    passed: bool
    required: bool
    witness: dict = field(default_factory=dict)
    note: str = ""


@dataclass
class HypothesisReport:
    results: dict
    fixed: Optional[FixedPoints]
    margins: list          # f'(u0) - lambda2_plus - 1 per admissible u0
    shift: float

    @property
    def passed(self) -> bool:
        req = [r for r in self.results.values() if r.required]
        f1 = self.results.get("f1")
        f1p = self.results.get("f1_prime")
        ok_f1 = (f1 is not None and f1.passed) or (f1p is not None and f1p.passed)
        others = all(r.passed for r in req if r.name not in ("f1", "f1_prime"))
        return ok_f1 and others

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "hypotheses": {k: {"passed": v.passed, "required": v.required,
                               "witness": v.witness, "note": v.note} for k, v in self.results.items()},
            "fixed_points": None if self.fixed is None else {
                "roots": self.fixed.roots, "u0": self.fixed.u0_list,
                "u_minus": self.fixed.u_minus,
                "u_plus": [None if math.isinf(x) else x for x in self.fixed.u_plus]},
            "f3_margins": self.margins,
            "shift": self.shift,
        }


def growth_witness(spec: NonlinearitySpec, T_scan: float):
    """(M, delta) with f(t) >= (1 + delta) t for sampled t >= M, or None."""
    t = _scan_grid(T_scan)
    tail = t[t >= T_scan / 2]
    L = float(np.min(spec.f(tail) / tail))
    if not L > 1:
        return None, L
    delta = min(0.5, (L - 1) / 2)
    bad = spec.f(t) < (1 + delta) * t
    if not bad.any():
        return (0.0, delta), L
    k = np.where(bad)[0][-1]
    M = optimize.brentq(lambda x: float(spec.f(x)) - (1 + delta) * x, t[k], t[k + 1], xtol=1e-14)
    # make sure the witness holds on the sampled grid
    while np.any(spec.f(t[t >= M]) < (1 + delta) * t[t >= M]):
        M = float(np.nextafter(M, np.inf) * (1 + 1e-12))
    return (float(M), float(delta)), L


def shift_constant(fprime, t_max: float) -> float:
    """c = max(0, -min f') on [0, t_max]: f + c t is nondecreasing there."""
    t = _scan_grid(t_max)
    fp = fprime(t)
    k = int(np.argmin(fp))
    lo, hi = t[max(k - 1, 0)], t[min(k + 1, t.size - 1)]
    best = float(fp[k])
    if hi > lo:
        res = optimize.minimize_scalar(lambda x: float(fprime(x)), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-14})
        best = min(best, float(res.fun))
    # a hair above the minimum keeps f + c t nondecreasing despite round-off
    return float(max(0.0, -best * (1 + 1e-10)))


def check_hypotheses(spec: NonlinearitySpec, lambda2_plus: float, T_scan: Optional[float] = None,
                     fixed: Optional[FixedPoints] = None) -> HypothesisReport:
    T = T_scan if T_scan is not None else min(spec.domain_max, 1e3)
    t = _scan_grid(T)
    try:
        fv, fpv = spec.f(t), spec.fprime(t)
    except Exception as exc:  # noqa: BLE001 - surfaced as a parameter error
        raise ParameterError(f"nonlinearity not evaluable on [0, {T}]: {exc}") from exc
    if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(fpv))):
        raise ParameterError("nonlinearity not finite on the scan interval")
    res = {}
    f0 = float(spec.f(0.0))
    fp0 = float(spec.fprime(0.0))
    res["f0"] = HypothesisResult("f0", bool(fv.min() >= 0 and fpv.min() >= 0), False,
                                 {"min_f": float(fv.min()), "min_fprime": float(fpv.min())},
                                 "restored by a linear shift when it fails")
    res["f1"] = HypothesisResult("f1", bool(f0 == 0 and fp0 < 1), True, {"f(0)": f0, "f'(0)": fp0})
    # (f1'): f(t) < t on (0, tbar)
    above = np.where((fv >= t) & (t > 0))[0]
    tbar = float(t[above[0]]) if above.size else float(T)
    small = t[(t > 0) & (t < tbar)]
    f1p_ok = f0 == 0 and fp0 <= 1 and small.size > 0 and bool(np.all(spec.f(small) < small))
    res["f1_prime"] = HypothesisResult("f1_prime", bool(f1p_ok), True, {"tbar": tbar})
    wit, L = growth_witness(spec, T)
    res["f2"] = HypothesisResult("f2", wit is not None, True,
                                 {"M": None if wit is None else wit[0],
                                  "delta": None if wit is None else wit[1],
                                  "tail_min_ratio": L})
    margins = []
    if fixed is None:
        try:
            fixed = fixed_points(spec, (0.0, T))
        except HypothesisFailure as exc:
            res["f3"] = HypothesisResult("f3", False, True, {}, str(exc))
            return HypothesisReport(res, None, [], shift_constant(spec.fprime, T))
    for u0 in fixed.u0_list:
        margins.append(float(spec.fprime(u0)) - lambda2_plus - 1)
    res["f3"] = HypothesisResult("f3", any(mg > 0 for mg in margins), True,
                                 {"lambda2_plus": lambda2_plus,
                                  "fprime_u0": [float(spec.fprime(u)) for u in fixed.u0_list]})
    return HypothesisReport(res, fixed, margins, shift_constant(spec.fprime, T))


# ---------------------------------------------------------------------------
# truncation

def apriori_constants(M: float, delta: float, omega_measure: float, C_emb: float):
    """K1 = M |Omega| (1 + 1/delta), K_inf = C^2 K1, K2 = C K1."""
    K1 = M * omega_measure * (1 + 1 / delta)
    return K1, C_emb ** 2 * K1, C_emb * K1


@dataclass
class TruncatedNonlinearity:
    base: NonlinearitySpec
    ell: float
    t_star: float
    t_blend: float
    d0: float
    d1: float
    C_tail: float
    F_star: float
    F_blend: float
    M: float
    delta: float
    u0_list: list
    u_minus: list
    u_plus: list
    shift: float = 0.0
    K1: float = math.nan
    K_inf: float = math.nan
    K2: float = math.nan
    mu: float = math.nan
    T0: float = math.nan
    retries: int = 0

    def f(self, t):
        t = np.asarray(t, float)
        ts, tb, L = self.t_star, self.t_blend, self.t_blend - self.t_star
        x = np.clip(t - ts, 0.0, L)
        f_in = self.base.f(np.clip(t, 0.0, ts))
        f_bl = self.base_fstar + self.d0 * x + (self.d1 - self.d0) * x * x / (2 * L)
        f_out = np.maximum(t, tb) ** (self.ell - 1) + self.C_tail
        out = np.where(t <= ts, f_in, np.where(t <= tb, f_bl, f_out))
        # linear continuation below zero keeps f smooth for stray negative input
        neg = t < 0
        if np.any(neg):
            out = np.where(neg, self.base_fprime0 * t, out)
        return out

    def fprime(self, t):
        t = np.asarray(t, float)
        ts, tb, L = self.t_star, self.t_blend, self.t_blend - self.t_star
        x = np.clip(t - ts, 0.0, L)
        out = np.where(t <= ts, self.base.fprime(np.clip(t, 0.0, ts)),
                       np.where(t <= tb, self.d0 + (self.d1 - self.d0) * x / L,
                                (self.ell - 1) * np.maximum(t, tb) ** (self.ell - 2)))
        return np.where(t < 0, self.base_fprime0, out)

    def F(self, t):
        t = np.asarray(t, float)
        ts, tb, L = self.t_star, self.t_blend, self.t_blend - self.t_star
        x = np.clip(t - ts, 0.0, L)
        F_in = self.base.F(np.clip(t, 0.0, ts))
        F_bl = self.F_star + self.base_fstar * x + self.d0 * x * x / 2 + (self.d1 - self.d0) * x ** 3 / (6 * L)
        tt = np.maximum(t, tb)
        F_out = self.F_blend + (tt ** self.ell - tb ** self.ell) / self.ell + self.C_tail * (tt - tb)
        out = np.where(t <= ts, F_in, np.where(t <= tb, F_bl, F_out))
        return np.where(t < 0, 0.5 * self.base_fprime0 * t * t, out)

    # shifted nonlinearity g = f + c t used by the solution operator
    def g(self, t):
        return self.f(t) + self.shift * np.asarray(t, float)

    def gprime(self, t):
        return self.fprime(t) + self.shift

    @property
    def base_fstar(self) -> float:
        return float(self.base.f(self.t_star))

    @property
    def base_fprime0(self) -> float:
        return float(self.base.fprime(0.0))

    def constant_energy(self, t, measure: float):
        """E(t * 1) = |Omega| (t^2/2 - F(t))."""
        t = np.asarray(t, float)
        return measure * (0.5 * t * t - self.F(t))

    def to_dict(self) -> dict:
        inf = lambda x: None if math.isinf(x) else x  # noqa: E731
        return {"ell": self.ell, "t_star": self.t_star, "t_blend": self.t_blend,
                "M": self.M, "delta": self.delta, "u0": self.u0_list,
                "u_minus": self.u_minus, "u_plus": [inf(x) for x in self.u_plus],
                "shift": self.shift, "K1": self.K1, "K_inf": self.K_inf, "K2": self.K2,
                "mu": self.mu, "T0": self.T0, "retries": self.retries}


def _build(spec, ell, t_star):
    tb = 2 * t_star
    L = tb - t_star
    fs = float(spec.f(t_star))
    d0 = float(spec.fprime(t_star))
    d1 = (ell - 1) * tb ** (ell - 2)
    f_tb = fs + 0.5 * (d0 + d1) * L
    C = f_tb - tb ** (ell - 1)
    Fs = float(spec.F(t_star))
    Fb = Fs + fs * L + d0 * L * L / 2 + (d1 - d0) * L * L / 6
    return t_star, tb, d0, d1, C, Fs, Fb


def truncate(spec: NonlinearitySpec, K_inf: float, ell: Optional[float], s: float, n: int,
             fixed: Optional[FixedPoints] = None, M: Optional[float] = None,
             delta: Optional[float] = None, margin: float = 0.05, max_retries: int = 5,
             T_scan: Optional[float] = None) -> TruncatedNonlinearity:
    """Subcritical C^1 modification of f above max(K_inf, u0, M)."""
    crit = critical_exponent(n, s)
    ell = default_ell(n, s) if ell is None else float(ell)
    if not (2 < ell < crit):
        raise ParameterError(f"ell={ell} must lie in (2, {crit})")
    if not K_inf > 0:
        raise ParameterError("K_inf must be positive")
    T = T_scan if T_scan is not None else min(spec.domain_max, 1e3)
    if fixed is None:
        fixed = fixed_points(spec, (0.0, T))
    if M is None or delta is None:
        wit, _ = growth_witness(spec, T)
        if wit is None:
            raise HypothesisFailure("(f2) fails: no (M, delta) witness")
        M, delta = wit
    t_star = (1 + margin) * max(K_inf, max(fixed.u0_list), M)
    for attempt in range(max_retries + 1):
        if t_star > spec.domain_max:
            raise ConstructionError(f"matching point {t_star} beyond the nonlinearity's domain")
        pieces = _build(spec, ell, t_star)
        tr = TruncatedNonlinearity(spec, ell, *pieces, M=M, delta=delta, u0_list=list(fixed.u0_list),
                                   u_minus=list(fixed.u_minus), u_plus=list(fixed.u_plus),
                                   retries=attempt)
        tr.shift = shift_constant(tr.fprime, 4 * tr.t_blend)
        if _truncation_ok(tr):
            mu, T0 = ar_constants(tr)
            tr.mu, tr.T0 = mu, T0
            return tr
        t_star *= 2
    raise ConstructionError("truncation violates the growth class after retries")


def _truncation_ok(tr: TruncatedNonlinearity) -> bool:
    if tr.d0 < 0:
        return False
    t = np.concatenate([np.linspace(0, 4 * tr.t_blend, 40001), np.geomspace(tr.t_blend, 1e6 * tr.t_blend, 2001)])
    t.sort()
    ft = tr.f(t)
    big = t >= tr.M
    if np.any(ft[big] < (1 + tr.delta) * t[big]):
        return False
    g = tr.g(t)
    return bool(np.all(g >= -1e-12 * (1 + np.abs(g))) and np.all(np.diff(g) >= -1e-12 * (1 + np.abs(g[1:]))))


def ar_holds(tr: TruncatedNonlinearity, mu: float, T0: float, n_samples: int = 100_000) -> bool:
    t = np.geomspace(T0, 1e6 * T0, n_samples)
    return bool(np.all(tr.f(t) * t - mu * tr.F(t) >= 0))


def ar_constants(tr: TruncatedNonlinearity):
    """(mu, T0) with f(t) t >= mu F(t) for sampled t >= T0."""
    mu = (2 + tr.ell) / 2
    for _ in range(30):
        grid = np.geomspace(1e-6, 1e7 * tr.t_blend, 20001)
        h = tr.f(grid) * grid - mu * tr.F(grid)
        bad = np.where(h < 0)[0]
        T0 = float(grid[0] if bad.size == 0 else grid[min(bad[-1] + 1, grid.size - 1)])
        for _ in range(10):
            t = np.geomspace(T0, 1e6 * T0, 100_000)
            hv = tr.f(t) * t - mu * tr.F(t)
            neg = np.where(hv < 0)[0]
            if neg.size == 0:
                return mu, T0
            T0 = float(t[min(neg[-1] + 1, t.size - 1)])
        mu = (2 + mu) / 2
    raise ConstructionError("no Ambrosetti-Rabinowitz pair found")
