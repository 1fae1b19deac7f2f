"""Radial reduction of the kernel |x - y|^{-n-2s} and element-pair quadrature.

The weight entering the radial double integrals is

    W(r, rho) = c_{n,s} * |S^{n-1}| * (r rho)^{n-1} * K(r, rho),

where K is the angular average of the kernel over the unit sphere.  For
n = 1 and n = 3 the weight splits exactly as

    W = alpha(r, rho) * (|r - rho|^{-q} + beta * (r + rho)^{-q}),   q = 1 + 2s,

with a smooth coefficient alpha, which is what the singular quadrature uses.
For other dimensions alpha = W * |r - rho|^q is evaluated through the
hypergeometric representation and no regular remainder is split off.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special


class ParameterError(ValueError):
    """Raised when a parameter lies outside its admissible domain."""


class SingularityError(ValueError):
    """Raised when the kernel is evaluated on the diagonal r = rho."""


class MeshIntegrityError(ValueError):
    """Raised when two elements overlap without being identical."""


def _check_order(s: float) -> None:
    if not (0.5 < s < 1.0):
        raise ParameterError(f"fractional order s={s} must lie in (1/2, 1)")


def _check_dim(n: int) -> None:
    if int(n) != n or n < 1:
        raise ParameterError(f"dimension n={n} must be a positive integer")


def normalization_constant(n: int, s: float) -> float:
    """Standard constant making (-Delta)^s the Fourier multiplier |xi|^{2s}."""
    _check_dim(n)
    _check_order(s)
    lg = (special.gammaln((n + 2 * s) / 2) - special.gammaln(1 - s)
          - 0.5 * n * np.log(np.pi) + 2 * s * np.log(2.0))
    return float(s * np.exp(lg))


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} (equals 2 for n = 1)."""
    return float(2 * np.pi ** (n / 2) / special.gamma(n / 2))


@dataclass(frozen=True)
class KernelParams:
    n: int
    s: float
    c_ns: float

    def __post_init__(self):
        _check_dim(self.n)
        _check_order(self.s)
        if not (np.isfinite(self.c_ns) and self.c_ns > 0):
            raise ParameterError("normalization constant must be positive and finite")

    @classmethod
    def standard(cls, n: int, s: float, scale: float = 1.0) -> "KernelParams":
        return cls(int(n), float(s), scale * normalization_constant(n, s))

    @property
    def p(self) -> float:
        return self.n + 2 * self.s

    @property
    def q(self) -> float:
        """Exponent of the diagonal singularity of the radial kernel."""
        return 1 + 2 * self.s

    @property
    def omega(self) -> float:
        return sphere_area(self.n)


# ---------------------------------------------------------------------------
# angular kernel

def _angular_closed(r, rho, d, n, s):
    q = 1 + 2 * s
    sig = r + rho
    if n == 1:
        return d ** -q + sig ** -q
    if n == 3:
        return 2 * np.pi * (d ** -q - sig ** -q) / (q * r * rho)
    raise ValueError("closed form available only for n in {1, 3}")


def _angular_hyp(r, rho, n, s):
    big = np.maximum(r, rho)
    t = np.minimum(r, rho) / big
    return sphere_area(n) * big ** -(n + 2 * s) * special.hyp2f1(n / 2 + s, 1 + s, n / 2, t * t)


def _angular_quad(r, rho, n, s):
    if n == 1:
        return abs(r - rho) ** -(1 + 2 * s) + (r + rho) ** -(1 + 2 * s)
    p = n + 2 * s
    a, b = r * r + rho * rho, 2 * r * rho

    def f(th):
        # r^2 + rho^2 - 2 r rho cos(th), written to avoid cancellation near th = 0
        base = (r - rho) ** 2 + 2 * b * np.sin(th / 2) ** 2
        return base ** (-p / 2) * np.sin(th) ** (n - 2)

    del a
    # breakpoints resolve the peak of width ~|r - rho|/sqrt(r rho) at th = 0
    w = abs(r - rho) / np.sqrt(r * rho)
    pts = sorted({min(np.pi / 2, w * k) for k in (1.0, 10.0, 100.0)})
    val, _ = integrate.quad(f, 0.0, np.pi, points=pts, epsabs=0.0, epsrel=1e-12, limit=400)
    return sphere_area(n - 1) * val


def angular_kernel(r, rho, params: KernelParams, method: str = "auto"):
    """K(r, rho): integral of |r e1 - rho w|^{-(n+2s)} over the unit sphere.

    ``method`` is ``"closed"`` (n in {1, 3}), ``"hyp2f1"``, ``"quad"`` (adaptive
    angular quadrature, scalar only) or ``"auto"``.
    """
    n, s = params.n, params.s
    r_arr, rho_arr = np.asarray(r, float), np.asarray(rho, float)
    if np.any(r_arr <= 0) or np.any(rho_arr <= 0):
        raise ParameterError("radii must be positive")
    if np.any(r_arr == rho_arr):
        raise SingularityError("angular kernel is singular on the diagonal r = rho")
    if method == "auto":
        method = "closed" if n in (1, 3) else "hyp2f1"
    if method == "closed":
        out = _angular_closed(r_arr, rho_arr, np.abs(r_arr - rho_arr), n, s)
    elif method == "hyp2f1":
        out = _angular_hyp(r_arr, rho_arr, n, s)
    elif method == "quad":
        out = np.vectorize(lambda a, b: _angular_quad(float(a), float(b), n, s))(r_arr, rho_arr)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return out[()] if np.ndim(out) == 0 else out


class RadialKernel:
    """Radial weight W and its split into singular and regular parts."""

    def __init__(self, params: KernelParams):
        self.params = params
        self.n, self.s, self.q = params.n, params.s, params.q
        self.c = params.c_ns
        if self.n == 1:
            self._beta = 1.0
        elif self.n == 3:
            self._beta = -1.0
        else:
            self._beta = 0.0
        self.has_split = self.n in (1, 3)

    def weight(self, r, rho, d=None):
        """Full weight W(r, rho); pass d = |r - rho| when it is known exactly."""
        r, rho = np.asarray(r, float), np.asarray(rho, float)
        if d is None:
            d = np.abs(r - rho)
        n, s = self.n, self.s
        pref = self.c * sphere_area(n)
        if n == 1:
            return pref * _angular_closed(r, rho, d, 1, s)
        if n == 3:
            return pref * (r * rho) ** 2 * _angular_closed(r, rho, d, 3, s)
        return pref * (r * rho) ** (n - 1) * _angular_hyp(r, rho, n, s)

    def alpha(self, r, rho, d=None):
        """Coefficient of |r - rho|^{-q}: smooth for n in {1, 3}."""
        r, rho = np.asarray(r, float), np.asarray(rho, float)
        if self.n == 1:
            return np.full(np.broadcast(r, rho).shape, 2 * self.c)
        if self.n == 3:
            return (8 * np.pi ** 2 * self.c / self.q) * r * rho
        if d is None:
            d = np.abs(r - rho)
        return self.weight(r, rho, d) * d ** self.q

    def regular(self, r, rho):
        """Smooth remainder W - alpha * |r - rho|^{-q} (zero without a split)."""
        r, rho = np.asarray(r, float), np.asarray(rho, float)
        if not self.has_split:
            return np.zeros(np.broadcast(r, rho).shape)
        return self._beta * self.alpha(r, rho) * (r + rho) ** -self.q

    def diagonal_constant(self) -> float:
        """A_n with K ~ A_n (r rho)^{(1-n)/2} |r - rho|^{-q} near the diagonal."""
        n, s = self.n, self.s
        return float(np.pi ** ((n - 1) / 2) * special.gamma((1 + 2 * s) / 2)
                     / special.gamma((n + 2 * s) / 2))


# ---------------------------------------------------------------------------
# quadrature rules on [0, 1]

@lru_cache(maxsize=None)
def gauss_legendre(m: int):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1), 0.5 * w


@lru_cache(maxsize=None)
def gauss_jacobi(m: int, beta: float):
    """Nodes and weights for int_0^1 t^beta f(t) dt."""
    x, w = special.roots_jacobi(m, 0.0, beta)
    return 0.5 * (x + 1), w * 2.0 ** (-1 - beta)


# ---------------------------------------------------------------------------
# element pair integrals

@dataclass(frozen=True)
class Element:
    a: float
    b: float
    nodes: tuple  # global indices of the left and right node

    @property
    def h(self) -> float:
        return self.b - self.a


@dataclass(frozen=True)
class QuadratureOrders:
    jacobi: int = 18
    legendre: int = 18
    far_min: int = 4
    far_max: int = 20
    split_ratio: float = 0.5
    target_digits: float = 15.0


def _identical_block(e: Element, ker: RadialKernel, qo: QuadratureOrders):
    """J = int_e int_e (r - rho)^2 W; the 2x2 block is J/h^2 [[1,-1],[-1,1]]."""
    a, h, q = e.a, e.h, ker.q
    if a == 0.0:
        J = _origin_integral(h, ker, qo)
    else:
        t, wt = gauss_jacobi(qo.jacobi, 2 - q)
        z, wz = gauss_legendre(qo.legendre)
        T, Z = np.meshgrid(t, z, indexing="ij")
        r = a + h * ((1 - T) * Z + T)
        rho = a + h * (1 - T) * Z
        al = ker.alpha(r, rho, h * T)
        J = 2 * h ** (4 - q) * np.einsum("i,j,ij->", wt, wz, (1 - T) * al)
        if ker.has_split:
            x, wx = gauss_legendre(qo.legendre)
            X, Y = np.meshgrid(a + h * x, a + h * x, indexing="ij")
            J += h * h * np.einsum("i,j,ij->", wx, wx, (X - Y) ** 2 * ker.regular(X, Y))
    return J


def _origin_integral(h: float, ker: RadialKernel, qo: QuadratureOrders) -> float:
    """int_0^h int_0^h (r - rho)^2 W by homogeneity of degree n - 2 - 2s of W."""
    D = ker.n - 2 * ker.s  # degree of (r - rho)^2 W
    fac = 2 * h ** (D + 2) / (D + 2)
    # int_0^1 (1 - z)^2 W(1, z) dz, with w = 1 - z
    w, ww = gauss_jacobi(qo.jacobi, 2 - ker.q)
    val = np.dot(ww, ker.alpha(1.0, 1.0 - w, w))
    if ker.has_split:
        z, wz = gauss_legendre(qo.legendre)
        val += np.dot(wz, (1 - z) ** 2 * ker.regular(1.0, z))
    return fac * val


def _touching_block(e: Element, f: Element, ker: RadialKernel, qo: QuadratureOrders):
    """3x3 block on [e.left, P, f.right] for e = [a, P], f = [P, d]."""
    he, hf, P, q = e.h, f.h, e.b, ker.q
    t, wt = gauss_jacobi(qo.jacobi, 3 - q)
    z, wz = gauss_legendre(qo.legendre)
    T, Z = np.meshgrid(t, z, indexing="ij")
    W2 = np.outer(wt, wz)
    blk = np.zeros((3, 3))
    # triangle xi >= eta: xi = t, eta = t z ; triangle eta > xi: eta = t, xi = t z
    for xi_u, eta_u, dist in ((np.ones_like(Z), Z, he + hf * Z), (Z, np.ones_like(Z), he * Z + hf)):
        r = P - he * T * xi_u
        rho = P + hf * T * eta_u
        al = ker.alpha(r, rho, T * dist)
        psi = np.stack([xi_u, eta_u - xi_u, -eta_u])
        g = W2 * al * dist ** -q
        blk += np.einsum("aij,bij,ij->ab", psi, psi, g)
    blk *= he * hf
    if ker.has_split:
        x, wx = gauss_legendre(qo.legendre)
        XI, ETA = np.meshgrid(x, x, indexing="ij")
        reg = ker.regular(P - he * XI, P + hf * ETA)
        psi = np.stack([XI, ETA - XI, -ETA])
        blk += he * hf * np.einsum("aij,bij,ij,i,j->ab", psi, psi, reg, wx, wx)
    return blk


def _far_order(gap: float, h: float, qo: QuadratureOrders) -> int:
    delta = 2 * gap / h
    rho_b = 1 + delta + np.sqrt(delta * delta + 2 * delta)
    m = int(np.ceil(qo.target_digits * np.log(10) / (2 * np.log(rho_b)))) + 1
    return int(np.clip(m, qo.far_min, qo.far_max))


def _separated_pieces(ra, rb, sa, sb, qo):
    """Split [ra,rb] x [sa,sb] until the gap is at least split_ratio * size."""
    gap = max(sa - rb, ra - sb)
    hr, hs = rb - ra, sb - sa
    if gap >= qo.split_ratio * max(hr, hs):
        return [(ra, rb, sa, sb, gap)]
    if hr >= hs:
        m = 0.5 * (ra + rb)
        return _separated_pieces(ra, m, sa, sb, qo) + _separated_pieces(m, rb, sa, sb, qo)
    m = 0.5 * (sa + sb)
    return _separated_pieces(ra, rb, sa, m, qo) + _separated_pieces(ra, rb, m, sb, qo)


def _separated_block(e: Element, f: Element, ker: RadialKernel, qo: QuadratureOrders):
    """4x4 block on [e.left, e.right, f.left, f.right]."""
    blk = np.zeros((4, 4))
    for ra, rb, sa, sb, gap in _separated_pieces(e.a, e.b, f.a, f.b, qo):
        m = _far_order(gap, max(rb - ra, sb - sa), qo)
        x, w = gauss_legendre(m)
        r = ra + (rb - ra) * x
        rho = sa + (sb - sa) * x
        R, RHO = np.meshgrid(r, rho, indexing="ij")
        Wt = ker.weight(R, RHO) * np.outer(w, w) * (rb - ra) * (sb - sa)
        pr = np.stack([(e.b - r) / e.h, (r - e.a) / e.h])
        ps = np.stack([(f.b - rho) / f.h, (rho - f.a) / f.h])
        blk[:2, :2] += np.einsum("ai,bi,ij->ab", pr, pr, Wt)
        blk[2:, 2:] += np.einsum("aj,bj,ij->ab", ps, ps, Wt)
        cross = -np.einsum("ai,bj,ij->ab", pr, ps, Wt)
        blk[:2, 2:] += cross
        blk[2:, :2] += cross.T
    return blk


def element_pair_integral(e: Element, f: Element, ker: RadialKernel,
                          qo: QuadratureOrders = QuadratureOrders()):
    """Difference-form block for the element pair (e, f).

    Returns ``(nodes, block)`` where ``block[i, j]`` is the integral over
    e x f of psi_i psi_j W with psi the local basis of u(r) - u(rho).  The
    block annihilates constants.  ``nodes`` lists global node indices.
    """
    if e.a == f.a and e.b == f.b:
        J = _identical_block(e, ker, qo) / e.h ** 2
        return e.nodes, J * np.array([[1.0, -1.0], [-1.0, 1.0]])
    if e.b == f.a:
        return (e.nodes[0], e.nodes[1], f.nodes[1]), _touching_block(e, f, ker, qo)
    if f.b == e.a:
        nodes, blk = (f.nodes[0], f.nodes[1], e.nodes[1]), _touching_block(f, e, ker, qo)
        return nodes, blk
    if e.b < f.a or f.b < e.a:
        return (e.nodes[0], e.nodes[1], f.nodes[0], f.nodes[1]), _separated_block(e, f, ker, qo)
    raise MeshIntegrityError(f"elements [{e.a}, {e.b}] and [{f.a}, {f.b}] overlap")


def tail_weight(r, R_ext: float, ker: RadialKernel, m: int = 24):
    """tau(r) = int_{R_ext}^inf W(r, rho) d rho via rho = R_ext / xi."""
    xi, w = gauss_jacobi(m, 2 * ker.s - 1)
    r = np.atleast_1d(np.asarray(r, float))
    rho = R_ext / xi
    vals = ker.weight(r[:, None], rho[None, :]) * R_ext * xi[None, :] ** (-1 - 2 * ker.s)
    return vals @ w
