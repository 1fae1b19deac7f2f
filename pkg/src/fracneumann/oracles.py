"""Brute-force reference computations for tiny instances.

These deliberately avoid the machinery used by the production code: the
double integrals use iterated composite Gauss-Legendre rules on geometrically
graded pieces against the full weight W (no singular/regular split, no
Duffy transform), the far-field tail uses adaptive ``scipy.integrate.quad``,
eigenproblems use the generalized dense solver, the cone-constrained
eigenvalue enumerates all pooling patterns and the isotonic projection
enumerates all partitions into consecutive blocks.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy import integrate, linalg

from .kernel import RadialKernel

_SIGMA = 0.15
_NG = 20


def _gl(m=_NG):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1), 0.5 * w


def _graded_rule(length: float, layers: int, m=_NG):
    """Composite rule on [0, length] graded geometrically toward 0.

    Returns offsets from 0 (exact, no cancellation) and weights.  The
    piece [0, sigma^layers * length] is dropped.
    """
    x, w = _gl(m)
    pts, wts = [], []
    hi = length
    for _ in range(layers):
        lo = hi * _SIGMA
        pts.append(lo + (hi - lo) * x)
        wts.append((hi - lo) * w)
        hi = lo
    return np.concatenate(pts), np.concatenate(wts)


def _layers(exponent: float, digits: float = 15.0) -> int:
    # neglected piece contributes ~ eps^exponent
    return int(np.ceil(digits * np.log(10) / (exponent * np.log(1 / _SIGMA)))) + 1


def _pair_points(e, f, ker: RadialKernel):
    """Quadrature points (r, rho, d, weight, psi) covering e x f.

    ``psi`` holds u(r) - u(rho) for each hat supported on e or f, in
    ascending node order, computed from exact offsets (no cancellation).
    """
    (a, b), (c, d_) = e, f
    q = ker.q
    if (a, b) == (c, d_):
        # region rho < r doubled; inner offset delta = r - rho graded toward 0
        h = b - a
        rs, rw = _graded_rule(h, _layers(1.0))  # offsets from a
        R, RHO, D, Wt = [], [], [], []
        for r_off, wr in zip(rs, rw):
            ds, dw = _graded_rule(r_off, _layers(3.0 - q))
            R.append(np.full(ds.size, a + r_off))
            RHO.append(a + r_off - ds)
            D.append(ds)
            Wt.append(2 * wr * dw)
        R, RHO, D, Wt = (np.concatenate(v) for v in (R, RHO, D, Wt))
        return R, RHO, D, Wt, np.array([-D / h, D / h])
    if b == c or d_ == a:
        if d_ == a:
            (a, b), (c, d_) = (c, d_), (a, b)
            swap = True
        else:
            swap = False
        P = b
        xs, xw = _graded_rule(b - a, _layers(1.0))  # x = P - r
        R, RHO, D, Wt, X, Y = [], [], [], [], [], []
        x1, w1 = _gl()
        for x, wx in zip(xs, xw):
            # inner y = rho - P on [0, d - P] graded around scale x
            L = d_ - P
            pieces = [(0.0, min(x, L))]
            lo = x
            while lo < L:
                hi = min(lo / _SIGMA, L)
                pieces.append((lo, hi))
                lo = hi
            ys = np.concatenate([lo + (hi - lo) * x1 for lo, hi in pieces])
            yw = np.concatenate([(hi - lo) * w1 for lo, hi in pieces])
            R.append(np.full(ys.size, P - x))
            RHO.append(P + ys)
            D.append(x + ys)
            Wt.append(wx * yw)
            X.append(np.full(ys.size, x))
            Y.append(ys)
        R, RHO, D, Wt, X, Y = (np.concatenate(v) for v in (R, RHO, D, Wt, X, Y))
        he, hf = b - a, d_ - P
        # u(P - x) - u(P + y) for hats at a, P, d
        psi = np.array([X / he, Y / hf - X / he, -Y / hf])
        if swap:
            return RHO, R, D, Wt, -psi
        return R, RHO, D, Wt, psi
    # separated: 2 x 2 subsquares, 40 points each direction
    x, w = _gl(40)
    R, RHO, Wt = [], [], []
    for (r0, r1) in ((a, 0.5 * (a + b)), (0.5 * (a + b), b)):
        for (s0, s1) in ((c, 0.5 * (c + d_)), (0.5 * (c + d_), d_)):
            rr, ss = np.meshgrid(r0 + (r1 - r0) * x, s0 + (s1 - s0) * x, indexing="ij")
            R.append(rr.ravel())
            RHO.append(ss.ravel())
            Wt.append(np.outer(w * (r1 - r0), w * (s1 - s0)).ravel())
    R, RHO, Wt = (np.concatenate(v) for v in (R, RHO, Wt))
    pr = [(b - R) / (b - a), (R - a) / (b - a)]
    ps = [-(d_ - RHO) / (d_ - c), -(RHO - c) / (d_ - c)]
    psi = np.array(pr + ps) if b < c else np.array(ps + pr)
    return R, RHO, np.abs(R - RHO), Wt, psi


def oracle_full_matrix(grid, ker: RadialKernel):
    """Full difference form over the global unknowns, including far field.

    Uses ``grid.all_nodes``, ``grid.is_interior_element`` and
    ``grid.R_ext`` only.
    """
    nodes = grid.all_nodes
    nn = len(nodes)
    N = nn + 1  # last unknown: far-field value
    A = np.zeros((N, N))
    elems = [(nodes[i], nodes[i + 1]) for i in range(nn - 1)]
    interior = grid.is_interior_element
    for i, e in enumerate(elems):
        for j, f in enumerate(elems):
            # ordered pairs with the first element interior; I x I counted once
            if not interior[i] or (interior[j] and j < i):
                continue
            fac = 0.5 if i == j else 1.0
            r, rho, d, wt, psi = _pair_points(e, f, ker)
            W = ker.weight(r, rho, d) * wt * fac
            ids = sorted({i, i + 1, j, j + 1})
            A[np.ix_(ids, ids)] += (psi * W) @ psi.T
    # tail: int_I (u - w_inf)(v - z_inf) tau(r) dr with tau by adaptive quad
    x, w = _gl(20)
    for i, (a, b) in enumerate(elems):
        if not interior[i]:
            continue
        r = a + (b - a) * x
        tau = np.array([integrate.quad(lambda rho, rr=rr: float(ker.weight(rr, rho)),
                                       grid.R_ext, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
                        for rr in r])
        ids = [i, i + 1, N - 1]
        psi = np.array([(b - r) / (b - a), (r - a) / (b - a), -np.ones_like(r)])
        A[np.ix_(ids, ids)] += (psi * tau * w * (b - a)) @ psi.T
    return A


def oracle_reduced(grid, ker: RadialKernel):
    """Schur complement of the oracle full form onto interior unknowns."""
    A = oracle_full_matrix(grid, ker)
    nn = len(grid.all_nodes)
    I = np.asarray(grid.interior_index)
    E = np.setdiff1d(np.arange(nn + 1), I)
    S = A[np.ix_(I, I)] - A[np.ix_(I, E)] @ np.linalg.solve(A[np.ix_(E, E)], A[np.ix_(E, I)])
    return 0.5 * (S + S.T), A


def oracle_eigs(A, m):
    """Dense generalized symmetric eigensolve with a diagonal mass."""
    lam, V = linalg.eigh(A, np.diag(m))
    return lam, V


def brute_force_isotonic(y, w, increasing=True):
    """Weighted isotonic regression by enumeration of consecutive partitions."""
    y, w = np.asarray(y, float), np.asarray(w, float)
    if not increasing:
        return brute_force_isotonic(y[::-1], w[::-1])[::-1]
    n = y.size
    best, best_val = None, np.inf
    for cuts in itertools.product((0, 1), repeat=n - 1):
        bounds = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        means = [np.dot(w[i:j], y[i:j]) / w[i:j].sum() for i, j in zip(bounds[:-1], bounds[1:])]
        if any(m1 > m2 for m1, m2 in zip(means[:-1], means[1:])):
            continue
        x = np.concatenate([np.full(j - i, mu) for (i, j), mu in zip(zip(bounds[:-1], bounds[1:]), means)])
        val = np.dot(w, (x - y) ** 2)
        if best is None or val < best_val - 1e-15 * max(1.0, best_val):
            best, best_val = x, val
    return best


def brute_force_lambda2_plus(A, m, tol=1e-12):
    """Minimum over pooling patterns of the second reduced eigenvalue.

    Every pattern pools consecutive coordinates into blocks; on the pooled
    subspace the constrained problem is an ordinary eigenproblem whose
    second eigenvector (the first is the constant) is admissible when it
    is monotone (either sign).
    """
    n = len(m)
    best = np.inf
    best_v = None
    for cuts in itertools.product((0, 1), repeat=n - 1):
        bounds = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        nb = len(bounds) - 1
        if nb < 2:
            continue
        P = np.zeros((n, nb))
        for k, (i, j) in enumerate(zip(bounds[:-1], bounds[1:])):
            P[i:j, k] = 1.0
        lam, V = linalg.eigh(P.T @ A @ P, P.T @ np.diag(m) @ P)
        v = P @ V[:, 1]
        dv = np.diff(v)
        scale = np.max(np.abs(v))
        if np.all(dv >= -tol * scale) or np.all(dv <= tol * scale):
            if lam[1] < best:
                best = lam[1]
                best_v = v if np.all(dv >= -tol * scale) else -v
    return best, best_v
