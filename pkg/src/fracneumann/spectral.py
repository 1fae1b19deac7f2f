"""Neumann spectrum, isotonic projection and the monotone second eigenvalue."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .discretization import AssembledForms, RadialFunction
from .kernel import ParameterError

log = logging.getLogger(__name__)

ORIENTATIONS = ("nondecreasing", "nonincreasing")


class EigenSolverError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray          # interior nodal values, B-normalized
    info: dict = field(default_factory=dict)

    @property
    def eigenfunction(self) -> RadialFunction:
        return RadialFunction(self.vector)


def _check_orientation(orientation: str) -> None:
    if orientation not in ORIENTATIONS:
        raise ParameterError(f"orientation must be one of {ORIENTATIONS}")


def neumann_eigs(forms: AssembledForms, k: int | None = None) -> list[EigenPair]:
    """Generalized eigenpairs A_red v = lambda B v in ascending order."""
    m = forms.m
    N = len(m)
    k = N if k is None else k
    if not (1 <= k <= N):
        raise ParameterError(f"k={k} must lie in [1, {N}]")
    sq = 1.0 / np.sqrt(m)
    C = sq[:, None] * forms.A_red * sq[None, :]
    try:
        lam, Y = linalg.eigh(0.5 * (C + C.T), subset_by_index=[0, k - 1])
    except linalg.LinAlgError as exc:
        raise EigenSolverError(f"eigensolver failed: {exc}") from exc
    out = []
    for i in range(k):
        v = sq * Y[:, i]
        # sign convention: first eigenvector positive, others increasing at the ends
        ref = v.sum() if i == 0 else v[-1] - v[0]
        if ref < 0:
            v = -v
        out.append(EigenPair(float(lam[i]), v))
    return out


def pava_project(values, weights=None, orientation: str = "nondecreasing") -> np.ndarray:
    """Weighted least-squares projection onto monotone vectors (pool adjacent violators)."""
    _check_orientation(orientation)
    y = np.asarray(values, float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, float)
    if y.shape != w.shape or y.ndim != 1:
        raise ParameterError("values and weights must be 1-d arrays of equal length")
    if np.any(w <= 0):
        raise ParameterError("weights must be positive")
    if orientation == "nonincreasing":
        return pava_project(y[::-1], w[::-1])[::-1]
    means, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        mu, ww, sz = yi, wi, 1
        while means and means[-1] > mu:
            pm, pw, ps = means.pop(), wts.pop(), sizes.pop()
            mu = (pm * pw + mu * ww) / (pw + ww)
            ww += pw
            sz += ps
        means.append(mu)
        wts.append(ww)
        sizes.append(sz)
    return np.repeat(means, sizes)


def project_monotone_zero_mean(v, m, orientation="nondecreasing", max_sweeps=50):
    """Projection onto {monotone} intersected with {zero B-mean}.

    Alternates PAVA and mean removal.  PAVA preserves the weighted mean, so
    the alternation reaches its fixed point after one sweep; the loop only
    guards against round-off.
    """
    x = np.asarray(v, float)
    for _ in range(max_sweeps):
        x = pava_project(x - np.dot(m, x) / m.sum(), m, orientation)
        mean = np.dot(m, x) / m.sum()
        if abs(mean) <= 1e-15 * (np.abs(x).max() + 1e-300):
            break
    return x - np.dot(m, x) / m.sum()


def _pools(v, tol):
    """Blocks of consecutive indices on which v is (numerically) constant."""
    bounds = [0]
    scale = np.abs(v).max()
    for k in range(len(v) - 1):
        if v[k + 1] - v[k] > tol * scale:
            bounds.append(k + 1)
    bounds.append(len(v))
    return bounds


def _pool_matrix(bounds, N):
    P = np.zeros((N, len(bounds) - 1))
    for j, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        P[a:b, j] = 1.0
    return P


def _active_set_polish(A, m, v, max_rounds=200, tol=1e-9):
    """Exact KKT point of the nondecreasing problem from a pooling pattern guess.

    Returns (lambda, vector, bounds) or None when the iteration fails.
    """
    N = len(m)
    bounds = _pools(v, 1e-8)
    seen = set()
    for _ in range(max_rounds):
        key = tuple(bounds)
        if key in seen:
            return None
        seen.add(key)
        if len(bounds) < 3:
            return None
        P = _pool_matrix(bounds, N)
        lam, Z = linalg.eigh(P.T @ A @ P, (P.T * m) @ P)
        w = P @ Z[:, 1]
        if np.dot(m * w, v) < 0:
            w = -w
        w /= np.sqrt(np.dot(m * w, w))
        lv = lam[1]
        blk = w[np.array(bounds[:-1])]
        jumps = np.diff(blk)
        scale = np.abs(w).max()
        if np.any(jumps < -tol * scale):
            # merge every violating pair of adjacent blocks
            bad = set(np.where(jumps < -tol * scale)[0] + 1)
            bounds = [b for i, b in enumerate(bounds) if i not in bad]
            continue
        r = A @ w - lv * m * w
        mu = -np.cumsum(r)[:-1]
        internal = np.ones(N - 1, bool)
        internal[np.array(bounds[1:-1]) - 1] = False
        neg = np.where(internal & (mu < -tol * (np.abs(r).max() + np.abs(A).max() * tol)))[0]
        if neg.size:
            k = neg[np.argmin(mu[neg])]
            bounds = sorted(set(bounds) | {k + 1})
            continue
        return float(lv), w, bounds
    return None


def _rq(A, m, v):
    return float(v @ A @ v / np.dot(m * v, v))


def _projected_gradient(A, m, v, max_iter, tol):
    """Projected gradient on the B-sphere with Barzilai-Borwein steps."""
    v = v / np.sqrt(np.dot(m * v, v))
    rho = _rq(A, m, v)
    g = (A @ v) / m - rho * v
    eta = 1.0 / (np.abs(A).sum(axis=1) / m).max()
    stat = np.inf
    for it in range(max_iter):
        for _ in range(60):
            x = project_monotone_zero_mean(v - eta * g, m)
            nx = np.sqrt(np.dot(m * x, x))
            if nx == 0:
                eta *= 0.5
                continue
            x /= nx
            rx = _rq(A, m, x)
            if rx <= rho + 1e-14 * abs(rho):
                break
            eta *= 0.5
        gx = (A @ x) / m - rx * x
        s_, y_ = x - v, gx - g
        sy = np.dot(m * s_, y_)
        stat = np.sqrt(np.dot(m * (x - v), x - v))
        v, g, rho = x, gx, rx
        eta = np.dot(m * s_, s_) / sy if sy > 0 else eta * 2
        eta = float(np.clip(eta, 1e-12, 1e6))
        if stat < tol:
            break
    return rho, v, stat, it + 1


def _stationarity(A, m, v):
    """Distance moved by one unit projected-gradient step (B-norm)."""
    rho = _rq(A, m, v)
    g = (A @ v) / m - rho * v
    eta = 1.0 / (np.abs(A).sum(axis=1) / m).max()
    x = project_monotone_zero_mean(v - eta * g, m)
    x /= np.sqrt(np.dot(m * x, x))
    return float(np.sqrt(np.dot(m * (x - v), x - v)) / eta)


def lambda2_increasing(forms: AssembledForms, orientation: str = "nondecreasing",
                       n_starts: int = 16, seed: int = 0, tol: float = 1e-9,
                       max_iter: int = 10_000) -> EigenPair:
    """Minimum Rayleigh quotient over monotone zero-mean vectors."""
    _check_orientation(orientation)
    A, m = forms.A_red, forms.m
    N = len(m)
    rng = np.random.default_rng(seed)
    pairs = neumann_eigs(forms, 2)
    lam2_rad, v2 = pairs[1].value, pairs[1].vector
    starts = [project_monotone_zero_mean(v2, m)]
    while len(starts) < n_starts:
        inc = rng.exponential(size=N) * (rng.random(N) < rng.uniform(0.2, 1.0))
        starts.append(project_monotone_zero_mean(np.cumsum(inc), m))
    best = None
    budget = max(50, max_iter // n_starts)
    for k, v0 in enumerate(starts):
        if not np.any(v0):
            continue
        rho, v, stat, its = _projected_gradient(A, m, v0, budget, tol)
        pol = _active_set_polish(A, m, v)
        if pol is not None and pol[0] <= rho + 1e-10 * max(1.0, abs(rho)):
            rho, v = pol[0], pol[1]
        if best is None or rho < best[0]:
            best = (rho, v, k, its)
    if best is None:
        raise EigenSolverError("no admissible start")
    rho, v, k, its = best
    v = project_monotone_zero_mean(v, m)
    v /= np.sqrt(np.dot(m * v, v))
    rho = _rq(A, m, v)
    stat = _stationarity(A, m, v) / max(1.0, rho)
    info = dict(lambda2_rad=lam2_rad, gap=rho - lam2_rad, stationarity=stat,
                best_start=k, n_starts=n_starts, orientation=orientation,
                v2_rad_monotone=bool(np.all(np.diff(v2) >= 0) or np.all(np.diff(v2) <= 0)))
    if rho < lam2_rad - 1e-10 * max(1.0, lam2_rad):
        raise EigenSolverError("constrained value below the unconstrained one", best=v)
    if stat > 1e-6:
        log.warning("lambda2_increasing: stationarity %.2e above 1e-6", stat)
    if orientation == "nonincreasing":
        v = -v
    return EigenPair(float(rho), v, info)
