"""Size of the monotonicity defect next to r = R under grid refinement.

For the prototype nonlinearity on the ball the computed critical point has a
small dip in the last few nodes, and so does T applied to a smooth increasing
profile.  This script tabulates both against N, the grading and R_ext.
"""
import argparse

import numpy as np

from fracneumann.discretization import DomainSpec, assemble_forms, build_grid
from fracneumann.kernel import KernelParams
from fracneumann.nonlinearity import NonlinearitySpec, truncate
from fracneumann.spectral import lambda2_increasing
from fracneumann.variational import ConeSpec, mountain_pass, newton_polish, solve_linear

R_PROTO = 1.6248577


def dip(u):
    return float(u.max() - u[-1]) if u[-1] < u.max() else 0.0


def study(N, grading=1.0, R_ext=None, n=1, s=0.75, R=R_PROTO, init=None):
    grid = build_grid(DomainSpec(n, s, 0.0, R, R_ext), N, N // 2, grading=grading)
    forms = assemble_forms(grid, KernelParams.standard(n, s))
    tr = truncate(NonlinearitySpec.prototype(4, 3), 20.0, None, s, n)
    r = forms.radii
    if init is None:
        cone = ConeSpec("nondecreasing", tr.u_minus[0], tr.u_plus[0])
        u = mountain_pass(forms, tr, cone, lambda2_increasing(forms), strict=False).u_star
    else:
        u, _, _ = newton_polish(np.interp(r, *init), forms, tr)
    ramp = 1 + r / r[-1]
    Th = solve_linear(tr.g(ramp), forms, 1 + tr.shift)
    rel_T = dip(Th) / np.abs(Th).max()
    return u, r, dip(u), rel_T


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    args = p.parse_args()
    print(f"{'N':>5s} {'grading':>8s} {'R_ext':>8s} {'dip(u*)':>10s} {'dip(T ramp)/max':>16s}")
    ref = None
    for N in args.sizes:
        u, r, d, t = study(N, init=ref)
        ref = (r, u)
        print(f"{N:5d} {1.0:8.1f} {'auto':>8s} {d:10.3e} {t:16.3e}")
    N = args.sizes[1] if len(args.sizes) > 1 else args.sizes[0]
    _, _, d, t = study(N, grading=2.0, init=ref)
    print(f"{N:5d} {2.0:8.1f} {'auto':>8s} {d:10.3e} {t:16.3e}")
    for f in (4, 8, 32):
        _, _, d, t = study(N, R_ext=f * R_PROTO, init=ref)
        print(f"{N:5d} {1.0:8.1f} {f:7d}R {d:10.3e} {t:16.3e}")


if __name__ == "__main__":
    main()
