"""Mountain-pass level and solution profile of the ball prototype under refinement."""
import argparse

import numpy as np

from fracneumann.discretization import DomainSpec, assemble_forms, build_grid
from fracneumann.kernel import KernelParams
from fracneumann.nonlinearity import NonlinearitySpec, truncate
from fracneumann.spectral import lambda2_increasing, neumann_eigs
from fracneumann.variational import ConeSpec, mountain_pass

R_PROTO = 1.6248577


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    p.add_argument("--R", type=float, default=R_PROTO)
    args = p.parse_args()
    n, s = 1, 0.75
    tr = truncate(NonlinearitySpec.prototype(4, 3), 20.0, None, s, n)
    print(f"{'N':>5s} {'lambda2_rad':>12s} {'lambda2_plus':>12s} {'level':>12s} {'u*(0)':>10s} "
          f"{'max u*':>10s} {'residual':>10s}")
    for N in args.sizes:
        forms = assemble_forms(build_grid(DomainSpec(n, s, 0.0, args.R), N, N // 2), KernelParams.standard(n, s))
        ep = lambda2_increasing(forms)
        lam = neumann_eigs(forms, 2)[1].value
        cone = ConeSpec("nondecreasing", tr.u_minus[0], tr.u_plus[0])
        res = mountain_pass(forms, tr, cone, ep, strict=False)
        print(f"{N:5d} {lam:12.8f} {ep.value:12.8f} {res.level:12.8f} {res.u_star[0]:10.6f} "
              f"{np.max(res.u_star):10.6f} {res.residual:10.2e}")


if __name__ == "__main__":
    main()
