"""Command-line entry point and pipeline orchestration.

Exit codes: 0 success, 2 hypothesis or validation failure, 3 solver
non-convergence, 4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig, dumps_defaults, load_config
from .discretization import DomainSpec, assemble_forms, build_grid, write_profile_csv
from .kernel import KernelParams, ParameterError
from .nonlinearity import (ConstructionError, HypothesisFailure, NonlinearitySpec, apriori_constants,
                           check_hypotheses, fixed_points, truncate)
from .spectral import EigenSolverError, lambda2_increasing, neumann_eigs
from .variational import ConeSpec, GeometryFailure, NonConvergence, mountain_pass
from .verification import constancy_criterion, embedding_scan, oracle_compare, verify_solution

log = logging.getLogger("fracneumann")

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_HYPOTHESIS, EXIT_NONCONVERGENCE, EXIT_VERIFY = 0, 2, 3, 4


class PipelineError(RuntimeError):
    def __init__(self, code: int, msg: str, diagnostics: Optional[dict] = None):
        super().__init__(msg)
        self.code = code
        self.diagnostics = diagnostics or {}


@dataclass
class PipelineState:
    cfg: RunConfig
    nl: Optional[NonlinearitySpec] = None
    domain: Optional[DomainSpec] = None
    forms: object = None
    eigs: list = field(default_factory=list)
    lam2_plus: object = None
    hypotheses: object = None
    constancy: Optional[tuple] = None
    embedding: Optional[dict] = None
    constants: Optional[dict] = None
    trunc: object = None
    results: list = field(default_factory=list)
    band_errors: dict = field(default_factory=dict)
    verify: list = field(default_factory=list)
    interleaving_ok: Optional[bool] = None
    distinct_ok: Optional[bool] = None
    radius_history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK
    message: str = ""


def build_nonlinearity(cfg: RunConfig) -> NonlinearitySpec:
    nl = cfg.nonlinearity
    if nl.kind == "prototype":
        return NonlinearitySpec.prototype(nl.q, nl.r)
    if nl.kind == "table":
        return NonlinearitySpec.from_csv(nl.table)
    if nl.kind == "polynomial":
        c = np.asarray(nl.coefficients, float)
        P = np.polynomial.Polynomial(c)
        dP, iP = P.deriv(), P.integ()
        spec = NonlinearitySpec.from_callables(lambda t: P(t), lambda t: dP(t), lambda t: iP(t),
                                               name="polynomial")
        spec.kind, spec.params = "polynomial", {"coefficients": c.tolist()}
        return spec
    a, b = nl.a, nl.b
    spec = NonlinearitySpec.from_callables(
        lambda t: a * t - b * t * np.exp(-t),
        lambda t: a - b * np.exp(-t) + b * t * np.exp(-t),
        lambda t: 0.5 * a * t * t - b * (1 - np.exp(-t) * (1 + t)), name="damped_linear")
    spec.kind, spec.params = "damped_linear", {"a": a, "b": b}
    return spec


def _assemble(cfg: RunConfig, R0: float, R: float, R_ext: Optional[float]):
    d, g = cfg.domain, cfg.grid
    spec = DomainSpec(d.n, d.s, R0, R, R_ext)
    grid = build_grid(spec, g.N_int, g.N_ext, g.grading, g.N_inner)
    return spec, assemble_forms(grid, KernelParams.standard(d.n, d.s))


def stage_spectrum(st: PipelineState) -> None:
    cfg = st.cfg
    d = cfg.domain
    t0 = time.perf_counter()
    R0, R, Rx = d.R0, d.R, d.R_ext
    st.nl = st.nl or build_nonlinearity(cfg)
    for attempt in range(4):
        st.domain, st.forms = _assemble(cfg, R0, R, Rx)
        st.lam2_plus = lambda2_increasing(st.forms, cfg.cone.orientation, cfg.solver.n_starts,
                                          cfg.solver.seed)
        st.radius_history.append({"R0": R0, "R": R, "lambda2_plus": st.lam2_plus.value})
        if not d.auto_radius:
            break
        try:
            fx = fixed_points(st.nl)
        except HypothesisFailure:
            break
        target = (min(float(st.nl.fprime(u)) for u in fx.u0_list) - 1) / d.radius_margin
        if target <= 0:
            break
        if st.lam2_plus.value <= target * (1 + 1e-9):
            break
        # eigenvalues scale like R^{-2s}
        fac = (st.lam2_plus.value / target) ** (1 / (2 * d.s)) * 1.001
        R0, R = R0 * fac, R * fac
        Rx = None if Rx is None else Rx * fac
    st.eigs = neumann_eigs(st.forms, min(20, len(st.forms.m)))
    st.timings["spectrum"] = time.perf_counter() - t0


def stage_hypotheses(st: PipelineState) -> None:
    cfg = st.cfg
    rep = check_hypotheses(st.nl, st.lam2_plus.value)
    st.hypotheses = rep
    if rep.fixed is None or not rep.fixed.u0_list:
        raise PipelineError(EXIT_HYPOTHESIS, "no admissible fixed point u0", rep.to_dict())
    if not rep.passed and cfg.nonlinearity.strict:
        failed = [k for k, v in rep.results.items() if v.required and not v.passed]
        raise PipelineError(EXIT_HYPOTHESIS, f"hypotheses failed: {failed}", rep.to_dict())


def stage_truncation(st: PipelineState) -> None:
    cfg = st.cfg
    t0 = time.perf_counter()
    rep = st.hypotheses
    wit = rep.results["f2"].witness
    if wit.get("M") is None:
        raise PipelineError(EXIT_HYPOTHESIS, "(f2) has no (M, delta) witness", rep.to_dict())
    M, delta = wit["M"], wit["delta"]
    cone = ConeSpec(cfg.cone.orientation)
    st.embedding = embedding_scan(st.forms, cone, cfg.embedding.n_samples, cfg.solver.seed,
                                  cfg.embedding.safety)
    K1, Kinf, K2 = apriori_constants(M, delta, st.forms.measure, st.embedding["C_emb"])
    st.constants = {"M": M, "delta": delta, "measure": st.forms.measure, "C_emb": st.embedding["C_emb"],
                    "K1": K1, "K_inf": Kinf, "K2": K2}
    try:
        tr = truncate(st.nl, Kinf, cfg.truncation.ell, cfg.domain.s, cfg.domain.n, rep.fixed, M, delta,
                      cfg.truncation.margin)
    except (ConstructionError, HypothesisFailure, ParameterError) as exc:
        raise PipelineError(EXIT_HYPOTHESIS, f"truncation failed: {exc}") from exc
    tr.K1, tr.K_inf, tr.K2 = K1, Kinf, K2
    st.trunc = tr
    st.constancy = constancy_criterion(st.nl, Kinf, st.eigs[1].value)
    st.timings["truncation"] = time.perf_counter() - t0


def _bands(st: PipelineState) -> list:
    margins = st.hypotheses.margins
    bands = [i for i, mg in enumerate(margins) if mg > 0 or not st.cfg.nonlinearity.strict]
    if not st.cfg.solver.all_bands:
        bands = bands[:1]
    return bands


def stage_solve(st: PipelineState) -> None:
    cfg = st.cfg
    t0 = time.perf_counter()
    tr = st.trunc
    strict = cfg.nonlinearity.strict
    for b in _bands(st):
        cone = ConeSpec(cfg.cone.orientation, tr.u_minus[b], tr.u_plus[b])
        try:
            res = mountain_pass(st.forms, tr, cone, st.lam2_plus, band=b, n_points=cfg.solver.path_points,
                                tol=cfg.solver.tol, max_outer=cfg.solver.max_outer, step=cfg.solver.step,
                                strict=strict)
        except (GeometryFailure, NonConvergence) as exc:
            st.band_errors[b] = str(exc)
            continue
        st.results.append(res)
        if strict and not res.certificate:
            st.band_errors[b] = f"band {b}: status {res.status}"
    rs = st.results
    st.interleaving_ok = all(bool(np.all(r.u_star >= r.u_minus) and np.all(r.u_star <= r.u_plus)) for r in rs)
    st.distinct_ok = all(float(np.abs(a.u_star - b.u_star).max()) > a.residual + b.residual
                         for a, b in zip(rs[:-1], rs[1:]))
    st.timings["solve"] = time.perf_counter() - t0
    if st.band_errors and strict:
        raise PipelineError(EXIT_NONCONVERGENCE, "; ".join(str(v) for v in st.band_errors.values()))


def stage_verify(st: PipelineState) -> None:
    cfg = st.cfg
    for res in st.results:
        st.verify.append(verify_solution(res.u_star, st.forms, st.trunc, res.cone, cfg.solver.tol))
    gated = [v for v, r in zip(st.verify, st.results) if r.certificate]
    if any(not v.passed for v in gated):
        failed = sorted({k for v in gated for k in v.failed()})
        raise PipelineError(EXIT_VERIFY, f"verification failed: {failed}")


def run_pipeline(cfg: RunConfig, upto: str = "solve") -> PipelineState:
    """Run the stages in order; the exit code is stored on the returned state."""
    st = PipelineState(cfg)
    stages = [("spectrum", stage_spectrum), ("hypotheses", stage_hypotheses),
              ("truncation", stage_truncation), ("solve", stage_solve), ("verify", stage_verify)]
    stop = {"eigs": 1, "hypotheses": 3, "solve": 5}[upto]
    try:
        for name, fn in stages[:stop]:
            log.info("stage %s", name)
            fn(st)
    except PipelineError as exc:
        st.exit_code, st.message = exc.code, str(exc)
        st.timings["diagnostics"] = exc.diagnostics
    except (ParameterError, HypothesisFailure) as exc:
        st.exit_code, st.message = EXIT_HYPOTHESIS, str(exc)
    except EigenSolverError as exc:
        st.exit_code, st.message = EXIT_NONCONVERGENCE, str(exc)
    return st


# ---------------------------------------------------------------------------
# reports

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_json(path: Path, payload: dict, timestamp: str) -> None:
    body = {"schema_version": SCHEMA_VERSION, "timestamp": timestamp}
    body.update(_clean(payload))
    try:
        path.write_text(json.dumps(body, indent=2, sort_keys=False) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _eigs_payload(st: PipelineState) -> dict:
    lp = st.lam2_plus
    return {"domain": asdict(st.domain) if st.domain else None,
            "eigenvalues": [p.value for p in st.eigs],
            "lambda2_rad": st.eigs[1].value if len(st.eigs) > 1 else None,
            "lambda2_plus": None if lp is None else lp.value,
            "lambda2_plus_info": None if lp is None else lp.info,
            "radius_history": st.radius_history}


def _hyp_payload(st: PipelineState) -> dict:
    out = {"nonlinearity": st.nl.describe() if st.nl else None,
           "report": st.hypotheses.to_dict() if st.hypotheses else None,
           "embedding": st.embedding, "apriori": st.constants,
           "truncation": st.trunc.to_dict() if st.trunc else None}
    if st.constancy is not None:
        out["constancy_criterion"] = {"holds": st.constancy[0], "margin": st.constancy[1]}
    return out


def emit_reports(st: PipelineState, directory, upto: str = "solve") -> list:
    """Write the JSON/CSV artifacts of a pipeline run; returns the written paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ts = datetime.now(timezone.utc).isoformat()
    written = []
    if st.eigs:
        _write_json(out / "eigs.json", _eigs_payload(st), ts)
        written.append(out / "eigs.json")
    if st.hypotheses is not None:
        _write_json(out / "hypotheses.json", _hyp_payload(st), ts)
        written.append(out / "hypotheses.json")
    if upto == "solve":
        first = st.results[0] if st.results else None
        margins = st.hypotheses.margins if st.hypotheses else []
        payload = {"exit_code": st.exit_code, "message": st.message,
                   "config": asdict(st.cfg),
                   "domain": asdict(st.domain) if st.domain else None,
                   "lambda2_rad": st.eigs[1].value if len(st.eigs) > 1 else None,
                   "lambda2_plus": st.lam2_plus.value if st.lam2_plus else None,
                   "f3_margin": (margins[st.trunc.u0_list.index(first.u0)] if first is not None
                                 else (margins[0] if margins else None)),
                   "interleaving_ok": st.interleaving_ok, "distinct_ok": st.distinct_ok,
                   "band_errors": st.band_errors,
                   "bands": [r.to_dict() for r in st.results]}
        if first is not None:
            payload.update({k: first.to_dict()[k] for k in
                            ("c", "residual", "energy_u0", "nonconstancy_linf", "status", "certificate")})
        _write_json(out / "result.json", payload, ts)
        written.append(out / "result.json")
        for i, r in enumerate(st.results):
            name = "solution.csv" if i == 0 else f"solution_band{i}.csv"
            write_profile_csv(out / name, r.radii, r.u_star)
            written.append(out / name)
        if st.results:
            with open(out / "path_energies.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["band", "index", "energy"])
                for i, r in enumerate(st.results):
                    for k, e in enumerate(r.path_energies):
                        wr.writerow([i, k, repr(float(e))])
            written.append(out / "path_energies.csv")
        if st.verify:
            _write_json(out / "verify.json", {"bands": [v.to_dict() for v in st.verify]}, ts)
            written.append(out / "verify.json")
    return written


def read_profile_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"r", "u"} <= set(rows[0]):
        raise ParameterError(f"{path}: expected header r,u")
    return np.array([float(r["r"]) for r in rows]), np.array([float(r["u"]) for r in rows])


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracneumann", description=__doc__.splitlines()[0])
    p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command")
    for name, hlp in [("eigs", "Neumann spectrum and monotone second eigenvalue"),
                      ("hypotheses", "check the hypotheses on f and the constants"),
                      ("solve", "full pipeline: spectrum, truncation, mountain pass, verification"),
                      ("verify", "re-run the invariant battery on a stored solution"),
                      ("oracle", "compare against brute-force oracles on a tiny grid")]:
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override solver.seed")
        sp.add_argument("--out", default=None, help="override outputs.directory")
        if name == "verify":
            sp.add_argument("--solution", default=None, help="solution CSV (default: <out>/solution.csv)")
    return p


def _fail(code: int, msg: str, out: Optional[Path] = None, extra: Optional[dict] = None) -> int:
    diag = {"exit_code": code, "error": msg}
    if extra:
        diag.update(_clean(extra))
    text = json.dumps(diag, indent=2)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        print(dumps_defaults())
        return EXIT_OK
    if args.command is None:
        _parser().print_help()
        return EXIT_HYPOTHESIS
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.solver.seed = args.seed
        if args.out is not None:
            cfg.outputs.directory = args.out
    except (ParameterError, OSError) as exc:
        return _fail(EXIT_HYPOTHESIS, str(exc))
    out = Path(cfg.outputs.directory)

    if args.command == "oracle":
        d = cfg.domain
        try:
            spec = DomainSpec(d.n, d.s, d.R0, d.R, d.R_ext)
            rep = oracle_compare(spec, cfg.oracle.N_int, cfg.oracle.N_ext, seed=cfg.solver.seed)
        except ParameterError as exc:
            return _fail(EXIT_HYPOTHESIS, str(exc), out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "oracle.json", rep.to_dict(), datetime.now(timezone.utc).isoformat())
        for line in rep.summary_lines():
            print(line)
        return EXIT_OK if rep.passed else EXIT_VERIFY

    if args.command == "verify":
        st = run_pipeline(cfg, upto="hypotheses")
        if st.exit_code != EXIT_OK:
            return _fail(st.exit_code, st.message, out)
        path = Path(args.solution) if args.solution else out / "solution.csv"
        try:
            r, u = read_profile_csv(path)
        except OSError as exc:
            return _fail(EXIT_HYPOTHESIS, f"cannot read {path}: {exc}", out)
        if r.shape != st.forms.radii.shape or not np.allclose(r, st.forms.radii, rtol=1e-12, atol=0):
            return _fail(EXIT_HYPOTHESIS, "solution grid does not match the configured grid", out)
        tr = st.trunc
        b = int(np.argmin([abs(u0 - np.mean(u)) for u0 in tr.u0_list])) if len(tr.u0_list) > 1 else 0
        cone = ConeSpec(cfg.cone.orientation, tr.u_minus[b], tr.u_plus[b])
        rep = verify_solution(u, st.forms, tr, cone, cfg.solver.tol)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "verify.json", {"bands": [rep.to_dict()]}, datetime.now(timezone.utc).isoformat())
        for line in rep.summary_lines():
            print(line)
        return EXIT_OK if rep.passed else EXIT_VERIFY

    upto = {"eigs": "eigs", "hypotheses": "hypotheses", "solve": "solve"}[args.command]
    st = run_pipeline(cfg, upto=upto)
    emit_reports(st, out, upto)
    if st.exit_code != EXIT_OK:
        return _fail(st.exit_code, st.message, out, st.timings.get("diagnostics"))
    if upto == "solve":
        for r in st.results:
            print(f"band u0={r.u0:.6g}: status={r.status} c={r.level:.10g} residual={r.residual:.3e} "
                  f"certificate={r.certificate}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
