"""Run configuration: dataclasses, TOML parsing and validation."""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kernel import ParameterError
from .nonlinearity import critical_exponent


@dataclass
class DomainConfig:
    n: int = 1
    s: float = 0.75
    R0: float = 0.0
    R: float = 1.0
    R_ext: Optional[float] = None
    auto_radius: bool = False     # rescale radii until the (f3) margin is positive
    radius_margin: float = 1.3    # target lambda2_plus = (f'(u0) - 1) / radius_margin


@dataclass
class GridConfig:
    N_int: int = 128
    N_ext: int = 64
    grading: float = 1.0
    N_inner: Optional[int] = None


@dataclass
class NonlinearityConfig:
    kind: str = "prototype"       # prototype | polynomial | damped_linear | table
    q: float = 4.0
    r: float = 3.0
    coefficients: list = field(default_factory=list)   # polynomial: c0 + c1 t + ...
    a: float = 2.0                # damped_linear: a t - b t exp(-t)
    b: float = 1.5
    table: Optional[str] = None   # CSV with columns t,f[,fprime]
    strict: bool = True           # fail on required hypotheses; False runs controls


@dataclass
class TruncationConfig:
    ell: Optional[float] = None   # None picks a default inside (2, 2_s^*)
    margin: float = 0.05


@dataclass
class ConeConfig:
    orientation: str = "nondecreasing"


@dataclass
class SolverConfig:
    path_points: int = 33
    tol: float = 1e-6
    max_outer: int = 3000
    step: float = 0.5
    seed: int = 0
    n_starts: int = 16
    all_bands: bool = True


@dataclass
class EmbeddingConfig:
    n_samples: int = 500
    safety: float = 2.0


@dataclass
class OracleConfig:
    N_int: int = 5
    N_ext: int = 4


@dataclass
class OutputConfig:
    directory: str = "out"


_SECTIONS = {
    "domain": DomainConfig, "grid": GridConfig, "nonlinearity": NonlinearityConfig,
    "truncation": TruncationConfig, "cone": ConeConfig, "solver": SolverConfig,
    "embedding": EmbeddingConfig, "oracle": OracleConfig, "outputs": OutputConfig,
}


@dataclass
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    nonlinearity: NonlinearityConfig = field(default_factory=NonlinearityConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    cone: ConeConfig = field(default_factory=ConeConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "RunConfig":
        d = self.domain
        if d.n < 1:
            raise ParameterError("n must be >= 1")
        if not (0.5 < d.s < 1):
            raise ParameterError(f"s={d.s} outside (1/2, 1)")
        if d.R0 < 0 or not d.R > d.R0:
            raise ParameterError("need 0 <= R0 < R")
        if d.R_ext is not None and not d.R_ext > d.R:
            raise ParameterError("R_ext must exceed R")
        if d.radius_margin <= 1:
            raise ParameterError("radius_margin must exceed 1")
        g = self.grid
        if g.N_int < 4 or g.N_ext < 2 or g.grading < 1:
            raise ParameterError("grid needs N_int >= 4, N_ext >= 2, grading >= 1")
        if self.cone.orientation not in ("nondecreasing", "nonincreasing"):
            raise ParameterError(f"unknown orientation {self.cone.orientation!r}")
        if self.cone.orientation == "nonincreasing" and d.R0 <= 0:
            raise ParameterError("nonincreasing cone requires an annulus (R0 > 0)")
        nl = self.nonlinearity
        if nl.kind not in ("prototype", "polynomial", "damped_linear", "table"):
            raise ParameterError(f"unknown nonlinearity kind {nl.kind!r}")
        if nl.kind == "prototype" and not (2 <= nl.r < nl.q):
            raise ParameterError("prototype needs 2 <= r < q")
        if nl.kind == "polynomial" and len(nl.coefficients) < 2:
            raise ParameterError("polynomial needs at least two coefficients")
        if nl.kind == "table" and not nl.table:
            raise ParameterError("table nonlinearity needs a path")
        ell = self.truncation.ell
        if ell is not None:
            crit = critical_exponent(d.n, d.s)
            if not (2 < ell < crit):
                raise ParameterError(f"ell={ell} must lie in (2, {crit})")
        sv = self.solver
        if sv.path_points < 5 or sv.tol <= 0 or sv.max_outer < 1 or not (0 < sv.step <= 1):
            raise ParameterError("invalid solver settings")
        if self.embedding.n_samples < 100:
            raise ParameterError("embedding scan needs n_samples >= 100")
        if self.oracle.N_int + 1 > 10:
            raise ParameterError("oracle grid limited to 10 interior nodes")
        return self


def _coerce(cls, data: dict, section: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ParameterError(f"[{section}] unknown keys: {sorted(unknown)}")
    kw = {}
    for k, v in data.items():
        default = getattr(cls(), k)
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ParameterError(f"[{section}] {k} must be a boolean")
        if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        kw[k] = v
    return cls(**kw)


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ParameterError(f"unknown config sections: {sorted(unknown)}")
    parts = {name: _coerce(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()}
    return RunConfig(**parts).validate()


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v) if not (isinstance(v, float) and math.isinf(v)) else "inf"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(type(v))


def dumps_defaults(cfg: Optional[RunConfig] = None) -> str:
    """TOML text of a configuration; unset optional keys appear as comments."""
    cfg = RunConfig() if cfg is None else cfg
    out = []
    for name, section in asdict(cfg).items():
        out.append(f"[{name}]")
        for k, v in section.items():
            out.append(f"# {k} = (auto)" if v is None else f"{k} = {_toml_value(v)}")
        out.append("")
    return "\n".join(out)
