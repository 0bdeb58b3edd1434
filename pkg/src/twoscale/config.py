"""Flat ``key=value`` run configuration.

One entry per line; ``#`` starts a comment; blank lines are ignored. Unknown
keys are rejected and missing keys take the defaults of :class:`RunConfig`.
Initial and boundary data are closed-form expressions in ``x`` (macro),
``y1, y2`` (micro) and ``t``, parsed with sympy.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import sympy

from .errors import ConfigError, InvalidArgumentError
from .kinetics import DiffusivityField, KineticsSpec

SYMBOLS = {name: sympy.Symbol(name, real=True) for name in ("t", "x", "y1", "y2")}


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a simulation run, with the default corrosion scenario."""

    # meshes
    macro_elements: int = 16
    macro_length: float = 1.0
    micro_nx: int = 8
    micro_ny: int = 8
    cell_width: float = 1.0
    cell_height: float = 1.0
    # time stepping
    dt: float = 1e-3
    T_final: float = 0.2
    slab: float | None = None
    output_every: int = 20
    # tolerances and budgets
    tol_fp_outer: float = 1e-12
    tol_fp_inner: float = 1e-12
    tol_newton: float = 1e-12
    tol_pos: float = 1e-10
    max_fp_outer: int = 50
    max_fp_inner: int = 50
    max_newton: int = 50
    # discretization switches
    lumped: bool = True
    dirichlet: bool = True
    p3_mode: str = "monolithic"
    gauss_seidel: bool = False
    exchange_scale: float = 1.0
    # kinetics
    k_f1: float = 2.0
    k_f2: float = 1.0
    p_f1: float = 1.0
    p_f2: float = 1.0
    k_R: float = 1.0
    k_Q: float = 1.0
    p_R: float = 1.0
    beta_max: float = 1.0
    H: float = 2.0
    alpha: float = 1.0
    truncation_level: float | None = None
    # diffusivities
    d1: float = 1.0
    d2: float = 1.0
    d3: float = 0.5
    d1_floor: float = 1e-8
    d2_floor: float = 1e-8
    d3_floor: float = 1e-8
    # initial and boundary data
    w1_init: str = "0.2 + 0.05*cos(pi*y1)"
    w2_init: str = "0.3 + 0.1*y2"
    w3_init: str = "0.5 - 0.2*x"
    w4_init: str = "0.1*(1 + x)"
    w3D: str = "0.5 + 0.3*(1 - exp(-10*t))"
    # verification studies
    seed: int = 0
    mms_case: str = "quadratic"
    mms_levels: int = 4
    mms_macro0: int = 2
    mms_micro0: int = 2
    mms_dt0: float = 0.02
    mms_T_final: float = 0.1
    contraction_slabs: str = "8,4,2,1"

    def __post_init__(self):
        validate(self)

    @property
    def n_steps(self) -> int:
        return int(round(self.T_final / self.dt))

    @property
    def slab_steps(self) -> int:
        slab = self.dt if self.slab is None else self.slab
        return int(round(slab / self.dt))

    def kinetics(self) -> KineticsSpec:
        return KineticsSpec(
            k_f1=self.k_f1, k_f2=self.k_f2, p_f1=self.p_f1, p_f2=self.p_f2,
            k_R=self.k_R, k_Q=self.k_Q, p_R=self.p_R, beta_max=self.beta_max,
            H=self.H, alpha=self.alpha,
        )

    def diffusivity(self) -> DiffusivityField:
        return DiffusivityField(
            d1=self.d1, d2=self.d2, d3=self.d3,
            d1_floor=self.d1_floor, d2_floor=self.d2_floor, d3_floor=self.d3_floor,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_EXPRESSION_KEYS = {
    "w1_init": {"x", "y1", "y2"},
    "w2_init": {"x", "y1", "y2"},
    "w3_init": {"x"},
    "w4_init": {"x", "y1", "y2"},
    "w3D": {"t", "x"},
}


def _fail(field, message):
    raise ConfigError(message, field=field)


def validate(cfg: RunConfig) -> None:
    """Raise :class:`ConfigError` naming the first offending field."""
    for name in ("macro_elements", "micro_nx", "micro_ny", "output_every", "max_fp_outer",
                 "max_fp_inner", "max_newton", "mms_levels", "mms_macro0", "mms_micro0"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
            _fail(name, f"must be a positive integer, got {v!r}")
    for name in ("macro_length", "cell_width", "cell_height", "dt", "T_final", "tol_fp_outer",
                 "tol_fp_inner", "tol_newton", "tol_pos", "mms_dt0", "mms_T_final"):
        v = getattr(cfg, name)
        if not (np.isfinite(v) and v > 0):
            _fail(name, f"must be positive, got {v!r}")
    if cfg.dt > cfg.T_final:
        _fail("dt", "must not exceed T_final")
    if abs(cfg.n_steps * cfg.dt - cfg.T_final) > 1e-9 * cfg.T_final:
        _fail("T_final", "must be an integer multiple of dt")
    if cfg.slab is not None:
        if not (cfg.dt <= cfg.slab * (1 + 1e-12) and cfg.slab <= cfg.T_final * (1 + 1e-12)):
            _fail("slab", "must satisfy dt <= slab <= T_final")
        if abs(cfg.slab_steps * cfg.dt - cfg.slab) > 1e-9 * cfg.slab:
            _fail("slab", "must be an integer multiple of dt")
    if cfg.p3_mode not in ("monolithic", "schur"):
        _fail("p3_mode", "must be 'monolithic' or 'schur'")
    if cfg.mms_case not in ("quadratic", "linear", "steady"):
        _fail("mms_case", "must be 'quadratic', 'linear' or 'steady'")
    if cfg.truncation_level is not None and not cfg.truncation_level > 0:
        _fail("truncation_level", "must be positive")
    if not cfg.exchange_scale >= 0:
        _fail("exchange_scale", "must be nonnegative")
    try:
        cfg.kinetics()
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc), field="kinetics") from None
    for name in ("d1", "d2", "d3"):
        if not getattr(cfg, name) >= getattr(cfg, name + "_floor"):
            _fail(name, "below its ellipticity floor")
    for key, allowed in _EXPRESSION_KEYS.items():
        try:
            expr = parse_expression(getattr(cfg, key))
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ConfigError(f"cannot parse expression: {exc}", field=key) from None
        extra = {s.name for s in expr.free_symbols} - allowed
        if extra:
            _fail(key, f"uses unsupported variables {sorted(extra)}")
    try:
        slabs = contraction_slabs(cfg)
    except ValueError:
        _fail("contraction_slabs", "must be a comma-separated list of positive integers")
    if not slabs or min(slabs) < 1:
        _fail("contraction_slabs", "must list positive step counts")


def contraction_slabs(cfg: RunConfig) -> list[int]:
    return [int(s) for s in cfg.contraction_slabs.split(",") if s.strip()]


def parse_expression(text: str) -> sympy.Expr:
    local = dict(SYMBOLS)
    local.update(pi=sympy.pi, e=sympy.E)
    return sympy.sympify(text, locals=local)


def compile_expression(text: str, variables=("t", "x", "y1", "y2")):
    """Vectorized numpy callable ``f(t, x, y1, y2)`` broadcasting its result."""
    expr = parse_expression(text)
    fn = sympy.lambdify([SYMBOLS[v] for v in variables], expr, modules="numpy")

    def call(*args):
        args = [np.asarray(a, dtype=float) for a in args]
        shape = np.broadcast_shapes(*(a.shape for a in args))
        return np.broadcast_to(np.asarray(fn(*args), dtype=float), shape).copy()

    return call


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw, lineno):
    typ = _FIELD_TYPES[key]
    try:
        if typ == "int":
            return int(raw)
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "float":
            return float(raw)
        if typ == "float | None":
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value {raw!r}", line=lineno, field=key) from None


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected key=value, got {stripped!r}", line=lineno)
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno)
        values[key] = _convert(key, raw, lineno)
    return RunConfig(**values)


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text)


def serialize_config(cfg: RunConfig) -> str:
    """Full ``key=value`` listing that parses back to an equal config."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            text = "auto"
        elif isinstance(v, (bool, np.bool_)):
            text = "true" if v else "false"
        elif isinstance(v, (float, np.floating)):
            text = repr(float(v))
        else:
            text = str(v)
        lines.append(f"{f.name}={text}")
    return "\n".join(lines) + "\n"
