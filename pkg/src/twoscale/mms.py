"""Manufactured solutions and convergence ladders.

A case fixes smooth target fields and derives, symbolically, the extra
volumetric, interface and macro sources that make the targets exact solutions
of the forced model. Targets keep ``w1, w2 > 0`` and ``w4 < beta_max`` so that
the ramps reduce to their smooth branches and the dissolution flux stays active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as S

from .config import SYMBOLS, RunConfig
from .driver import Forcing, TwoScaleSolver, TwoScaleState
from .errors import InvalidArgumentError
from .exchange import DirichletDatum
from .fem import boundary_load, build_operators
from .geometry import Boundary, build_macro_mesh, build_micro_mesh
from .kinetics import KineticsSpec

t, x, y1, y2 = (SYMBOLS[k] for k in ("t", "x", "y1", "y2"))

_TARGETS = {
    # quadratic in space: exercises the spatial order
    "quadratic": (
        "(0.4 + 0.1*y1**2 + 0.05*y2**2 - 0.1*y1*y2)*(1 + 0.5*x)*exp(-t)",
        "(0.5 + 0.2*y1**2 - 0.1*y2**2 + 0.05*y1*y2)*(1 + 0.3*x**2)*exp(-t/2)",
        "(0.3 + 0.2*x - 0.1*x**2)*(2 - exp(-t))",
        "0.2 + 0.1*y2**2 + 0.1*x + 0.2*(1 - exp(-t))",
    ),
    # linear in space: P1 is exact in space, leaving only the time error
    "linear": (
        "(0.4 + 0.1*y1 - 0.05*y2)*(1 + 0.5*x)*exp(-t)",
        "(0.5 + 0.2*y1 - 0.1*y2)*(1 + 0.3*x)*exp(-t/2)",
        "(0.3 + 0.2*x)*(2 - exp(-t))",
        "0.2 + 0.1*y2 + 0.1*x + 0.2*(1 - exp(-t))",
    ),
    # linear in space and constant in time: reproduced to round-off
    "steady": (
        "(0.4 + 0.1*y1 - 0.05*y2)*(1 + 0.5*x)",
        "(0.5 + 0.2*y1 - 0.1*y2)*(1 + 0.3*x)",
        "0.3 + 0.2*x",
        "0.2 + 0.1*y2 + 0.1*x",
    ),
}


def _ramp(k, p, r):
    return k * r**p


@dataclass
class MMSCase:
    """Targets and derived sources of one manufactured solution.

    Attributes hold sympy expressions in ``t, x, y1, y2``. ``flux1`` and
    ``flux2`` map a boundary part to ``(flux_y1, flux_y2, extra)`` where the
    interface load is ``flux . nu + extra``.
    """

    name: str
    spec: KineticsSpec
    d: tuple
    width: float
    height: float
    length: float
    exchange_scale: float
    targets: dict
    sources: dict = field(default_factory=dict)

    @classmethod
    def build(cls, name: str, config: RunConfig) -> "MMSCase":
        if name not in _TARGETS:
            raise InvalidArgumentError(f"unknown manufactured case {name!r}")
        local = dict(SYMBOLS, pi=S.pi)
        w1, w2, w3, w4 = (S.sympify(e, locals=local) for e in _TARGETS[name])
        case = cls(
            name=name, spec=config.kinetics(), d=(config.d1, config.d2, config.d3),
            width=config.cell_width, height=config.cell_height, length=config.macro_length,
            exchange_scale=config.exchange_scale,
            targets={"w1": w1, "w2": w2, "w3": w3, "w4": w4},
        )
        case._derive()
        return case

    def rates(self, w1, w2, w4):
        k = self.spec
        f1 = _ramp(k.k_f1, k.p_f1, w1)
        f2 = _ramp(k.k_f2, k.p_f2, w2)
        eta = _ramp(k.k_R, k.p_R, w1) * k.k_Q * (k.beta_max - w4)
        return f1, f2, eta

    def _derive(self):
        k, (d1, d2, d3) = self.spec, self.d
        w1, w2, w3, w4 = (self.targets[f] for f in ("w1", "w2", "w3", "w4"))
        f1, f2, eta = self.rates(w1, w2, w4)
        lap = lambda w: S.diff(w, y1, 2) + S.diff(w, y2, 2)
        src = self.sources
        src["s1"] = S.simplify(S.diff(w1, t) - d1 * lap(w1) + f1 - f2)
        src["s2"] = S.simplify(S.diff(w2, t) - d2 * lap(w2) - f1 + f2)
        src["flux1"] = {
            Boundary.GAMMA1: (d1 * S.diff(w1, y1), d1 * S.diff(w1, y2), eta),
            Boundary.GAMMA2: (d1 * S.diff(w1, y1), d1 * S.diff(w1, y2), S.Integer(0)),
            Boundary.OUTER: (d1 * S.diff(w1, y1), d1 * S.diff(w1, y2), S.Integer(0)),
        }
        henry = k.alpha * (k.H * w3 - w2)
        src["flux2"] = {
            Boundary.GAMMA1: (d2 * S.diff(w2, y1), d2 * S.diff(w2, y2), S.Integer(0)),
            Boundary.GAMMA2: (d2 * S.diff(w2, y1), d2 * S.diff(w2, y2), -henry),
            Boundary.OUTER: (d2 * S.diff(w2, y1), d2 * S.diff(w2, y2), S.Integer(0)),
        }
        exch = S.integrate((k.H * w3 - w2).subs(y1, self.width), (y2, 0, self.height))
        src["s3"] = S.simplify(
            S.diff(w3, t) - d3 * S.diff(w3, x, 2) + k.alpha * self.exchange_scale * exch
        )
        src["q3"] = S.simplify(d3 * S.diff(w3, x).subs(x, self.length))
        # gypsum lives on the reactive interface, where only y1 = 0 is sampled
        src["s4"] = S.simplify(S.diff(w4, t) - eta)
        src["w3D"] = w3.subs(x, 0)

    def residuals(self) -> dict:
        """Symbolic residuals of the forced model at the targets (all zero)."""
        k, (d1, d2, d3) = self.spec, self.d
        w1, w2, w3, w4 = (self.targets[f] for f in ("w1", "w2", "w3", "w4"))
        f1, f2, eta = self.rates(w1, w2, w4)
        lap = lambda w: S.diff(w, y1, 2) + S.diff(w, y2, 2)
        s = self.sources
        exch = S.integrate((k.H * w3 - w2).subs(y1, self.width), (y2, 0, self.height))
        return {
            "w1": S.simplify(S.diff(w1, t) - d1 * lap(w1) + f1 - f2 - s["s1"]),
            "w2": S.simplify(S.diff(w2, t) - d2 * lap(w2) - f1 + f2 - s["s2"]),
            "w3": S.simplify(S.diff(w3, t) - d3 * S.diff(w3, x, 2)
                             + k.alpha * self.exchange_scale * exch - s["s3"]),
            "w4": S.simplify(S.diff(w4, t) - eta - s["s4"]),
        }

    def numeric(self, expr):
        fn = S.lambdify((t, x, y1, y2), expr, modules="numpy")

        def call(*args):
            args = [np.asarray(a, dtype=float) for a in args]
            shape = np.broadcast_shapes(*(a.shape for a in args))
            return np.broadcast_to(np.asarray(fn(*args), dtype=float), shape).copy()

        return call


def _edge_flux(case: MMSCase, triples, micro, xs):
    """Per-edge endpoint loads, shape (n_cells, n_edges, 2)."""
    ends = micro.nodes[micro.boundary_edges]  # (k, 2, 2)
    normals = micro.edge_normals
    fns = {tag: tuple(case.numeric(e) for e in triple) for tag, triple in triples.items()}

    def at(tt):
        vals = np.zeros((xs.size, ends.shape[0], 2))
        for tag, (gx, gy, extra) in fns.items():
            mask = micro.edge_mask(tag)
            if not mask.any():
                continue
            p = ends[mask]
            X = xs[:, None, None]
            Y1, Y2 = p[None, :, :, 0], p[None, :, :, 1]
            nu = normals[mask][None, :, None, :]
            vals[:, mask] = gx(tt, X, Y1, Y2) * nu[..., 0] + gy(tt, X, Y1, Y2) * nu[..., 1] \
                + extra(tt, X, Y1, Y2)
        return boundary_load(micro, vals)

    return at


def forced_solver(case: MMSCase, config: RunConfig) -> TwoScaleSolver:
    """Solver for ``config`` with the sources and data of ``case``."""
    src = case.sources
    macro = build_macro_mesh(config.macro_elements, config.macro_length)
    micro = build_micro_mesh(config.micro_nx, config.micro_ny, config.cell_width, config.cell_height)
    ops = build_operators(macro, micro, config.diffusivity(), lumped=config.lumped)
    xs = macro.nodes
    Y1, Y2 = micro.nodes[:, 0][None, :], micro.nodes[:, 1][None, :]
    X = xs[:, None]
    M = ops.micro_mass
    s1, s2, s3 = (case.numeric(src[k]) for k in ("s1", "s2", "s3"))
    s4 = case.numeric(src["s4"])
    q3 = case.numeric(src["q3"])
    edge1 = _edge_flux(case, src["flux1"], micro, xs)
    edge2 = _edge_flux(case, src["flux2"], micro, xs)
    g = ops.gamma1.indices
    forcing = Forcing(
        load1=lambda tt: (M @ s1(tt, X, Y1, Y2).T).T + edge1(tt),
        load2=lambda tt: (M @ s2(tt, X, Y1, Y2).T).T + edge2(tt),
        source3=lambda tt: s3(tt, xs, 0.0, 0.0),
        neumann3=lambda tt: float(q3(tt, 0.0, 0.0, 0.0)),
        source4=lambda tt: s4(tt, X, Y1[:, g], Y2[:, g]),
    )
    w3D = case.numeric(src["w3D"])
    datum = DirichletDatum(lambda tt, xx: w3D(tt, np.zeros_like(xx), 0.0, 0.0))
    return TwoScaleSolver(config, forcing=forcing, w3D=datum, truncation=None,
                          initial=lambda s: _target_state(case, s, 0.0))


def _target_state(case: MMSCase, solver: TwoScaleSolver, tt: float) -> TwoScaleState:
    X = solver.macro.nodes[:, None]
    Y1, Y2 = solver.micro.nodes[:, 0][None, :], solver.micro.nodes[:, 1][None, :]
    g = solver.gamma1_nodes
    f = {k: case.numeric(v) for k, v in case.targets.items()}
    return TwoScaleState(
        w1=f["w1"](tt, X, Y1, Y2),
        w2=f["w2"](tt, X, Y1, Y2),
        w3=f["w3"](tt, solver.macro.nodes, 0.0, 0.0),
        w4=f["w4"](tt, X, Y1[:, g], Y2[:, g]),
        t=tt,
    )


def discrete_errors(solver: TwoScaleSolver, state: TwoScaleState, exact: TwoScaleState) -> dict:
    """Discrete L2 errors weighted by the macro and micro quadratures."""
    ops = solver.ops
    om, M = ops.omega, ops.micro_mass
    out = {}
    for name in ("w1", "w2"):
        e = state.field(name) - exact.field(name)
        out[name] = math.sqrt(max(float(np.sum(om * np.sum(e * (M @ e.T).T, axis=1))), 0.0))
    e3 = state.w3 - exact.w3
    out["w3"] = math.sqrt(max(float(e3 @ (ops.macro_mass @ e3)), 0.0))
    e4 = state.w4 - exact.w4
    out["w4"] = math.sqrt(float(np.sum(om * np.sum(ops.gamma1.weights * e4**2, axis=1))))
    return out


@dataclass
class ConvergenceTable:
    mode: str
    rows: list

    def errors(self, name: str) -> np.ndarray:
        return np.array([r[f"err_{name}"] for r in self.rows])

    def orders(self, name: str) -> list:
        return [r[f"order_{name}"] for r in self.rows[1:]]

    def fitted_order(self, name: str) -> float:
        """Least-squares slope of log error against log step size."""
        key = "h" if self.mode == "space" else "dt"
        errs = self.errors(name)
        if np.any(errs <= 0):
            return float("nan")
        s = np.log([r[key] for r in self.rows])
        return float(np.polyfit(s, np.log(errs), 1)[0])


def run_case(case: MMSCase, config: RunConfig) -> dict:
    solver = forced_solver(case, config)
    final = solver.run().final
    exact = _target_state(case, solver, final.t)
    return discrete_errors(solver, final, exact)


def run_mms_study(case: MMSCase | str, levels: int | None = None, config: RunConfig | None = None,
                  *, mode: str = "space") -> ConvergenceTable:
    """Refinement ladder for a manufactured case.

    ``mode="space"`` halves both mesh sizes and quarters ``dt`` per level;
    ``mode="time"`` keeps the meshes and halves ``dt``.
    """
    config = config or RunConfig()
    levels = config.mms_levels if levels is None else levels
    if levels < 3:
        raise InvalidArgumentError("a convergence ladder needs at least 3 levels")
    if mode not in ("space", "time"):
        raise InvalidArgumentError("mode must be 'space' or 'time'")
    if isinstance(case, str):
        case = MMSCase.build(case, config)
    rows = []
    for lvl in range(levels):
        if mode == "space":
            nm, nu, dt = config.mms_macro0 * 2**lvl, config.mms_micro0 * 2**lvl, config.mms_dt0 / 4**lvl
        else:
            nm, nu, dt = config.mms_macro0, config.mms_micro0, config.mms_dt0 / 2**lvl
        cfg = config.replace(
            macro_elements=nm, micro_nx=nu, micro_ny=nu, dt=dt, T_final=config.mms_T_final,
            slab=None, output_every=10**9, truncation_level=None,
        )
        err = run_case(case, cfg)
        row = {"level": lvl, "h": config.cell_width / nu, "dt": dt}
        for name in ("w1", "w2", "w3", "w4"):
            row[f"err_{name}"] = err[name]
            row[f"order_{name}"] = None
            if rows:
                prev = rows[-1]
                ratio = (prev["h"] / row["h"]) if mode == "space" else (prev["dt"] / row["dt"])
                if err[name] > 0 and prev[f"err_{name}"] > 0:
                    row[f"order_{name}"] = math.log(prev[f"err_{name}"] / err[name]) / math.log(ratio)
        rows.append(row)
    return ConvergenceTable(mode, rows)
