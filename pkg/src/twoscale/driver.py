"""Time marching of the full two-scale corrosion model.

Each time slab is solved by a Picard iteration on the pair ``(w1, w2)``:
frozen paths give the reaction sources ``g1 = -f1(w1) + f2(w2)`` of the acid
problem and ``-g1`` of the exchange problem; the acid/gypsum cell problems and
the exchange problem are then solved over the slab and the new paths become
the next iterate. The converged paths are the fully implicit solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .config import RunConfig, compile_expression
from .errors import ContractionError, InvalidArgumentError
from .exchange import DirichletDatum, ExchangeState, P3System
from .fem import Operators, build_operators
from .geometry import build_macro_mesh, build_micro_mesh
from .kinetics import BoundsEnvelope, KineticsSpec, compute_bounds_envelope, eval_f
from .micro import EPS, CellState, P1System, observed_ratio, p2_slab

FIELDS = ("w1", "w2", "w3", "w4")


@dataclass(frozen=True)
class TwoScaleState:
    """All four fields at time ``t``.

    ``w1, w2`` have shape (n_cells, n_micro), ``w4`` (n_cells, n_gamma1) and
    ``w3`` (n_cells,), one cell per macro node.
    """

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        nc = np.shape(self.w3)[0]
        if np.ndim(self.w3) != 1:
            raise InvalidArgumentError("w3 must be one-dimensional")
        for name in ("w1", "w2", "w4"):
            a = getattr(self, name)
            if np.ndim(a) != 2 or a.shape[0] != nc:
                raise InvalidArgumentError(f"{name} must have shape ({nc}, n)")
        if self.w1.shape != self.w2.shape:
            raise InvalidArgumentError("w1 and w2 must live on the same micro mesh")

    def field(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def cells(self) -> CellState:
        return CellState(self.w1, self.w4, self.t)

    def exchange(self) -> ExchangeState:
        return ExchangeState(self.w2, self.w3, self.t)

    def clipped(self, tol: float) -> "TwoScaleState":
        """Copy with values in ``[-tol, 0)`` set to zero."""
        out = {}
        for name in FIELDS:
            a = self.field(name)
            out[name] = np.where((a < 0) & (a >= -tol), 0.0, a)
        return TwoScaleState(t=self.t, **out)


@dataclass
class Forcing:
    """Optional extra sources, each a function of time.

    ``load1`` and ``load2`` return integrated micro loads of shape
    (n_cells, n_micro); ``source3`` nodal macro values; ``neumann3`` the flux
    entering at the Neumann end; ``source4`` nodal gypsum rates on the
    reactive interface.
    """

    load1: Callable | None = None
    load2: Callable | None = None
    source3: Callable | None = None
    neumann3: Callable | None = None
    source4: Callable | None = None


@dataclass
class SlabResult:
    """Paths over one accepted slab; level 0 is the slab start."""

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    times: np.ndarray
    residual_history: list
    inner_reports: list
    noise_floor: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.residual_history)

    @property
    def outer_ratio(self) -> float:
        return observed_ratio(self.residual_history, self.noise_floor)

    def state(self, level: int) -> TwoScaleState:
        return TwoScaleState(
            w1=self.w1[level], w2=self.w2[level], w3=self.w3[level], w4=self.w4[level],
            t=float(self.times[level]),
        )


@dataclass(frozen=True)
class Violation:
    """One nodal value outside the invariant region."""

    field: str
    macro_index: int
    micro_index: int
    value: float
    bound: float
    kind: str

    @property
    def magnitude(self) -> float:
        return abs(self.value - self.bound)


@dataclass
class RunResult:
    snapshots: list
    envelope: BoundsEnvelope
    truncation_level: float | None
    reports: list
    diagnostics: list = field(default_factory=list)
    slabs: list = field(default_factory=list)

    @property
    def final(self) -> TwoScaleState:
        return self.snapshots[-1]


class TwoScaleSolver:
    """Factorized operators and marching logic for one configuration.

    Parameters
    ----------
    config : RunConfig
    forcing : Forcing, optional
    w3D : DirichletDatum, optional
        Overrides the boundary expression of ``config``.
    initial : TwoScaleState or callable, optional
        Initial state, or ``initial(solver) -> TwoScaleState``, overriding the
        initial expressions of ``config``.
    truncation : "auto", None or float
        ``"auto"`` truncates at the envelope level ``M0`` unless the config
        sets ``truncation_level``; ``None`` disables truncation.
    """

    def __init__(self, config: RunConfig, *, forcing: Forcing | None = None, w3D=None,
                 initial=None, truncation="auto", diffusivity=None):
        self.config = cfg = config
        self.macro = build_macro_mesh(cfg.macro_elements, cfg.macro_length)
        self.micro = build_micro_mesh(cfg.micro_nx, cfg.micro_ny, cfg.cell_width, cfg.cell_height)
        self.ops: Operators = build_operators(
            self.macro, self.micro, diffusivity or cfg.diffusivity(), lumped=cfg.lumped
        )
        self.forcing = forcing or Forcing()
        if w3D is None:
            f = compile_expression(cfg.w3D, ("t", "x"))
            w3D = DirichletDatum(lambda t, x: f(t, np.zeros_like(x)))
        self.w3D = w3D
        self.dt = cfg.dt
        self._initial = initial
        self.base_spec = cfg.kinetics()
        self.envelope = self._envelope(self.initial_state())
        if truncation == "auto":
            m = cfg.truncation_level if cfg.truncation_level is not None else self.envelope.M0
        else:
            m = truncation
        self.truncation_level = m
        self.spec: KineticsSpec = self.base_spec.truncated(m)
        self.p1 = P1System(self.ops, self.dt)
        self.p3 = P3System(
            self.ops, self.spec, self.dt, dirichlet=cfg.dirichlet, mode=cfg.p3_mode,
            exchange_scale=cfg.exchange_scale,
        )

    # -- data ---------------------------------------------------------------

    @property
    def gamma1_nodes(self) -> np.ndarray:
        return self.ops.gamma1.indices

    def initial_state(self) -> TwoScaleState:
        if isinstance(self._initial, TwoScaleState):
            return self._initial
        if self._initial is not None:
            return self._initial(self)
        return self.default_initial_state()

    def default_initial_state(self) -> TwoScaleState:
        """Initial expressions of the config evaluated at the nodes."""
        cfg = self.config
        x = self.macro.nodes[:, None]
        y1, y2 = self.micro.nodes[:, 0][None, :], self.micro.nodes[:, 1][None, :]
        g = self.gamma1_nodes
        ev = lambda text, *args: compile_expression(text, ("x", "y1", "y2"))(*args)
        w1 = ev(cfg.w1_init, x, y1, y2)
        w2 = ev(cfg.w2_init, x, y1, y2)
        w4 = ev(cfg.w4_init, x, y1[:, g], y2[:, g])
        w3 = compile_expression(cfg.w3_init, ("x",))(self.macro.nodes)
        if cfg.dirichlet:
            w3[self.macro.dirichlet_node] = self.w3D.value(0.0)
        return TwoScaleState(w1=w1, w2=w2, w3=w3, w4=w4, t=0.0)

    def _envelope(self, state: TwoScaleState) -> BoundsEnvelope:
        times = np.arange(self.config.n_steps + 1) * self.dt
        if self.config.dirichlet:
            sup_d = max(max(self.w3D.value(t) for t in times), 0.0)
        else:
            sup_d = 0.0
        sup = lambda a: max(float(np.max(a)), 0.0)
        return compute_bounds_envelope(
            self.base_spec, sup(state.w1), sup(state.w2), sup(state.w3), sup_d, sup(state.w4)
        )

    # -- one slab -----------------------------------------------------------

    def _forcing_paths(self, t0, n_steps):
        times = t0 + self.dt * np.arange(1, n_steps + 1)
        f = self.forcing
        path = lambda fn: None if fn is None else np.array([fn(t) for t in times])
        return {
            "load1": path(f.load1),
            "load2": path(f.load2),
            "source3": path(f.source3),
            "neumann3": path(f.neumann3),
            "source4": None if f.source4 is None else np.array([f.source4(t) for t in np.r_[t0, times]]),
        }

    def _pair_norm(self, d1, d2) -> float:
        M, om = self.ops.micro_mass, self.ops.omega
        total = 0.0
        for d in (d1, d2):
            flat = d[1:].reshape(-1, d.shape[-1])
            q = np.sum(flat * (M @ flat.T).T, axis=-1).reshape(d[1:].shape[:-1])
            total += float(np.sum(q * om))
        return math.sqrt(max(self.dt * total, 0.0))

    def picard_map(self, state: TwoScaleState, w1_bar, w2_bar, *, w4_guess=None, forcing=None):
        """One application of the outer map to frozen paths ``(w1_bar, w2_bar)``.

        Returns the new paths ``(w1, w2, w3, w4)`` and the inner report.
        """
        cfg, spec, dt = self.config, self.spec, self.dt
        n_steps = w1_bar.shape[0] - 1
        if forcing is None:
            forcing = self._forcing_paths(state.t, n_steps)
        g1 = -eval_f(spec, 1, w1_bar[1:]) + eval_f(spec, 2, w2_bar[1:])
        w1, w4, report = p2_slab(
            state.cells(), g1, dt, self.p1, spec, cfg.tol_fp_inner, cfg.max_fp_inner,
            w4_guess=w4_guess, flux_path=forcing["load1"], w4_source=forcing["source4"],
            cell_weights=self.ops.omega, tol_newton=cfg.tol_newton, max_newton=cfg.max_newton,
        )
        if cfg.gauss_seidel:
            g2 = eval_f(spec, 1, w1[1:]) - eval_f(spec, 2, w2_bar[1:])
        else:
            g2 = -g1
        w2 = np.empty_like(w2_bar)
        w3 = np.empty((n_steps + 1,) + state.w3.shape)
        ex = state.exchange()
        w2[0], w3[0] = ex.w2, ex.w3
        for n in range(1, n_steps + 1):
            kw = {}
            if forcing["load2"] is not None:
                kw["flux2"] = forcing["load2"][n - 1]
            if forcing["source3"] is not None:
                kw["macro_source"] = forcing["source3"][n - 1]
            if forcing["neumann3"] is not None:
                kw["neumann_flux"] = float(forcing["neumann3"][n - 1])
            ex = self.p3.step(ex, g2[n - 1], self.w3D, **kw)
            w2[n], w3[n] = ex.w2, ex.w3
        return (w1, w2, w3, w4), report

    def pair_distance(self, a1, a2, b1, b2) -> float:
        """Discrete L2 distance over a slab between two ``(w1, w2)`` path pairs."""
        return self._pair_norm(a1 - b1, a2 - b2)

    def outer_step(self, state: TwoScaleState, n_steps: int, *, w4_guess=None) -> SlabResult:
        """Solve one slab of ``n_steps`` time steps by the outer Picard iteration.

        The first iterate holds ``(w1, w2)`` at their slab-start values; each
        gypsum iteration is warm-started from the previous outer iterate.

        Raises
        ------
        ContractionError
            When the outer iteration (or the inner gypsum iteration) fails to
            converge within its budget.
        """
        cfg, dt = self.config, self.dt
        if n_steps < 1:
            raise InvalidArgumentError("a slab needs at least one step")
        shape = (n_steps + 1,)
        w1_bar = np.broadcast_to(state.w1, shape + state.w1.shape).copy()
        w2_bar = np.broadcast_to(state.w2, shape + state.w2.shape).copy()
        forcing = self._forcing_paths(state.t, n_steps)
        times = state.t + dt * np.arange(n_steps + 1)
        history, inner = [], []
        floor = 0.0
        for _ in range(cfg.max_fp_outer):
            (w1, w2, w3, w4), report = self.picard_map(
                state, w1_bar, w2_bar, w4_guess=w4_guess, forcing=forcing
            )
            inner.append(report)
            w4_guess = w4
            res = self._pair_norm(w1 - w1_bar, w2 - w2_bar)
            history.append(res)
            floor = max(floor, 1e3 * EPS * self._pair_norm(w1, w2))
            w1_bar, w2_bar = w1, w2
            if res <= cfg.tol_fp_outer:
                return SlabResult(w1, w2, w3, w4, times, history, inner, floor)
        raise ContractionError("outer Picard iteration did not converge", history, t=state.t)

    # -- marching -----------------------------------------------------------

    def march(self, state: TwoScaleState | None = None, *, on_slab=None) -> tuple[list, list]:
        """Advance to ``T_final`` and return ``(accepted slabs, diagnostics)``.

        A slab whose Picard iteration fails is retried with half its length,
        down to a single step.
        """
        cfg = self.config
        state = state or self.initial_state()
        total = cfg.n_steps
        done = 0
        slab = cfg.slab_steps
        slabs, diags = [], []
        while done < total:
            k = min(slab, total - done)
            try:
                result = self.outer_step(state, k)
            except ContractionError as exc:
                if k == 1:
                    raise ContractionError(
                        "outer Picard iteration failed on a single-step slab", exc.history, t=state.t
                    ) from exc
                slab = max(1, k // 2)
                diags.append({"event": "slab_halved", "t": state.t, "slab_steps": slab})
                continue
            for i, (res, rep) in enumerate(zip(result.residual_history, result.inner_reports), start=1):
                diags.append({
                    "t": state.t, "slab_steps": k, "iteration": i, "residual": res,
                    "inner_iterations": rep.iterations, "inner_residual": rep.residual_history[-1],
                })
            slabs.append((done, result))
            if on_slab is not None:
                on_slab(done, result)
            done += k
            # time stamps come from the step count so they do not accumulate round-off
            state = replace(result.state(k), t=done * self.dt)
        return slabs, diags

    def run(self) -> RunResult:
        """March to ``T_final`` collecting snapshots every ``output_every`` steps."""
        cfg = self.config
        state0 = self.initial_state()
        snaps = [state0.clipped(cfg.tol_pos)]
        every, total = cfg.output_every, cfg.n_steps

        def collect(start, result):
            k = len(result.times) - 1
            for lvl in range(1, k + 1):
                step = start + lvl
                if step % every == 0 or step == total:
                    s = replace(result.state(lvl), t=step * self.dt)
                    snaps.append(s.clipped(cfg.tol_pos))

        slabs, diags = self.march(state0, on_slab=collect)
        reports = [check_bounds(s, self.envelope, cfg.tol_pos) for s in snaps]
        return RunResult(snaps, self.envelope, self.truncation_level, reports, diags, slabs)


def outer_step(state: TwoScaleState, slab: float, config: RunConfig, **solver_kw):
    """Solve one slab of length ``slab`` starting at ``state``."""
    solver = TwoScaleSolver(config, **solver_kw)
    n = int(round(slab / config.dt))
    result = solver.outer_step(state, n)
    return result.state(n), result


def run(config: RunConfig, **solver_kw) -> RunResult:
    return TwoScaleSolver(config, **solver_kw).run()


def check_bounds(state: TwoScaleState, env: BoundsEnvelope, tol: float) -> list[Violation]:
    """All nodal values outside ``[0, M_i]`` by more than ``tol``.

    Rows are listed by field, then macro index, then micro index.
    """
    upper = {"w1": env.M1, "w2": env.M2, "w3": env.M3, "w4": env.M4}
    out = []
    for name in FIELDS:
        a = np.asarray(state.field(name), dtype=float)
        a2 = a[:, None] if a.ndim == 1 else a
        bad = (a2 < -tol) | (a2 > upper[name] + tol) | ~np.isfinite(a2)
        for k, j in zip(*np.nonzero(bad)):
            v = float(a2[k, j])
            low = not v > upper[name]
            out.append(Violation(
                field=name, macro_index=int(k), micro_index=-1 if a.ndim == 1 else int(j),
                value=v, bound=0.0 if low else upper[name], kind="lower" if low else "upper",
            ))
    return out


@dataclass
class StabilityReport:
    delta: float
    times: np.ndarray
    distances: np.ndarray
    rate: float
    richardson: list | None = None

    @property
    def ratios(self) -> np.ndarray:
        if self.delta == 0:
            return np.zeros_like(self.distances)
        return self.distances / self.delta


def _fit_rate(times, ratios) -> float:
    mask = ratios > 0
    if mask.sum() < 2:
        return 0.0
    t, y = times[mask], np.log(ratios[mask])
    A = np.vstack([t, np.ones_like(t)]).T
    slope, _ = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(slope)


def _perturbed(solver: TwoScaleSolver, delta: float) -> TwoScaleState:
    s = solver.default_initial_state()
    w3 = s.w3 + delta
    if solver.config.dirichlet:
        w3[solver.macro.dirichlet_node] = s.w3[solver.macro.dirichlet_node]
    return TwoScaleState(w1=s.w1 + delta, w2=s.w2 + delta, w3=w3, w4=s.w4 + delta, t=s.t)


def _trajectory_distance(a: RunResult, b: RunResult) -> np.ndarray:
    out = []
    for sa, sb in zip(a.snapshots, b.snapshots):
        out.append(max(float(np.max(np.abs(sa.field(f) - sb.field(f)))) for f in FIELDS))
    return np.array(out)


def stability_probe(config: RunConfig, delta: float, *, richardson: bool = False,
                    reference: RunResult | None = None) -> StabilityReport:
    """Distance between the reference run and one with data raised by ``delta``.

    The raised run keeps the Dirichlet node on its datum. The growth rate is
    the least-squares slope of ``log(distance/delta)`` against time. With
    ``richardson`` the distance at ``T_final`` is also recorded for
    ``delta/2`` and ``delta/4``.
    """
    if not delta >= 0:
        raise InvalidArgumentError("delta must be nonnegative")
    if reference is None:
        reference = TwoScaleSolver(config).run()
    base = TwoScaleSolver(config)

    def perturbed_run(d):
        return TwoScaleSolver(config, initial=_perturbed(base, d),
                              truncation=base.truncation_level).run()

    pert = perturbed_run(delta)
    times = np.array([s.t for s in reference.snapshots])
    dist = _trajectory_distance(reference, pert)
    report = StabilityReport(delta, times, dist, 0.0)
    if delta > 0:
        report.rate = _fit_rate(times, dist / delta)
    if richardson and delta > 0:
        report.richardson = [(delta, float(dist[-1]))]
        for d in (delta / 2, delta / 4):
            report.richardson.append((d, float(_trajectory_distance(reference, perturbed_run(d))[-1])))
    return report


__all__ = [
    "Forcing",
    "RunResult",
    "SlabResult",
    "StabilityReport",
    "TwoScaleSolver",
    "TwoScaleState",
    "Violation",
    "check_bounds",
    "outer_step",
    "run",
    "stability_probe",
]
