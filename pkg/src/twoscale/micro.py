"""Cell problems for the acid concentration and the gypsum layer.

:func:`p1_step` advances the acid field ``w1`` by one implicit Euler step with
the monotone dissolution flux ``-h R(w1)`` on the reactive interface.
:func:`p2_slab` couples it to the gypsum ODE ``dw4/dt = eta(w1, w4)`` by a
Picard iteration on the gypsum path over a time slab.

Fields are numpy arrays whose last axis runs over micro nodes (``w1``) or
reactive-interface nodes (``w4``). Leading axes are cells, one per macro
node, and every cell is independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ContractionError, InvalidArgumentError, NonlinearSolverError, SingularSystemError
from .fem import Operators
from .kinetics import KineticsSpec, eval_dR, eval_eta, eval_Q, eval_R, eval_R_primitive

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class CellState:
    """Acid field and gypsum trace of one or more cells at time ``t``."""

    w1: np.ndarray
    w4: np.ndarray
    t: float = 0.0


@dataclass
class FixedPointReport:
    """Convergence record of a Picard iteration."""

    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    noise_floor: float = 0.0

    @property
    def contraction_ratio(self) -> float:
        return observed_ratio(self.residual_history, self.noise_floor)


def observed_ratio(history, floor=0.0) -> float:
    """Largest ratio of successive residuals that rise above ``floor``.

    Pairs whose newer residual is at round-off level carry no information
    about the map and are skipped; a history without usable pairs gives 0.
    """
    best = 0.0
    for prev, new in zip(history[:-1], history[1:]):
        if prev > 0 and new > floor:
            best = max(best, new / prev)
    return best


class P1System:
    """Factorized implicit Euler operator for the acid field.

    The boundary nonlinearity only touches reactive-interface nodes, so the
    step is condensed onto them: with ``K = M/dt + A1`` factorized once,
    ``w = K^{-1} rhs - Z (c * R(u))`` where ``Z = K^{-1} P`` and ``u`` solves
    the small system ``u - y_G + S (c * R(u)) = 0`` with ``S = P^T Z``.
    """

    def __init__(self, ops: Operators, dt: float):
        if not dt > 0:
            raise InvalidArgumentError("dt must be positive")
        self.ops = ops
        self.dt = float(dt)
        self.mass = ops.micro_mass
        K = (ops.micro_mass / dt + ops.A1).tocsc()
        self.matrix = K
        try:
            self.lu = spla.splu(K)
        except RuntimeError as exc:
            raise SingularSystemError(f"acid operator factorization failed: {exc}") from exc
        self.gamma = ops.gamma1.indices
        self.b = ops.gamma1.weights
        n = ops.n_micro
        P = np.zeros((n, self.gamma.size))
        P[self.gamma, np.arange(self.gamma.size)] = 1.0
        self.Z = self.lu.solve(P)
        self.S = self.Z[self.gamma]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``K^{-1}`` along the last axis."""
        flat = rhs.reshape(-1, rhs.shape[-1])
        return self.lu.solve(np.ascontiguousarray(flat.T)).T.reshape(rhs.shape)


def p1_step(
    w1_prev,
    g,
    h,
    dt: float,
    system: P1System,
    spec: KineticsSpec,
    flux=None,
    *,
    tol: float = 1e-12,
    max_newton: int = 50,
) -> np.ndarray:
    """One implicit Euler step of the acid cell problem.

    Solves ``(M/dt + A1) w + B1 (h * R(w)) = M g + (M/dt) w1_prev + flux``
    with a lumped reactive-interface mass ``B1``.

    Parameters
    ----------
    w1_prev, g : array (..., n_micro)
        Previous acid field and volumetric source.
    h : array (..., n_gamma1)
        Nonnegative weight of the dissolution flux.
    flux : array (..., n_micro), optional
        Extra integrated boundary load.

    Raises
    ------
    NonlinearSolverError
        If damped Newton does not reach ``tol`` within ``max_newton`` steps.
    """
    if abs(dt - system.dt) > 1e-14 * dt:
        raise InvalidArgumentError("dt does not match the factorized system")
    w1_prev = np.asarray(w1_prev, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise InvalidArgumentError("dissolution weight h must be nonnegative")
    g = np.broadcast_to(np.asarray(g, dtype=float), w1_prev.shape)
    rhs = (system.mass @ (g + w1_prev / dt).reshape(-1, w1_prev.shape[-1]).T).T
    rhs = rhs.reshape(w1_prev.shape)
    if flux is not None:
        rhs = rhs + flux
    y = system.solve(rhs)
    gam = system.gamma
    c = np.broadcast_to(system.b * h, y[..., gam].shape)
    if not np.any(c):
        return y

    yG = y[..., gam]
    S = system.S

    def G(u):
        return u - yG + (c * eval_R(spec, u)) @ S.T

    u = yG.copy()
    Gu = G(u)
    res = np.inf
    for _ in range(max_newton + 1):
        wG = u - Gu
        nodal = c * (eval_R(spec, wG) - eval_R(spec, u))
        res = float(np.max(np.abs(nodal))) if nodal.size else 0.0
        if res <= tol and np.max(np.abs(Gu)) <= max(tol, 1e3 * EPS * (1 + np.max(np.abs(u)))):
            break
        J = np.eye(gam.size) + S * (c * eval_dR(spec, u))[..., None, :]
        du = np.linalg.solve(J, -Gu[..., None])[..., 0]
        if np.max(np.abs(du)) <= 4 * EPS * (1 + np.max(np.abs(u))):
            break
        norm0 = np.max(np.abs(Gu), axis=-1, keepdims=True)
        lam = np.ones(norm0.shape)
        for _ in range(30):
            trial = u + lam * du
            Gt = G(trial)
            bad = np.max(np.abs(Gt), axis=-1, keepdims=True) > (1 - 1e-4 * lam) * norm0
            bad &= norm0 > tol
            if not bad.any():
                break
            lam = np.where(bad, 0.5 * lam, lam)
        u, Gu = trial, Gt
    else:
        raise NonlinearSolverError("damped Newton did not converge", res)

    load = np.zeros_like(y)
    load[..., gam] = c * eval_R(spec, u)
    return y - system.solve(load)


def gamma1_flux(w1, w4, system: P1System, spec: KineticsSpec) -> np.ndarray:
    """Integral of the dissolution rate over the reactive interface, per cell."""
    w1 = np.asarray(w1)
    return np.sum(system.b * eval_eta(spec, w1[..., system.gamma], np.asarray(w4)), axis=-1)


def _trapezoid_path(start, rates, dt):
    out = np.empty((rates.shape[0],) + start.shape)
    out[0] = start
    if rates.shape[0] > 1:
        incr = 0.5 * dt * (rates[:-1] + rates[1:])
        out[1:] = start + np.cumsum(incr, axis=0)
    return out


def apply_lambda(
    cell: CellState,
    g_path,
    w4_bar,
    dt: float,
    system: P1System,
    spec: KineticsSpec,
    flux_path=None,
    w4_source=None,
    *,
    tol_newton: float = 1e-12,
    max_newton: int = 50,
):
    """One application of the gypsum Picard map over a slab.

    Solves the acid problem with dissolution weight ``Q(w4_bar)`` and then
    integrates ``eta(w1, w4_bar)`` by the trapezoidal rule. The returned
    paths have ``len(g_path) + 1`` time levels, the first being ``cell``.
    """
    n_steps = len(g_path)
    w1_path = np.empty((n_steps + 1,) + np.shape(cell.w1))
    w1_path[0] = cell.w1
    for n in range(1, n_steps + 1):
        h = eval_Q(spec, w4_bar[n])
        flux = None if flux_path is None else flux_path[n - 1]
        w1_path[n] = p1_step(
            w1_path[n - 1], g_path[n - 1], h, dt, system, spec, flux,
            tol=tol_newton, max_newton=max_newton,
        )
    rates = eval_eta(spec, w1_path[..., system.gamma], w4_bar)
    if w4_source is not None:
        rates = rates + w4_source
    w4_path = _trapezoid_path(np.asarray(cell.w4, dtype=float), rates, dt)
    return w1_path, w4_path


def slab_norm(diff, dt, weights=None, cell_weights=None) -> float:
    """Discrete L2 norm over the slab of a path with levels ``1..K``.

    ``weights`` are spatial quadrature weights along the last axis,
    ``cell_weights`` the macro quadrature weights along the cell axis.
    """
    sq = diff[1:] ** 2
    if weights is not None:
        sq = sq * weights
    sq = sq.sum(axis=-1)
    if cell_weights is not None:
        sq = sq * cell_weights
    return float(np.sqrt(dt * sq.sum()))


def p2_slab(
    cell: CellState,
    g_path,
    dt: float,
    system: P1System,
    spec: KineticsSpec,
    tol_fp: float = 1e-12,
    max_fp: int = 50,
    *,
    w4_guess=None,
    flux_path=None,
    w4_source=None,
    cell_weights=None,
    tol_newton: float = 1e-12,
    max_newton: int = 50,
):
    """Solve the coupled acid/gypsum cell problem over one slab.

    Iterates :func:`apply_lambda` from ``w4_guess`` (default: gypsum frozen at
    its slab-start value) until successive gypsum paths differ by at most
    ``tol_fp`` in the discrete L2 norm over time and interface.

    Returns
    -------
    w1_path, w4_path : arrays with ``len(g_path) + 1`` time levels
    report : FixedPointReport

    Raises
    ------
    ContractionError
        If ``max_fp`` iterations do not converge; the slab is too long for
        the map to contract.
    """
    g_path = np.asarray(g_path, dtype=float)
    n_steps = g_path.shape[0]
    if n_steps < 1:
        raise InvalidArgumentError("slab must contain at least one step")
    if w4_guess is None:
        w4_bar = np.broadcast_to(np.asarray(cell.w4, dtype=float), (n_steps + 1,) + np.shape(cell.w4)).copy()
    else:
        w4_bar = np.array(w4_guess, dtype=float)
    report = FixedPointReport()
    b = system.b
    for it in range(1, max_fp + 1):
        w1_path, w4_path = apply_lambda(
            cell, g_path, w4_bar, dt, system, spec, flux_path, w4_source,
            tol_newton=tol_newton, max_newton=max_newton,
        )
        res = slab_norm(w4_path - w4_bar, dt, b, cell_weights)
        report.residual_history.append(res)
        report.iterations = it
        report.noise_floor = max(report.noise_floor, 1e3 * EPS * slab_norm(w4_path, dt, b, cell_weights))
        w4_bar = w4_path
        if res <= tol_fp:
            report.converged = True
            return w1_path, w4_path, report
    raise ContractionError("gypsum Picard iteration did not converge", report.residual_history, t=cell.t)


def vi_violation(w, w_prev, g, h, probes, dt, system: P1System, spec: KineticsSpec, flux=None) -> float:
    """Largest violation of the discrete variational inequality.

    For each probe ``v`` evaluates

        (M (w - w_prev)/dt, w - v) + (A1 w, w - v)
        + sum_G b h (Rhat(w) - Rhat(v)) - (M g + flux, w - v)

    which must be nonpositive. Returns the positive part of the maximum over
    probes and cells (0 when the inequality holds).
    """
    w = np.asarray(w, dtype=float)
    M, A = system.mass, system.ops.A1
    gam, b = system.gamma, system.b
    worst = 0.0
    for v in probes:
        d = w - v
        dflat = d.reshape(-1, d.shape[-1])
        r = (M @ ((w - w_prev) / dt - g).reshape(-1, d.shape[-1]).T).T + (A @ w.reshape(-1, d.shape[-1]).T).T
        if flux is not None:
            r = r - np.reshape(flux, r.shape)
        val = np.sum(r * dflat, axis=-1)
        bd = b * np.asarray(h) * (eval_R_primitive(spec, w[..., gam]) - eval_R_primitive(spec, np.asarray(v)[..., gam]))
        val = val + np.sum(bd.reshape(val.shape[0], -1), axis=-1)
        worst = max(worst, float(np.max(val)))
    return max(worst, 0.0)


def l2_norm(w, system: P1System) -> np.ndarray:
    """Discrete L2 norm of each cell field in the micro mass inner product."""
    w = np.asarray(w, dtype=float)
    flat = w.reshape(-1, w.shape[-1])
    sq = np.sum(flat * (system.mass @ flat.T).T, axis=-1)
    return np.sqrt(sq).reshape(w.shape[:-1])


__all__ = [
    "CellState",
    "FixedPointReport",
    "P1System",
    "apply_lambda",
    "gamma1_flux",
    "l2_norm",
    "observed_ratio",
    "p1_step",
    "p2_slab",
    "slab_norm",
    "vi_violation",
]
