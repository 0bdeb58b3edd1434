"""Linear micro-macro exchange of dissolved and gaseous H2S.

Unknowns per time step are the dissolved concentration ``w2`` at every micro
node of every cell and the lifted gas concentration ``W3 = w3 - w3D`` at the
free macro nodes. Cells exchange mass with the macro field through the Henry
deviation ``alpha (H w3 - w2)`` on the water-air interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, SingularSystemError
from .fem import Operators
from .kinetics import KineticsSpec


@dataclass(frozen=True)
class ExchangeState:
    """Dissolved field per cell, shape (n_cells, n_micro), and macro gas field."""

    w2: np.ndarray
    w3: np.ndarray
    t: float = 0.0


class DirichletDatum:
    """Time-dependent gas concentration imposed at the Dirichlet end.

    ``func(t, x)`` returns the lift evaluated at macro coordinates ``x``. The
    lift must be nonnegative and have zero slope at the Neumann end.
    """

    def __init__(self, func):
        self.func = func

    @classmethod
    def constant(cls, value: float) -> "DirichletDatum":
        return cls(lambda t, x: np.full(np.shape(x), float(value)))

    def lift(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.func(t, x), dtype=float), x.shape).copy()

    def value(self, t: float, x0: float = 0.0) -> float:
        return float(self.lift(t, np.array([x0]))[0])

    def derivative(self, t: float, x, dt: float) -> np.ndarray:
        """Backward difference in time."""
        return (self.lift(t, x) - self.lift(t - dt, x)) / dt


class P3System:
    """Factorized implicit Euler system of the exchange problem.

    Parameters
    ----------
    ops : Operators
    spec : KineticsSpec
        Supplies ``alpha`` and ``H``.
    dt : float
    dirichlet : bool
        When False the Dirichlet end is detached and both macro ends are
        no-flux (used for conservation checks).
    mode : {"monolithic", "schur"}
        Stacked sparse solve, or elimination of every cell block followed by
        a macro-sized solve.
    exchange_scale : float
        Factor on the macro-side exchange term.
    """

    def __init__(self, ops: Operators, spec: KineticsSpec, dt: float, *, dirichlet=True,
                 mode="monolithic", exchange_scale=1.0):
        if not dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if mode not in ("monolithic", "schur"):
            raise InvalidArgumentError(f"unknown exchange solver mode {mode!r}")
        self.ops, self.spec, self.dt = ops, spec, float(dt)
        self.dirichlet, self.mode, self.scale = bool(dirichlet), mode, float(exchange_scale)
        nc, n = ops.n_cells, ops.n_micro
        self.nc, self.n = nc, n
        self.free = np.arange(nc)[1:] if dirichlet else np.arange(nc)
        self.b2 = ops.b2
        a, H, s, om = spec.alpha, spec.H, self.scale, ops.omega
        self.K2 = (ops.micro_mass / dt + ops.A2 + a * ops.gamma2.full()).tocsr()
        self.macro_op = (ops.macro_mass / dt + ops.A3).tocsr()
        self.exch_diag = a * s * om * H * ops.gamma2_measure
        try:
            if mode == "monolithic":
                self._build_monolithic()
            else:
                self._build_schur()
        except RuntimeError as exc:
            raise SingularSystemError(f"exchange system factorization failed: {exc}") from exc

    def _build_monolithic(self):
        ops, spec = self.ops, self.spec
        a, H, s, om = spec.alpha, spec.H, self.scale, ops.omega
        nc, n, free = self.nc, self.n, self.free
        nf = free.size
        micro = sp.kron(sp.diags(om), self.K2)
        # cell k sees W3 at macro node k; column index of node k among free nodes
        col_of = -np.ones(nc, dtype=int)
        col_of[free] = np.arange(nf)
        nzb = np.flatnonzero(self.b2)
        rows, cols, vals = [], [], []
        for k in free:
            rows.append(k * n + nzb)
            cols.append(np.full(nzb.size, col_of[k]))
            vals.append(-a * H * om[k] * self.b2[nzb])
        C_mw = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nc * n, nf)
        ) if nf else sp.csr_matrix((nc * n, 0))
        C_wm = sp.csr_matrix(
            (
                np.concatenate([-a * s * om[k] * self.b2[nzb] for k in free]) if nf else [],
                (
                    np.concatenate([np.full(nzb.size, col_of[k]) for k in free]) if nf else [],
                    np.concatenate([k * n + nzb for k in free]) if nf else [],
                ),
            ),
            shape=(nf, nc * n),
        )
        macro = self.macro_op[free][:, free] + sp.diags(self.exch_diag[free])
        self.matrix = sp.bmat([[micro, C_mw], [C_wm, macro]], format="csc")
        self.lu = spla.splu(self.matrix)

    def _build_schur(self):
        a, H = self.spec.alpha, self.spec.H
        s, om, free = self.scale, self.ops.omega, self.free
        self.lu2 = spla.splu(self.K2.tocsc())
        self.z = self.lu2.solve(self.b2)
        bz = float(self.b2 @ self.z)
        schur_diag = self.exch_diag - a * a * s * H * om * bz
        self.schur = (self.macro_op[free][:, free] + sp.diags(schur_diag[free])).tocsc()
        self.lu_macro = spla.splu(self.schur)

    def step(self, prev: ExchangeState, g, w3D: DirichletDatum | None, *, flux2=None,
             macro_source=None, neumann_flux=0.0) -> ExchangeState:
        """Advance ``prev`` by one step; see :func:`p3_step`."""
        ops, spec, dt = self.ops, self.spec, self.dt
        a, H, s, om = spec.alpha, spec.H, self.scale, ops.omega
        nc, n, free = self.nc, self.n, self.free
        t = prev.t + dt
        x = ops.macro.nodes
        lift = w3D.lift(t, x) if (self.dirichlet and w3D is not None) else np.zeros(nc)
        g = np.broadcast_to(np.asarray(g, dtype=float), (nc, n))
        r2 = (ops.micro_mass @ (prev.w2 / dt + g).T).T
        if flux2 is not None:
            r2 = r2 + flux2
        r2 = r2 + a * H * np.outer(lift, self.b2)
        r3 = ops.macro_mass @ (prev.w3 / dt) - self.macro_op @ lift - self.exch_diag * lift
        if macro_source is not None:
            r3 = r3 + ops.macro_mass @ macro_source
        r3[ops.macro.neumann_node] += neumann_flux
        if self.mode == "monolithic":
            rhs = np.concatenate([(om[:, None] * r2).ravel(), r3[free]])
            sol = self.lu.solve(rhs)
            w2 = sol[: nc * n].reshape(nc, n)
            W3 = np.zeros(nc)
            W3[free] = sol[nc * n:]
        else:
            y = self.lu2.solve(np.ascontiguousarray(r2.T)).T
            rhs = r3[free] + a * s * om[free] * (y[free] @ self.b2)
            W3 = np.zeros(nc)
            W3[free] = self.lu_macro.solve(rhs)
            w2 = y + a * H * np.outer(W3, self.z)
        w3 = W3 + lift
        if self.dirichlet and w3D is not None:
            w3[ops.macro.dirichlet_node] = lift[ops.macro.dirichlet_node]
        if not (np.all(np.isfinite(w2)) and np.all(np.isfinite(w3))):
            raise SingularSystemError(f"exchange solve produced non-finite values at t={t:.6g}")
        return ExchangeState(w2=w2, w3=w3, t=t)


def p3_step(prev: ExchangeState, g, w3D: DirichletDatum | None, dt: float, system: P3System,
            spec: KineticsSpec | None = None, **forcing) -> ExchangeState:
    """One implicit Euler step of the exchange problem.

    ``g`` is the volumetric source of ``w2`` per cell. Afterwards ``w3``
    equals the Dirichlet datum exactly at the Dirichlet node.
    """
    if abs(dt - system.dt) > 1e-14 * dt:
        raise InvalidArgumentError("dt does not match the factorized system")
    if spec is not None and (spec.alpha != system.spec.alpha or spec.H != system.spec.H):
        raise InvalidArgumentError("kinetics do not match the factorized system")
    return system.step(prev, g, w3D, **forcing)


def exchange_flux(state: ExchangeState, ops: Operators, spec: KineticsSpec, scale: float = 1.0) -> np.ndarray:
    """Macro source ``-alpha * int_G2 (H w3 - w2)`` at each macro node."""
    integral = spec.H * ops.gamma2_measure * state.w3 - state.w2 @ ops.b2
    return -spec.alpha * scale * integral
