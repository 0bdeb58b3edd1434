"""Contraction measurements of the inner and outer Picard maps."""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig, contraction_slabs
from .driver import TwoScaleSolver


@dataclass(frozen=True)
class ContractionRow:
    slab_steps: int
    slab: float
    inner_ratio: float
    outer_ratio: float
    inner_iterations: int
    outer_iterations: int


def run_contraction_study(config: RunConfig, slabs=None, solver: TwoScaleSolver | None = None) -> list[ContractionRow]:
    """Observed contraction ratios for each slab length, given in steps.

    Every slab starts from the initial state. The inner ratio is read from the
    gypsum iteration of the first outer iterate, where the frozen sources are
    furthest from the fixed point.
    """
    solver = solver or TwoScaleSolver(config)
    slabs = contraction_slabs(config) if slabs is None else list(slabs)
    state = solver.initial_state()
    rows = []
    for k in slabs:
        result = solver.outer_step(state, int(k))
        first = result.inner_reports[0]
        rows.append(ContractionRow(
            slab_steps=int(k), slab=k * config.dt,
            inner_ratio=first.contraction_ratio, outer_ratio=result.outer_ratio,
            inner_iterations=first.iterations, outer_iterations=result.iterations,
        ))
    return rows


def is_monotone(rows, key) -> bool:
    """Ratios nonincreasing as the slab shrinks (rows in any order)."""
    vals = [getattr(r, key) for r in sorted(rows, key=lambda r: -r.slab_steps)]
    return all(b <= a for a, b in zip(vals, vals[1:]))
