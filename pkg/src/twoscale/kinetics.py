"""Constitutive functions, their truncations and the invariant-region envelope.

Reaction rates are power ramps ``k * max(r, 0)**p``. The dissolution rate on
the solid-water interface is ``eta(w1, w4) = R(w1) * Q(w4)`` with a ramp
``R`` and ``Q(b) = k_Q * max(beta_max - b, 0)``. Setting the truncation level
``m`` freezes every function outside the band used by the existence argument,
which makes them globally Lipschitz and bounded.

All evaluators are vectorized over numpy arrays and return floats for scalar
input.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateKineticsError, EllipticityError, InvalidArgumentError


@dataclass(frozen=True)
class KineticsSpec:
    """Rate constants and shape parameters of the reaction terms."""

    k_f1: float = 1.0
    k_f2: float = 1.0
    p_f1: float = 1.0
    p_f2: float = 1.0
    k_R: float = 1.0
    k_Q: float = 1.0
    p_R: float = 1.0
    beta_max: float = 1.0
    H: float = 1.0
    alpha: float = 1.0
    m: float | None = None

    def __post_init__(self):
        for name in ("k_f1", "k_f2", "k_R", "k_Q"):
            if not getattr(self, name) >= 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")
        if not self.beta_max > 0:
            raise InvalidArgumentError("beta_max must be positive")
        if not self.H > 0:
            raise InvalidArgumentError("H must be positive")
        if not self.alpha >= 0:
            raise InvalidArgumentError("alpha must be nonnegative")
        # exponents below one lose local Lipschitz continuity at the origin
        for name in ("p_R", "p_f1", "p_f2"):
            if not getattr(self, name) >= 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if self.m is not None and not self.m > 0:
            raise InvalidArgumentError("truncation level m must be positive")

    def truncated(self, m: float | None) -> "KineticsSpec":
        return replace(self, m=m)


def _out(x, scalar):
    return float(x) if scalar else x


def _ramp(k, p, r):
    rp = np.maximum(r, 0.0)
    return k * (rp if p == 1 else rp**p)


def eval_f(spec: KineticsSpec, which: int, r):
    """Reaction rate ``f_1`` or ``f_2``, truncated above ``m`` when set."""
    if which not in (1, 2):
        raise InvalidArgumentError("which must be 1 or 2")
    scalar = np.isscalar(r)
    r = np.asarray(r, dtype=float)
    k, p = (spec.k_f1, spec.p_f1) if which == 1 else (spec.k_f2, spec.p_f2)
    if spec.m is not None:
        r = np.minimum(r, spec.m)
    return _out(_ramp(k, p, r), scalar)


def eval_R(spec: KineticsSpec, r):
    scalar = np.isscalar(r)
    r = np.asarray(r, dtype=float)
    if spec.m is not None:
        r = np.minimum(r, spec.m)
    return _out(_ramp(spec.k_R, spec.p_R, r), scalar)


def eval_dR(spec: KineticsSpec, r):
    """Derivative of ``R`` (right derivative at the kinks)."""
    scalar = np.isscalar(r)
    r = np.asarray(r, dtype=float)
    rp = np.maximum(r, 0.0)
    if spec.p_R == 1:
        d = np.where(r > 0, spec.k_R, 0.0)
    else:
        d = spec.k_R * spec.p_R * rp ** (spec.p_R - 1)
    if spec.m is not None:
        d = np.where(r > spec.m, 0.0, d)
    return _out(d, scalar)


def eval_Q(spec: KineticsSpec, b):
    scalar = np.isscalar(b)
    b = np.asarray(b, dtype=float)
    if spec.m is not None:
        b = np.clip(b, -spec.m, spec.m)
    return _out(spec.k_Q * np.maximum(spec.beta_max - b, 0.0), scalar)


def eval_eta(spec: KineticsSpec, w1, w4):
    """Gypsum production rate ``R(w1) Q(w4)``."""
    scalar = np.isscalar(w1) and np.isscalar(w4)
    return _out(np.asarray(eval_R(spec, w1)) * np.asarray(eval_Q(spec, w4)), scalar)


def eval_R_primitive(spec: KineticsSpec, r):
    """Primitive of (the possibly truncated) ``R`` vanishing at 0."""
    scalar = np.isscalar(r)
    r = np.asarray(r, dtype=float)
    k, p = spec.k_R, spec.p_R
    rp = np.maximum(r, 0.0)
    if spec.m is None:
        out = k * rp ** (p + 1) / (p + 1)
    else:
        m = spec.m
        below = k * np.minimum(rp, m) ** (p + 1) / (p + 1)
        out = below + k * m**p * np.maximum(rp - m, 0.0)
    return _out(out, scalar)


def lipschitz_constant(spec: KineticsSpec, name: str) -> float:
    """Global Lipschitz constant of a truncated function.

    For the monotone power ramps the steepest slope on ``[0, m]`` is attained
    at ``m``.
    """
    if spec.m is None:
        raise InvalidArgumentError("global Lipschitz constants need a truncation level")
    m = spec.m
    slopes = {
        "f1": spec.k_f1 * spec.p_f1 * m ** (spec.p_f1 - 1),
        "f2": spec.k_f2 * spec.p_f2 * m ** (spec.p_f2 - 1),
        "R": spec.k_R * spec.p_R * m ** (spec.p_R - 1),
        "Q": spec.k_Q,
    }
    try:
        return float(slopes[name])
    except KeyError:
        raise InvalidArgumentError(f"unknown function {name!r}") from None


def invert_increasing(func, value: float, *, tol: float = 1e-13, max_iter: int = 200) -> float:
    """Solve ``func(r) = value`` for a nondecreasing ``func`` with ``func(0) = 0``.

    Brackets by doubling and then bisects until the bracket is narrower than
    ``tol`` relative to its upper end.
    """
    if value <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    n = 0
    while func(hi) < value:
        lo, hi = hi, 2.0 * hi
        n += 1
        if n > 2000:
            raise DegenerateKineticsError(f"cannot bracket preimage of {value}")
    for _ in range(max_iter):
        if hi - lo <= tol * max(hi, 1.0):
            break
        mid = 0.5 * (lo + hi)
        if func(mid) < value:
            lo = mid
        else:
            hi = mid
    return hi


def _f_inverse(spec: KineticsSpec, which: int, value: float) -> float:
    k, p = (spec.k_f1, spec.p_f1) if which == 1 else (spec.k_f2, spec.p_f2)
    if k == 0:
        raise DegenerateKineticsError(f"f{which} has zero slope and cannot be inverted")
    if value <= 0:
        return 0.0
    if p == 1:
        return value / k
    return invert_increasing(lambda r: k * r**p, value)


@dataclass(frozen=True)
class BoundsEnvelope:
    """Upper bounds of the invariant region for ``w1 .. w4``."""

    M1: float
    M2: float
    M3: float
    M4: float

    @property
    def M0(self) -> float:
        return max(self.M1, self.M2, self.M3, self.M4)

    def as_dict(self) -> dict:
        return {"M1": self.M1, "M2": self.M2, "M3": self.M3, "M4": self.M4, "M0": self.M0}

    def invariant_defects(self, spec: KineticsSpec) -> dict:
        """Relative defects of the three defining relations (zero when exact)."""
        base = spec.truncated(None)
        f1 = eval_f(base, 1, self.M1)
        f2 = eval_f(base, 2, self.M2)
        return {
            "f1(M1)=f2(M2)": abs(f1 - f2) / max(abs(f1), abs(f2), 1e-300),
            "M2=H*M3": abs(self.M2 - spec.H * self.M3) / max(abs(self.M2), 1e-300),
            "M4>=beta_max": max(spec.beta_max - self.M4, 0.0),
        }


def compute_bounds_envelope(
    spec: KineticsSpec,
    sup_w10: float,
    sup_w20: float,
    sup_w30: float,
    sup_w3D: float,
    sup_w40: float,
) -> BoundsEnvelope:
    """Smallest envelope tied by ``f1(M1) = f2(M2)`` and ``M2 = H M3``.

    Starts from the data floors and raises ``M1`` and then ``M2`` along the
    level sets of ``f1`` and ``f2``; values are only ever increased.
    """
    base = spec.truncated(None)
    sups = (sup_w10, sup_w20, sup_w30, sup_w3D, sup_w40)
    if any(not np.isfinite(s) or s < 0 for s in sups):
        raise InvalidArgumentError("data suprema must be finite and nonnegative")
    m2_floor = max(sup_w20, spec.H * sup_w30, spec.H * sup_w3D)
    if base.k_f1 == 0 and base.k_f2 == 0:
        # both rates vanish identically, so any pair satisfies f1(M1) = f2(M2)
        m1, m2 = float(sup_w10), float(m2_floor)
    elif base.k_f1 == 0 or base.k_f2 == 0:
        raise DegenerateKineticsError("f1 and f2 must both vanish or both be strictly increasing")
    else:
        m1 = max(float(sup_w10), _f_inverse(base, 1, eval_f(base, 2, m2_floor)))
        m2 = _f_inverse(base, 2, eval_f(base, 1, m1))
        m2 = max(m2, m2_floor)
    return BoundsEnvelope(M1=m1, M2=m2, M3=m2 / spec.H, M4=max(spec.beta_max, float(sup_w40)))


@dataclass(frozen=True)
class DiffusivityField:
    """Diffusion coefficients with their ellipticity floors.

    ``d1`` and ``d2`` are scalars or per-micro-triangle arrays; ``d3`` is a
    scalar or a per-macro-element array.
    """

    d1: float | np.ndarray = 1.0
    d2: float | np.ndarray = 1.0
    d3: float | np.ndarray = 1.0
    d1_floor: float = 1e-8
    d2_floor: float = 1e-8
    d3_floor: float = 1e-8

    def __post_init__(self):
        for name in ("d1", "d2", "d3"):
            floor = getattr(self, name + "_floor")
            if not floor > 0:
                raise InvalidArgumentError(f"{name}_floor must be positive")
            value = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value)) or np.any(value < floor):
                raise EllipticityError(f"{name} has values below its floor {floor}")
