import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
import mpmath

from twoscale.errors import DegenerateKineticsError, EllipticityError, InvalidArgumentError
from twoscale.kinetics import (
    DiffusivityField,
    KineticsSpec,
    compute_bounds_envelope,
    eval_dR,
    eval_eta,
    eval_f,
    eval_Q,
    eval_R,
    eval_R_primitive,
    invert_increasing,
    lipschitz_constant,
)


def test_f_vanishes_on_negatives():
    assert eval_f(KineticsSpec(k_f1=2), 1, -0.4) == 0.0


def test_f_linear_ramp():
    assert eval_f(KineticsSpec(k_f1=2), 1, 0.5) == 1.0


def test_f_truncated_above_m():
    assert eval_f(KineticsSpec(k_f1=2, m=1.0), 1, 7.0) == 2.0


def test_f_rejects_unknown_index():
    with pytest.raises(InvalidArgumentError):
        eval_f(KineticsSpec(), 3, 1.0)


def test_Q_vanishes_at_saturation():
    assert eval_Q(KineticsSpec(beta_max=3, k_Q=1), 3.0) == 0.0


def test_R_examples():
    assert eval_R(KineticsSpec(k_R=1, p_R=1), -5.0) == 0.0
    assert eval_R(KineticsSpec(k_R=2, p_R=1), 0.3) == pytest.approx(0.6, abs=1e-16)


def test_eta_examples():
    s = KineticsSpec(k_R=1, k_Q=1, p_R=1, beta_max=3)
    assert eval_eta(s, 1.0, 3.0) == 0.0
    assert eval_eta(s, -1.0, 0.0) == 0.0
    assert eval_eta(s, 2.0, 1.0) == 4.0


def test_Q_truncation_clips_both_sides():
    s = KineticsSpec(k_Q=1, beta_max=1, m=2.0)
    assert eval_Q(s, -5.0) == eval_Q(s, -2.0) == 3.0
    assert eval_Q(s, 5.0) == 0.0


def test_primitive_examples():
    s = KineticsSpec(k_R=1, p_R=1)
    assert eval_R_primitive(s, -2.0) == 0.0
    assert eval_R_primitive(s, 2.0) == 2.0


@pytest.mark.parametrize("p_R,m,r", [(1, 1.0, 3.0), (2, 1.5, 2.5), (1.5, None, 1.7), (3, 0.5, 0.3)])
def test_primitive_matches_quadrature(p_R, m, r):
    s = KineticsSpec(k_R=1.3, p_R=p_R, m=m)
    pts = [0.0] + ([m] if m and m < r else []) + [r]
    oracle = float(mpmath.quad(lambda z: eval_R(s, float(z)), pts))
    assert eval_R_primitive(s, r) == pytest.approx(oracle, rel=1e-12)


def test_truncated_primitive_example():
    assert eval_R_primitive(KineticsSpec(k_R=1, p_R=1, m=1.0), 3.0) == 2.5


def test_vectorized_shapes():
    s = KineticsSpec()
    r = np.linspace(-1, 2, 12).reshape(3, 4)
    assert eval_f(s, 2, r).shape == (3, 4)
    assert eval_eta(s, r, 0.5).shape == (3, 4)
    assert isinstance(eval_R(s, 0.5), float)


def test_dR_matches_difference_quotient():
    s = KineticsSpec(k_R=2, p_R=2.5, m=3.0)
    r = np.array([0.2, 1.0, 2.9])
    fd = (eval_R(s, r + 1e-7) - eval_R(s, r - 1e-7)) / 2e-7
    np.testing.assert_allclose(eval_dR(s, r), fd, rtol=1e-6)
    assert eval_dR(s, 3.5) == 0.0 and eval_dR(s, -1.0) == 0.0


@pytest.mark.parametrize("kw", [{"k_f1": -1}, {"beta_max": 0}, {"H": 0}, {"alpha": -0.1}, {"p_R": 0.5}, {"m": 0}])
def test_spec_validation(kw):
    with pytest.raises(InvalidArgumentError):
        KineticsSpec(**kw)


def test_monotone_on_dense_grid():
    s = KineticsSpec(k_f1=2, k_f2=0.7, p_f2=2, k_R=1.5, p_R=3, m=2.0)
    r = np.linspace(-2.0, 4.0, 10_000)
    for vals in (eval_f(s, 1, r), eval_f(s, 2, r), eval_R(s, r)):
        assert np.all(vals >= 0) and np.all(np.diff(vals) >= 0)
    q = eval_Q(s, r)
    assert np.all(q >= 0) and np.all(np.diff(q) <= 0)


def test_truncation_agrees_inside_band():
    base = KineticsSpec(k_f1=2, p_f2=2, p_R=2)
    m = 1.7
    r = np.linspace(-m, m, 501)
    t = base.truncated(m)
    for fn in (lambda s: eval_f(s, 1, r), lambda s: eval_f(s, 2, r), lambda s: eval_R(s, r),
               lambda s: eval_Q(s, r)):
        np.testing.assert_array_equal(fn(base), fn(t))


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 3.0), st.floats(0.1, 4.0), st.floats(-10, 10), st.floats(-10, 10))
def test_truncated_lipschitz_bound(p, m, a, b):
    s = KineticsSpec(k_f1=1.3, p_f1=p, k_R=0.7, p_R=p, m=m)
    for name, fn in (("f1", lambda r: eval_f(s, 1, r)), ("R", lambda r: eval_R(s, r)),
                     ("Q", lambda r: eval_Q(s, r))):
        L = lipschitz_constant(s, name)
        assert abs(fn(a) - fn(b)) <= L * abs(a - b) * (1 + 1e-12) + 1e-14


def test_lipschitz_needs_truncation():
    with pytest.raises(InvalidArgumentError):
        lipschitz_constant(KineticsSpec(), "f1")


@settings(max_examples=80, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_eta_nonnegative_and_zero_regions(r, b):
    s = KineticsSpec(k_R=1.2, k_Q=0.8, beta_max=1.5, p_R=2)
    v = eval_eta(s, r, b)
    assert v >= 0
    if r <= 0 or b >= 1.5:
        assert v == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 6), st.floats(-3, 6), st.floats(1, 3), st.one_of(st.none(), st.floats(0.5, 4)))
def test_primitive_convex_midpoint(a, b, p, m):
    s = KineticsSpec(k_R=1.1, p_R=p, m=m)
    mid = eval_R_primitive(s, 0.5 * (a + b))
    assert mid <= 0.5 * (eval_R_primitive(s, a) + eval_R_primitive(s, b)) + 1e-12


def test_envelope_spec_example():
    s = KineticsSpec(k_f1=2, k_f2=1, H=2, beta_max=3)
    env = compute_bounds_envelope(s, 0.7, 0.8, 0.5, 0.5, 0.2)
    assert (env.M1, env.M2, env.M3, env.M4) == pytest.approx((0.7, 1.4, 0.7, 3.0), rel=1e-14)


def _scan_oracle(s, sups, n=4001):
    """Smallest admissible (M1, M2) found by scanning M1 on a grid."""
    w10, w20, w30, w3D = sups
    floor2 = max(w20, s.H * w30, s.H * w3D)
    best = None
    for m1 in np.linspace(0, 5, n):
        if m1 < w10:
            continue
        m2 = eval_f(s, 1, m1) / s.k_f2
        if m2 >= floor2 - 1e-12:
            best = (m1, m2)
            break
    return best


def test_envelope_against_grid_scan():
    s = KineticsSpec(k_f1=2, k_f2=1, H=2, beta_max=3)
    m1, m2 = _scan_oracle(s, (0.7, 0.8, 0.5, 0.5))
    env = compute_bounds_envelope(s, 0.7, 0.8, 0.5, 0.5, 0.2)
    assert env.M1 == pytest.approx(m1, abs=2e-3)
    assert env.M2 == pytest.approx(m2, abs=4e-3)


def test_envelope_zero_data():
    env = compute_bounds_envelope(KineticsSpec(beta_max=2.5), 0, 0, 0, 0, 0)
    assert (env.M1, env.M2, env.M3, env.M4) == (0.0, 0.0, 0.0, 2.5)


def test_envelope_equal_ramps():
    env = compute_bounds_envelope(KineticsSpec(), 0, 2, 0, 0, 0)
    assert (env.M1, env.M2, env.M3, env.M4) == (2.0, 2.0, 2.0, 1.0)
    assert eval_f(KineticsSpec(), 1, env.M1) == eval_f(KineticsSpec(), 2, env.M2)


def test_envelope_degenerate_kinetics():
    with pytest.raises(DegenerateKineticsError):
        compute_bounds_envelope(KineticsSpec(k_f1=0, k_f2=1), 1, 1, 1, 1, 1)
    both = compute_bounds_envelope(KineticsSpec(k_f1=0, k_f2=0, H=2), 0.3, 1.0, 0.7, 0.2, 0)
    assert both.M1 == 0.3 and both.M2 == 1.4 and both.M3 == 0.7


def test_envelope_rejects_negative_sups():
    with pytest.raises(InvalidArgumentError):
        compute_bounds_envelope(KineticsSpec(), -1, 0, 0, 0, 0)


def test_envelope_invariants_random():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        s = KineticsSpec(
            k_f1=rng.uniform(0.1, 5), k_f2=rng.uniform(0.1, 5),
            p_f1=rng.choice([1.0, 1.5, 2.0]), p_f2=rng.choice([1.0, 2.0, 3.0]),
            H=rng.uniform(0.1, 5), beta_max=rng.uniform(0.1, 3),
        )
        sups = rng.uniform(0, 2, 5)
        env = compute_bounds_envelope(s, *sups)
        f1 = eval_f(s, 1, env.M1)
        f2 = eval_f(s, 2, env.M2)
        assert abs(f1 - f2) <= 1e-12 * max(f1, f2)
        assert env.M2 == s.H * env.M3 or abs(env.M2 - s.H * env.M3) <= 1e-15 * env.M2
        assert env.M4 >= s.beta_max
        assert env.M1 >= sups[0] and env.M2 >= max(sups[1], s.H * sups[2], s.H * sups[3]) - 1e-12
        assert env.M4 >= sups[4]
        assert all(v <= 1e-12 for v in env.invariant_defects(s).values())


def test_invert_increasing_power():
    r = invert_increasing(lambda z: z**3, 8.0)
    assert r == pytest.approx(2.0, rel=1e-12)
    assert invert_increasing(lambda z: z, -1.0) == 0.0


def test_diffusivity_floor():
    with pytest.raises(EllipticityError):
        DiffusivityField(d1=1e-9)
    with pytest.raises(EllipticityError):
        DiffusivityField(d3=np.array([1.0, 0.0]))
    DiffusivityField(d2=np.array([0.5, 2.0]))
