import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.errors import ContractionError, InvalidArgumentError, NonlinearSolverError
from twoscale.fem import build_operators
from twoscale.geometry import build_macro_mesh, build_micro_mesh
from twoscale.kinetics import DiffusivityField, KineticsSpec, eval_eta
from twoscale.micro import (
    CellState,
    P1System,
    apply_lambda,
    gamma1_flux,
    l2_norm,
    observed_ratio,
    p1_step,
    p2_slab,
    slab_norm,
    vi_violation,
)


def make_system(nx=4, ny=4, dt=0.1, n_macro=1, lumped=True, d1=1.0):
    ops = build_operators(build_macro_mesh(n_macro, 1.0), build_micro_mesh(nx, ny),
                          DiffusivityField(d1=d1), lumped=lumped)
    return P1System(ops, dt)


def test_constant_state_is_steady():
    sys = make_system()
    w = p1_step(np.full(sys.ops.n_micro, 0.7), 0.0, np.zeros(sys.gamma.size), 0.1, sys, KineticsSpec())
    np.testing.assert_allclose(w, 0.7, rtol=1e-14)


def test_uniform_source_ode():
    sys = make_system(dt=0.1)
    w = p1_step(np.zeros(sys.ops.n_micro), 1.0, np.zeros(sys.gamma.size), 0.1, sys, KineticsSpec())
    np.testing.assert_allclose(w, 0.1, rtol=1e-13)


def test_unit_cell_against_dense_solver():
    sys = make_system(1, 1, dt=0.5)
    spec = KineticsSpec(k_R=1, p_R=1)
    w = p1_step(np.ones(4), 0.0, np.ones(2), 0.5, sys, spec)
    M = sys.ops.micro_mass.toarray()
    A = sys.ops.A1.toarray()
    b = np.zeros(4)
    b[sys.gamma] = sys.b

    # R(r) = r on the positive branch, so the dense system is linear there
    oracle = np.linalg.solve(M / 0.5 + A + np.diag(b), M @ np.ones(4) / 0.5)
    assert np.all(oracle > 0)
    np.testing.assert_allclose(w, oracle, atol=1e-12)
    interior = np.setdiff1d(np.arange(4), sys.gamma)
    assert w[sys.gamma].max() < w[interior].min()
    assert np.all((w > 0) & (w < 1))


def test_rejects_negative_weight_and_bad_dt():
    sys = make_system()
    w0 = np.zeros(sys.ops.n_micro)
    with pytest.raises(InvalidArgumentError):
        p1_step(w0, 0.0, -np.ones(sys.gamma.size), 0.1, sys, KineticsSpec())
    with pytest.raises(InvalidArgumentError):
        p1_step(w0, 0.0, np.ones(sys.gamma.size), 0.2, sys, KineticsSpec())


def test_newton_budget_exhaustion():
    sys = make_system()
    with pytest.raises(NonlinearSolverError) as info:
        p1_step(np.full(sys.ops.n_micro, 5.0), 0.0, np.full(sys.gamma.size, 50.0), 0.1, sys,
                KineticsSpec(p_R=3), tol=1e-300, max_newton=1)
    assert info.value.residual >= 0


def test_batched_equals_single():
    sys = make_system()
    rng = np.random.default_rng(1)
    w0 = rng.uniform(0, 1, (3, sys.ops.n_micro))
    h = rng.uniform(0, 2, (3, sys.gamma.size))
    spec = KineticsSpec(p_R=2)
    batch = p1_step(w0, 0.3, h, 0.1, sys, spec)
    for k in range(3):
        np.testing.assert_allclose(batch[k], p1_step(w0[k], 0.3, h[k], 0.1, sys, spec), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 3.0), st.floats(1e-3, 1.0))
def test_positivity_under_lumping(seed, p, dt):
    sys = make_system(3, 4, dt=dt)
    rng = np.random.default_rng(seed)
    w0 = rng.uniform(0, 2, sys.ops.n_micro) * (rng.uniform(size=sys.ops.n_micro) > 0.3)
    g = rng.uniform(0, 1, sys.ops.n_micro)
    h = rng.uniform(0, 5, sys.gamma.size)
    w = p1_step(w0, g, h, dt, sys, KineticsSpec(k_R=2, p_R=p))
    assert w.min() >= -1e-12


def test_energy_nonincreasing():
    sys = make_system(dt=0.05)
    rng = np.random.default_rng(2)
    w = rng.uniform(0, 1, sys.ops.n_micro)
    h = rng.uniform(0, 1, sys.gamma.size)
    norms = [l2_norm(w, sys)]
    for _ in range(20):
        w = p1_step(w, 0.0, h, 0.05, sys, KineticsSpec(p_R=2))
        norms.append(l2_norm(w, sys))
    assert np.all(np.diff(norms) <= 1e-15)


def test_vi_holds_for_random_probes():
    sys = make_system(dt=0.05)
    rng = np.random.default_rng(3)
    spec = KineticsSpec(k_R=1.5, p_R=2)
    w_prev = rng.uniform(0, 1, sys.ops.n_micro)
    g = rng.uniform(-0.5, 0.5, sys.ops.n_micro)
    h = rng.uniform(0, 2, sys.gamma.size)
    w = p1_step(w_prev, g, h, 0.05, sys, spec)
    probes = [rng.uniform(-1, 2, sys.ops.n_micro) for _ in range(20)]
    assert vi_violation(w, w_prev, g, h, probes, 0.05, sys, spec) <= 1e-9
    # a perturbed field violates the inequality for a probe pointing at the solution
    assert vi_violation(w + 0.1, w_prev, g, h, [w], 0.05, sys, spec) > 1e-6


def test_gamma1_flux():
    sys = make_system(1, 2)
    spec = KineticsSpec(k_R=1, k_Q=1, beta_max=1)
    w1 = np.ones(sys.ops.n_micro)
    w4 = np.zeros(sys.gamma.size)
    assert gamma1_flux(w1, w4, sys, spec) == pytest.approx(1.0)
    assert gamma1_flux(w1, np.ones(sys.gamma.size), sys, spec) == 0.0


def _cell(sys, w1, w4, t=0.0):
    return CellState(np.broadcast_to(w1, (sys.ops.n_micro,)).copy(),
                     np.broadcast_to(w4, (sys.gamma.size,)).copy(), t)


def test_p2_zero_acid_single_iteration():
    sys = make_system(dt=0.01)
    cell = _cell(sys, 0.0, 0.3)
    w1, w4, rep = p2_slab(cell, np.zeros((4, sys.ops.n_micro)), 0.01, sys, KineticsSpec())
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_array_equal(w4, 0.3)


def test_p2_saturation_single_iteration():
    sys = make_system(dt=0.01)
    cell = _cell(sys, 0.8, 1.0)
    w1, w4, rep = p2_slab(cell, np.zeros((4, sys.ops.n_micro)), 0.01, sys, KineticsSpec(beta_max=1.0))
    assert rep.iterations == 1
    np.testing.assert_array_equal(w4, 1.0)
    np.testing.assert_allclose(w1, 0.8, rtol=1e-14)


def _generic(sys, rng):
    w1 = 0.5 + 0.4 * rng.uniform(size=sys.ops.n_micro)
    w4 = 0.2 * rng.uniform(size=sys.gamma.size)
    return CellState(w1, w4, 0.0)


def test_p2_contraction_decreases_with_slab():
    sys = make_system(dt=1e-2)
    spec = KineticsSpec(k_R=2, k_Q=3, p_R=2)
    cell = _generic(sys, np.random.default_rng(4))
    ratios = []
    for k in (4, 2, 1):
        w1, w4, rep = p2_slab(cell, np.zeros((k, sys.ops.n_micro)), 1e-2, sys, spec)
        assert rep.converged and rep.contraction_ratio < 1
        ratios.append(rep.contraction_ratio)
        # oracle: a tighter rerun reaches the same limit
        w1b, w4b, _ = p2_slab(cell, np.zeros((k, sys.ops.n_micro)), 1e-2, sys, spec, tol_fp=1e-13)
        np.testing.assert_allclose(w4, w4b, atol=1e-12)
    assert ratios[0] > ratios[1] > ratios[2]


def test_p2_monotone_gypsum_and_bound():
    sys = make_system(dt=0.02)
    spec = KineticsSpec(k_R=3, k_Q=2, beta_max=0.5)
    cell = _generic(sys, np.random.default_rng(5))
    w1, w4, rep = p2_slab(cell, np.full((10, sys.ops.n_micro), 0.5), 0.02, sys, spec)
    assert np.all(np.diff(w4, axis=0) >= 0)
    assert w4.max() <= max(0.5, cell.w4.max()) + 1e-10


def test_p2_budget_exhaustion_raises():
    sys = make_system(dt=0.05)
    spec = KineticsSpec(k_R=3, k_Q=3, p_R=2)
    cell = _generic(sys, np.random.default_rng(9))
    with pytest.raises(ContractionError) as info:
        p2_slab(cell, np.zeros((8, sys.ops.n_micro)), 0.05, sys, spec, tol_fp=1e-14, max_fp=2)
    assert len(info.value.history) == 2 and info.value.history[-1] > 1e-14


def test_lambda_is_contractive():
    sys = make_system(dt=1e-3)
    spec = KineticsSpec(k_R=2, k_Q=2, p_R=1)
    rng = np.random.default_rng(6)
    cell = _generic(sys, rng)
    g = np.zeros((5, sys.ops.n_micro))
    a = rng.uniform(0, 0.5, (6, sys.gamma.size))
    b = rng.uniform(0, 0.5, (6, sys.gamma.size))
    _, la = apply_lambda(cell, g, a, 1e-3, sys, spec)
    _, lb = apply_lambda(cell, g, b, 1e-3, sys, spec)
    ratio = slab_norm(la - lb, 1e-3, sys.b) / slab_norm(a - b, 1e-3, sys.b)
    assert ratio < 1


def test_cells_independent_in_batch():
    sys = make_system(dt=0.01, n_macro=2)
    rng = np.random.default_rng(8)
    spec = KineticsSpec(k_R=2)
    w1 = rng.uniform(0, 1, (3, sys.ops.n_micro))
    w4 = rng.uniform(0, 0.5, (3, sys.gamma.size))
    g = np.zeros((3, 3, sys.ops.n_micro))
    batch = p2_slab(CellState(w1, w4), g, 0.01, sys, spec)
    single = p2_slab(CellState(w1[1], w4[1]), g[:, 1], 0.01, sys, spec, tol_fp=1e-13)
    np.testing.assert_allclose(batch[0][:, 1], single[0], atol=1e-12)


def test_observed_ratio_skips_noise():
    assert observed_ratio([1.0, 0.1, 0.01, 1e-17], floor=1e-15) == pytest.approx(0.1)
    assert observed_ratio([1e-3]) == 0.0
    assert observed_ratio([1.0, 0.0]) == 0.0
