import tracemalloc

import numpy as np
import pytest
from hypothesis import given, strategies as st

from s4stack.discretize import (bilinear_discretize_dense, dense_step, dplr_discrete_to_dense,
                                dplr_discretize, dplr_discretize_reference, recurrent_step,
                                run_recurrence, zero_state)
from s4stack.errors import DivergenceError, NumericalError, PoleError, RankCorrectionError
from s4stack.hippo import default_b_vector, default_c_vector, hippo_dplr, hippo_matrix
from s4stack.kernel import krylov_kernel_complex
from s4stack.ssm_core import make_continuous_ssm, make_discrete_dense, make_dplr_spec

from _support import oracle_kernel, random_real_dplr, random_stable_dplr, rel_linf


# -- dense bilinear ---------------------------------------------------------------------

def test_zero_matrix():
    disc = bilinear_discretize_dense(make_continuous_ssm([[0]], [1], [1]), 0.5)
    np.testing.assert_allclose(disc.a_bar, [[1]])
    np.testing.assert_allclose(disc.b_bar, [0.5])


def test_scalar_collapse():
    disc = bilinear_discretize_dense(make_continuous_ssm([[-1]], [1], [1]), 2.0)
    np.testing.assert_allclose(disc.a_bar, [[0]], atol=1e-16)
    np.testing.assert_allclose(disc.b_bar, [1])


def test_first_order_taylor_bound():
    rng = np.random.default_rng(4)
    g = rng.standard_normal((4, 4))
    a = g - g.T - 2 * np.eye(4)
    delta = 0.01
    disc = bilinear_discretize_dense(make_continuous_ssm(a, np.ones(4), np.ones(4)), delta)
    err = np.linalg.norm(disc.a_bar - (np.eye(4) + delta * a), 2)
    assert err <= 2 * delta ** 2 * np.linalg.norm(a, 2) ** 2


def test_dense_pole_reports_eigenvalue():
    with pytest.raises(PoleError) as info:
        bilinear_discretize_dense(make_continuous_ssm([[2.0]], [1], [1]), 1.0)
    assert info.value.eigenvalue == pytest.approx(2.0)


# -- DPLR closed form ----------------------------------------------------------------------

def test_rank_zero_scalar_case():
    spec = make_dplr_spec([-1], np.zeros((1, 0)), np.zeros((1, 0)), [1], [1])
    disc = dplr_discretize(spec, 2.0)
    np.testing.assert_allclose(dplr_discrete_to_dense(disc).a_bar, [[0]], atol=1e-16)
    np.testing.assert_allclose(disc.b_bar, [1])


def test_legs_n4_matches_dense_oracle():
    spec = hippo_dplr("legs", 4)
    disc = dplr_discretize(spec, 0.1)
    ref = dplr_discretize_reference(spec, 0.1)
    assert rel_linf(dplr_discrete_to_dense(disc).a_bar, ref.a_bar) <= 1e-10
    assert rel_linf(disc.b_bar, ref.b_bar) <= 1e-10


def test_exact_pole():
    spec = make_dplr_spec([20.0, -1.0], [1, 1], [1, 1], [1, 1], [1, 1])
    with pytest.raises(PoleError) as info:
        dplr_discretize(spec, 0.1)
    assert info.value.eigenvalue == 20.0


def test_singular_woodbury_core():
    # 1 + q^H D p = 0 with D = 1/(2/delta - lambda) = 1
    spec = make_dplr_spec([1.0], [1.0], [-1.0], [1.0], [1.0])
    with pytest.raises(RankCorrectionError):
        dplr_discretize(spec, 1.0)


def test_core_invariant():
    spec = hippo_dplr("legt", 8)
    disc = dplr_discretize(spec, 0.05)
    core_in = np.eye(2) + spec.q.conj().T @ (disc.d_vec[:, None] * spec.p)
    np.testing.assert_allclose(disc.woodbury_core @ core_in, np.eye(2), atol=1e-10)


@given(n=st.integers(1, 16), rank=st.integers(0, 3), seed=st.integers(0, 2 ** 32 - 1),
       delta=st.floats(1e-3, 1.0))
def test_dplr_discretization_matches_dense(n, rank, seed, delta):
    spec = random_stable_dplr(np.random.default_rng(seed), n, rank)
    disc = dplr_discretize(spec, delta)
    ref = dplr_discretize_reference(spec, delta)
    assert rel_linf(dplr_discrete_to_dense(disc).a_bar, ref.a_bar) <= 1e-10
    assert rel_linf(disc.b_bar, ref.b_bar) <= 1e-10


@given(n=st.integers(1, 32), seed=st.integers(0, 2 ** 32 - 1), delta=st.floats(1e-3, 10.0))
def test_bilinear_maps_stable_into_unit_disk(n, seed, delta):
    spec = random_stable_dplr(np.random.default_rng(seed), n)
    a_bar = dplr_discrete_to_dense(dplr_discretize(spec, delta)).a_bar
    assert np.max(np.abs(np.linalg.eigvals(a_bar))) < 1


@given(seed=st.integers(0, 2 ** 32 - 1), delta=st.floats(1e-2, 1.0))
def test_pole_exclusion_is_exact(seed, delta):
    rng = np.random.default_rng(seed)
    lam = -rng.uniform(0.1, 1, 3) + 0j
    lam[1] = 2.0 / delta
    spec = make_dplr_spec(lam, np.zeros((3, 1)), np.zeros((3, 1)), np.ones(3), np.ones(3))
    with pytest.raises(PoleError):
        dplr_discretize(spec, delta)
    lam[1] = 2.0 / delta + 1e-6
    dplr_discretize(spec.replace(lambda_=lam), delta)


# -- stepping ------------------------------------------------------------------------------

def test_zero_in_zero_out():
    disc = dplr_discretize(hippo_dplr("legs", 4), 0.1)
    x, y = recurrent_step(disc, zero_state(4), 0.0)
    assert np.all(x == 0) and y == 0


def test_impulse_response_equals_kernel():
    spec = hippo_dplr("legs", 4, seed=2)
    disc = dplr_discretize(spec, 0.1)
    u = np.zeros(16)
    u[0] = 1.0
    y, _ = run_recurrence(disc, u)
    k = krylov_kernel_complex(dplr_discretize_reference(spec, 0.1), 16).real
    np.testing.assert_allclose(y, k, atol=1e-9 * np.abs(k).max())


def test_legs_n8_final_state_matches_dense():
    spec = hippo_dplr("legs", 8, seed=5)
    u = np.random.default_rng(5).standard_normal(64)
    _, x_fast = run_recurrence(dplr_discretize(spec, 0.05), u)
    _, x_dense = run_recurrence(dplr_discretize_reference(spec, 0.05), u)
    assert rel_linf(x_fast, x_dense) <= 1e-9


def test_dense_step_identity():
    disc = make_discrete_dense([[1]], [1], [2.0], 1.0)
    x, y = dense_step(disc, zero_state(1), 1.0)
    np.testing.assert_array_equal(x, [1])
    assert y == 2.0


def test_dense_step_zero_matrix():
    disc = make_discrete_dense([[0]], [3.0], [1.0], 1.0)
    x, _ = dense_step(disc, np.array([7.0 + 1j]), 2.0)
    np.testing.assert_array_equal(x, [6.0])


@given(n=st.sampled_from([2, 4, 8, 16]), rank=st.integers(1, 2),
       seed=st.integers(0, 2 ** 32 - 1), delta=st.floats(1e-3, 1.0))
def test_dplr_and_dense_stepping_agree(n, rank, seed, delta):
    rng = np.random.default_rng(seed)
    spec = random_stable_dplr(rng, n, rank)
    fast = dplr_discretize(spec, delta)
    dense = dplr_discretize_reference(spec, delta)
    u = rng.standard_normal(64)
    xf = xd = zero_state(n)
    for k in range(64):
        xf, yf = recurrent_step(fast, xf, u[k])
        xd, yd = dense_step(dense, xd, u[k])
        scale = max(np.abs(xd).max(), 1e-12)
        assert np.abs(xf - xd).max() <= 1e-9 * scale
        assert abs(yf - yd) <= 1e-9 * max(abs(yd), scale)


def test_batched_state():
    spec = hippo_dplr("legs", 6)
    disc = dplr_discretize(spec, 0.1)
    u = np.random.default_rng(0).standard_normal((3, 20))
    ys, _ = run_recurrence(disc, u)
    for i in range(3):
        np.testing.assert_array_equal(ys[i], run_recurrence(disc, u[i])[0])


def test_real_system_outputs_checked_for_imaginary_residue():
    spec, *_ = random_real_dplr(np.random.default_rng(1), 4)
    # break conjugate symmetry while keeping the flag
    broken = spec.replace(c=spec.c * 1j + 0.3)
    disc = dplr_discretize(broken, 0.1)
    u = np.ones(5)
    with pytest.raises(NumericalError):
        run_recurrence(disc, u)


def test_divergence_reports_step():
    spec = make_dplr_spec([1.0], np.zeros((1, 0)), np.zeros((1, 0)), [1.0], [1.0])
    disc = dplr_discretize(spec, 1.9)  # |a_bar| = 1.95/0.05 = 39
    with pytest.raises(DivergenceError) as info:
        run_recurrence(disc, np.r_[1.0, np.zeros(400)])
    assert 100 < info.value.step < 400


def test_step_never_allocates_n_squared():
    n = 4096
    spec = random_stable_dplr(np.random.default_rng(0), n, 2)
    disc = dplr_discretize(spec, 0.1)
    x = zero_state(n)
    tracemalloc.start()
    try:
        base = tracemalloc.get_traced_memory()[0]
        tracemalloc.reset_peak()
        recurrent_step(disc, x, 1.0)
        peak = tracemalloc.get_traced_memory()[1] - base
    finally:
        tracemalloc.stop()
    assert peak < 32 * n * 16  # a handful of N-vectors, nowhere near N^2


def test_real_hippo_oracle():
    # the DPLR recurrence of a HiPPO system reproduces the original real system
    for fam in ("legs", "legt", "lagt"):
        c = default_c_vector(6, 0).real
        spec = hippo_dplr(fam, 6, seed=0)
        k = oracle_kernel(hippo_matrix(fam, 6), default_b_vector(fam, 6), c, 0.1, 12)
        u = np.zeros(12)
        u[0] = 1
        y, _ = run_recurrence(dplr_discretize(spec, 0.1), u)
        assert rel_linf(y, k.real) < 1e-10
