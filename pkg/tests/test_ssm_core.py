import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from s4stack.discretize import bilinear_discretize_dense
from s4stack.errors import ConditioningError, DimensionError, ValidationError
from s4stack.hippo import hippo_dplr, hippo_matrix, nplr_decompose
from s4stack.kernel import krylov_kernel_complex
from s4stack.ssm_core import (PARAMS_FORMAT, conjugate, conjugate_discrete, decode_params,
                              dplr_to_dense, encode_params, make_continuous_ssm, make_dplr_spec,
                              pp_star)

from _support import random_stable_dplr, rel_linf


def random_stable_ssm(rng, n):
    g = rng.standard_normal((n, n))
    a = g - g.T - (n + 1.0) * np.eye(n) * rng.uniform(0.5, 1.0)
    return make_continuous_ssm(a, rng.standard_normal(n), rng.standard_normal(n))


def well_conditioned(rng, n):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q @ np.diag(rng.uniform(0.5, 2.0, n))


# -- make_continuous_ssm ------------------------------------------------------------------

def test_smallest_system():
    ssm = make_continuous_ssm([[-1]], [1], [1], 0)
    assert ssm.n == 1
    assert ssm.a[0, 0] == -1 and ssm.d == 0.0


def test_dimension_mismatch_names_field():
    with pytest.raises(DimensionError) as info:
        make_continuous_ssm(np.zeros((2, 2)), np.ones(3), np.ones(2))
    assert info.value.field == "b"


def test_non_square_a():
    with pytest.raises(DimensionError) as info:
        make_continuous_ssm(np.zeros((2, 3)), np.ones(2), np.ones(2))
    assert info.value.field == "a"


@pytest.mark.parametrize("field", ["a", "b", "c"])
def test_non_finite_rejected(field):
    args = {"a": np.eye(2) * -1.0, "b": np.ones(2), "c": np.ones(2)}
    args[field] = np.array(args[field], dtype=float)
    args[field].flat[0] = np.nan
    with pytest.raises(ValidationError) as info:
        make_continuous_ssm(**args)
    assert info.value.field == field


def test_legs_matrix_builds_valid_ssm():
    ssm = make_continuous_ssm(hippo_matrix("legs", 4), np.ones(4), np.ones(4))
    assert ssm.a[0, 0] == -1
    assert np.all(np.isreal(ssm.a)) and np.all(np.isfinite(ssm.a))


def test_containers_are_read_only():
    ssm = make_continuous_ssm([[-1]], [1], [1])
    with pytest.raises(ValueError):
        ssm.a[0, 0] = 3


# -- conjugate ------------------------------------------------------------------------

def test_identity_conjugation():
    rng = np.random.default_rng(0)
    ssm = random_stable_ssm(rng, 4)
    out = conjugate(ssm, np.eye(4))
    np.testing.assert_allclose(out.a, ssm.a, atol=1e-15)
    np.testing.assert_allclose(out.b, ssm.b, atol=1e-15)
    np.testing.assert_allclose(out.c, ssm.c, atol=1e-15)


def test_permutation_conjugation():
    ssm = make_continuous_ssm(np.diag([-1.0, -2.0]), [1.0, 2.0], [3.0, 4.0])
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = conjugate(ssm, swap)
    np.testing.assert_allclose(out.a, np.diag([-2.0, -1.0]))
    np.testing.assert_allclose(out.b, [2.0, 1.0])
    np.testing.assert_allclose(out.c, [4.0, 3.0])


def test_conjugation_preserves_kernel_n4():
    rng = np.random.default_rng(1)
    ssm = random_stable_ssm(rng, 4)
    v = well_conditioned(rng, 4)
    k0 = krylov_kernel_complex(bilinear_discretize_dense(ssm, 0.1), 32)
    k1 = krylov_kernel_complex(bilinear_discretize_dense(conjugate(ssm, v), 0.1), 32)
    assert rel_linf(k1, k0) < 1e-8


def test_ill_conditioned_basis_rejected():
    ssm = make_continuous_ssm(-np.eye(2), np.ones(2), np.ones(2))
    with pytest.raises(ConditioningError) as info:
        conjugate(ssm, np.array([[1.0, 1.0], [1.0, 1.0 + 1e-12]]))
    assert info.value.condition > 1e8


@given(n=st.integers(1, 16), l=st.integers(1, 64), seed=st.integers(0, 2 ** 32 - 1),
       delta=st.floats(1e-3, 1.0))
def test_conjugation_invariance_property(n, l, seed, delta):
    rng = np.random.default_rng(seed)
    ssm = random_stable_ssm(rng, n)
    v = well_conditioned(rng, n)
    k0 = krylov_kernel_complex(bilinear_discretize_dense(ssm, delta), l)
    k1 = krylov_kernel_complex(bilinear_discretize_dense(conjugate(ssm, v), delta), l)
    assert rel_linf(k1, k0) < 1e-8


@given(n=st.integers(1, 12), seed=st.integers(0, 2 ** 32 - 1), delta=st.floats(1e-3, 1.0))
def test_conjugation_commutes_with_discretization(n, seed, delta):
    rng = np.random.default_rng(seed)
    ssm = random_stable_ssm(rng, n)
    v = well_conditioned(rng, n)
    first = conjugate_discrete(bilinear_discretize_dense(ssm, delta), v)
    second = bilinear_discretize_dense(conjugate(ssm, v), delta)
    np.testing.assert_allclose(first.a_bar, second.a_bar, atol=1e-10)
    np.testing.assert_allclose(first.b_bar, second.b_bar, atol=1e-10 * max(1, np.abs(second.b_bar).max()))
    np.testing.assert_allclose(first.c_bar, second.c_bar, atol=1e-10)


# -- dplr_to_dense ----------------------------------------------------------------------

def test_dplr_rank_zero_collapse():
    spec = make_dplr_spec([-1], [0], [0], [1], [1])
    np.testing.assert_array_equal(dplr_to_dense(spec), [[-1]])


def test_dplr_hand_arithmetic():
    spec = make_dplr_spec([-1, -2], [1, 1], [1, 0], [1, 1], [1, 1])
    np.testing.assert_array_equal(dplr_to_dense(spec), [[-2, 0], [-1, -2]])


def test_legs_dplr_spectrum_matches_hippo():
    dense = dplr_to_dense(hippo_dplr("legs", 8))
    got = np.sort_complex(np.linalg.eigvals(dense))
    # LegS is lower triangular with diagonal -(n+1)
    np.testing.assert_allclose(got, -np.arange(8, 0, -1), atol=1e-9)


@given(n=st.integers(2, 16), rank=st.integers(1, 2), seed=st.integers(0, 2 ** 32 - 1))
def test_low_rank_residual_has_rank_r(n, rank, seed):
    spec = random_stable_dplr(np.random.default_rng(seed), n, rank)
    a = dplr_to_dense(spec)
    resid = np.diag(spec.lambda_) - a
    np.testing.assert_allclose(resid, spec.p @ spec.q.conj().T, atol=1e-12)
    sv = np.linalg.svd(resid, compute_uv=False)
    assert np.sum(sv > 1e-10 * np.linalg.norm(a, 2)) <= rank


def test_pp_star_ties_q_to_p():
    spec = make_dplr_spec([-1, -2], [1, 2], [3, 4], [1, 1], [1, 1])
    tied = pp_star(spec)
    np.testing.assert_array_equal(tied.q, tied.p)
    assert np.all(np.linalg.eigvals(dplr_to_dense(tied)).real < 0)


# -- s4-params-v1 ----------------------------------------------------------------------

@pytest.mark.parametrize("family", ["legs", "legt", "lagt"])
def test_params_roundtrip(family):
    spec = hippo_dplr(family, 6, seed=3)
    blob = json.loads(json.dumps(encode_params(spec, 0.01, family=family)))
    assert blob["format"] == PARAMS_FORMAT
    assert set(blob) >= {"lambda", "p", "q", "b", "c", "rank", "delta"}
    back, delta, extras = decode_params(blob)
    assert delta == 0.01 and extras == {"family": family}
    assert back.rank == spec.rank and back.conjugate_symmetric == spec.conjugate_symmetric
    for name in ("lambda_", "p", "q", "b", "c"):
        np.testing.assert_array_equal(getattr(back, name), getattr(spec, name))


def test_params_wrong_format():
    blob = encode_params(hippo_dplr("legs", 2))
    blob["format"] = "other"
    with pytest.raises(ValidationError):
        decode_params(blob)


def test_nplr_decomposition_serializes_with_family():
    spec = nplr_decompose("legt", 4).to_dplr(np.ones(4), np.ones(4))
    blob = encode_params(spec, family="legt")
    assert blob["rank"] == 2 and blob["family"] == "legt"
