import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rfh.errors import DimensionMismatch, ZeroEigenvalue
from rfh.spectrum import (StatePoint, build_model, e_norm2, h_inner, h_norm2, model_from_json,
                          model_to_json, s1_rotate, split_pm)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
KINDS = [("abstract", {"N": 3}), ("dirac_toy", {"N": 3}), ("elliptic_system", {"K": 3}),
         ("beam", {"J": 1, "K": 2}), ("wave", {"J": 2})]


def test_abstract_enumeration():
    m = build_model("abstract", {"N": 3})
    assert m.eigenvalues.tolist() == [-3, -2, -1, 1, 2, 3]
    assert m.labels.tolist() == [-3, -2, -1, 1, 2, 3]
    assert m.n_negative == 3


def test_beam_eigenvalues():
    m = build_model("beam", {"J": 1, "K": 1})
    mu = np.pi ** 2
    expect = sorted([-mu, mu] + 2 * [-np.sqrt(1 + mu ** 2), np.sqrt(1 + mu ** 2)])
    assert np.allclose(m.eigenvalues, expect, rtol=1e-14)


def test_wave_has_kernel_block():
    m = build_model("wave", {"J": 2})
    assert m.kernel_dim > 0
    assert np.all(m.eigenvalues != 0)
    # resonant modes cos/sin(j t) x cos/sin(j x) for j = 1, 2 plus the constant
    assert m.kernel_dim == 1 + 4 * 2


def test_complex_doubles_coordinates():
    m = build_model("abstract", {"N": 4}, True)
    assert m.dim == 16 and m.n_negative == 8
    assert np.array_equal(m.coord_eigs[::2], m.eigenvalues)


@pytest.mark.parametrize("kind,params", KINDS)
def test_spatial_basis_is_orthonormal(kind, params):
    m = build_model(kind, params)
    w, B, K = m.spatial_basis(4 * m.max_frequency + 2)
    allf = np.concatenate([B, K]) if len(K) else B
    G = np.einsum("icp,jcp,p->ij", allf, allf, w)
    assert np.allclose(G, np.eye(len(allf)), atol=1e-12)


def test_zero_eigenvalue_rejected():
    with pytest.raises(ZeroEigenvalue):
        build_model("abstract", {"N": 2, "eigenvalues": [-1.0, 0.0, 2.0]})


def test_unknown_kind_and_bad_cutoff():
    with pytest.raises(ValueError):
        build_model("nope", {"N": 1})
    with pytest.raises(ValueError):
        build_model("abstract", {"N": 0})


def test_h_inner_examples():
    m = build_model("abstract", {"N": 3})
    e = np.zeros(6)
    e[m.label_index(2)] = 1.0
    z = StatePoint(e, 0.0)
    assert h_inner(m, z, z) == 2.0
    assert h_inner(m, StatePoint(np.zeros(6), 1.0), StatePoint(np.zeros(6), 3.0)) == 3.0


def test_h_inner_matches_brute_force(rng):
    m = build_model("abstract", {"N": 5}, True)
    for _ in range(20):
        a, b = rng.standard_normal((2, m.dim))
        l1, l2 = rng.standard_normal(2)
        brute = l1 * l2
        for i in range(m.dim):
            brute += abs(m.coord_eigs[i]) * a[i] * b[i]
        assert np.isclose(h_inner(m, StatePoint(a, l1), StatePoint(b, l2)), brute, rtol=1e-13)


def test_dimension_mismatch():
    m = build_model("abstract", {"N": 3})
    with pytest.raises(DimensionMismatch):
        h_inner(m, StatePoint(np.zeros(5), 0.0), StatePoint(np.zeros(6), 0.0))


def test_split_pm_examples():
    m = build_model("abstract", {"N": 2})
    up, um = split_pm(m, StatePoint(np.ones(4), 0.0))
    assert up.coeffs.tolist() == [0, 0, 1, 1]
    assert um.coeffs.tolist() == [1, 1, 0, 0]
    u = StatePoint(np.array([2.0, 3.0, 0.0, 0.0]), 0.0)
    up, um = split_pm(m, u)
    assert not up.coeffs.any() and np.array_equal(um.coeffs, u.coeffs)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 8, elements=finite), finite)
def test_norm_comparison(a, lam):
    m = build_model("abstract", {"N": 4})
    z = StatePoint(a, 0.0)
    e2 = e_norm2(z)
    h2 = h_norm2(m, z)
    w = np.abs(m.coord_eigs)
    assert w.min() * e2 <= h2 * (1 + 1e-12) + 1e-300
    assert h2 <= w.max() * e2 * (1 + 1e-12) + 1e-300


@settings(max_examples=60, deadline=None)
@given(arrays(float, 8, elements=finite), arrays(float, 8, elements=finite))
def test_split_pm_is_projection_pair(a, b):
    m = build_model("abstract", {"N": 4})
    up, um = split_pm(m, StatePoint(a, 0.0))
    assert np.array_equal(up.coeffs + um.coeffs, a)
    assert np.array_equal(split_pm(m, up)[0].coeffs, up.coeffs)
    assert np.array_equal(split_pm(m, um)[1].coeffs, um.coeffs)
    assert h_inner(m, up, um) == 0.0
    s = split_pm(m, StatePoint(a + b, 0.0))[0].coeffs
    assert np.allclose(s, up.coeffs + split_pm(m, StatePoint(b, 0.0))[0].coeffs)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 8, elements=finite), st.floats(-7, 7))
def test_s1_rotation_preserves_norms(a, theta):
    m = build_model("abstract", {"N": 2}, True)
    r = s1_rotate(m, a, theta)
    assert np.isclose(np.dot(r, r), np.dot(a, a), rtol=1e-12, atol=1e-12)
    assert np.isclose(h_norm2(m, StatePoint(r, 0.0)), h_norm2(m, StatePoint(a, 0.0)),
                      rtol=1e-12, atol=1e-12)


def test_s1_needs_complex_structure():
    with pytest.raises(ValueError):
        s1_rotate(build_model("abstract", {"N": 2}), np.zeros(4), 0.1)


@pytest.mark.parametrize("kind,params", KINDS)
def test_json_round_trip(kind, params):
    m = build_model(kind, params)
    back = model_from_json(model_to_json(m))
    assert np.array_equal(back.eigenvalues, m.eigenvalues)
    assert np.array_equal(back.labels, m.labels)
    assert back.kernel_dim == m.kernel_dim and back.kind == m.kind
