import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_homology_ranks, naive_rank_z2
from rfh.complexes import (ChainComplexData, assemble_plain, assemble_s1, assemble_z2, bits,
                           check_square_zero, complex_from_dict, complex_to_dict, homology_z2,
                           kernel_basis_z2, matmul_z2, quotient_commutes, rank_z2)
from rfh.critical import break_circles
from rfh.errors import BoundarySquareNonzero
from rfh.orbits import boundary_counts


def elementary_product(n, n_ops, rng):
    """Random invertible Z/2 matrix as a product of row additions, with its inverse."""
    P, Pinv = np.eye(n, dtype=np.int64), np.eye(n, dtype=np.int64)
    for _ in range(n_ops):
        i, j = rng.choice(n, 2, replace=False)
        E = np.eye(n, dtype=np.int64)
        E[i, j] = 1
        P, Pinv = (E @ P) % 2, (Pinv @ E) % 2
    return P, Pinv


def random_complex(seed, n=20):
    """C_2 -> C_1 -> C_0 of size n each, d^2 = 0 by composing a standard complex
    with random changes of basis."""
    rng = np.random.default_rng(seed)
    r1 = int(rng.integers(0, n + 1))
    r2 = int(rng.integers(0, n - r1 + 1))
    d1 = np.zeros((n, n), dtype=np.int64)
    d1[np.arange(r1), np.arange(r1)] = 1
    d2 = np.zeros((n, n), dtype=np.int64)
    d2[r1 + np.arange(r2), np.arange(r2)] = 1
    (P0, _), (P1, P1i), (P2, P2i) = (elementary_product(n, 200, rng) for _ in range(3))
    D1 = (P0 @ d1 @ P1i) % 2
    D2 = (P1 @ d2 @ P2i) % 2
    gens = {k: [f"g{k}_{i}" for i in range(n)] for k in range(3)}
    return ChainComplexData("plain", (0, 1), gens, {1: D1.astype(np.uint8), 2: D2.astype(np.uint8)})


@pytest.mark.parametrize("seed", range(6))
def test_random_complexes_against_naive_elimination(seed):
    cc = random_complex(seed)
    check_square_zero(cc)
    h = homology_z2(cc)
    assert h.ranks == naive_homology_ranks(cc.generators, cc.boundary)
    assert all(0 <= h.ranks[k] <= len(cc.generators[k]) for k in h.ranks)


@settings(max_examples=80, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(0, 12), st.integers(0, 12)), elements=st.integers(0, 1)))
def test_rank_and_kernel(M):
    r = rank_z2(M)
    assert r == naive_rank_z2(M)
    K = kernel_basis_z2(M)
    n = M.shape[1]
    assert K.shape == (n, n - r)
    if K.size:
        assert not matmul_z2(M, K).any()
        assert naive_rank_z2(K.T) == n - r


def test_square_zero_violation_detected():
    gens = {0: ["a"], 1: ["b"], 2: ["c"]}
    cc = ChainComplexData("plain", (0, 1), gens, {1: np.ones((1, 1), np.uint8), 2: np.ones((1, 1), np.uint8)})
    with pytest.raises(BoundarySquareNonzero):
        check_square_zero(cc)


def test_trivial_cases():
    single = ChainComplexData("plain", (0, 1), {3: ["a"]}, {})
    assert homology_z2(single).ranks == {3: 1}
    gens = {0: ["a", "b"], 1: ["c"], 2: ["d", "e", "f"]}
    zero = ChainComplexData("plain", (0, 1), gens, {})
    assert homology_z2(zero).ranks == {0: 2, 1: 1, 2: 3}
    assert homology_z2(zero).interior_degrees == [1]


def _plain_on_kids(c):
    return assemble_plain(c.kids, c.counts, c.window)


def test_broken_linear_sphere_plain_complex(cplx4):
    cc = _plain_on_kids(cplx4)
    degs = cc.degrees()
    assert degs == list(range(-8, 8))
    assert all(len(cc.generators[k]) == 1 for k in degs)
    for k in degs[1:]:
        # even -> odd: iso (one orbit); odd -> even inside a circle: two orbits, zero
        assert int(cc.matrix(k)[0, 0]) == (1 if k % 2 == 0 else 0)
    h = homology_z2(cc)
    assert all(h.ranks[k] == 0 for k in h.interior_degrees)


def test_linear_s1_complex_has_zero_boundary(cplx4):
    cc = assemble_s1(cplx4.circles, cplx4.counts, cplx4.window)
    assert cc.degrees() == list(range(-8, 8, 2))
    assert not any(M.any() for M in cc.boundary.values())
    assert all(v == 1 for v in homology_z2(cc).ranks.values())


def test_one_circle_and_unbroken_circles(cplx4):
    one = [c for c in cplx4.circles][:1]
    cc = assemble_s1(one, cplx4.counts, cplx4.window)
    assert homology_z2(cc).ranks == {one[0].rel_index: 1}
    fresh = [type(c)(**{**c.__dict__, "broken_children": None}) for c in cplx4.circles]
    with pytest.raises(ValueError):
        assemble_s1(fresh, cplx4.counts, cplx4.window)


def test_max_and_min_children_give_equal_counts(cplx4):
    by_idx = {c.rel_index: c for c in cplx4.circles}
    for k, c in by_idx.items():
        if k - 2 not in by_idx:
            continue
        lo = by_idx[k - 2]
        mins = cplx4.counts.get((c.broken_children[0], lo.broken_children[0]), 0)
        maxs = cplx4.counts.get((c.broken_children[1], lo.broken_children[1]), 0)
        assert mins == maxs


def test_z2_complex_and_quotient_square(real4, real4_orbits):
    plain = assemble_plain(real4.records, real4_orbits.counts, real4.window)
    z2 = assemble_z2(real4.records, real4_orbits.counts, real4.window)
    assert quotient_commutes(plain, z2, real4.records)
    # symmetric counts <z, y> = <z, ybar> give zero entries
    assert not any(M.any() for M in z2.boundary.values())
    h = homology_z2(z2)
    assert all(h.ranks[k] == 1 for k in h.interior_degrees)
    for k in plain.degrees()[1:]:
        assert np.array_equal(plain.matrix(k), np.ones((2, 2), np.uint8))


def test_homology_independent_of_break_strength(cplx4):
    ref = homology_z2(_plain_on_kids(cplx4)).ranks
    for strength in (1e-4, 1e-3):
        circles = [type(c)(**{**c.__dict__, "broken_children": None}) for c in cplx4.circles]
        broken, kids = break_circles(cplx4.model, cplx4.pot, circles, strength)
        counts, _ = boundary_counts(cplx4.model, broken, kids)
        assert homology_z2(assemble_plain(kids, counts, cplx4.window)).ranks == ref
        assert homology_z2(assemble_s1(circles, counts, cplx4.window)).ranks == \
            homology_z2(assemble_s1(cplx4.circles, cplx4.counts, cplx4.window)).ranks


def test_serialization(real4, real4_orbits):
    cc = assemble_plain(real4.records, real4_orbits.counts, real4.window)
    back = complex_from_dict(complex_to_dict(cc))
    assert back.generators == cc.generators
    for k in cc.boundary:
        assert bits(back.matrix(k)) == bits(cc.matrix(k))
    assert bits(np.array([[1, 0], [0, 1]])) == "1001"
