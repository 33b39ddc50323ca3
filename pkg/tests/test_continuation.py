import numpy as np
import pytest

from rfh.complexes import homology_z2
from rfh.continuation import (compose, energy_check, find_nonautonomous_orbits, induced_homology,
                              is_homology_iso, make_schedule, run_continuation, track_records)
from rfh.critical import find_critical_points
from rfh.errors import IndexMismatch, UnboundedDifference
from rfh.grading import grade
from rfh.potentials import Potential, ellipsoid, p_power, sphere
from rfh.spectrum import build_model

M2 = build_model("abstract", {"N": 2})
WINDOW = (-1.5, 1.5)
C = np.array([1.06, 0.95, 1.04, 0.93])


@pytest.fixture(scope="module")
def recs():
    return grade(M2, sphere(), find_critical_points(M2, sphere(), WINDOW, 80, 0))


@pytest.fixture(scope="module")
def ell_run(recs):
    sched = make_schedule(M2, sphere(), ellipsoid(C), 0.06, 1)
    return run_continuation(M2, sched, recs, WINDOW)


def test_constant_schedule():
    s = make_schedule(M2, sphere(), sphere(), 0.05)
    assert s.s_values == [0.0, 1.0] and s.sup_difference == 0.0 and len(s.steps) == 2


def test_step_count_against_closed_form_sup():
    delta = 0.02
    s = make_schedule(M2, sphere(), ellipsoid(C), delta, 0)
    # |F1 - F2| = 1/2 |sum (c_i - 1) a_i^2| on the ball of radius 2 / sqrt(min c)
    exact = 0.5 * np.max(np.abs(C - 1)) * 4.0 / np.min(C)
    assert 0.5 * exact <= s.sup_difference <= exact * (1 + 1e-12)
    assert len(s.s_values) - 1 == int(np.ceil(s.sup_difference / delta - 1e-12))
    assert len(s.s_values) - 1 <= int(np.ceil(exact / delta))


def test_cutoff_blend_schedule_is_finite():
    blend = Potential("cutoff_blend", {"inner": p_power(3), "outer": sphere(),
                                       "r_in2": 1.0, "r_out2": 2.0})
    s = make_schedule(M2, sphere(), blend, 0.05)
    assert np.isfinite(s.sup_difference) and 1 <= len(s.steps) - 1 < 1000


def test_unbounded_difference_and_bad_delta():
    steep = Potential("custom_quadratic_plus", {"poly": [-0.5, 0.5, 1e4]})
    with pytest.raises(UnboundedDifference):
        make_schedule(M2, sphere(), steep, 0.05)
    with pytest.raises(ValueError):
        make_schedule(M2, sphere(), sphere(), 0.0)


def test_constant_homotopy_gives_identity(recs):
    sched = make_schedule(M2, sphere(), sphere(), 0.05)
    run = run_continuation(M2, sched, recs, WINDOW)
    for M in run.composite.phi.values():
        assert np.array_equal(M, np.eye(len(M), dtype=np.uint8))
    for (z, x), orbs in run.orbits[0].items():
        assert len(orbs) == (1 if z == x else 0)
        for o in orbs:
            assert np.allclose(o.nodes, o.nodes[0], atol=1e-9)


def test_mismatched_indices(recs):
    a = next(r for r in recs if r.rel_index == 0)
    b = next(r for r in recs if r.rel_index == 1)
    with pytest.raises(IndexMismatch):
        find_nonautonomous_orbits(M2, (sphere(), ellipsoid(C)), a, b)


def test_sphere_to_ellipsoid_is_identity_on_generators(ell_run):
    assert len(ell_run.maps) >= 2 and ell_run.energy_ok
    for M in ell_run.composite.phi.values():
        assert np.array_equal(M, np.eye(len(M), dtype=np.uint8))
    for step in ell_run.orbits:
        for (z, x), orbs in step.items():
            assert len(orbs) == (1 if z == x else 0)
            for o in orbs:
                # the coordinate axes stay invariant along the homotopy
                k = int(np.argmax(np.abs(o.nodes[0, :-1])))
                others = np.delete(o.nodes[:, :-1], k, axis=1)
                assert np.max(np.abs(others)) <= 1e-8
                assert energy_check(o, WINDOW, ell_run.schedule.delta)


def test_induced_map_is_homology_iso(ell_run):
    assert is_homology_iso(ell_run.composite)
    ind = induced_homology(ell_run.composite)
    h2 = homology_z2(ell_run.complexes[-1])
    for k in h2.interior_degrees:
        assert ind[k][1] == h2.ranks[k]


def test_composite_matches_direct_map(recs, ell_run):
    direct = run_continuation(M2, make_schedule(M2, sphere(), ellipsoid(C), 10.0, 1), recs, WINDOW)
    assert len(direct.maps) == 1
    a, b = induced_homology(direct.composite), induced_homology(ell_run.composite)
    assert a == b
    assert compose(ell_run.maps).phi.keys() == direct.composite.phi.keys()


def test_tracking_keeps_ids(recs):
    out = track_records(M2, ellipsoid(C), recs)
    assert [r.id for r in out] == [r.id for r in recs]
    assert [r.rel_index for r in out] == [r.rel_index for r in recs]
