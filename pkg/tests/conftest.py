"""Shared, session-scoped computations; the expensive ones run once."""
from types import SimpleNamespace

import numpy as np
import pytest

from rfh.critical import break_circles, find_critical_points
from rfh.grading import grade
from rfh.orbits import boundary_counts
from rfh.potentials import sphere
from rfh.spectrum import build_model

WINDOW = (-4.5, 4.5)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture(scope="session")
def real4():
    """Linear real sphere on the abstract |k| <= 4 model, graded records."""
    model = build_model("abstract", {"N": 4})
    pot = sphere("z2")
    recs = grade(model, pot, find_critical_points(model, pot, WINDOW, 200, 0))
    return SimpleNamespace(model=model, pot=pot, records=recs, window=WINDOW)


@pytest.fixture(scope="session")
def real4_orbits(real4):
    counts, orbs = boundary_counts(real4.model, real4.pot, real4.records)
    return SimpleNamespace(counts=counts, orbits=orbs)


@pytest.fixture(scope="session")
def cplx4():
    """Linear complex sphere (circles), broken at strength 1e-2, with orbits."""
    model = build_model("abstract", {"N": 4}, True)
    pot = sphere("s1")
    circles = grade(model, pot, find_critical_points(model, pot, WINDOW, 200, 0))
    broken, kids = break_circles(model, pot, circles, 1e-2)
    counts, orbs = boundary_counts(model, broken, kids)
    return SimpleNamespace(model=model, pot=pot, circles=circles, broken=broken, kids=kids,
                           counts=counts, orbits=orbs, window=WINDOW)
