"""Relative index against the reference splitting H^- x R."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import ldl

from .errors import DegenerateHessian
from .functional import euclid_parts

ZERO_TOL = 1e-10


@dataclass
class IndexReport:
    n_neg_hessian: int
    reference_dim: int
    rel_index: int


def inertia(A, zero_tol=ZERO_TOL):
    """(n_neg, n_zero, n_pos) of a symmetric matrix via LDL^T with pivoting.

    The block diagonal factor is congruent to A, so its eigenvalues carry the
    same signs (Sylvester).  Pivots below zero_tol * max(1, |A|) count as zero.
    """
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    _, D, _ = ldl(A, lower=True)
    ev = []
    n = len(D)
    i = 0
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0.0:
            ev.extend(np.linalg.eigvalsh(D[i:i + 2, i:i + 2]))
            i += 2
        else:
            ev.append(D[i, i])
            i += 1
    ev = np.asarray(ev)
    scale = zero_tol * max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    n_zero = int(np.sum(np.abs(ev) <= scale))
    n_neg = int(np.sum(ev < -scale))
    return n_neg, n_zero, n - n_neg - n_zero


def reference_dim(model) -> int:
    """Real dimension of H^-_N x R."""
    return model.n_negative + 1


def relative_index(model, pot, rec) -> IndexReport:
    """i_rel = #negative Hessian directions - dim(H^- x R).

    A circle carries one mandated zero mode which is left out of the count.
    """
    allowed = 1 if rec.orbit_type == "circle" else 0
    _, _, A = euclid_parts(model, pot, rec.point.vector())
    n_neg, n_zero, _ = inertia(A)
    if n_zero > allowed:
        raise DegenerateHessian(f"{n_zero} zero modes at a record allowing {allowed}")
    ref = reference_dim(model)
    return IndexReport(n_neg, ref, n_neg - ref)


def grade(model, pot, records):
    """Fill rel_index (and inertia) on every record in place; returns records."""
    for rec in records:
        rep = relative_index(model, pot, rec)
        rec.rel_index = rep.rel_index
    return records
