"""Graded Z/2 chain complexes in an action window and their homology.

Boundary matrices map C_k -> C_{k-1}; rows index generators of degree k - 1,
columns those of degree k.  Ranks over Z/2 are computed by elimination on rows
packed into Python integers (XOR of bit rows).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundarySquareNonzero

FLAVORS = ("plain", "s1", "z2")


@dataclass
class ChainComplexData:
    flavor: str
    window: tuple
    generators: dict  # degree -> list of generator ids
    boundary: dict  # degree k -> uint8 matrix of shape (|C_{k-1}|, |C_k|)
    provenance: dict = field(default_factory=dict)

    def degrees(self):
        return sorted(self.generators)

    def matrix(self, k):
        rows = len(self.generators.get(k - 1, []))
        cols = len(self.generators.get(k, []))
        return self.boundary.get(k, np.zeros((rows, cols), dtype=np.uint8))


@dataclass
class HomologyTable:
    flavor: str
    window: tuple
    ranks: dict
    interior_degrees: list


# -- Z/2 linear algebra ------------------------------------------------------

def pack_rows(M):
    """Rows of a 0/1 matrix as integers (bit j = column j)."""
    M = np.asarray(M, dtype=np.uint8) & 1
    return [int("".join(str(b) for b in row[::-1]), 2) if len(row) else 0 for row in M]


def rank_z2(M) -> int:
    """Rank over Z/2 by elimination on packed bit rows."""
    rows = [r for r in pack_rows(M) if r]
    rank = 0
    while rows:
        pivot = rows.pop()
        if pivot == 0:
            continue
        rank += 1
        low = pivot & -pivot
        rows = [r ^ pivot if r & low else r for r in rows]
        rows = [r for r in rows if r]
    return rank


def kernel_basis_z2(M):
    """Columns spanning the null space of M over Z/2."""
    M = np.asarray(M, dtype=np.uint8).copy() & 1
    rows, cols = M.shape
    pivots = []
    r = 0
    for c in range(cols):
        hit = np.flatnonzero(M[r:, c]) if r < rows else []
        if len(hit) == 0:
            continue
        i = r + hit[0]
        M[[r, i]] = M[[i, r]]
        for j in np.flatnonzero(M[:, c]):
            if j != r:
                M[j] ^= M[r]
        pivots.append(c)
        r += 1
    free = [c for c in range(cols) if c not in pivots]
    N = np.zeros((cols, len(free)), dtype=np.uint8)
    for k, f in enumerate(free):
        N[f, k] = 1
        for i, c in enumerate(pivots):
            N[c, k] = M[i, f]
    return N


def matmul_z2(A, B):
    A = np.asarray(A, dtype=np.int64)
    B = np.asarray(B, dtype=np.int64)
    return ((A @ B) % 2).astype(np.uint8)


def check_square_zero(cc: ChainComplexData):
    for k in cc.degrees():
        if k - 1 in cc.generators:
            prod = matmul_z2(cc.matrix(k - 1), cc.matrix(k))
            if prod.size and prod.any():
                raise BoundarySquareNonzero(f"d_{k - 1} d_{k} != 0 in the {cc.flavor} complex")


# -- assembly -----------------------------------------------------------------

def _in_window(rec, window):
    return window[0] <= rec.action <= window[1]


def _count(counts, src, tgt):
    key = (src, tgt)
    if key not in counts:
        raise KeyError(f"no orbit count for {src} -> {tgt}")
    return int(counts[key]) % 2


def _grade(items):
    gens = {}
    for deg, gid in items:
        gens.setdefault(int(deg), []).append(gid)
    for deg in gens:
        gens[deg].sort()
    return gens


def _build(flavor, window, gens, entry, provenance):
    boundary = {}
    for k in sorted(gens):
        if k - 1 not in gens:
            continue
        M = np.zeros((len(gens[k - 1]), len(gens[k])), dtype=np.uint8)
        for j, src in enumerate(gens[k]):
            for i, tgt in enumerate(gens[k - 1]):
                M[i, j] = entry(src, tgt)
        boundary[k] = M
    cc = ChainComplexData(flavor, tuple(window), gens, boundary, provenance)
    check_square_zero(cc)
    return cc


def assemble_plain(records, orbit_counts, window) -> ChainComplexData:
    """Morse complex: d z = sum (#M(z, y) mod 2) y over y of index one less."""
    recs = [r for r in records if _in_window(r, window)]
    gens = _grade((r.rel_index, r.id) for r in recs)
    return _build("plain", window, gens, lambda s, t: _count(orbit_counts, s, t),
                  {"counts": "plain orbit counts"})


def assemble_s1(circles, perturbed_counts, window) -> ChainComplexData:
    """Complex over circle quotients, graded by the circle index.

    The entry between circles C and C' uses the count between their max
    children (after symmetry breaking).
    """
    circs = [c for c in circles if _in_window(c, window)]
    for c in circs:
        if c.broken_children is None:
            raise ValueError(f"circle {c.id} has not been broken")
    by_id = {c.id: c for c in circs}
    gens = _grade((c.rel_index, c.id) for c in circs)

    def entry(s, t):
        return _count(perturbed_counts, by_id[s].broken_children[1], by_id[t].broken_children[1])

    return _build("s1", window, gens, entry, {"counts": "max-child orbit counts"})


def assemble_z2(records, orbit_counts, window) -> ChainComplexData:
    """Complex over +/- pairs: entry = <z, y> + <z, ybar> for a representative z."""
    recs = [r for r in records if _in_window(r, window)]
    pairs = {}
    for r in recs:
        pairs.setdefault(r.orbit_id, []).append(r)
    reps = {}
    for oid, members in pairs.items():
        members.sort(key=lambda r: r.id)
        reps[oid] = members
    gens = _grade((members[0].rel_index, oid) for oid, members in reps.items())

    def entry(s, t):
        src = reps[s][0].id
        return sum(_count(orbit_counts, src, y.id) for y in reps[t]) % 2

    return _build("z2", window, gens, entry, {"counts": "representative orbit counts"})


def quotient_matrix(plain: ChainComplexData, z2: ChainComplexData, records, k):
    """The quotient map C_k -> C_k^{Z2} sending z and its mirror to their pair."""
    oid = {r.id: r.orbit_id for r in records}
    rows = z2.generators.get(k, [])
    cols = plain.generators.get(k, [])
    M = np.zeros((len(rows), len(cols)), dtype=np.uint8)
    for j, gid in enumerate(cols):
        M[rows.index(oid[gid]), j] = 1
    return M


def quotient_commutes(plain, z2, records) -> bool:
    """f d = d_Z2 f in every degree."""
    for k in plain.degrees():
        if k - 1 not in plain.generators:
            continue
        lhs = matmul_z2(quotient_matrix(plain, z2, records, k - 1), plain.matrix(k))
        rhs = matmul_z2(z2.matrix(k), quotient_matrix(plain, z2, records, k))
        if not np.array_equal(lhs, rhs):
            return False
    return True


# -- homology --------------------------------------------------------------

def homology_z2(cc: ChainComplexData) -> HomologyTable:
    """rank H_k = dim C_k - rank d_k - rank d_{k+1}; top and bottom degrees
    are window-truncation artifacts and left out of interior_degrees."""
    degs = cc.degrees()
    ranks = {}
    for k in degs:
        n = len(cc.generators[k])
        r_out = rank_z2(cc.matrix(k)) if k - 1 in cc.generators else 0
        r_in = rank_z2(cc.matrix(k + 1)) if k + 1 in cc.generators else 0
        ranks[k] = n - r_out - r_in
    interior = [k for k in degs if degs and degs[0] < k < degs[-1]]
    return HomologyTable(cc.flavor, cc.window, ranks, interior)


# -- serialization ---------------------------------------------------------

def bits(M) -> str:
    return "".join(str(int(b)) for b in np.asarray(M, dtype=np.uint8).ravel())


def complex_to_dict(cc: ChainComplexData) -> dict:
    return {
        "flavor": cc.flavor,
        "window": list(cc.window),
        "generators": {str(k): v for k, v in sorted(cc.generators.items())},
        "boundary": {str(k): {"shape": list(M.shape), "bits": bits(M)}
                     for k, M in sorted(cc.boundary.items())},
        "provenance": cc.provenance,
    }


def complex_from_dict(doc: dict) -> ChainComplexData:
    gens = {int(k): list(v) for k, v in doc["generators"].items()}
    boundary = {}
    for k, b in doc["boundary"].items():
        flat = np.array([int(c) for c in b["bits"]], dtype=np.uint8)
        boundary[int(k)] = flat.reshape(b["shape"])
    return ChainComplexData(doc["flavor"], tuple(doc["window"]), gens, boundary,
                            doc.get("provenance", {}))


def homology_to_dict(h: HomologyTable) -> dict:
    return {
        "flavor": h.flavor,
        "window": list(h.window),
        "ranks": {str(k): int(v) for k, v in sorted(h.ranks.items())},
        "interior_degrees": [int(k) for k in h.interior_degrees],
    }


def complex_to_json(cc) -> str:
    return json.dumps(complex_to_dict(cc), indent=1)
