"""Continuation maps between the complexes of two starshaped potentials.

The homotopy F_t = (1 - eta(t)) F_1 + eta(t) F_2 (eta a quintic ramp on
[0, 1]) is split into steps whose potentials differ by at most delta on a
sampled ball.  For each step, index-preserving solutions of the
non-autonomous flow define Phi(z) = sum (#M(z, x) mod 2) x; Phi is checked to
be a chain map and the composite is checked to induce a bijection on homology.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .collocation import CollocationProblem, make_mesh
from .complexes import (assemble_plain, bits, homology_z2, kernel_basis_z2, matmul_z2,
                        rank_z2)
from .critical import CriticalRecord, newton_solve, residual_norm
from .errors import ChainMapViolation, IndexMismatch, NewtonStagnation, UnboundedDifference
from .functional import euclid_parts, flow_from_jets
from .grading import grade, inertia
from .orbits import (ENDPOINT_TOL, OrbitRecord, _bc, _dedup, _project_path, boundary_counts,
                     count_mod2, endpoint_data, first_element, horizon, ps_constant)
from .potentials import Potential, check_starshape, potential_jets, potential_values, surface_radius
from .smooth import quintic_smoothstep
from .spectrum import StatePoint

log = logging.getLogger(__name__)

DIFF_CAP = 1e3  # sampled sup |F1 - F2| above this is treated as unbounded


@dataclass
class HomotopySchedule:
    f1: Potential
    f2: Potential
    s_values: list  # partition 0 = s_0 < ... < s_n = 1
    steps: list  # potentials F_{s_j}
    delta: float
    sup_difference: float
    eta: str = "quintic"


@dataclass
class ContinuationMap:
    phi: dict  # degree -> uint8 matrix (|C_k(I_2)|, |C_k(I_1)|)
    source: object  # ChainComplexData of I_1
    target: object  # ChainComplexData of I_2
    provenance: dict = field(default_factory=dict)


def homotopy(f1, f2, s) -> Potential:
    if s == 0.0:
        return f1
    if s == 1.0:
        return f2
    sym = f1.symmetry if f1.symmetry == f2.symmetry else "none"
    return Potential("homotopy", {"f1": f1, "f2": f2, "s": float(s)}, sym)


def default_delta(window, a_star, epsilon=0.1):
    """delta = epsilon / (2 C) with C the multiplier bound of the window."""
    return epsilon / (2.0 * ps_constant(window, a_star))


def make_schedule(model, f1, f2, delta, sample_seed=0, n_samples=10_000) -> HomotopySchedule:
    """Smallest uniform partition with sup |F_{s_j+1} - F_{s_j}| <= delta on a
    sampled ball of radius twice the larger surface radius."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    for f in (f1, f2):
        rep = check_starshape(f, model, 32, sample_seed)
        if not rep.passed:
            raise ValueError(f"potential {f.kind} fails the starshape check")
    R = 2.0 * max(surface_radius(f1, model), surface_radius(f2, model))
    rng = np.random.default_rng(sample_seed)
    D = rng.standard_normal((n_samples, model.dim))
    D /= np.linalg.norm(D, axis=1)[:, None]
    U = D * (R * rng.random(n_samples) ** (1.0 / model.dim))[:, None]
    diff = np.abs(potential_values(f1, model, U) - potential_values(f2, model, U))
    sup = float(np.max(diff))
    if not np.isfinite(sup) or sup > DIFF_CAP:
        raise UnboundedDifference(f"sampled |F1 - F2| reaches {sup:.3e}")
    n = max(1, int(np.ceil(sup / delta - 1e-12)))
    s_values = [j / n for j in range(n + 1)]
    return HomotopySchedule(f1, f2, s_values, [homotopy(f1, f2, s) for s in s_values],
                            float(delta), sup)


# -- non-autonomous orbits -----------------------------------------------------

def homotopy_field(model, pot_a, pot_b):
    """Flow of I_t with F_t = (1 - eta(t)) F_a + eta(t) F_b, batched over nodes."""

    def field(t, Z, want_jac=True):
        eta, _ = quintic_smoothstep(np.asarray(t, dtype=float))
        eta = np.broadcast_to(eta, (Z.shape[0],))
        U = Z[:, :-1]
        k, n = U.shape
        F = np.zeros(k)
        g = np.zeros((k, n))
        H = np.zeros((k, n, n)) if want_jac else None
        for pot, w in ((pot_a, 1.0 - eta), (pot_b, eta)):
            live = w > 0
            if not np.any(live):
                continue
            Fp, gp, Hp = potential_jets(pot, model, U[live])
            F[live] += w[live] * Fp
            g[live] += w[live, None] * gp
            if want_jac:
                H[live] += w[live, None, None] * Hp
        return flow_from_jets(model, Z, F, g, H)

    return field


def time_actions(model, pot_a, pot_b, times, Z):
    eta, _ = quintic_smoothstep(np.asarray(times, dtype=float))
    U = Z[:, :-1]
    F = (1 - eta) * potential_values(pot_a, model, U) + eta * potential_values(pot_b, model, U)
    return 0.5 * np.einsum("ki,i,ki->k", U, model.coord_eigs, U) - Z[:, -1] * F


def find_nonautonomous_orbits(model, step, source, target, n_starts=3, seed=0, tol=1e-9,
                              m=64, p=8):
    """Solutions of z' = -grad I_t(z) from a critical point of I_a (t -> -inf)
    to one of I_b (t -> +inf); ``step`` is the pair (pot_a, pot_b).

    No translation anchor: the homotopy fixes the time origin.
    """
    pot_a, pot_b = step
    if source.rel_index is None or target.rel_index is None:
        raise IndexMismatch("records must be graded first")
    if source.rel_index != target.rel_index:
        raise IndexMismatch(
            f"rel_index {source.rel_index} of {source.id} != {target.rel_index} of {target.id}")
    zs, zt = source.point.vector(), target.point.vector()
    d = len(zs)
    sd, td = endpoint_data(model, pot_a, zs), endpoint_data(model, pot_b, zt)
    if sd["n_unstable"] != td["n_unstable"]:
        raise IndexMismatch("endpoint linearizations have different unstable dimensions")
    if sd["n_unstable"] == 0 or td["n_stable"] == 0:
        T, r_max, r_min = 10.0, 1.0, 1.0
    else:
        T, r_max, r_min = horizon(sd, td)
    mesh = make_mesh(T, m, p, center=(0.0, 1.0), n_center=1,
                     h0=first_element(T, m, p, r_max))
    field_fn = homotopy_field(model, pot_a, pot_b)
    prob = CollocationProblem(mesh, d, field_fn,
                              _bc(zs, sd["Q"], sd["g"], sd["w"] >= 0),
                              _bc(zt, td["Q"], td["g"], td["w"] <= 0))
    paths = _initial_paths(model, pot_a, pot_b, zs, zt, mesh.t, max(min(2 * r_min, 1.0), 1e-6),
                           sd, n_starts, seed)

    def run(Z0):
        Z, res, ok = prob.solve(Z0, tol)
        if not ok:
            log.debug("non-autonomous start did not converge (residual %.2e)", res)
            return None
        if np.linalg.norm(Z[0] - zs) > ENDPOINT_TOL or np.linalg.norm(Z[-1] - zt) > ENDPOINT_TOL:
            return None
        acts = time_actions(model, pot_a, pot_b, mesh.t, Z)
        return OrbitRecord(source.id, target.id, mesh.t.copy(), Z, res, acts, float("nan"),
                           meta={"T": T, "m": mesh.n_nodes, "p": p, "nonautonomous": True})

    out = _dedup([o for o in parallel_map(run, paths) if o is not None])
    for o in out:
        o.interp_defect = prob.interp_defect(o.nodes)
    return out


def _initial_paths(model, pot_a, pot_b, zs, zt, t, kappa, src_data, n_starts, seed):
    """Blend centred on the homotopy interval, plus bumps along unstable directions."""
    rng = np.random.default_rng(seed)
    blend = 0.5 * (1.0 + np.tanh(kappa * (t - 0.5)))
    base = zs[None, :] + blend[:, None] * (zt - zs)[None, :]
    bump = 1.0 / np.cosh(kappa * (t - 0.5))
    U = src_data["unstable"]
    dirs = [None]
    if U.shape[1]:
        order = np.argsort(-src_data["w"][src_data["w"] < 0])
        for j in order:
            v = U[:, j] / np.linalg.norm(U[:, j])
            dirs.extend([v, -v])
        while len(dirs) < n_starts:
            v = U @ rng.standard_normal(U.shape[1])
            dirs.append(v / np.linalg.norm(v))
    amp = 0.5 * max(np.linalg.norm(zs[:-1]), np.linalg.norm(zt[:-1]), 1e-3)
    eta, _ = quintic_smoothstep(t)
    paths = []
    for v in dirs[:n_starts]:
        Z = base if v is None else base + amp * bump[:, None] * v[None, :]
        Pa, Pb = _project_path(model, pot_a, Z), _project_path(model, pot_b, Z)
        if Pa is None or Pb is None:
            continue
        paths.append((1 - eta)[:, None] * Pa + eta[:, None] * Pb)
    return paths


def energy_check(orbit, window, delta):
    """I_t along a non-autonomous orbit stays within [a - delta L, b + delta L],
    L the largest |lam| on the orbit."""
    a, b = window
    lam = float(np.max(np.abs(orbit.nodes[:, -1])))
    acts = np.asarray(orbit.action_profile)
    return bool(np.min(acts) >= a - delta * lam and np.max(acts) <= b + delta * lam)


# -- tracking critical points along the schedule -------------------------------

def track_records(model, pot, records, tol=1e-10):
    """Follow each record to a critical point of ``pot`` by Newton, keeping ids."""
    out = []
    for rec in records:
        try:
            z, _ = newton_solve(model, pot, rec.z, tol)
        except NewtonStagnation as exc:
            raise NewtonStagnation(f"lost {rec.id} along the homotopy: {exc}") from exc
        val, _, A = euclid_parts(model, pot, z)
        out.append(CriticalRecord(rec.id, StatePoint.from_vector(z), val,
                                  residual_norm(model, pot, z), inertia(A),
                                  orbit_type=rec.orbit_type, orbit_id=rec.orbit_id))
    zs = np.array([r.z for r in out])
    if len(zs) > 1:
        dist = np.linalg.norm(zs[:, None] - zs[None, :], axis=2) + np.eye(len(zs))
        if np.min(dist) < 1e-6:
            raise NewtonStagnation("two records merged along the homotopy")
    return grade(model, pot, out)


# -- chain maps ----------------------------------------------------------------

def build_phi(step_counts, cc1, cc2, provenance=None) -> ContinuationMap:
    """Phi_k[x, z] = #M(z, x) mod 2, verified against d_2 Phi = Phi d_1."""
    degs = sorted(set(cc1.generators) | set(cc2.generators))
    phi = {}
    for k in degs:
        src = cc1.generators.get(k, [])
        tgt = cc2.generators.get(k, [])
        M = np.zeros((len(tgt), len(src)), dtype=np.uint8)
        for j, z in enumerate(src):
            for i, x in enumerate(tgt):
                if (z, x) not in step_counts:
                    raise KeyError(f"no continuation count for {z} -> {x}")
                M[i, j] = int(step_counts[(z, x)]) % 2
        phi[k] = M
    cmap = ContinuationMap(phi, cc1, cc2, dict(provenance or {}))
    bad = chain_map_defects(cmap)
    if bad:
        raise ChainMapViolation(f"d Phi != Phi d in degrees {bad}")
    return cmap


def _phi(cmap, k):
    if k in cmap.phi:
        return cmap.phi[k]
    return np.zeros((len(cmap.target.generators.get(k, [])),
                     len(cmap.source.generators.get(k, []))), dtype=np.uint8)


def chain_map_defects(cmap):
    """Degrees k where d_2 Phi_k != Phi_{k-1} d_1 over Z/2."""
    bad = []
    for k in sorted(cmap.phi):
        lhs = matmul_z2(cmap.target.matrix(k), _phi(cmap, k))
        rhs = matmul_z2(_phi(cmap, k - 1), cmap.source.matrix(k))
        if lhs.shape != rhs.shape or not np.array_equal(lhs, rhs):
            bad.append(k)
    return bad


def compose(maps) -> ContinuationMap:
    """Phi_n o ... o Phi_1 for maps listed in schedule order."""
    out = maps[0]
    for nxt in maps[1:]:
        phi = {k: matmul_z2(_phi(nxt, k), _phi(out, k))
               for k in sorted(set(out.phi) | set(nxt.phi))}
        out = ContinuationMap(phi, out.source, nxt.target,
                              {"composed_steps": out.provenance.get("composed_steps", 1) + 1})
    return out


def induced_homology(cmap):
    """Per degree (dim H_k(I_1), dim H_k(I_2), rank of the induced map)."""
    h1, h2 = homology_z2(cmap.source), homology_z2(cmap.target)
    out = {}
    for k in sorted(set(h1.ranks) | set(h2.ranks)):
        Z1 = kernel_basis_z2(cmap.source.matrix(k))
        B2 = cmap.target.matrix(k + 1)
        img = matmul_z2(_phi(cmap, k), Z1)
        r = rank_z2(np.hstack([B2, img])) - rank_z2(B2) if img.size else 0
        out[k] = (h1.ranks.get(k, 0), h2.ranks.get(k, 0), int(r))
    return out


def interior(cmap):
    h1, h2 = homology_z2(cmap.source), homology_z2(cmap.target)
    return sorted(set(h1.interior_degrees) & set(h2.interior_degrees))


def is_homology_iso(cmap) -> bool:
    ind = induced_homology(cmap)
    return all(ind[k][0] == ind[k][1] == ind[k][2] for k in interior(cmap))


# -- full run ------------------------------------------------------------------

@dataclass
class ContinuationRun:
    schedule: HomotopySchedule
    records: list  # per schedule point
    complexes: list  # per schedule point
    maps: list  # per step
    composite: ContinuationMap
    orbits: list = field(default_factory=list)  # per step, dict pair -> orbits
    energy_ok: bool = True


def run_continuation(model, schedule, records1, window, n_starts=3, seed=0, tol=1e-9,
                     m=64, p=8, rec_tol=1e-10):
    """Track records, assemble each complex and build the per-step chain maps."""
    records = [records1]
    for pot in schedule.steps[1:]:
        records.append(track_records(model, pot, records[-1], rec_tol))
    complexes = []
    for pot, recs in zip(schedule.steps, records):
        counts, _ = boundary_counts(model, pot, recs, n_starts, seed, tol, m, p)
        complexes.append(assemble_plain(recs, counts, window))
    maps, all_orbits = [], []
    energy_ok = True
    for j in range(len(schedule.steps) - 1):
        step = (schedule.steps[j], schedule.steps[j + 1])
        orbs = {}
        for z in records[j]:
            for x in records[j + 1]:
                if z.rel_index == x.rel_index:
                    orbs[(z.id, x.id)] = find_nonautonomous_orbits(model, step, z, x, n_starts,
                                                                   seed, tol, m, p)
        for lst in orbs.values():
            energy_ok &= all(energy_check(o, window, schedule.delta) for o in lst)
        maps.append(build_phi(count_mod2(orbs), complexes[j], complexes[j + 1],
                              {"step": j, "s": [schedule.s_values[j], schedule.s_values[j + 1]]}))
        all_orbits.append(orbs)
    return ContinuationRun(schedule, records, complexes, maps, compose(maps), all_orbits,
                           bool(energy_ok))


def continuation_to_dict(cmap: ContinuationMap) -> dict:
    return {
        "phi": {str(k): {"shape": list(M.shape), "bits": bits(M)} for k, M in sorted(cmap.phi.items())},
        "source_generators": {str(k): v for k, v in sorted(cmap.source.generators.items())},
        "target_generators": {str(k): v for k, v in sorted(cmap.target.generators.items())},
        "provenance": cmap.provenance,
    }
