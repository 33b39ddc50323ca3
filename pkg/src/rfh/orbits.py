"""Flow integration, connecting orbits between critical records, mod-2 counts and
Palais-Smale style a-priori bound monitoring."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from ._parallel import parallel_map
from .collocation import CollocationProblem, make_mesh
from .critical import orbit_align
from .errors import BlowUp, IndexGapInvalid, MultipleCrossings, NoConvergence, NoZeroCrossing
from .functional import action_values, euclid_parts, flow_batch, flow_vector, grad_h_norm
from .potentials import potential_jets, radial_roots
from .spectrum import StatePoint

log = logging.getLogger(__name__)

DECAY = 1e-8  # e^{-rate T} at the horizon
DEDUP_TOL = 1e-4
ENDPOINT_TOL = 1e-4


@dataclass
class OrbitRecord:
    source_id: str
    target_id: str
    times: np.ndarray
    nodes: np.ndarray  # (n_nodes, dim + 1)
    residual: float
    action_profile: np.ndarray
    phase_anchor: float
    interp_defect: float = float("nan")
    meta: dict = field(default_factory=dict)

    def states(self):
        return [StatePoint.from_vector(z) for z in self.nodes]


@dataclass
class Trajectory:
    times: np.ndarray
    nodes: np.ndarray
    landed_on: str | None
    converged: bool


@dataclass
class PsDiagnostic:
    epsilon: float
    tau_values: list
    lambda_bound: float
    u_bound: float
    bound_violated: bool
    tau_bound: float = float("nan")
    max_abs_lambda: float = float("nan")
    max_u_h: float = float("nan")


# -- flow integration --------------------------------------------------------

def integrate_flow(model, pot, z0, t_max, tol, records=(), symmetry=None, stop_grad=1e-10):
    """Integrate z' = -grad_H I(z) from z0 with an adaptive explicit scheme.

    Stops early once |grad I|_H <= stop_grad and reports the nearest record
    (within 1e-6 after symmetry alignment) as ``landed_on``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    z0 = z0.vector() if isinstance(z0, StatePoint) else np.asarray(z0, dtype=float)
    symmetry = pot.symmetry if symmetry is None else symmetry

    def rhs(t, z):
        if np.linalg.norm(z[:-1]) > 1e6:
            raise BlowUp("trajectory left the ball of radius 1e6")
        return flow_vector(model, pot, z)

    def settled(t, z):
        return grad_h_norm(model, pot, z) - stop_grad

    settled.terminal = True
    if grad_h_norm(model, pot, z0) <= stop_grad:
        times, Z = np.array([0.0, t_max]), np.vstack([z0, z0])
        converged = True
    else:
        sol = solve_ivp(rhs, (0.0, t_max), z0, method="DOP853", rtol=tol, atol=tol,
                        events=settled, dense_output=True)
        if not sol.success:
            raise NoConvergence(sol.message)
        times, Z = sol.t, sol.y.T
        converged = sol.status == 1
    landed = None
    if converged:
        for rec in records:
            if orbit_align(model, symmetry, Z[-1], rec.point.vector())[1] <= 1e-6:
                landed = rec.id
                break
    return Trajectory(times, Z, landed, converged)


# -- endpoint linearization ---------------------------------------------------

def _spectral_split(model, pot, z):
    """Eigen-decomposition of the linearized flow -G^{-1}A at a rest point.

    Returns (rates, Q, sqrtG): the flow is conjugate to -diag(rates) in the
    coordinates c = Q^T sqrtG x; rates < 0 are unstable directions.
    """
    _, _, A = euclid_parts(model, pot, z)
    g = np.sqrt(model.metric)
    S = A / g[:, None] / g[None, :]
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    return w, Q, g


def endpoint_data(model, pot, z):
    w, Q, g = _spectral_split(model, pot, z)
    return {"w": w, "Q": Q, "g": g,
            "unstable": Q[:, w < 0] / g[:, None],  # eigenvectors in x coordinates
            "n_unstable": int(np.sum(w < 0)), "n_stable": int(np.sum(w > 0))}


def _bc(z_ref, Q, g, keep):
    M = (Q[:, keep].T * g[None, :])

    def bc(z):
        return M @ (z - z_ref), M

    return bc


def horizon(src_data, tgt_data):
    r_min = min(np.min(-src_data["w"][src_data["w"] < 0]), np.min(tgt_data["w"][tgt_data["w"] > 0]))
    r_max = max(np.max(np.abs(src_data["w"])), np.max(np.abs(tgt_data["w"])))
    return float(np.log(1.0 / DECAY) / r_min), float(r_max), float(r_min)


def first_element(T, m, p, r_max):
    """Length of the innermost element: geometric mean of the fast time scale
    and the uniform element length, which balances the transition layer
    against the slow tails."""
    h_uniform = T / max(1, int(np.ceil(m / p)) // 2)
    return float(min(h_uniform, np.sqrt(min(1.0, 2.0 / r_max) * h_uniform)))


# -- initial paths -------------------------------------------------------------

def _project_path(model, pot, Z):
    """Radial projection of each node onto S, multiplier from the Rayleigh-type ratio."""
    U = Z[:, :-1]
    if np.min(np.linalg.norm(U, axis=1)) < 1e-3:
        return None
    try:
        _, U = radial_roots(pot, model, U)
    except (NoZeroCrossing, MultipleCrossings):
        return None
    _, G, _ = potential_jets(pot, model, U)
    out = np.empty_like(Z)
    out[:, :-1] = U
    out[:, -1] = np.einsum("ki,i,ki->k", U, model.coord_eigs, U) / np.einsum("ki,ki->k", G, U)
    return out


def initial_paths(model, pot, zs, zt, t, kappa, src_data, n_starts, seed, t0=0.0):
    """Blend from source to target, bumped along unstable directions of the source.

    Start 0 is the plain blend; the next ones use the slowest unstable
    eigenvectors with both signs, then random unstable combinations.
    """
    rng = np.random.default_rng(seed)
    blend = 0.5 * (1.0 + np.tanh(kappa * (t - t0)))
    base = zs[None, :] + blend[:, None] * (zt - zs)[None, :]
    bump = 1.0 / np.cosh(kappa * (t - t0))
    U = src_data["unstable"]
    order = np.argsort(-src_data["w"][src_data["w"] < 0])  # slowest first
    dirs = [None]
    for j in order:
        v = U[:, j] / np.linalg.norm(U[:, j])
        dirs.extend([v, -v])
    while len(dirs) < n_starts:
        v = U @ rng.standard_normal(U.shape[1])
        dirs.append(v / np.linalg.norm(v))
    amp = 0.5 * max(np.linalg.norm(zs[:-1]), np.linalg.norm(zt[:-1]), 1e-3)
    paths = []
    for v in dirs[:n_starts]:
        Z = base if v is None else base + amp * bump[:, None] * v[None, :]
        P = _project_path(model, pot, Z)
        if P is not None:
            # pin the exact endpoints so the boundary rows start satisfied
            paths.append(P)
    return paths


# -- connecting orbits ---------------------------------------------------------

def _dedup(orbits):
    out = []
    for orb in orbits:
        if all(orb.nodes.shape != o.nodes.shape or np.max(np.abs(orb.nodes - o.nodes)) > DEDUP_TOL
               for o in out):
            out.append(orb)
    return out


def find_connecting_orbits(model, pot, source, target, n_starts=5, seed=0, tol=1e-9,
                           m=64, p=8, extra_horizon=0.0, check_index=True):
    """Distinct flow lines from source to target (index gap 1), by collocation.

    ``m`` is the collocation node budget; elements of degree ``p`` are graded
    geometrically away from t = 0, where the anchor
    I(z(0)) = (I(source) + I(target)) / 2 removes the time-translation freedom.
    """
    if check_index:
        if source.rel_index is None or target.rel_index is None:
            raise IndexGapInvalid("records must be graded first")
        if source.rel_index - target.rel_index != 1:
            raise IndexGapInvalid(
                f"index gap {source.rel_index - target.rel_index} between {source.id} and {target.id}")
    zs, zt = source.point.vector(), target.point.vector()
    d = len(zs)
    sd, td = endpoint_data(model, pot, zs), endpoint_data(model, pot, zt)
    if sd["n_unstable"] + td["n_stable"] != d + 1:
        raise IndexGapInvalid("endpoint linearizations do not give a square problem")
    T, r_max, r_min = horizon(sd, td)
    T += extra_horizon
    mesh = make_mesh(T, m, p, h0=first_element(T, m, p, r_max))
    i0 = mesh.node_at(0.0)
    I_mid = 0.5 * (source.action + target.action)

    def field(t, Z, want_jac=True):
        return flow_batch(model, pot, Z, want_jac)

    def anchor(z):
        val, R, _ = euclid_parts(model, pot, z)
        return val - I_mid, R

    prob = CollocationProblem(mesh, d, field,
                              _bc(zs, sd["Q"], sd["g"], sd["w"] >= 0),
                              _bc(zt, td["Q"], td["g"], td["w"] <= 0),
                              (i0, anchor))
    kappa = max(min(r_min * 2.0, 1.0), 1e-6)
    paths = initial_paths(model, pot, zs, zt, mesh.t, kappa, sd, n_starts, seed)

    def run(Z0):
        Z, res, ok = prob.solve(Z0, tol)
        if not ok:
            log.debug("orbit start did not converge (residual %.2e)", res)
            return None
        acts = action_values(model, pot, Z)
        if np.any(np.diff(acts) > 1e-9):
            return None
        if np.linalg.norm(Z[0] - zs) > ENDPOINT_TOL or np.linalg.norm(Z[-1] - zt) > ENDPOINT_TOL:
            return None
        return OrbitRecord(source.id, target.id, mesh.t.copy(), Z, res, acts, I_mid,
                           meta={"T": T, "m": mesh.n_nodes, "p": p})

    found = [o for o in parallel_map(run, paths) if o is not None]
    out = _dedup(found)
    for o in out:
        o.interp_defect = prob.interp_defect(o.nodes)
    return out


def boundary_counts(model, pot, records, n_starts=5, seed=0, tol=1e-9, m=64, p=8):
    """Orbits and their parities for every ordered pair with index gap 1."""
    orbs = {}
    for s in records:
        for t in records:
            if s.rel_index - t.rel_index == 1:
                orbs[(s.id, t.id)] = find_connecting_orbits(model, pot, s, t, n_starts, seed,
                                                            tol, m, p)
    return count_mod2(orbs), orbs


def count_mod2(orbit_lists):
    """Parity of the number of distinct orbits, per entry (dict or sequence)."""
    if isinstance(orbit_lists, dict):
        return {k: len(v) % 2 for k, v in orbit_lists.items()}
    return [len(v) % 2 for v in orbit_lists]


# -- a-priori bounds -------------------------------------------------------

def ps_constant(window, a_star):
    """C = 1.1 * 2 max(|a|, |b|) / a_star, the multiplier bound at zero gradient."""
    a, b = window
    return 1.1 * 2.0 * max(abs(a), abs(b)) / a_star


def ps_monitor(model, pot, trajectory, window, epsilon, a_star=None):
    """tau(s) = first time t >= 0 with |grad I(z(s + t))|_H <= epsilon, checked
    against (b - a)/epsilon^2, and |lam|, |u|_H against C + (b - a)/epsilon."""
    from .potentials import check_starshape

    a, b = map(float, window)
    times = np.asarray(trajectory.times)
    Z = np.asarray(trajectory.nodes)
    if a_star is None:
        a_star = check_starshape(pot, model, 32, 0).min_radial_derivative
    C = ps_constant((a, b), a_star)
    gn = np.array([grad_h_norm(model, pot, z) for z in Z])
    small = gn <= epsilon
    taus = []
    for i in range(len(times)):
        hits = np.flatnonzero(small[i:])
        taus.append(float(times[i + hits[0]] - times[i]) if len(hits) else float(times[-1] - times[i]))
    w = np.abs(model.coord_eigs)
    lam_max = float(np.max(np.abs(Z[:, -1])))
    u_max = float(np.max(np.sqrt(np.sum(w * Z[:, :-1] ** 2, axis=1))))
    bound = C + (b - a) / epsilon
    tau_bound = (b - a) / epsilon ** 2
    violated = lam_max > bound or u_max > bound or max(taus) > tau_bound
    return PsDiagnostic(epsilon, taus, bound, bound, bool(violated), tau_bound, lam_max, u_max)


# -- serialization -------------------------------------------------------

def orbit_to_dict(o: OrbitRecord, stride=4) -> dict:
    idx = list(range(0, len(o.times), stride))
    if idx[-1] != len(o.times) - 1:
        idx.append(len(o.times) - 1)
    return {
        "source_id": o.source_id,
        "target_id": o.target_id,
        "residual": float(o.residual),
        "interp_defect": float(o.interp_defect),
        "phase_anchor": float(o.phase_anchor),
        "times": [float(o.times[i]) for i in idx],
        "nodes": [[float(x) for x in o.nodes[i]] for i in idx],
        "action_profile": [float(o.action_profile[i]) for i in idx],
    }


def orbits_to_json(orbits) -> str:
    return json.dumps([orbit_to_dict(o) for o in orbits])
