"""Critical points and circles of the action by deflated multistart Newton."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from ._parallel import parallel_map
from .errors import NewtonStagnation, PersistentDegeneracy, WindowEmpty
from .functional import euclid_parts
from .grading import inertia, relative_index
from .potentials import perturb_generic, potential_jet
from .spectrum import StatePoint, s1_generator

log = logging.getLogger(__name__)

DEDUP_TOL = 1e-6
MAX_HALVINGS = 30
CURVED_HALVINGS = 12
CURVED_RESIDUAL = 1e-3
BATCH = 8


@dataclass
class CriticalRecord:
    id: str
    point: StatePoint
    action: float
    residual: float
    hessian_inertia: tuple
    rel_index: int | None = None
    orbit_type: str = "isolated"
    orbit_id: str = ""
    broken_children: tuple | None = None

    @property
    def z(self):
        return self.point.vector()


def residual_norm(model, pot, z) -> float:
    """E-norm of (Lu - lam grad F(u), F(u))."""
    return float(np.linalg.norm(euclid_parts(model, pot, z)[1]))


# -- orbit distances ------------------------------------------------------

def orbit_align(model, symmetry, z, zstar):
    """Element of the symmetry orbit of zstar closest to z, and the distance."""
    z = np.asarray(z, dtype=float)
    zs = np.asarray(zstar, dtype=float)
    if symmetry == "s1" and model.complex_structure:
        a = z[:-1].reshape(-1, 2) @ np.array([1.0, 1j])
        b = zs[:-1].reshape(-1, 2) @ np.array([1.0, 1j])
        c = np.vdot(b, a)
        phase = c / abs(c) if abs(c) > 0 else 1.0
        br = b * phase
        best = np.append(np.column_stack([br.real, br.imag]).ravel(), zs[-1])
    elif symmetry == "z2":
        flip = zs.copy()
        flip[:-1] *= -1
        best = zs if np.linalg.norm(z - zs) <= np.linalg.norm(z - flip) else flip
    else:
        best = zs
    return best, float(np.linalg.norm(z - best))


def _canonical(model, symmetry, z):
    """Fixed representative: dominant coefficient real and positive."""
    z = np.array(z, dtype=float)
    if symmetry == "s1" and model.complex_structure:
        a = z[:-1].reshape(-1, 2) @ np.array([1.0, 1j])
        k = int(np.argmax(np.abs(a)))
        a = a * np.conj(a[k]) / abs(a[k])
        z[:-1] = np.column_stack([a.real, a.imag]).ravel()
    elif symmetry == "z2":
        k = int(np.argmax(np.abs(z[:-1])))
        if z[k] < 0:
            z[:-1] *= -1
    return z


# -- Newton ------------------------------------------------------------

class _Deflation:
    """prod(1/d^2 + 1) over orbit distances to known solutions, vectorized."""

    def __init__(self, model, symmetry, known):
        self.K = np.array(known, dtype=float).reshape(len(known), -1) if len(known) else np.zeros((0, 1))
        self.s1 = symmetry == "s1" and model.complex_structure
        self.z2 = symmetry == "z2"
        if self.s1 and len(known):
            self.Kc = self.K[:, :-1].reshape(len(known), -1, 2) @ np.array([1.0, 1j])

    def __call__(self, z):
        if len(self.K) == 0:
            return 1.0, np.zeros_like(z)
        K = self.K
        if self.s1:
            a = z[:-1].reshape(-1, 2) @ np.array([1.0, 1j])
            c = self.Kc.conj() @ a
            ph = np.where(np.abs(c) > 0, c / np.where(np.abs(c) > 0, np.abs(c), 1.0), 1.0)
            br = self.Kc * ph[:, None]
            K = np.concatenate([np.stack([br.real, br.imag], -1).reshape(len(K), -1),
                                self.K[:, -1:]], axis=1)
        elif self.z2:
            F = K.copy()
            F[:, :-1] *= -1
            use = np.linalg.norm(z - F, axis=1) < np.linalg.norm(z - K, axis=1)
            K = np.where(use[:, None], F, K)
        diff = z - K
        d2 = np.maximum(np.einsum("ij,ij->i", diff, diff), 1e-300)
        m = float(np.prod(1.0 / d2 + 1.0))
        glog = (-2.0 / (d2 * (1.0 + d2))) @ diff
        return m, glog


def newton_solve(model, pot, z0, tol, known=(), symmetry="none", max_iter=60):
    """Damped Newton on R(z) = (Lu - lam grad F, -F), deflated against ``known``.

    The deflation operator is prod(1/d^2 + 1) over the orbit distances d to
    known solutions; its effect reduces to a scalar rescaling of the Newton step.
    """
    z = np.array(z0, dtype=float)
    defl = _Deflation(model, symmetry, known)

    def merit(z):
        _, R, A = euclid_parts(model, pot, z)
        m, glog = defl(z)
        return R, A, m, glog

    R, A, m, glog = merit(z)
    history = []
    for it in range(max_iter):
        res = float(np.linalg.norm(R))
        if res <= tol:
            return z, res
        history.append(m * res)
        # a deflated start that makes no progress is abandoned early
        if it >= 20 and history[-1] > 0.5 * history[-11]:
            raise NewtonStagnation(f"stalled at residual {res:.3e}")
        dN = -np.linalg.lstsq(A, R, rcond=None)[0]
        c = float(glog @ dN)
        step = dN / (1.0 - c) if len(known) and abs(1.0 - c) > 1e-12 else dN
        phi0 = m * res
        t, ok = 1.0, False
        for h in range(MAX_HALVINGS):
            # level-set curvature only spoils long steps taken close to a root
            curve = h < CURVED_HALVINGS and res < CURVED_RESIDUAL
            for curved in (False, True)[:2 if curve else 1]:
                zt = _retract(model, pot, z + t * step) if curved else z + t * step
                Rt, At, mt, gt = merit(zt)
                if np.all(np.isfinite(Rt)) and mt * np.linalg.norm(Rt) < phi0:
                    ok = True
                    break
            if ok:
                break
            t *= 0.5
        else:
            raise NewtonStagnation(f"line search failed at iteration {it}, residual {res:.3e}")
        z, R, A, m, glog = zt, Rt, At, mt, gt
        if np.linalg.norm(z) > 1e6:
            raise NewtonStagnation("iterate left the admissible region")
    res = float(np.linalg.norm(R))
    if res <= tol:
        return z, res
    raise NewtonStagnation(f"no convergence in {max_iter} iterations, residual {res:.3e}")


def _retract(model, pot, z, iters=8):
    """Scale u radially back onto F = 0 (scalar Newton in the scale factor).

    Straight steps along a nearly flat direction of a curved level set leave
    it quadratically, which swamps the residual decrease near a weakly broken
    degenerate orbit; the retracted step follows the level set instead.
    """
    u = z[:-1]
    s = 1.0
    for _ in range(iters):
        f, g, _ = potential_jet(pot, model, s * u)
        d = float(g @ u)
        if d <= 0 or not np.isfinite(f):
            return z
        ds = f / d
        s -= ds
        if abs(ds) <= 1e-15 * abs(s):
            break
    return np.append(s * u, z[-1])


def _polish(model, pot, z, tol, max_iter=8):
    """Newton steps past ``tol`` until the residual stops decreasing.

    Near a weakly nondegenerate point a residual of ``tol`` can sit far from
    the root; driving it to roundoff pins the location down for deduplication.
    """
    _, R, A = euclid_parts(model, pot, z)
    res = float(np.linalg.norm(R))
    for _ in range(max_iter):
        if res <= 1e-15 * max(1.0, float(np.linalg.norm(z))):
            break
        d = -np.linalg.lstsq(A, R, rcond=None)[0]
        best = None
        for curved in (False, True):
            zt = _retract(model, pot, z + d) if curved else z + d
            _, Rt, At = euclid_parts(model, pot, zt)
            rt = float(np.linalg.norm(Rt))
            if rt < res:
                best = (rt, zt, Rt, At)
                break
        if best is None:
            break
        res, z, R, A = best
    return z


def seed_points(model, pot, n_starts, seed):
    """Starting points near S: random or sparse directions, radial root, lam from
    the Rayleigh-type ratio <Lu, u> / <grad F(u), u> (twice the action bound)."""
    from .potentials import radial_profile_root

    rng = np.random.default_rng(seed)
    eigs = model.coord_eigs
    out = []
    for i in range(n_starts):
        if i % 2 == 0:
            d = rng.standard_normal(model.dim)
        else:
            d = 0.1 * rng.standard_normal(model.dim)
            k = rng.integers(model.n_labels)
            sl = model.label_slice(int(k))
            d[sl] += rng.standard_normal(sl.stop - sl.start) + 1e-3
        try:
            _, u = radial_profile_root(pot, model, d)
        except Exception:
            u = d / np.linalg.norm(d)
        _, g, _ = potential_jet(pot, model, u)
        lam = float(np.dot(eigs * u, u) / np.dot(g, u))
        out.append(np.append(u, lam))
    return out


def find_critical_points(model, pot, window, n_starts=200, seed=0, tol=1e-10, strict=False):
    """All critical points (or circles) of I with action in ``window``.

    Records are sorted by action; z2 potentials yield (z, -z) pairs sharing an
    orbit_id, s1 potentials on complex models yield one record per circle.
    """
    a, b = map(float, window)
    if not a < b:
        raise ValueError("window must satisfy a < b")
    if n_starts < 1 or tol <= 0:
        raise ValueError("n_starts >= 1 and tol > 0 required")
    symmetry = pot.symmetry if (pot.symmetry != "s1" or model.complex_structure) else "none"
    seeds = seed_points(model, pot, n_starts, seed)
    found = []
    for start in range(0, n_starts, BATCH):
        known = tuple(found)

        def run(z0, known=known):
            try:
                z, _ = newton_solve(model, pot, z0, tol, known, symmetry)
                return _polish(model, pot, z, tol)
            except NewtonStagnation as exc:
                log.debug("start discarded: %s", exc)
                return None

        for z in parallel_map(run, seeds[start:start + BATCH]):
            if z is None:
                continue
            if all(orbit_align(model, symmetry, z, zs)[1] > DEDUP_TOL for zs in found):
                found.append(_canonical(model, symmetry, z))
    records = []
    for z in found:
        val, R, A = euclid_parts(model, pot, z)
        if not a <= val <= b:
            continue
        records.append((val, z, float(np.linalg.norm(R)), inertia(A)))
    records.sort(key=lambda r: (r[0], tuple(np.round(r[1], 8))))
    out = []
    for j, (val, z, res, inert) in enumerate(records):
        oid = f"o{j}"
        otype = "isolated"
        if symmetry == "s1" and _is_circle(model, z, A=euclid_parts(model, pot, z)[2]):
            otype = "circle"
        if symmetry == "z2":
            mirror = z.copy()
            mirror[:-1] *= -1
            out.append(CriticalRecord(f"{oid}+", StatePoint.from_vector(z), val, res, inert,
                                      orbit_type="pair", orbit_id=oid))
            out.append(CriticalRecord(f"{oid}-", StatePoint.from_vector(mirror), val,
                                      residual_norm(model, pot, mirror), inert,
                                      orbit_type="pair", orbit_id=oid))
        else:
            out.append(CriticalRecord(oid, StatePoint.from_vector(z), val, res, inert,
                                      orbit_type=otype, orbit_id=oid))
    if not out:
        msg = f"no critical points with action in [{a}, {b}]"
        if strict:
            raise WindowEmpty(msg)
        log.warning(msg)
    return out


def _is_circle(model, z, A):
    w, V = np.linalg.eigh(A)
    k = int(np.argmin(np.abs(w)))
    if abs(w[k]) > 1e-8 * max(1.0, np.max(np.abs(w))):
        return False
    t = np.append(s1_generator(model) @ z[:-1], 0.0)
    nt = np.linalg.norm(t)
    return nt > 0 and abs(V[:, k] @ t) / nt >= 0.99


def is_morse(records) -> bool:
    for rec in records:
        allowed = 1 if rec.orbit_type == "circle" else 0
        if rec.hessian_inertia[1] != allowed:
            return False
    return True


def ensure_morse(model, pot, records, tol=1e-10, window=None, n_starts=200, seed=0):
    """Perturb pot (symmetry-preserving, strengths 1e-8, 1e-6, 1e-4) until Morse."""
    if is_morse(records):
        return pot, records
    if window is None:
        acts = [r.action for r in records]
        pad = 0.5 * (max(acts) - min(acts)) + 0.5
        window = (min(acts) - pad, max(acts) + pad)
    for j, strength in enumerate((1e-8, 1e-6, 1e-4)):
        cand = perturb_generic(pot, strength, seed + 7919 * (j + 1), model)
        recs = find_critical_points(model, cand, window, n_starts, seed, tol)
        if recs and is_morse(recs):
            return cand, recs
        log.info("still degenerate after perturbation of strength %g", strength)
    raise PersistentDegeneracy("degenerate critical set persists after 3 perturbations")


def break_circles(model, pot, circles, strength, tol=1e-10):
    """Break every circle with one localized perturbation each.

    Returns the perturbed potential and a list of isolated child records; each
    circle gets ``broken_children = (min_id, max_id)`` set in place.
    """
    from .potentials import break_symmetry

    broken = pot
    for c in circles:
        broken = break_symmetry(broken, model, c, strength)
    children = []
    for c in circles:
        z = _canonical(model, "s1", c.point.vector())
        kids = []
        for sgn in (1.0, -1.0):
            z0 = z.copy()
            z0[:-1] *= sgn
            zc, _ = newton_solve(model, broken, z0, tol)
            zc = _polish(model, broken, zc, tol)
            val, R, A = euclid_parts(model, broken, zc)
            rec = CriticalRecord("", StatePoint.from_vector(zc), val, float(np.linalg.norm(R)),
                                 inertia(A), orbit_type="isolated", orbit_id=c.id)
            rec.rel_index = relative_index(model, broken, rec).rel_index
            kids.append(rec)
        kids.sort(key=lambda r: r.rel_index)
        kids[0].id, kids[1].id = f"{c.id}-", f"{c.id}+"
        c.broken_children = (kids[0].id, kids[1].id)
        children.extend(kids)
    return broken, children


# -- serialization -------------------------------------------------------

def record_to_dict(rec: CriticalRecord) -> dict:
    return {
        "id": rec.id,
        "coeffs": [float(x) for x in rec.point.coeffs],
        "multiplier": float(rec.point.multiplier),
        "action": float(rec.action),
        "residual": float(rec.residual),
        "hessian_inertia": [int(x) for x in rec.hessian_inertia],
        "rel_index": None if rec.rel_index is None else int(rec.rel_index),
        "orbit_type": rec.orbit_type,
        "orbit_id": rec.orbit_id,
        "broken_children": None if rec.broken_children is None else list(rec.broken_children),
    }


def record_from_dict(doc: dict) -> CriticalRecord:
    bc = doc.get("broken_children")
    return CriticalRecord(
        doc["id"], StatePoint(np.array(doc["coeffs"], dtype=float), float(doc["multiplier"])),
        float(doc["action"]), float(doc["residual"]), tuple(doc["hessian_inertia"]),
        doc.get("rel_index"), doc.get("orbit_type", "isolated"), doc.get("orbit_id", ""),
        None if bc is None else tuple(bc))


def records_to_json(records) -> str:
    return json.dumps([record_to_dict(r) for r in records], indent=1)


def records_from_json(text: str):
    return [record_from_dict(d) for d in json.loads(text)]


def with_index(model, pot, records):
    """Copies of records with rel_index filled in."""
    return [replace(r, rel_index=relative_index(model, pot, r).rel_index) for r in records]
