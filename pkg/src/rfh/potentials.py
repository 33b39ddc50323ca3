"""Starshaped potentials F with value, E-gradient and Hessian in coordinates.

Base kinds:

* ``sphere``       F = (|u|^2 - 1) / 2
* ``ellipsoid``    F = (sum c_i a_i^2 - 1) / 2
* ``p_power``      F = (int h |u|^(p+1) - 1) / (p+1) by periodic trapezoid quadrature
* ``custom_quadratic_plus``  F = R(sum c_i a_i^2) for a polynomial R
* ``custom``       a registered jet function (the kernel-reduced potential)

Composite kinds ``homotopy`` ((1-s) F1 + s F2) and ``cutoff_blend``
(eta(|u|^2) F_inner + (1 - eta(|u|^2)) F_outer) support continuation.
Perturbations are additive and use smooth cutoffs so that the difference
to the unperturbed potential stays bounded.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MultipleCrossings, NoZeroCrossing, NotACircle, QuadratureUnderresolved
from .smooth import plateau, ramp
from .spectrum import SpectralModel

SYMMETRIES = ("none", "s1", "z2")
_CUSTOM = {}


def register_custom(name, jet_fn, batched=False):
    """Register a jet function under ``name``.

    ``jet_fn(params, model, u) -> (value, grad, hess)`` for a single point, or
    with ``batched=True``, ``jet_fn(params, model, U, need_hess)`` returning
    stacked arrays for the rows of U.
    """
    _CUSTOM[name] = (jet_fn, batched)


@dataclass(frozen=True, eq=False)
class Perturbation:
    type: str  # "generic" or "break"
    strength: float
    params: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Potential:
    kind: str
    params: dict = field(default_factory=dict)
    symmetry: str = "none"
    perturbations: tuple = ()


@dataclass
class StarshapeReport:
    min_radial_derivative: float
    samples: int
    max_radius: float
    bounded: bool
    passed: bool


# -- batched jets ------------------------------------------------------------
# A jet is (value (k,), gradient (k, n), hessian (k, n, n)) over k points.

def _outer(a, b):
    return np.einsum("ki,kj->kij", a, b)


def _jmul(a, b):
    va, ga, Ha = a
    vb, gb, Hb = b
    H = va[:, None, None] * Hb + vb[:, None, None] * Ha + _outer(ga, gb) + _outer(gb, ga)
    return va * vb, va[:, None] * gb + vb[:, None] * ga, H


def _japply(fd, s):
    """Chain rule for a scalar function with derivatives fd = (f, f', f'') of s."""
    f, f1, f2 = (np.broadcast_to(np.asarray(x, dtype=float), s[0].shape) for x in fd)
    v, g, H = s
    return f, f1[:, None] * g, f1[:, None, None] * H + f2[:, None, None] * _outer(g, g)


def _jquad(U, w):
    """Jet of sum w_i u_i^2."""
    k, n = U.shape
    H = np.broadcast_to(np.diag(2 * w), (k, n, n))
    return (U * U) @ w, 2 * w * U, H


def _jscale(c, j):
    return c * j[0], c * j[1], c * j[2]


def _jadd(a, b):
    return a[0] + b[0], a[1] + b[1], a[2] + b[2]


def _jone_minus(j):
    return 1.0 - j[0], -j[1], -j[2]


# -- base kinds ---------------------------------------------------------------

def sphere(symmetry="z2"):
    return Potential("sphere", {}, symmetry)


def ellipsoid(weights, symmetry="z2"):
    return Potential("ellipsoid", {"weights": [float(c) for c in weights]}, symmetry)


def p_power(p, h=1.0, grid=None, symmetry="z2"):
    params = {"p": float(p), "h": h}
    if grid is not None:
        params["grid"] = int(grid)
    return Potential("p_power", params, symmetry)


def _coord_weights(model, weights):
    w = np.asarray(weights, dtype=float)
    if model.complex_structure and len(w) == model.n_labels:
        w = np.repeat(w, 2)
    if len(w) != model.dim:
        raise ValueError(f"expected {model.n_labels} or {model.dim} weights, got {len(w)}")
    return w


def quadrature_grid_size(model, params):
    needed = 4 * max(model.max_frequency, 1)
    M = int(params.get("grid", needed + 2))
    # M equal to 4f would alias the top frequency of |u|^4 onto the mean
    if M <= needed:
        raise QuadratureUnderresolved(
            f"grid size {M} must exceed 4 x max frequency ({needed})")
    return M


def h_values(model, M, h):
    """The coefficient function h on the quadrature grid (h given by _h_key)."""
    if isinstance(h, tuple):
        c0, amp, freq = h
        return c0 + amp * np.cos(freq * model.grid(M)[0])
    return np.full(len(model.grid(M)[0]), float(h))


@functools.lru_cache(maxsize=64)
def _quadrature(model, M, h):
    weights, fields, _ = model.spatial_basis(M)
    return weights * h_values(model, M, h), fields


def _h_key(h):
    if isinstance(h, dict):
        return (float(h["c0"]), float(h.get("amp", 0.0)), float(h.get("freq", 1.0)))
    return float(h)


def _p_power_jet(params, model, U, need_hess=True):
    p = float(params["p"])
    M = quadrature_grid_size(model, params)
    wh, B = _quadrature(model, M, _h_key(params.get("h", 1.0)))
    V = np.einsum("icp,ki->kcp", B, U)
    r2 = np.sum(V * V, axis=1)
    r = np.sqrt(r2)
    val = ((r ** (p + 1)) @ wh - 1.0) / (p + 1)
    wr = wh * r ** (p - 1)
    BV = np.einsum("icp,kcp->kip", B, V)
    grad = np.einsum("kip,kp->ki", BV, wr)
    if not need_hess:
        return val, grad, None
    hess = np.einsum("icp,jcp,kp->kij", B, B, wr, optimize=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        wr3 = wh * np.where(r > 0, r ** (p - 3), 0.0)
    hess += (p - 1) * np.einsum("kip,kjp,kp->kij", BV, BV, wr3, optimize=True)
    return val, grad, hess


def _custom_jet(pot, model, U, need_hess=True):
    name = pot.params["source"]
    if name not in _CUSTOM:
        from . import kernel_reduction  # noqa: F401  (registers itself)
    fn, batched = _CUSTOM[name]
    if batched:
        return fn(pot.params, model, U, need_hess)
    jets = [fn(pot.params, model, u) for u in U]
    return (np.array([j[0] for j in jets]), np.array([j[1] for j in jets]),
            np.array([j[2] for j in jets]))


def _base_jet(pot, model, U):
    k, n = U.shape
    kind = pot.kind
    if kind == "sphere":
        return _jadd(_jquad(U, np.full(n, 0.5)), (np.full(k, -0.5), 0.0, 0.0))
    if kind == "ellipsoid":
        w = _coord_weights(model, pot.params["weights"])
        return _jadd(_jquad(U, 0.5 * w), (np.full(k, -0.5), 0.0, 0.0))
    if kind == "p_power":
        return _p_power_jet(pot.params, model, U)
    if kind == "custom_quadratic_plus":
        w = _coord_weights(model, pot.params.get("weights", [1.0] * model.n_labels))
        poly = np.polynomial.Polynomial(pot.params["poly"])
        s = _jquad(U, w)
        d1 = poly.deriv()
        return _japply((poly(s[0]), d1(s[0]), d1.deriv()(s[0])), s)
    if kind == "custom":
        return _custom_jet(pot, model, U)
    if kind == "homotopy":
        s = float(pot.params["s"])
        j1 = potential_jets(pot.params["f1"], model, U)
        j2 = potential_jets(pot.params["f2"], model, U)
        return _jadd(_jscale(1 - s, j1), _jscale(s, j2))
    if kind == "cutoff_blend":
        inner = potential_jets(pot.params["inner"], model, U)
        outer = potential_jets(pot.params["outer"], model, U)
        q = _jquad(U, np.ones(n))
        eta = _jone_minus(_japply(ramp(q[0], pot.params["r_in2"], pot.params["r_out2"]), q))
        return _jadd(outer, _jmul(eta, _jadd(inner, _jscale(-1.0, outer))))
    raise ValueError(f"unknown potential kind {kind!r}")


# -- perturbations ---------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _direction(seed, n):
    f = np.random.default_rng(seed).standard_normal(n)
    return f / np.linalg.norm(f)


@functools.lru_cache(maxsize=64)
def _auto_radius(pot, model):
    return 1.1 * surface_radius(replace(pot, perturbations=()), model)


def _generic_jet(pert, model, U, pot):
    k, n = U.shape
    f = _direction(int(pert.params["seed"]), n)
    variant = pert.params.get("variant", "linear")
    if variant == "linear":
        g = (U @ f, np.broadcast_to(f, (k, n)), np.zeros((k, n, n)))
    elif variant in ("even", "s1"):
        vs = [f]
        if variant == "s1":
            # J f, so that <f,u>^2 + <Jf,u>^2 = |<f,u>_C|^2 is phase invariant
            vs.append((f.reshape(-1, 2)[:, ::-1] * np.array([-1.0, 1.0])).ravel())
        g = (np.zeros(k), np.zeros((k, n)), np.zeros((k, n, n)))
        for v in vs:
            vu = U @ v
            g = _jadd(g, (vu * vu, 2 * vu[:, None] * v, np.broadcast_to(2 * np.outer(v, v), (k, n, n))))
    else:
        raise ValueError(f"unknown perturbation variant {variant!r}")
    R = pert.params.get("radius")
    R = _auto_radius(pot, model) if R is None else float(R)
    q = _jquad(U, np.ones(n))
    chi = _jone_minus(_japply(ramp(q[0], R * R, 4 * R * R), q))
    return _jscale(pert.strength, _jmul(g, chi))


# shell plateau in |a_k|^2 / R^2 and off-label energy cutoff in r^2 / R^2
_SHELL = (0.25, 0.49, 2.25, 4.0)
_OFF = (0.04, 0.25)


def _break_jet(pert, model, U, pot):
    k, n = U.shape
    sl = model.label_slice(int(pert.params["label_index"]))
    R2 = float(pert.params["radius"]) ** 2
    mask = np.zeros(n)
    mask[sl] = 1.0
    s = _jquad(U, mask / R2)
    q = _jquad(U, (1.0 - mask) / R2)
    chi = _japply(plateau(s[0], *_SHELL), s)
    psi = _jone_minus(_japply(ramp(q[0], *_OFF), q))
    e = np.zeros(n)
    e[sl.start] = 1.0
    x = (U[:, sl.start].copy(), np.broadcast_to(e, (k, n)), np.zeros((k, n, n)))
    return _jscale(pert.strength, _jmul(_jmul(x, chi), psi))


def potential_jets(pot: Potential, model: SpectralModel, U):
    """Batched jets: values (k,), gradients (k, n), Hessians (k, n, n)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    k, n = U.shape
    val, grad, hess = _base_jet(pot, model, U)
    val = np.broadcast_to(val, (k,)).astype(float)
    grad = np.broadcast_to(grad, (k, n)).astype(float)
    hess = np.broadcast_to(hess, (k, n, n)).astype(float)
    for pert in pot.perturbations:
        if pert.strength == 0.0:
            continue
        jet = _generic_jet if pert.type == "generic" else _break_jet
        val, grad, hess = _jadd((val, grad, hess), jet(pert, model, U, pot))
    return val, grad, hess


def potential_jet(pot: Potential, model: SpectralModel, u):
    """(F(u), E-gradient, Hessian) in coordinates."""
    val, grad, hess = potential_jets(pot, model, np.asarray(u, dtype=float)[None, :])
    return float(val[0]), grad[0], hess[0]


def potential_value(pot, model, u):
    return float(potential_values(pot, model, np.asarray(u, dtype=float)[None, :])[0])


def _base_values(pot, model, U):
    kind = pot.kind
    if kind == "sphere":
        return 0.5 * (np.einsum("ij,ij->i", U, U) - 1.0)
    if kind == "ellipsoid":
        return 0.5 * (U * U @ _coord_weights(model, pot.params["weights"]) - 1.0)
    if kind == "p_power":
        return _p_power_jet(pot.params, model, U, need_hess=False)[0]
    if kind == "homotopy":
        s = float(pot.params["s"])
        return ((1 - s) * potential_values(pot.params["f1"], model, U)
                + s * potential_values(pot.params["f2"], model, U))
    if kind == "cutoff_blend":
        fi = potential_values(pot.params["inner"], model, U)
        fo = potential_values(pot.params["outer"], model, U)
        eta = 1.0 - ramp(np.einsum("ij,ij->i", U, U), pot.params["r_in2"], pot.params["r_out2"])[0]
        return fo + eta * (fi - fo)
    if kind == "custom":
        return _custom_jet(pot, model, U, need_hess=False)[0]
    return _base_jet(pot, model, U)[0]


def _perturbation_values(pert, model, U, pot):
    n = U.shape[1]
    if pert.type == "generic":
        f = _direction(int(pert.params["seed"]), n)
        variant = pert.params.get("variant", "linear")
        g = U @ f
        if variant == "even":
            g = g * g
        elif variant == "s1":
            jf = (f.reshape(-1, 2)[:, ::-1] * np.array([-1.0, 1.0])).ravel()
            g = g * g + (U @ jf) ** 2
        R = pert.params.get("radius")
        R = _auto_radius(pot, model) if R is None else float(R)
        chi = 1.0 - ramp(np.einsum("ij,ij->i", U, U), R * R, 4 * R * R)[0]
        return pert.strength * g * chi
    sl = model.label_slice(int(pert.params["label_index"]))
    R2 = float(pert.params["radius"]) ** 2
    on = np.sum(U[:, sl] ** 2, axis=1)
    off = np.einsum("ij,ij->i", U, U) - on
    chi = plateau(on / R2, *_SHELL)[0]
    psi = 1.0 - ramp(off / R2, *_OFF)[0]
    return pert.strength * U[:, sl.start] * chi * psi


def potential_values(pot, model, U):
    """F on each row of U without forming Hessians."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    val = np.broadcast_to(_base_values(pot, model, U), (U.shape[0],)).astype(float)
    for pert in pot.perturbations:
        if pert.strength != 0.0:
            val = val + _perturbation_values(pert, model, U, pot)
    return val


# -- starshape ----------------------------------------------------------------

def radial_roots(pot, model, directions, r_max=10.0, n_grid=400):
    """Radii r > 0 with F(r d) = 0 along each row d of ``directions``.

    Every ray is scanned on n_grid points for sign changes of F; a unique
    crossing is then refined by vectorized bisection to round-off.
    """
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    D = D / np.linalg.norm(D, axis=1, keepdims=True)
    k = len(D)
    rs = np.linspace(0.0, r_max, n_grid + 1)
    vals = potential_values(pot, model, (rs[None, :, None] * D[:, None, :]).reshape(-1, D.shape[1]))
    vals = vals.reshape(k, n_grid + 1)
    sg = np.sign(vals)
    lo = np.zeros(k)
    hi = np.zeros(k)
    for i in range(k):
        nz = np.flatnonzero(sg[i] != 0.0)
        flips = np.flatnonzero(sg[i, nz[:-1]] != sg[i, nz[1:]])
        if len(flips) == 0:
            raise NoZeroCrossing(f"no root of F along the ray up to r = {r_max}")
        if len(flips) > 1:
            raise MultipleCrossings(f"{len(flips)} sign changes of F along one ray")
        a, b = nz[flips[0]], nz[flips[0] + 1]
        if b > a + 1:  # exact zero on the grid
            lo[i] = hi[i] = rs[a + 1]
        else:
            lo[i], hi[i] = rs[a], rs[b]
    f_lo = np.sign(potential_values(pot, model, lo[:, None] * D))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fm = np.sign(potential_values(pot, model, mid[:, None] * D))
        same = fm == f_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
        exact = fm == 0
        lo = np.where(exact, mid, lo)
        hi = np.where(exact, mid, hi)
        if np.all(hi - lo <= 4e-16 * np.maximum(hi, 1.0)):
            break
    r = 0.5 * (lo + hi)
    return r, r[:, None] * D


def radial_profile_root(pot, model, direction, r_max=10.0, n_grid=400):
    """Unique r in (0, r_max] with F(r d) = 0 for a direction d."""
    r, U = radial_roots(pot, model, np.asarray(direction, dtype=float)[None, :], r_max, n_grid)
    return float(r[0]), U[0]


def check_starshape(pot: Potential, model: SpectralModel, n_samples: int, seed: int,
                    r_max: float = 10.0) -> StarshapeReport:
    """Sample the level set S radially and report min <grad F(u), u> on it."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n_samples, model.dim))
    r, U = radial_roots(pot, model, D, r_max)
    _, G, _ = potential_jets(pot, model, U)
    min_rad = float(np.min(np.einsum("ki,ki->k", G, U)))
    max_r = float(np.max(r))
    bounded = max_r < r_max
    return StarshapeReport(min_rad, n_samples, max_r, bounded, bool(min_rad > 0 and bounded))


@functools.lru_cache(maxsize=64)
def surface_radius(pot: Potential, model: SpectralModel) -> float:
    """Largest E-norm on S (exact for quadrics, sampled otherwise)."""
    if pot.kind == "sphere":
        return 1.0
    if pot.kind == "ellipsoid":
        return float(1.0 / np.sqrt(np.min(_coord_weights(model, pot.params["weights"]))))
    return check_starshape(pot, model, 64, 0).max_radius


# -- perturbation constructors -------------------------------------------

def perturb_generic(pot: Potential, strength: float, direction_seed: int, model=None,
                    variant=None, radius=None) -> Potential:
    """Add strength * g(u) * chi(|u|) with g = <f,u> (or an invariant variant).

    f is a seeded random unit vector; chi is 1 on a ball containing S and 0
    outside twice that radius.  The variant defaults to one that keeps the
    declared symmetry: <f,u>^2 for z2, |<f,u>_C|^2 for s1.
    """
    if strength < 0:
        raise ValueError("strength must be nonnegative")
    if variant is None:
        variant = {"none": "linear", "z2": "even", "s1": "s1"}[pot.symmetry]
    params = {"seed": int(direction_seed), "variant": variant}
    if radius is None and model is not None:
        radius = 1.1 * surface_radius(pot, model)
    if radius is not None:
        params["radius"] = float(radius)
    pert = Perturbation("generic", float(strength), params)
    return replace(pot, perturbations=pot.perturbations + (pert,))


def break_symmetry(pot: Potential, model: SpectralModel, circle, strength: float) -> Potential:
    """Add strength * Re(a_k), localized near the circle of label k.

    The bump is a plateau in |a_k|^2 around the circle radius times a cutoff in
    the energy off label k, so other circles see no change at all.
    """
    if getattr(circle, "orbit_type", None) != "circle":
        raise NotACircle("symmetry breaking needs a critical circle")
    already = any(p.type == "break" for p in pot.perturbations)
    if pot.symmetry != "s1" and not already:
        raise ValueError("break_symmetry expects an S^1-invariant potential")
    a = np.asarray(circle.point.coeffs).reshape(-1, 2)
    mod2 = np.sum(a * a, axis=1)
    k = int(np.argmax(mod2))
    if strength == 0.0:
        return pot
    pert = Perturbation("break", float(strength),
                        {"label_index": k, "radius": float(np.sqrt(mod2[k]))})
    return replace(pot, symmetry="none", perturbations=pot.perturbations + (pert,))


# -- serialization ---------------------------------------------------------

def potential_to_dict(pot: Potential) -> dict:
    params = {}
    for key, val in pot.params.items():
        params[key] = potential_to_dict(val) if isinstance(val, Potential) else val
    return {
        "kind": pot.kind,
        "params": params,
        "symmetry": pot.symmetry,
        "perturbations": [{"type": p.type, "strength": p.strength, **p.params}
                          for p in pot.perturbations],
    }


def potential_from_dict(doc: dict) -> Potential:
    params = {}
    for key, val in doc.get("params", {}).items():
        params[key] = potential_from_dict(val) if isinstance(val, dict) and "kind" in val else val
    perts = []
    for p in doc.get("perturbations", []):
        p = dict(p)
        perts.append(Perturbation(p.pop("type"), float(p.pop("strength")), p))
    sym = doc.get("symmetry", "none")
    if sym not in SYMMETRIES:
        raise ValueError(f"unknown symmetry {sym!r}")
    return Potential(doc["kind"], params, sym, tuple(perts))
