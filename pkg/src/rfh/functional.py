"""The action I(u, lam) = 1/2 <Lu, u> - lam F(u), its gradients and the flow field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potentials import potential_jet, potential_jets
from .spectrum import StatePoint, check_point


@dataclass
class ActionJet:
    value: float
    grad_h: StatePoint
    hess_euclid: np.ndarray
    grad_euclid: np.ndarray  # (Lu - lam grad F, -F), the coordinate gradient


def _split(z):
    if isinstance(z, StatePoint):
        return np.asarray(z.coeffs, dtype=float), float(z.multiplier)
    z = np.asarray(z, dtype=float)
    return z[:-1], float(z[-1])


def action_value(model, pot, z) -> float:
    a, lam = _split(z)
    F = potential_jet(pot, model, a)[0]
    return 0.5 * float(np.dot(model.coord_eigs * a, a)) - lam * F


def euclid_parts(model, pot, z):
    """Return (value, Euclidean gradient R, Euclidean Hessian) as plain arrays."""
    a, lam = _split(z)
    eigs = model.coord_eigs
    F, g, H = potential_jet(pot, model, a)
    n = len(a)
    val = 0.5 * float(np.dot(eigs * a, a)) - lam * F
    R = np.empty(n + 1)
    R[:n] = eigs * a - lam * g
    R[n] = -F
    A = np.empty((n + 1, n + 1))
    A[:n, :n] = np.diag(eigs) - lam * H
    A[:n, n] = -g
    A[n, :n] = -g
    A[n, n] = 0.0
    return val, R, A


def action_jet(model, pot, z: StatePoint) -> ActionJet:
    """Value, H-gradient and Euclidean Hessian of I at z."""
    check_point(model, z)
    val, R, A = euclid_parts(model, pot, z)
    gh = R / model.metric
    return ActionJet(val, StatePoint.from_vector(gh), A, R)


def flow_vector(model, pot, zvec) -> np.ndarray:
    """Descending flow -grad_H I as a flat vector (coefficients, multiplier)."""
    a, lam = _split(zvec)
    F, g, _ = potential_jet(pot, model, a)
    eigs = model.coord_eigs
    out = np.empty(len(a) + 1)
    out[:-1] = -np.sign(eigs) * a + lam * g / np.abs(eigs)
    out[-1] = F
    return out


def flow_jacobian(model, pot, zvec) -> np.ndarray:
    """Jacobian of flow_vector, -G^{-1} A."""
    _, _, A = euclid_parts(model, pot, zvec)
    return -A / model.metric[:, None]


def flow_field(model, pot, z: StatePoint) -> StatePoint:
    """The flow z' = -grad_H I(z): u' = u^- - u^+ + lam |L|^{-1} grad F(u), lam' = F(u)."""
    check_point(model, z)
    return StatePoint.from_vector(flow_vector(model, pot, z.vector()))


def grad_h_norm(model, pot, zvec) -> float:
    """H-norm of the H-gradient, sqrt(R^T G^{-1} R)."""
    _, R, _ = euclid_parts(model, pot, zvec)
    return float(np.sqrt(np.dot(R, R / model.metric)))


def flow_batch(model, pot, Z, want_jac=True):
    """Flow vectors (k, d) and their Jacobians (k, d, d) at the rows of Z."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    F, g, H = potential_jets(pot, model, Z[:, :-1])
    return flow_from_jets(model, Z, F, g, H if want_jac else None)


def flow_from_jets(model, Z, F, g, H=None):
    """Flow and Jacobian given potential jets at the rows of Z (H=None skips the Jacobian)."""
    U, lam = Z[:, :-1], Z[:, -1]
    eigs = model.coord_eigs
    absl = np.abs(eigs)
    out = np.empty_like(Z)
    out[:, :-1] = -np.sign(eigs) * U + lam[:, None] * g / absl
    out[:, -1] = F
    if H is None:
        return out, None
    k, n = U.shape
    J = np.zeros((k, n + 1, n + 1))
    J[:, :n, :n] = lam[:, None, None] * H / absl[None, :, None]
    idx = np.arange(n)
    J[:, idx, idx] -= np.sign(eigs)
    J[:, :n, n] = g / absl
    J[:, n, :n] = g
    return out, J


def action_values(model, pot, Z):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    U = Z[:, :-1]
    F = potential_jets(pot, model, U)[0]
    return 0.5 * np.einsum("ki,i,ki->k", U, model.coord_eigs, U) - Z[:, -1] * F
