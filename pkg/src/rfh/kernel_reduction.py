"""Reduction over the kernel of L for models where L is not invertible (wave).

For u in the span of the nonzero eigenmodes, the kernel part v(u) minimizes
K_u(v) = 1/(p+1) int h |u + v|^{p+1} over the kernel block, and the reduced
potential is Q(u) = K_u(v(u)).  Its gradient follows from the envelope
identity (v(u) is a minimizer, so dv/du drops out); its Hessian is the Schur
complement of the joint Hessian onto the eigenmode block.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence
from .potentials import Potential, _h_key, h_values, quadrature_grid_size, register_custom

GRAD_TOL = 1e-10
SOURCE = "kernel_reduced"


@dataclass(frozen=True, eq=False)
class KernelProblem:
    model: object
    p: float
    wh: np.ndarray  # quadrature weights times h, (P,)
    B: np.ndarray  # eigenmode fields (n, c, P)
    K: np.ndarray  # kernel fields (nk, c, P)

    @property
    def kernel_dim(self):
        return self.K.shape[0]


@functools.lru_cache(maxsize=16)
def _kernel_problem(model, p, hkey, M):
    weights, B, K = model.spatial_basis(M)
    return KernelProblem(model, p, weights * h_values(model, M, hkey), B, K)


def kernel_problem(model, p, h=1.0, grid=None) -> KernelProblem:
    if p <= 1:
        raise ValueError("exponent p must exceed 1")
    params = {"grid": grid} if grid is not None else {}
    M = quadrature_grid_size(model, params)
    return _kernel_problem(model, float(p), _h_key(h), M)


def _fields(kp, U, V):
    W = np.einsum("icp,ki->kcp", kp.B, U)
    if kp.kernel_dim:
        W = W + np.einsum("icp,ki->kcp", kp.K, V)
    return W


def _k_values(kp, W):
    r = np.sqrt(np.sum(W * W, axis=1))
    return (r ** (kp.p + 1)) @ kp.wh / (kp.p + 1)


def _weights(kp, W):
    """(r, wh r^{p-1}, wh r^{p-3}) on the grid."""
    r = np.sqrt(np.sum(W * W, axis=1))
    wr = kp.wh * r ** (kp.p - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        wr3 = kp.wh * np.where(r > 0, r ** (kp.p - 3), 0.0)
    return r, wr, wr3


def _hess_block(X, Y, W, wr, wr3, p):
    """Second derivative of K in the directions spanned by fields X and Y."""
    XW = np.einsum("icp,kcp->kip", X, W)
    YW = np.einsum("jcp,kcp->kjp", Y, W)
    H = np.einsum("icp,jcp,kp->kij", X, Y, wr, optimize=True)
    return H + (p - 1) * np.einsum("kip,kjp,kp->kij", XW, YW, wr3, optimize=True)


def kernel_gradient(kp, U, V):
    """d/dv K_u(v) = int h |u+v|^{p-1} (u+v) h_j for each kernel mode h_j."""
    U = np.atleast_2d(U)
    W = _fields(kp, U, np.atleast_2d(V))
    _, wr, _ = _weights(kp, W)
    return np.einsum("jcp,kcp,kp->kj", kp.K, W, wr)


def minimize_kernel_batch(kp, U, tol=GRAD_TOL, max_iter=100):
    """v(u) for each row of U by damped Newton on the convex problem."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    k = U.shape[0]
    V = np.zeros((k, kp.kernel_dim))
    if kp.kernel_dim == 0:
        return V
    for _ in range(max_iter):
        W = _fields(kp, U, V)
        _, wr, wr3 = _weights(kp, W)
        g = np.einsum("jcp,kcp,kp->kj", kp.K, W, wr)
        gn = np.linalg.norm(g, axis=1)
        active = gn > tol
        if not np.any(active):
            return V
        H = _hess_block(kp.K, kp.K, W[active], wr[active], wr3[active], kp.p)
        H += 1e-14 * np.eye(kp.kernel_dim)
        step = -np.linalg.solve(H, g[active][..., None])[..., 0]
        Va = V[active]
        Ua = U[active]
        K0 = _k_values(kp, W[active])
        t = np.ones(len(Va))
        for _ in range(40):
            Kt = _k_values(kp, _fields(kp, Ua, Va + t[:, None] * step))
            bad = Kt > K0 + 1e-15 * np.abs(K0)
            if not np.any(bad):
                break
            t[bad] *= 0.5
        V[active] = Va + t[:, None] * step
    g = kernel_gradient(kp, U, V)
    if np.max(np.linalg.norm(g, axis=1)) > tol:
        raise NonConvergence(f"kernel minimization stalled at |grad| = {np.max(np.abs(g)):.2e}")
    return V


def minimize_kernel_part(kp, u, tol=GRAD_TOL):
    return minimize_kernel_batch(kp, np.asarray(u, dtype=float)[None, :], tol)[0]


def q_jets(kp, U, need_hess=True):
    """Q, its gradient (envelope formula) and Hessian (Schur complement) at rows of U."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = minimize_kernel_batch(kp, U)
    W = _fields(kp, U, V)
    _, wr, wr3 = _weights(kp, W)
    Q = _k_values(kp, W)
    grad = np.einsum("icp,kcp,kp->ki", kp.B, W, wr)
    if not need_hess:
        return Q, grad, None
    Huu = _hess_block(kp.B, kp.B, W, wr, wr3, kp.p)
    if kp.kernel_dim:
        Huv = _hess_block(kp.B, kp.K, W, wr, wr3, kp.p)
        Hvv = _hess_block(kp.K, kp.K, W, wr, wr3, kp.p)
        # at u = 0 every block vanishes; the pseudo-inverse keeps that case finite
        Huu = Huu - Huv @ np.linalg.pinv(Hvv, hermitian=True) @ np.swapaxes(Huv, 1, 2)
    return Q, grad, Huu


def q_jet(kp, u):
    """(Q(u), grad Q(u)) for a single coefficient vector."""
    Q, g, _ = q_jets(kp, u, need_hess=False)
    return float(Q[0]), g[0]


def radial_derivative(kp, U):
    """<Q'(u), u> = int h |u + v(u)|^{p+1}."""
    _, g, _ = q_jets(kp, U, need_hess=False)
    return np.einsum("ki,ki->k", g, np.atleast_2d(U))


def kernel_reduced(p, h=1.0, grid=None, symmetry="z2") -> Potential:
    """F(u) = Q(u) - 1/(p+1), so that int h |u + v(u)|^{p+1} = 1 on the zero set."""
    params = {"source": SOURCE, "p": float(p), "h": h}
    if grid is not None:
        params["grid"] = int(grid)
    return Potential("custom", params, symmetry)


def _jet(params, model, U, need_hess=True):
    kp = kernel_problem(model, params["p"], params.get("h", 1.0), params.get("grid"))
    Q, g, H = q_jets(kp, U, need_hess)
    return Q - 1.0 / (kp.p + 1), g, H


register_custom(SOURCE, _jet, batched=True)
