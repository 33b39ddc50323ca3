"""Spectral-element Radau collocation for two-point problems on long horizons.

The time axis is split into elements that grow geometrically away from a
central segment.  Each element carries Gauss-Radau nodes plus the opposite
endpoint, and imposes the ODE at its Radau nodes only.  Elements left of the
split point use the left-anchored Radau family, the others the right-anchored
one, so modes decaying toward either end of the horizon are damped even on
long elements (the scheme is L-stable in the outward direction).  Neighbouring
elements share their endpoint node; only the node at the split carries no
ODE row, and together with d boundary rows the discrete system is square.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre
from scipy.optimize import brentq
from scipy.sparse.linalg import splu


def bary_weights(x):
    w = np.array([1.0 / np.prod(xj - np.delete(x, j)) for j, xj in enumerate(x)])
    return w / np.max(np.abs(w))


def diff_matrix(x):
    """Differentiation matrix of the polynomial interpolant on nodes x."""
    w = bary_weights(x)
    X = x[:, None] - x[None, :]
    np.fill_diagonal(X, 1.0)
    D = (w[None, :] / w[:, None]) / X
    np.fill_diagonal(D, 0.0)
    D -= np.diag(D.sum(axis=1))
    return D


def radau_nodes(p, side="right"):
    """p Gauss-Radau points on [-1, 1] plus the free endpoint, ascending.

    side="right": the Radau points include +1 and -1 is added; side="left"
    mirrors this.
    """
    c = np.zeros(p + 1)
    c[p - 1] = c[p] = 1.0
    r = np.sort(np.real(legendre.legroots(c)))  # includes -1
    r[0] = -1.0
    x = np.concatenate([r, [1.0]])
    return x if side == "left" else np.sort(-x)


def cheb_lobatto(p):
    """Ascending Chebyshev-Lobatto nodes on [-1, 1] and the differentiation matrix."""
    x = -np.cos(np.pi * np.arange(p + 1) / p)
    return x, diff_matrix(x)


def bary_matrix(x, xe):
    """Barycentric interpolation matrix from nodes x to points xe."""
    w = bary_weights(x)
    diff = xe[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    M = w / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    M[rows] = exact[rows].astype(float)
    return M


def graded_breaks(length, n, h0):
    """n element lengths growing geometrically from h0 and summing to length."""
    if n <= 0:
        return np.zeros(0)
    if h0 * n >= length:
        return np.full(n, length / n)
    hi = max(2.0, (length / h0) ** (1.0 / max(n - 1, 1)) + 1.0)
    q = brentq(lambda q: h0 * (q ** n - 1) / (q - 1) - length, 1.0 + 1e-12, hi)
    return h0 * q ** np.arange(n)


@dataclass
class Mesh:
    breaks: np.ndarray  # element boundaries, ascending
    p: int
    split: float = None  # elements ending at or before split use left Radau nodes

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=float)
        if self.split is None:
            self.split = self.breaks[0]
        self.ref = {s: radau_nodes(self.p, s) for s in ("left", "right")}
        self.Dref = {s: diff_matrix(x) for s, x in self.ref.items()}
        t = [self.breaks[0]]
        for e in range(self.n_elements):
            a, b = self.breaks[e], self.breaks[e + 1]
            t.extend(a + 0.5 * (b - a) * (self.ref[self.side(e)][1:] + 1.0))
        self.t = np.array(t)

    @property
    def n_elements(self):
        return len(self.breaks) - 1

    @property
    def n_nodes(self):
        return len(self.t)

    def side(self, e):
        return "left" if self.breaks[e + 1] <= self.split + 1e-12 else "right"

    def element_nodes(self, e):
        return np.arange(e * self.p, e * self.p + self.p + 1)

    def collocated(self, e):
        """Local indices of the nodes where element e imposes the ODE."""
        return np.arange(self.p) if self.side(e) == "left" else np.arange(1, self.p + 1)

    def node_at(self, time):
        return int(np.argmin(np.abs(self.t - time)))


def make_mesh(T, m, p=8, center=(0.0, 0.0), n_center=0, h0=1.0):
    """Mesh on [center[0] - T, center[1] + T] with about m nodes.

    Elements of degree p; n_center uniform elements on the central segment and
    the rest split evenly between the two graded tails.  The left tail uses
    left Radau elements.
    """
    n_el = max(2 + n_center, int(np.ceil(m / p)))
    side = max(1, (n_el - n_center) // 2)
    tail = graded_breaks(T, side, h0)
    c0, c1 = center
    left = c0 - np.concatenate([[0.0], np.cumsum(tail)])[::-1]
    mid = np.linspace(c0, c1, n_center + 1)[1:] if n_center else np.zeros(0)
    right = c1 + np.cumsum(tail)
    return Mesh(np.concatenate([left, mid, right]), p, split=c0)


class CollocationProblem:
    """z' = f(t, z) on a mesh with boundary rows on the first/last node and an
    optional scalar anchor g(z(t_a)) = 0."""

    def __init__(self, mesh, d, field, left_bc, right_bc, anchor=None):
        self.mesh, self.d = mesh, d
        self.field = field  # (times (k,), Z (k, d), want_jac) -> (F (k, d), DF (k, d, d))
        self.left_bc = left_bc  # z -> (res, jac)
        self.right_bc = right_bc
        self.anchor = anchor  # (node index, z -> (res, grad))
        self._pattern()

    def _pattern(self):
        """One differentiation row per collocated node, from its element's D."""
        mesh, d = self.mesh, self.d
        N = mesh.n_nodes
        rows, Drows = [], []
        for e in range(mesh.n_elements):
            idx = mesh.element_nodes(e)
            h = mesh.breaks[e + 1] - mesh.breaks[e]
            D = mesh.Dref[mesh.side(e)] * (2.0 / h)
            for loc in mesh.collocated(e):
                row = np.zeros(N)
                row[idx[0]:idx[-1] + 1] = D[loc]
                rows.append(idx[loc])
                Drows.append(row)
        self.cnodes = np.array(rows)
        self.Dglobal = sp.csr_matrix(np.array(Drows))
        # constant part of the Jacobian: kron(D, I_d) on the ODE rows
        self.Dkron = sp.kron(self.Dglobal, sp.identity(d), format="csr")
        ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        k = np.arange(len(self.cnodes))
        self._blk_rows = (k[:, None, None] * d + ii[None]).ravel()
        self._blk_cols = (self.cnodes[:, None, None] * d + jj[None]).ravel()

    def residual(self, Z, want_jac=True):
        res_l, jac_l = self.left_bc(Z[0])
        res_r, jac_r = self.right_bc(Z[-1])
        cn = self.cnodes
        F, DF = self.field(self.mesh.t[cn], Z[cn], want_jac)
        ode = self.Dglobal @ Z - F
        parts = [res_l, ode.ravel()]
        if self.anchor is not None:
            ia, g = self.anchor
            ra, ga = g(Z[ia])
            parts.append([ra])
        parts.append(res_r)
        res = np.concatenate(parts)
        if not want_jac:
            return res, None
        return res, self._jacobian(Z, jac_l, jac_r, DF)

    def _jacobian(self, Z, jac_l, jac_r, DF):
        d = self.d
        N = self.mesh.n_nodes
        nc = len(self.cnodes)
        ode = self.Dkron - sp.csr_matrix((DF.ravel(), (self._blk_rows, self._blk_cols)),
                                         shape=(nc * d, N * d))
        left = sp.hstack([sp.csr_matrix(jac_l), sp.csr_matrix((jac_l.shape[0], (N - 1) * d))])
        right = sp.hstack([sp.csr_matrix((jac_r.shape[0], (N - 1) * d)), sp.csr_matrix(jac_r)])
        blocks = [left, ode]
        if self.anchor is not None:
            ia, g = self.anchor
            _, ga = g(Z[ia])
            row = np.zeros(N * d)
            row[ia * d:(ia + 1) * d] = ga
            blocks.append(sp.csr_matrix(row[None, :]))
        blocks.append(right)
        return sp.vstack(blocks, format="csc")

    def solve(self, Z0, tol, max_iter=30):
        """Damped Newton; returns (Z, max-norm residual, converged).

        Starts that keep needing tiny steps are abandoned early: three
        consecutive steps shorter than 1/64 end the attempt.
        """
        Z = np.array(Z0, dtype=float)
        res, J = self.residual(Z)
        nrm = float(np.max(np.abs(res)))
        short = 0
        for _ in range(max_iter):
            if nrm <= tol:
                return Z, nrm, True
            try:
                step = splu(J).solve(-res)
            except RuntimeError:
                return Z, nrm, False
            if not np.all(np.isfinite(step)):
                return Z, nrm, False
            step = step.reshape(Z.shape)
            t = 1.0
            for _ in range(20):
                Zt = Z + t * step
                rt, _ = self.residual(Zt, want_jac=False)
                nt = float(np.max(np.abs(rt)))
                if np.isfinite(nt) and nt < (1 - 1e-4 * t) * nrm:
                    break
                t *= 0.5
            else:
                return Z, nrm, False
            short = short + 1 if t < 1.0 / 64 else 0
            if short >= 3:
                return Z, nrm, False
            Z = Zt
            res, J = self.residual(Z)
            nrm = float(np.max(np.abs(res)))
        return Z, nrm, nrm <= tol

    def interp_defect(self, Z, n_eval=None):
        """Max defect |z' - f| of the piecewise interpolant at points between nodes."""
        mesh = self.mesh
        n_eval = n_eval or 2 * mesh.p
        xe = -np.cos(np.pi * (np.arange(n_eval) + 0.5) / n_eval)
        B = {s: bary_matrix(x, xe) for s, x in mesh.ref.items()}
        ts, Zs, dZs = [], [], []
        for e in range(mesh.n_elements):
            idx = mesh.element_nodes(e)
            side = mesh.side(e)
            a, b = mesh.breaks[e], mesh.breaks[e + 1]
            dZs.append(B[side] @ (mesh.Dref[side] @ Z[idx]) * (2.0 / (b - a)))
            Zs.append(B[side] @ Z[idx])
            ts.append(a + 0.5 * (b - a) * (xe + 1.0))
        f, _ = self.field(np.concatenate(ts), np.vstack(Zs), False)
        return float(np.max(np.abs(np.vstack(dZs) - f)))
