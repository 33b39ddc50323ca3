"""Truncated spectral models of a self-adjoint invertible operator L.

Coordinates are always taken in an E-orthonormal eigenbasis, so that
<Lu, u> = sum(lam_i a_i^2) and the H-metric on (coefficients, multiplier)
is diag(|lam_i|; 1).  For models with a complex structure each label owns a
consecutive (Re, Im) pair of real coordinates and S^1 acts by rotating every
pair by the same angle.

Every model also knows a spatial realization of its eigenbasis on a
quadrature grid; potentials that integrate powers of |u| use it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroEigenvalue

KINDS = ("abstract", "dirac_toy", "elliptic_system", "beam", "wave")

# A mode is a tuple of terms (component, coefficient, factors); each factor is
# (axis, fn, freq) with fn in {"one", "cos", "sin", "dsin"}.  "dsin" is the
# Dirichlet sine sin(k*pi*x) on (0, 1), the others live on [0, 2*pi).
SQ2 = np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class SpectralModel:
    kind: str
    labels: np.ndarray
    eigenvalues: np.ndarray
    complex_structure: bool
    truncation_params: dict
    kernel_dim: int = 0
    modes: tuple = field(default=(), repr=False)
    kernel_modes: tuple = field(default=(), repr=False)
    axes: tuple = field(default=("periodic",), repr=False)
    n_components: int = 1

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        """Total real dimension of the coefficient space."""
        return self.n_labels * (2 if self.complex_structure else 1)

    @property
    def coord_eigs(self) -> np.ndarray:
        if self.complex_structure:
            return np.repeat(self.eigenvalues, 2)
        return self.eigenvalues.copy()

    @property
    def coord_labels(self) -> np.ndarray:
        if self.complex_structure:
            return np.repeat(self.labels, 2)
        return self.labels.copy()

    @property
    def metric(self) -> np.ndarray:
        """Diagonal of the H x R metric G = diag(|lam_i|; 1)."""
        return np.append(np.abs(self.coord_eigs), 1.0)

    @property
    def n_negative(self) -> int:
        """Real dimension of the truncated H^-."""
        return int(np.sum(self.coord_eigs < 0))

    @property
    def max_frequency(self) -> int:
        freqs = [0.0]
        for mode in self.modes + self.kernel_modes:
            for _, _, factors in mode:
                freqs.extend(f for _, _, f in factors)
        return int(np.ceil(max(freqs)))

    def label_slice(self, label_index: int) -> slice:
        """Real coordinates owned by the label at position ``label_index``."""
        w = 2 if self.complex_structure else 1
        return slice(w * label_index, w * label_index + w)

    def label_index(self, label: int) -> int:
        hits = np.flatnonzero(self.labels == label)
        if len(hits) == 0:
            raise KeyError(f"label {label} not in model")
        return int(hits[0])

    def grid(self, grid_size: int):
        """Flattened coordinates of the product quadrature grid, one array per axis."""
        pts = []
        for ax in self.axes:
            if ax == "periodic":
                pts.append(2 * np.pi * np.arange(grid_size) / grid_size)
            else:
                pts.append(np.arange(grid_size) / grid_size)
        return [m.ravel() for m in np.meshgrid(*pts, indexing="ij")]

    def spatial_basis(self, grid_size: int):
        """Quadrature weights and coordinate fields on a product grid.

        Returns ``(weights, fields, kernel_fields)`` with ``fields`` of shape
        (dim, n_real_components, n_points).  Weights sum to one (normalized
        measure).  In the complex case the real components are (Re, Im) of
        each field component.
        """
        mesh = self.grid(grid_size)
        # uniform product rule; Dirichlet axes drop the x = 1 node where u vanishes
        weights = np.full(len(mesh[0]), float(grid_size) ** -len(self.axes))

        real = _eval_modes(self.modes, mesh, self.n_components)
        kern = _eval_modes(self.kernel_modes, mesh, self.n_components)
        if self.complex_structure:
            real = _complexify(real)
            kern = _complexify(kern)
        return weights, real, kern


def _eval_factor(fn, freq, x):
    if fn == "one":
        return np.ones_like(x)
    if fn == "cos":
        return np.cos(freq * x)
    if fn == "sin":
        return np.sin(freq * x)
    if fn == "dsin":
        return np.sin(freq * np.pi * x)
    raise ValueError(fn)


def _eval_modes(modes, mesh, n_comp):
    out = np.zeros((len(modes), n_comp, len(mesh[0])))
    for i, mode in enumerate(modes):
        for comp, coef, factors in mode:
            val = np.full(len(mesh[0]), float(coef))
            for axis, fn, freq in factors:
                val = val * _eval_factor(fn, freq, mesh[axis])
            out[i, comp] += val
    return out


def _complexify(fields):
    n, c, p = fields.shape
    out = np.zeros((2 * n, 2 * c, p))
    out[0::2, :c] = fields
    out[1::2, c:] = fields
    return out


@dataclass(frozen=True)
class StatePoint:
    """A point z = (u, lambda) in truncated coordinates."""

    coeffs: np.ndarray
    multiplier: float

    def vector(self) -> np.ndarray:
        return np.append(np.asarray(self.coeffs, dtype=float), float(self.multiplier))

    @classmethod
    def from_vector(cls, v) -> "StatePoint":
        v = np.asarray(v, dtype=float)
        return cls(v[:-1].copy(), float(v[-1]))


def check_point(model: SpectralModel, z: StatePoint) -> None:
    if np.shape(z.coeffs) != (model.dim,):
        raise DimensionMismatch(
            f"point has {np.size(z.coeffs)} coefficients, model needs {model.dim}")


def _assign_labels(entries):
    """entries: list of (eigenvalue, mode). Returns sorted labels/eigs/modes."""
    order = sorted(range(len(entries)), key=lambda i: (entries[i][0], i))
    eigs = np.array([entries[i][0] for i in order], dtype=float)
    modes = tuple(entries[i][1] for i in order)
    n_neg = int(np.sum(eigs < 0))
    labels = np.concatenate([np.arange(-n_neg, 0), np.arange(1, len(eigs) - n_neg + 1)])
    return labels.astype(int), eigs, modes


def _abstract(params):
    N = int(params["N"])
    custom = params.get("eigenvalues")
    entries = []
    if custom is None:
        for j in range(1, N + 1):
            entries.append((float(j), ((0, SQ2, ((0, "cos", j),)),)))
            entries.append((-float(j), ((0, SQ2, ((0, "sin", j),)),)))
    else:
        vals = [float(v) for v in custom]
        if any(v == 0 for v in vals):
            raise ZeroEigenvalue("abstract model with a zero eigenvalue")
        neg = sorted(v for v in vals if v < 0)
        pos = sorted(v for v in vals if v > 0)
        for rank, v in enumerate(reversed(neg), start=1):
            entries.append((v, ((0, SQ2, ((0, "sin", rank),)),)))
        for rank, v in enumerate(pos, start=1):
            entries.append((v, ((0, SQ2, ((0, "cos", rank),)),)))
    return entries, (), ("periodic",), 1


def _dirac_toy(params):
    # D = J d/dx on antiperiodic R^2-valued functions, spectrum +-(k - 1/2).
    N = int(params["N"])
    entries = []
    for k in range(1, N + 1):
        w = k - 0.5
        entries.append((w, ((0, 1.0, ((0, "cos", w),)), (1, 1.0, ((0, "sin", w),)))))
        entries.append((-w, ((0, 1.0, ((0, "cos", w),)), (1, -1.0, ((0, "sin", w),)))))
    return entries, (), ("periodic",), 2


def _elliptic_system(params):
    # L = [[0, -Laplace], [-Laplace, 0]] with Dirichlet data on (0, 1).
    K = int(params["K"])
    entries = []
    for k in range(1, K + 1):
        mu = (k * np.pi) ** 2
        entries.append((mu, ((0, 1.0, ((0, "dsin", k),)), (1, 1.0, ((0, "dsin", k),)))))
        entries.append((-mu, ((0, 1.0, ((0, "dsin", k),)), (1, -1.0, ((0, "dsin", k),)))))
    return entries, (), ("dirichlet",), 2


def _beam(params):
    # L = [[0, d/dt - Laplace], [-d/dt - Laplace, 0]] on S^1 x (0, 1).
    J, K = int(params["J"]), int(params["K"])
    entries = []
    for k in range(1, K + 1):
        mu = (k * np.pi) ** 2
        xf = (1, "dsin", k)
        entries.append((mu, ((0, 1.0, ((0, "one", 0), xf)), (1, 1.0, ((0, "one", 0), xf)))))
        entries.append((-mu, ((0, 1.0, ((0, "one", 0), xf)), (1, -1.0, ((0, "one", 0), xf)))))
        for j in range(1, J + 1):
            # basis (c u, s u, c v, s v) with c = 2cos(jt)sin(k pi x), s = 2sin(jt)sin(k pi x)
            block = np.array([[0, 0, mu, j], [0, 0, -j, mu], [mu, -j, 0, 0], [j, mu, 0, 0]], float)
            vals, vecs = np.linalg.eigh(block)
            parts = [(0, "cos"), (0, "sin"), (1, "cos"), (1, "sin")]
            for m in range(4):
                v = vecs[:, m]
                v = v * np.sign(v[np.argmax(np.abs(v) > 1e-12)])
                terms = tuple((comp, 2.0 * v[q], ((0, fn, j), xf))
                              for q, (comp, fn) in enumerate(parts) if abs(v[q]) > 1e-14)
                entries.append((float(vals[m]), terms))
    return entries, (), ("periodic", "dirichlet"), 2


def _wave(params):
    # <Lu, v> = int u_x v_x - u_t v_t on the 2-torus, spectrum j^2 - k^2.
    J = int(params["J"])

    def fns(n):
        return [("one", 0, 1.0)] if n == 0 else [("cos", n, SQ2), ("sin", n, SQ2)]

    entries, kernel = [], []
    for k in range(J + 1):
        for j in range(J + 1):
            for ft, fk, ct in fns(k):
                for fx, fj, cx in fns(j):
                    mode = ((0, ct * cx, ((0, ft, fk), (1, fx, fj))),)
                    if j == k:
                        kernel.append(mode)
                    else:
                        entries.append((float(j * j - k * k), mode))
    return entries, tuple(kernel), ("periodic", "periodic"), 1


_BUILDERS = {
    "abstract": _abstract,
    "dirac_toy": _dirac_toy,
    "elliptic_system": _elliptic_system,
    "beam": _beam,
    "wave": _wave,
}


def build_model(kind: str, truncation_params: dict, complex_structure: bool = False) -> SpectralModel:
    """Build a truncated spectral model.

    ``truncation_params`` keys per kind: abstract ``N`` (optional explicit
    ``eigenvalues``), dirac_toy ``N``, elliptic_system ``K``, beam ``J, K``,
    wave ``J`` (cutoff on both frequencies).
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown model kind {kind!r}")
    params = dict(truncation_params)
    for key, val in params.items():
        if key != "eigenvalues" and int(val) < 1:
            raise ValueError(f"truncation cutoff {key} must be >= 1")
    entries, kernel, axes, ncomp = _BUILDERS[kind](params)
    if any(e[0] == 0.0 for e in entries):
        raise ZeroEigenvalue(f"{kind} model produced a zero eigenvalue")
    labels, eigs, modes = _assign_labels(entries)
    return SpectralModel(
        kind=kind,
        labels=labels,
        eigenvalues=eigs,
        complex_structure=bool(complex_structure),
        truncation_params=params,
        kernel_dim=len(kernel),
        modes=modes,
        kernel_modes=kernel,
        axes=axes,
        n_components=ncomp,
    )


def e_norm2(z: StatePoint) -> float:
    return float(np.dot(z.coeffs, z.coeffs))


def h_norm2(model: SpectralModel, z: StatePoint) -> float:
    return h_inner(model, z, z)


def h_inner(model: SpectralModel, z1: StatePoint, z2: StatePoint) -> float:
    """<z1, z2> in H x R: sum |lam_i| a_i b_i + lambda_1 lambda_2."""
    check_point(model, z1)
    check_point(model, z2)
    w = np.abs(model.coord_eigs)
    return float(np.sum(w * z1.coeffs * z2.coeffs) + z1.multiplier * z2.multiplier)


def split_pm(model: SpectralModel, z: StatePoint):
    """Return the (H^+, H^-) parts of z; multipliers are zeroed."""
    check_point(model, z)
    pos = model.coord_eigs > 0
    a = np.asarray(z.coeffs, dtype=float)
    return StatePoint(np.where(pos, a, 0.0), 0.0), StatePoint(np.where(pos, 0.0, a), 0.0)


def s1_generator(model: SpectralModel) -> np.ndarray:
    """Matrix of the infinitesimal S^1 rotation on coefficient space."""
    if not model.complex_structure:
        raise ValueError("S^1 action needs a complex structure")
    n = model.dim
    J = np.zeros((n, n))
    for i in range(0, n, 2):
        J[i, i + 1] = -1.0
        J[i + 1, i] = 1.0
    return J


def s1_rotate(model: SpectralModel, coeffs, theta: float) -> np.ndarray:
    """Multiply every complex coefficient by exp(i theta)."""
    if not model.complex_structure:
        raise ValueError("S^1 action needs a complex structure")
    a = np.asarray(coeffs, dtype=float).reshape(-1, 2)
    c, s = np.cos(theta), np.sin(theta)
    out = np.column_stack([c * a[:, 0] - s * a[:, 1], s * a[:, 0] + c * a[:, 1]])
    return out.ravel()


def model_to_json(model: SpectralModel) -> str:
    doc = {
        "kind": model.kind,
        "labels": [int(x) for x in model.labels],
        "eigenvalues": [float(x) for x in model.eigenvalues],
        "complex_structure": model.complex_structure,
        "kernel_dim": model.kernel_dim,
        "truncation_params": model.truncation_params,
    }
    return json.dumps(doc)


def model_from_json(text: str) -> SpectralModel:
    doc = json.loads(text)
    model = build_model(doc["kind"], doc["truncation_params"], doc["complex_structure"])
    # json floats round-trip exactly; keep the stored values authoritative
    stored = np.array(doc["eigenvalues"], dtype=float)
    if stored.shape != model.eigenvalues.shape:
        raise DimensionMismatch("stored eigenvalues do not match the rebuilt model")
    return SpectralModel(
        kind=model.kind, labels=np.array(doc["labels"], dtype=int), eigenvalues=stored,
        complex_structure=model.complex_structure, truncation_params=model.truncation_params,
        kernel_dim=int(doc["kernel_dim"]), modes=model.modes, kernel_modes=model.kernel_modes,
        axes=model.axes, n_components=model.n_components)
