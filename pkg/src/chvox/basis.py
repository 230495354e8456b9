"""Hierarchical orthonormal tensor-Legendre basis on the reference cube.

The reference element is ``[-1, 1]^3``.  Basis function ``(a, b, c)`` is the
product of normalized Legendre polynomials ``L_a(x) L_b(y) L_c(z)`` with
``a + b + c <= p``; modes are ordered by total degree so that the first
``n_loc(q)`` functions span the polynomials of degree ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


def n_loc(p: int) -> int:
    """Number of local degrees of freedom ``(p+1)(p+2)(p+3)/6``."""
    if p < 0:
        raise ValueError("polynomial degree must be >= 0")
    return (p + 1) * (p + 2) * (p + 3) // 6


def mode_list(p: int) -> list[tuple[int, int, int]]:
    """Exponent triples in graded order: by total degree, then with the
    x exponent descending, then y descending."""
    modes = []
    for d in range(p + 1):
        for a in range(d, -1, -1):
            for b in range(d - a, -1, -1):
                modes.append((a, b, d - a - b))
    return modes


def legendre_normalized(n_max: int, x):
    """Values and derivatives of ``sqrt((2n+1)/2) P_n(x)`` for ``n <= n_max``.

    Returns two arrays of shape ``(n_max + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    P = np.zeros((n_max + 1,) + x.shape)
    dP = np.zeros_like(P)
    P[0] = 1.0
    if n_max >= 1:
        P[1] = x
        dP[1] = 1.0
    for n in range(1, n_max):
        P[n + 1] = ((2 * n + 1) * x * P[n] - n * P[n - 1]) / (n + 1)
        dP[n + 1] = dP[n - 1] + (2 * n + 1) * P[n]
    scale = np.sqrt((2 * np.arange(n_max + 1) + 1) / 2.0).reshape((-1,) + (1,) * x.ndim)
    return P * scale, dP * scale


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule on ``[-1, 1]`` with ``n_q`` points.

    ``volume_points``/``volume_weights`` tensorize it to the cube (x fastest),
    ``face_points``/``face_weights`` to the square.
    """

    n_q: int
    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss(cls, n_q: int) -> "QuadratureRule":
        x, w = np.polynomial.legendre.leggauss(n_q)
        return cls(n_q, x, w)

    @property
    def volume_points(self) -> np.ndarray:
        x = self.points
        Z, Y, X = np.meshgrid(x, x, x, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    @property
    def volume_weights(self) -> np.ndarray:
        w = self.weights
        return np.einsum("k,j,i->kji", w, w, w).ravel()

    @property
    def face_points(self) -> np.ndarray:
        x = self.points
        V, U = np.meshgrid(x, x, indexing="ij")
        return np.stack([U.ravel(), V.ravel()], axis=1)

    @property
    def face_weights(self) -> np.ndarray:
        return np.outer(self.weights, self.weights).ravel()


def quadrature_rule(p: int) -> QuadratureRule:
    """Default rule for degree ``p``: ``max(1, 2p+1)`` points per direction."""
    return QuadratureRule.gauss(max(1, 2 * p + 1))


def _face_reference_points(axis: int, side: int, pts2d: np.ndarray) -> np.ndarray:
    """Embed 2D face quadrature points into the reference cube face
    ``x_axis = side`` (tangential coordinates in increasing axis order)."""
    tang = [d for d in range(3) if d != axis]
    out = np.empty((len(pts2d), 3))
    out[:, axis] = side
    out[:, tang[0]] = pts2d[:, 0]
    out[:, tang[1]] = pts2d[:, 1]
    return out


@dataclass(frozen=True, eq=False)
class ReferenceBasis:
    """Modal basis of degree ``p`` with tabulated values at a quadrature rule.

    Tables
    ------
    vol_phi : (n_qv, N_loc)          basis values at volume points
    vol_grad : (n_qv, N_loc, 3)      reference gradients at volume points
    face_phi[axis][s] : (n_qf, N_loc)  traces on face ``x_axis = -1`` (s=0)
        or ``+1`` (s=1)
    face_grad[axis][s] : (n_qf, N_loc, 3)
    """

    p: int
    quad: QuadratureRule
    modes: tuple
    vol_phi: np.ndarray
    vol_grad: np.ndarray
    face_phi: tuple
    face_grad: tuple
    _extra: dict = field(default_factory=dict, repr=False)

    @property
    def n_loc(self) -> int:
        return len(self.modes)

    @property
    def vol_weights(self) -> np.ndarray:
        return self.quad.volume_weights

    @property
    def face_weights(self) -> np.ndarray:
        return self.quad.face_weights

    @property
    def mode_degree(self) -> np.ndarray:
        return np.array([sum(m) for m in self.modes])

    def eval(self, xhat, modes=None) -> np.ndarray:
        """Basis values at reference points ``xhat`` of shape ``(n, 3)``.

        Returns ``(n, N_loc)`` (or only the requested mode columns).
        """
        return eval_basis(self.p, xhat, modes)

    def eval_grad(self, xhat) -> np.ndarray:
        """Reference gradients, shape ``(n, N_loc, 3)``."""
        return eval_basis_grad(self.p, xhat)

    def with_quadrature(self, n_q: int) -> "ReferenceBasis":
        """Same basis tabulated on a different rule (used for over-integration)."""
        key = ("nq", n_q)
        if key not in self._extra:
            self._extra[key] = _make_basis(self.p, n_q)
        return self._extra[key]


def eval_basis(p: int, xhat, modes=None) -> np.ndarray:
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    if np.any(np.abs(xhat) > 1.0 + 1e-12):
        raise ValueError("reference point outside [-1, 1]^3")
    ml = mode_list(p)
    if modes is None:
        modes = range(len(ml))
    modes = list(np.atleast_1d(modes))
    if any(m < 0 or m >= len(ml) for m in modes):
        raise IndexError(f"mode index out of range for p={p} (N_loc={len(ml)})")
    L = [legendre_normalized(p, xhat[:, d])[0] for d in range(3)]
    out = np.empty((len(xhat), len(modes)))
    for col, m in enumerate(modes):
        a, b, c = ml[m]
        out[:, col] = L[0][a] * L[1][b] * L[2][c]
    return out


def eval_basis_grad(p: int, xhat) -> np.ndarray:
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    ml = mode_list(p)
    LdL = [legendre_normalized(p, xhat[:, d]) for d in range(3)]
    out = np.empty((len(xhat), len(ml), 3))
    for col, (a, b, c) in enumerate(ml):
        (Lx, dLx), (Ly, dLy), (Lz, dLz) = LdL
        out[:, col, 0] = dLx[a] * Ly[b] * Lz[c]
        out[:, col, 1] = Lx[a] * dLy[b] * Lz[c]
        out[:, col, 2] = Lx[a] * Ly[b] * dLz[c]
    return out


def _make_basis(p: int, n_q: int) -> ReferenceBasis:
    quad = QuadratureRule.gauss(n_q)
    vp = quad.volume_points
    face_phi, face_grad = [], []
    for axis in range(3):
        fp, fg = [], []
        for side in (-1.0, 1.0):
            pts = _face_reference_points(axis, side, quad.face_points)
            fp.append(eval_basis(p, pts))
            fg.append(eval_basis_grad(p, pts))
        face_phi.append(tuple(fp))
        face_grad.append(tuple(fg))
    return ReferenceBasis(
        p=p,
        quad=quad,
        modes=tuple(mode_list(p)),
        vol_phi=eval_basis(p, vp),
        vol_grad=eval_basis_grad(p, vp),
        face_phi=tuple(face_phi),
        face_grad=tuple(face_grad),
    )


@lru_cache(maxsize=None)
def reference_basis(p: int, n_q: int | None = None) -> ReferenceBasis:
    """Cached basis of degree ``p`` on the default (or given) quadrature."""
    if p < 0:
        raise ValueError("polynomial degree must be >= 0")
    return _make_basis(p, quadrature_rule(p).n_q if n_q is None else n_q)


# -- fields -------------------------------------------------------------------


@dataclass(eq=False)
class DGField:
    """Broken polynomial function: coefficient ``[k * N_loc + j]`` multiplies
    basis function ``j`` on element ``k``."""

    grid: object
    basis: ReferenceBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        expected = self.grid.n_elements * self.basis.n_loc
        if self.coeffs.shape != (expected,):
            raise ValueError(f"coefficient vector must have length {expected}")

    @property
    def blocks(self) -> np.ndarray:
        """Coefficients viewed as ``(N_el, N_loc)``."""
        return self.coeffs.reshape(-1, self.basis.n_loc)

    def at_volume_points(self, basis: ReferenceBasis | None = None) -> np.ndarray:
        """Values at the volume quadrature points, shape ``(N_el, n_qv)``."""
        b = self.basis if basis is None else basis
        return self.blocks @ b.vol_phi.T

    def element_means(self) -> np.ndarray:
        # mean of phi_0 over the reference cube is 1/(2 sqrt 2), others vanish
        return self.blocks[:, 0] / (2.0 * np.sqrt(2.0))

    def evaluate(self, points) -> np.ndarray:
        """Point values (NaN outside the pore space)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        elem = self.grid.locate(points)
        out = np.full(len(points), np.nan)
        ok = elem >= 0
        if ok.any():
            centers = self.grid.element_centers[elem[ok]]
            xhat = np.clip((points[ok] - centers) * (2.0 / self.grid.h), -1.0, 1.0)
            phi = eval_basis(self.basis.p, xhat)
            out[ok] = np.einsum("nj,nj->n", phi, self.blocks[elem[ok]])
        return out

    def copy(self) -> "DGField":
        return DGField(self.grid, self.basis, self.coeffs.copy())


def volume_points_physical(grid, basis: ReferenceBasis) -> np.ndarray:
    """Physical coordinates of all volume quadrature points, ``(N_el, n_qv, 3)``."""
    return grid.element_centers[:, None, :] + 0.5 * grid.h * basis.quad.volume_points[None, :, :]


def l2_project(f, grid, basis: ReferenceBasis) -> DGField:
    """L2 projection onto the broken polynomial space.

    ``f`` is either a callable ``f(x)`` on arrays of shape ``(..., 3)`` or an
    array of per-element constants.  With the orthonormal basis the
    coefficients are ``(8/h^3) * int_E f phi``, i.e. a reference-cube
    quadrature of ``f * phi_hat``.
    """
    if callable(f):
        vals = np.asarray(f(volume_points_physical(grid, basis)), dtype=float)
        vals = np.broadcast_to(vals, (grid.n_elements, len(basis.vol_weights)))
        coeffs = (vals * basis.vol_weights) @ basis.vol_phi
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != (grid.n_elements,):
            raise ValueError("per-element data must have shape (N_el,)")
        coeffs = np.zeros((grid.n_elements, basis.n_loc))
        coeffs[:, 0] = vals * 2.0 * np.sqrt(2.0)
    return DGField(grid, basis, coeffs.ravel())
