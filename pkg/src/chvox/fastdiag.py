"""Fast diagonalization of the unit-coefficient diffusion form on a filled box.

When the pore space is a full box of voxels the interior penalty form on the tensor
space ``Q_p`` is a Kronecker sum::

    A_Q = (h/2)^2 (A1 (x) I (x) I + I (x) A1 (x) I + I (x) I (x) A1)

with ``A1`` the one-dimensional form (orthonormal Legendre modes, mass
``h/2`` per direction).  The total-degree space ``P_p`` is spanned by a subset
of the ``Q_p`` modes, so ``A = E^T A_Q E`` for the selection ``E``.  Functions
of ``A_Q`` are applied with three dense 1D eigenvector transforms; restricted
through ``E`` they make cheap, spectrally close preconditioners for ``P_p``.
"""

from __future__ import annotations

import numpy as np

from chvox.basis import legendre_normalized
from chvox.grid import VoxelGrid


def sipg_matrix_1d(N: int, p: int, sigma: float, h: float | None = None) -> np.ndarray:
    """Dense 1D interior penalty matrix on ``N`` cells of width ``h`` (default ``1/N``).

    No boundary terms (natural boundary conditions).  For ``p = 0`` with
    ``sigma = 1`` this is the two-point finite volume stencil.
    """
    h = 1.0 / N if h is None else h
    n = p + 1
    xq, wq = np.polynomial.legendre.leggauss(max(1, 2 * p + 1))
    L, dL = legendre_normalized(p, xq)
    Lm, dLm = (v[:, 0] for v in legendre_normalized(p, np.array([-1.0])))
    Lp, dLp = (v[:, 0] for v in legendre_normalized(p, np.array([1.0])))
    dLm, dLp = dLm * (2 / h), dLp * (2 / h)
    A = np.zeros((N * n, N * n))
    K = (2.0 / h) * (dL * wq) @ dL.T
    for i in range(N):
        A[i * n : (i + 1) * n, i * n : (i + 1) * n] += K
    T = {"m": Lp, "p": Lm}  # minus cell sees its right end, plus cell its left end
    D = {"m": dLp, "p": dLm}
    sg = {"m": 1.0, "p": -1.0}
    for f in range(N - 1):
        cell = {"m": f, "p": f + 1}
        for a in "mp":
            for c in "mp":
                B = (
                    -0.5 * sg[a] * np.outer(T[a], D[c])
                    - 0.5 * sg[c] * np.outer(D[a], T[c])
                    + (sigma / h) * sg[a] * sg[c] * np.outer(T[a], T[c])
                )
                ra, rc = cell[a] * n, cell[c] * n
                A[ra : ra + n, rc : rc + n] += B
    return A


def box_extent(grid: VoxelGrid):
    """``(lo, shape)`` of the bounding box when the pore space fills it, else ``None``."""
    t = grid.element_tuples
    lo = t.min(axis=0)
    shape = t.max(axis=0) - lo + 1
    if int(np.prod(shape)) != grid.n_elements:
        return None
    return lo, shape


class TensorDiffusion:
    """Eigen-decomposition of the tensor diffusion operator on a filled box."""

    def __init__(self, grid: VoxelGrid, p: int, modes, sigma: float):
        box = box_extent(grid)
        if box is None:
            raise ValueError("fast diagonalization needs the pore space to fill a box")
        lo, shape = box
        h, q = grid.h, p + 1
        pen = sigma if p > 0 else 1.0
        self.V, lams = [], []
        for d in range(3):
            A1 = sipg_matrix_1d(int(shape[d]), p, pen, h)
            lam, V = np.linalg.eigh(A1)
            lams.append(lam)
            self.V.append(V)
        self.shape = tuple(int(s) * q for s in shape)  # (nx, ny, nz)
        lx, ly, lz = lams
        # array layout [z, y, x]
        self.lam = (h / 2) ** 2 * (lz[:, None, None] + ly[None, :, None] + lx[None, None, :])
        t = grid.element_tuples - lo
        modes = np.asarray(modes)
        nx, ny, _ = self.shape
        ix = t[:, 0, None] * q + modes[None, :, 0]
        iy = t[:, 1, None] * q + modes[None, :, 1]
        iz = t[:, 2, None] * q + modes[None, :, 2]
        self.embed = ((iz * ny + iy) * nx + ix).ravel()
        self.size = nx * ny * self.shape[2]

    def _transform(self, u, transpose):
        Vx, Vy, Vz = (V.T if transpose else V for V in self.V)
        nx, ny, nz = self.shape
        u = (Vz @ u.reshape(nz, -1)).reshape(nz, ny, nx)
        u = np.matmul(Vy, u)
        return u @ Vx.T

    def apply_function(self, r, spectrum) -> np.ndarray:
        """``E^T f(A_Q) E r`` where ``spectrum`` holds ``f`` at the eigenvalues."""
        u = np.zeros(self.size)
        u[self.embed] = r
        u = self._transform(u, True) * spectrum
        return self._transform(u, False).ravel()[self.embed]

    def dense_matrix(self) -> np.ndarray:
        """``A_Q`` restricted to ``P_p`` (testing aid, small grids only)."""
        n = len(self.embed)
        return np.column_stack([self.apply_function(e, self.lam) for e in np.eye(n)])
