"""Assembly of the discrete forms on a voxel grid.

All matrices are block sparse with ``N_loc x N_loc`` blocks whose pattern is
the element adjacency graph.  Rows index test functions, columns trial
functions: ``A[k*N_loc + i, l*N_loc + j] = a(phi_lj, phi_ki)``.

For ``p >= 1`` diffusion uses symmetric interior penalty (SIPG); for ``p = 0``
the two-point finite volume form ``(1/h) sum_e int_e {z}[c][w]``.  Wall faces
never contribute (homogeneous Neumann data is natural); exterior faces are
split pointwise at face quadrature points into inflow (``v.n < 0``) and
outflow parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from chvox.basis import DGField, ReferenceBasis, _face_reference_points, reference_basis
from chvox.grid import EXTERIOR, VoxelGrid

UPWIND_STEEPNESS = 100.0


# -- double-well potential and its convex/concave split --------------------


def phi(c):
    """Double-well density ``(c^2 - 1)^2 / 4``."""
    return 0.25 * (c * c - 1.0) ** 2


def phi_plus(c):
    return 0.25 * ((c * c) ** 2 + 1.0)


def phi_minus(c):
    return -0.5 * c * c


def dphi_plus(c):
    return c * c * c


def dphi_minus(c):
    return -c


def ddphi_plus(c):
    return 3.0 * c * c


def mobility(c, beta):
    """Clamped mobility ``max(1 - beta c^2, 0)``."""
    return np.maximum(1.0 - beta * np.asarray(c) ** 2, 0.0)


def upwind_value(c_minus, c_plus, z, steepness=UPWIND_STEEPNESS):
    """Sigmoid upwinding ``sig(z) c- + (1 - sig(z)) c+`` with ``z = {v}.n_e``."""
    s = expit(steepness * np.asarray(z, dtype=float))
    return s * c_minus + (1.0 - s) * c_plus


# -- velocity fields ----------------------------------------------------------


class VelocityError(ValueError):
    pass


class VelocityField:
    """Base class; subclasses provide point values or face normal values."""

    is_zero = False

    def __call__(self, t, x):
        raise NotImplementedError

    def interior_normal(self, t, disc, axis):
        """``{v}.n_e`` at the face quadrature points of interior faces of one axis."""
        pts = disc.int_points[axis]
        return self(t, pts)[..., axis]

    def boundary_normal(self, t, disc, group):
        axis, orient = group
        pts = disc.bnd_points[group]
        return orient * self(t, pts)[..., axis]

    def volume_values(self, t, disc):
        return self(t, disc.vol_points)


class ZeroVelocity(VelocityField):
    is_zero = True

    def __call__(self, t, x):
        return np.zeros(np.shape(x))


@dataclass
class ConstantVelocity(VelocityField):
    v: tuple

    def __call__(self, t, x):
        return np.broadcast_to(np.asarray(self.v, dtype=float), np.shape(x)).copy()


@dataclass
class AnalyticVelocity(VelocityField):
    """User supplied solenoidal field ``v(t, x)``; ``x`` has shape ``(..., 3)``."""

    name: str
    func: Callable

    def __call__(self, t, x):
        return np.asarray(self.func(t, np.asarray(x)), dtype=float)


def duct_flow(axis=0, lo=(0.0, 0.0), hi=(1.0, 1.0), u_max=1.0, profile="parabolic"):
    """Unidirectional flow along ``axis`` with a cross-section profile.

    The velocity depends only on the two transverse coordinates, so it is
    divergence free; it vanishes outside the rectangle ``lo..hi``.
    """
    tang = [d for d in range(3) if d != axis]

    def func(t, x):
        out = np.zeros(np.shape(x))
        s = (x[..., tang[0]] - lo[0]) / (hi[0] - lo[0])
        r = (x[..., tang[1]] - lo[1]) / (hi[1] - lo[1])
        inside = (s >= 0) & (s <= 1) & (r >= 0) & (r <= 1)
        if profile == "plug":
            u = np.where(inside, u_max, 0.0)
        else:
            u = np.where(inside, 16.0 * u_max * s * (1 - s) * r * (1 - r), 0.0)
        out[..., axis] = u
        return out

    return AnalyticVelocity(f"duct-{profile}", func)


class FaceNormalVelocity(VelocityField):
    """Piecewise constant normal velocity per face (time independent).

    ``interior`` holds one value per interior face (component along
    ``+e_axis``); ``boundary`` one value per boundary face (component along
    ``+e_axis`` as well, converted to outward normal on use).  Inside
    elements the field is the lowest-order Raviart-Thomas reconstruction.
    """

    def __init__(self, grid: VoxelGrid, interior, boundary, tol=1e-10, check=True):
        self.grid = grid
        self.interior = np.asarray(interior, dtype=float)
        self.boundary = np.asarray(boundary, dtype=float)
        if self.interior.shape != (grid.n_interior_faces,) or self.boundary.shape != (
            grid.n_boundary_faces,
        ):
            raise VelocityError("face velocity arrays do not match the grid")
        # per element, per axis: value on the lower (0) and upper (1) face
        self.elem_faces = np.zeros((grid.n_elements, 3, 2))
        self.elem_faces[grid.int_minus, grid.int_axis, 1] = self.interior
        self.elem_faces[grid.int_plus, grid.int_axis, 0] = self.interior
        side = (grid.bnd_orient > 0).astype(int)
        self.elem_faces[grid.bnd_element, grid.bnd_axis, side] = self.boundary
        if check:
            div = self.divergence()
            bad = np.abs(div) > tol
            if bad.any():
                raise VelocityError(
                    f"face velocity is not solenoidal: {bad.sum()} elements exceed {tol}, "
                    f"max |div| = {np.abs(div).max():.3e}"
                )

    def divergence(self) -> np.ndarray:
        """Net outward normal velocity per element (flux / h^2)."""
        return (self.elem_faces[:, :, 1] - self.elem_faces[:, :, 0]).sum(axis=1)

    def __call__(self, t, x):
        raise VelocityError("face-normal velocity can only be evaluated on the grid")

    def interior_normal(self, t, disc, axis):
        sel = disc.int_slices[axis]
        nq = len(disc.basis.face_weights)
        return np.repeat(self.interior[sel][:, None], nq, axis=1)

    def boundary_normal(self, t, disc, group):
        axis, orient = group
        idx = disc.bnd_index[group]
        nq = len(disc.basis.face_weights)
        return np.repeat((orient * self.boundary[idx])[:, None], nq, axis=1)

    def volume_values(self, t, disc):
        xh = disc.basis.quad.volume_points  # (q, 3)
        lo = self.elem_faces[:, None, :, 0]
        hi = self.elem_faces[:, None, :, 1]
        return 0.5 * (1 - xh[None]) * lo + 0.5 * (1 + xh[None]) * hi

    @classmethod
    def from_file(cls, path, grid: VoxelGrid, tol=1e-10):
        """Read lines ``axis i j k value``.

        A face is named by the voxel on its lower side along ``axis``; faces on
        the lower cube side use index ``-1`` on that axis.  Interior and
        exterior faces must all be present; missing wall faces default to 0.
        """
        lookup = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 5:
                    raise VelocityError(f"{path}:{lineno}: expected 'axis i j k value'")
                a, i, j, k = (int(v) for v in parts[:4])
                lookup[(a, i, j, k)] = float(parts[4])
        t = grid.element_tuples
        interior = np.empty(grid.n_interior_faces)
        for f in range(grid.n_interior_faces):
            i, j, k = t[grid.int_minus[f]]
            key = (int(grid.int_axis[f]), int(i), int(j), int(k))
            if key not in lookup:
                raise VelocityError(f"{path}: missing interior face {key}")
            interior[f] = lookup[key]
        boundary = np.zeros(grid.n_boundary_faces)
        for f in range(grid.n_boundary_faces):
            a = int(grid.bnd_axis[f])
            tup = list(t[grid.bnd_element[f]])
            if grid.bnd_orient[f] < 0:
                tup[a] -= 1
            key = (a, *map(int, tup))
            if key in lookup:
                boundary[f] = lookup[key]
            elif grid.bnd_class[f] == EXTERIOR:
                raise VelocityError(f"{path}: missing exterior face {key}")
        return cls(grid, interior, boundary, tol=tol)

    def write(self, path):
        g = self.grid
        t = g.element_tuples
        with open(path, "w") as fh:
            for f in range(g.n_interior_faces):
                i, j, k = t[g.int_minus[f]]
                fh.write(f"{g.int_axis[f]} {i} {j} {k} {float(self.interior[f])!r}\n")
            for f in range(g.n_boundary_faces):
                a = int(g.bnd_axis[f])
                tup = list(t[g.bnd_element[f]])
                if g.bnd_orient[f] < 0:
                    tup[a] -= 1
                fh.write(f"{a} {tup[0]} {tup[1]} {tup[2]} {float(self.boundary[f])!r}\n")


def plug_flow(grid: VoxelGrid, axis: int, u: float, tol=1e-10) -> FaceNormalVelocity:
    """Uniform normal velocity ``u`` on every face normal to ``axis``.

    Wall faces carry no flow, so the field is solenoidal exactly when every
    line of voxels along ``axis`` runs between two exterior cube sides
    (straight channels); otherwise the divergence check rejects it.
    """
    interior = np.where(grid.int_axis == axis, float(u), 0.0)
    boundary = np.where((grid.bnd_axis == axis) & (grid.bnd_class == EXTERIOR), float(u), 0.0)
    return FaceNormalVelocity(grid, interior, boundary, tol=tol)


def sample_face_velocity(grid: VoxelGrid, velocity: VelocityField, t=0.0) -> FaceNormalVelocity:
    """Face-center samples of an analytic field as a :class:`FaceNormalVelocity`."""
    vi = velocity(t, grid.interior_face_centers)[np.arange(grid.n_interior_faces), grid.int_axis]
    vb = velocity(t, grid.boundary_face_centers)[np.arange(grid.n_boundary_faces), grid.bnd_axis]
    return FaceNormalVelocity(grid, vi, vb, check=False)


# -- discretization context ---------------------------------------------------


@dataclass(eq=False)
class Discretization:
    """Grid + basis + penalty with precomputed block pattern and face geometry."""

    grid: VoxelGrid
    p: int
    sigma: float | None = None
    basis: ReferenceBasis = field(init=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("polynomial degree must be >= 0")
        if self.sigma is None:
            self.sigma = float(2**self.p)
        self.basis = reference_basis(self.p)
        g, b = self.grid, self.basis
        h = g.h
        self.n_loc = b.n_loc
        self.n_dof = g.n_elements * b.n_loc
        self.vol_points = g.element_centers[:, None, :] + 0.5 * h * b.quad.volume_points[None]
        self.vol_w = b.vol_weights * h**3 / 8.0
        self.face_w = b.face_weights * h**2 / 4.0

        # interior faces grouped by axis (grid stores them sorted by axis)
        self.int_slices, self.int_points = [], []
        for axis in range(3):
            idx = np.flatnonzero(g.int_axis == axis)
            sl = slice(idx[0], idx[-1] + 1) if len(idx) else slice(0, 0)
            self.int_slices.append(sl)
            ref = _face_reference_points(axis, 0.0, b.quad.face_points)
            centers = g.interior_face_centers[sl]
            self.int_points.append(centers[:, None, :] + 0.5 * h * ref[None])
        # boundary faces grouped by (axis, orientation)
        self.bnd_index, self.bnd_points = {}, {}
        bc = g.boundary_face_centers
        for axis in range(3):
            for orient in (-1, 1):
                idx = np.flatnonzero((g.bnd_axis == axis) & (g.bnd_orient == orient))
                ref = _face_reference_points(axis, 0.0, b.quad.face_points)
                self.bnd_index[(axis, orient)] = idx
                self.bnd_points[(axis, orient)] = bc[idx][:, None, :] + 0.5 * h * ref[None]
        self._build_pattern()
        self._precompute_tables()

    # pattern ---------------------------------------------------------------
    def _build_pattern(self):
        g = self.grid
        n, nf = g.n_elements, g.n_interior_faces
        rows = np.concatenate([np.arange(n), g.int_minus, g.int_plus])
        cols = np.concatenate([np.arange(n), g.int_plus, g.int_minus])
        ids = np.arange(n + 2 * nf, dtype=float) + 1.0
        m = sp.csr_matrix((ids, (rows, cols)), shape=(n, n))
        m.sort_indices()
        pos_of_id = np.empty(n + 2 * nf, dtype=np.int64)
        pos_of_id[m.data.astype(np.int64) - 1] = np.arange(m.nnz)
        self.indptr = m.indptr.copy()
        self.indices = m.indices.copy()
        self.n_blocks = m.nnz
        self.pos_diag = pos_of_id[:n]
        self.pos_mp = pos_of_id[n : n + nf]
        self.pos_pm = pos_of_id[n + nf :]
        self.pos_transpose = np.empty(m.nnz, dtype=np.int64)
        self.pos_transpose[self.pos_diag] = self.pos_diag
        self.pos_transpose[self.pos_mp] = self.pos_pm
        self.pos_transpose[self.pos_pm] = self.pos_mp

    def _precompute_tables(self):
        b, h = self.basis, self.grid.h
        G = b.vol_grad
        self.t_vol_gg = np.einsum("qid,qjd->qij", G, G)  # grad.grad
        self.t_vol_pp = np.einsum("qi,qj->qij", b.vol_phi, b.vol_phi)
        self.t_int = []
        for axis in range(3):
            Tm, Tp = b.face_phi[axis][1], b.face_phi[axis][0]
            Dm = (2.0 / h) * b.face_grad[axis][1][:, :, axis]
            Dp = (2.0 / h) * b.face_grad[axis][0][:, :, axis]
            T = {"m": Tm, "p": Tp}
            D = {"m": Dm, "p": Dp}
            tab = {}
            for a in "mp":
                for c in "mp":
                    tab[("TT", a, c)] = np.einsum("qi,qj->qij", T[a], T[c])
                    # test trace on side a times trial normal derivative on side c
                    tab[("TD", a, c)] = np.einsum("qi,qj->qij", T[a], D[c])
            self.t_int.append(tab)
        self.t_bnd = {}
        for axis in range(3):
            for orient in (-1, 1):
                s = 1 if orient > 0 else 0
                T = b.face_phi[axis][s]
                Dn = orient * (2.0 / h) * b.face_grad[axis][s][:, :, axis]
                self.t_bnd[(axis, orient)] = {
                    "T": T,
                    "Dn": Dn,
                    "TT": np.einsum("qi,qj->qij", T, T),
                    "TD": np.einsum("qi,qj->qij", T, Dn),
                }

    def make_matrix(self, data: np.ndarray):
        """Sparse matrix from block data of shape ``(n_blocks, N_loc, N_loc)``."""
        n = self.n_dof
        if self.n_loc == 1:
            return sp.csr_matrix((data.reshape(-1), self.indices, self.indptr), shape=(n, n))
        return sp.bsr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def zero_blocks(self):
        return np.zeros((self.n_blocks, self.n_loc, self.n_loc))

    def block_diagonal(self, A) -> np.ndarray:
        """Diagonal blocks ``(N_el, N_loc, N_loc)`` of a pattern-conforming matrix."""
        nl = self.n_loc
        if nl == 1:
            return A.diagonal().reshape(-1, 1, 1)
        A = A.tobsr(blocksize=(nl, nl)) if not sp.isspmatrix_bsr(A) else A
        out = np.zeros((self.grid.n_elements, nl, nl))
        rows = np.repeat(np.arange(self.grid.n_elements), np.diff(A.indptr))
        hit = A.indices == rows
        out[rows[hit]] = A.data[hit]
        return out

    # field helpers -----------------------------------------------------------
    def volume_values(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs).reshape(-1, self.n_loc) @ self.basis.vol_phi.T

    def interior_traces(self, coeffs, axis):
        """Traces on the minus and plus side of the interior faces of ``axis``."""
        X = np.asarray(coeffs).reshape(-1, self.n_loc)
        sl = self.int_slices[axis]
        g, b = self.grid, self.basis
        cm = X[g.int_minus[sl]] @ b.face_phi[axis][1].T
        cp = X[g.int_plus[sl]] @ b.face_phi[axis][0].T
        return cm, cp

    def boundary_traces(self, coeffs, group):
        X = np.asarray(coeffs).reshape(-1, self.n_loc)
        idx = self.bnd_index[group]
        return X[self.grid.bnd_element[idx]] @ self.t_bnd[group]["T"].T

    def field(self, coeffs) -> DGField:
        return DGField(self.grid, self.basis, np.asarray(coeffs, dtype=float))


# -- pointwise coefficients -----------------------------------------------------


@dataclass
class PointCoefficient:
    """Coefficient sampled at volume points and on both sides of interior faces."""

    vol: np.ndarray  # (N_el, n_qv)
    minus: list  # per axis (nf_axis, n_qf)
    plus: list


def mobility_coefficient(disc: Discretization, coeffs, beta) -> PointCoefficient | None:
    """Clamped mobility of the field ``coeffs`` at quadrature points.

    Returns ``None`` for constant mobility so callers can use the cheaper
    unit-coefficient path.
    """
    if beta == 0:
        return None
    vol = mobility(disc.volume_values(coeffs), beta)
    minus, plus = [], []
    for axis in range(3):
        cm, cp = disc.interior_traces(coeffs, axis)
        minus.append(mobility(cm, beta))
        plus.append(mobility(cp, beta))
    return PointCoefficient(vol, minus, plus)


# -- bilinear forms --------------------------------------------------------------


def assemble_diffusion(disc: Discretization, z: PointCoefficient | None = None, sigma=None):
    """Matrix of ``a_diff(z, c, w)``; SIPG for ``p >= 1``, two-point FV for ``p = 0``."""
    g, h = disc.grid, disc.grid.h
    sigma = disc.sigma if sigma is None else sigma
    nl = disc.n_loc
    data = disc.zero_blocks()
    diag = np.zeros((g.n_elements, nl, nl))

    if disc.p >= 1:
        gg = disc.t_vol_gg.reshape(len(disc.vol_w), -1)
        w = disc.basis.vol_weights * (h / 2.0)
        if z is None:
            diag += (w @ gg).reshape(nl, nl)
        else:
            diag += ((z.vol * w) @ gg).reshape(-1, nl, nl)

    wq = disc.face_w
    sgn = {"m": 1.0, "p": -1.0}
    for axis in range(3):
        sl = disc.int_slices[axis]
        nf = sl.stop - sl.start
        if nf == 0:
            continue
        tab = disc.t_int[axis]
        if z is None:
            zm = zp = np.ones((1, len(wq)))
        else:
            zm, zp = z.minus[axis], z.plus[axis]
        zs = {"m": zm, "p": zp}
        blocks = {}
        for a in "mp":
            for c in "mp":
                sab = sgn[a] * sgn[c]
                if disc.p == 0:
                    zavg = 0.5 * (zm + zp)
                    B = (1.0 / h) * sab * ((zavg * wq) @ tab[("TT", a, c)].reshape(len(wq), -1))
                else:
                    # -{z grad c . n}[w] - {z grad w . n}[c] + sigma/h [c][w]
                    t1 = -0.5 * sgn[a] * ((zs[c] * wq) @ tab[("TD", a, c)].reshape(len(wq), -1))
                    td_ca = tab[("TD", c, a)]  # test on c, trial derivative on a
                    t2 = -0.5 * sgn[c] * (
                        (zs[a] * wq) @ np.swapaxes(td_ca, 1, 2).reshape(len(wq), -1)
                    )
                    t3 = (sigma / h) * sab * (wq @ tab[("TT", a, c)].reshape(len(wq), -1))
                    B = t1 + t2 + t3
                blocks[(a, c)] = np.broadcast_to(B.reshape(-1, nl, nl), (nf, nl, nl))
        m_el, p_el = g.int_minus[sl], g.int_plus[sl]
        np.add.at(diag, m_el, blocks[("m", "m")])
        np.add.at(diag, p_el, blocks[("p", "p")])
        data[disc.pos_mp[sl]] = blocks[("m", "p")]
        data[disc.pos_pm[sl]] = blocks[("p", "m")]
    data[disc.pos_diag] = diag
    return disc.make_matrix(data)


def inflow_masks(disc: Discretization, velocity: VelocityField, t):
    """Per exterior boundary group: normal velocity and inflow indicator at face points."""
    out = {}
    g = disc.grid
    for group, idx in disc.bnd_index.items():
        ext = g.bnd_class[idx] == EXTERIOR
        if not ext.any() or velocity.is_zero:
            continue
        vn = velocity.boundary_normal(t, disc, group)[ext]
        out[group] = (np.flatnonzero(ext), vn, vn < 0.0)
    return out


def assemble_inflow_dirichlet(disc: Discretization, velocity: VelocityField, t, c_in=1.0, sigma=None):
    """``B_diff`` matrix and ``D_diff`` vector for weak Dirichlet data on the inflow boundary.

    ``c_in`` is a constant or a callable ``c_in(t, x)``.
    Returns ``(B, D, n_inflow_points)``.
    """
    g, h = disc.grid, disc.grid.h
    sigma = disc.sigma if sigma is None else sigma
    nl = disc.n_loc
    diag = np.zeros((g.n_elements, nl, nl))
    D = np.zeros((g.n_elements, nl))
    wq = disc.face_w
    n_in = 0
    for group, (sub, vn, inflow) in inflow_masks(disc, velocity, t).items():
        if not inflow.any():
            continue
        n_in += int(inflow.sum())
        idx = disc.bnd_index[group][sub]
        elem = g.bnd_element[idx]
        tab = disc.t_bnd[group]
        wchi = wq * inflow
        cin = boundary_data(c_in, t, disc.bnd_points[group][sub])
        if disc.p == 0:
            S = (1.0 / h) * tab["TT"]
            dvec = (1.0 / h) * ((wchi * cin) @ tab["T"])
        else:
            S = -(tab["TD"] + np.swapaxes(tab["TD"], 1, 2)) + (sigma / h) * tab["TT"]
            dvec = (wchi * cin) @ (-tab["Dn"] + (sigma / h) * tab["T"])
        blocks = (wchi @ S.reshape(len(wq), -1)).reshape(-1, nl, nl)
        np.add.at(diag, elem, blocks)
        np.add.at(D, elem, dvec)
    data = disc.zero_blocks()
    data[disc.pos_diag] = diag
    return disc.make_matrix(data), D.ravel(), n_in


def boundary_data(c_in, t, pts):
    if callable(c_in):
        return np.asarray(c_in(t, pts), dtype=float)
    return np.full(pts.shape[:2], float(c_in))


def assemble_advection(disc: Discretization, velocity: VelocityField, t, c_in=1.0):
    """``A_adv`` matrix and ``B_adv`` vector of the upwinded advection form."""
    g, h = disc.grid, disc.grid.h
    nl = disc.n_loc
    data = disc.zero_blocks()
    diag = np.zeros((g.n_elements, nl, nl))
    Badv = np.zeros((g.n_elements, nl))
    if velocity.is_zero:
        return disc.make_matrix(data), Badv.ravel()
    wq = disc.face_w
    nq = len(wq)

    if disc.p >= 1:
        v = velocity.volume_values(t, disc)  # (N_el, q, 3)
        G, P = disc.basis.vol_grad, disc.basis.vol_phi
        w = disc.basis.vol_weights * (h * h / 4.0)
        for d in range(3):
            tab = np.einsum("qi,qj->qij", G[:, :, d], P).reshape(len(w), -1)
            diag -= ((v[..., d] * w) @ tab).reshape(-1, nl, nl)

    sgn = {"m": 1.0, "p": -1.0}
    for axis in range(3):
        sl = disc.int_slices[axis]
        if sl.stop == sl.start:
            continue
        vn = velocity.interior_normal(t, disc, axis)
        s = expit(UPWIND_STEEPNESS * vn)
        omega = {"m": s, "p": 1.0 - s}
        tab = disc.t_int[axis]
        blocks = {}
        for a in "mp":
            for c in "mp":
                blocks[(a, c)] = (
                    sgn[a] * ((omega[c] * vn * wq) @ tab[("TT", a, c)].reshape(nq, -1))
                ).reshape(-1, nl, nl)
        np.add.at(diag, g.int_minus[sl], blocks[("m", "m")])
        np.add.at(diag, g.int_plus[sl], blocks[("p", "p")])
        data[disc.pos_mp[sl]] = blocks[("m", "p")]
        data[disc.pos_pm[sl]] = blocks[("p", "m")]

    for group, (sub, vn, inflow) in inflow_masks(disc, velocity, t).items():
        idx = disc.bnd_index[group][sub]
        elem = g.bnd_element[idx]
        tab = disc.t_bnd[group]
        out_w = wq * vn * (~inflow)
        np.add.at(diag, elem, (out_w @ tab["TT"].reshape(nq, -1)).reshape(-1, nl, nl))
        cin = boundary_data(c_in, t, disc.bnd_points[group][sub])
        np.add.at(Badv, elem, -((wq * vn * inflow * cin) @ tab["T"]))
    data[disc.pos_diag] = diag
    return disc.make_matrix(data), Badv.ravel()


# -- nonlinear terms ---------------------------------------------------------------


def eval_nonlinear_vectors(disc: Discretization, coeffs):
    """``(E_phi'+, E_phi'-)``: projections of ``c^3`` and ``-c`` onto the basis."""
    X = np.asarray(coeffs)
    cq = disc.volume_values(X)
    e_plus = ((dphi_plus(cq) * disc.vol_w) @ disc.basis.vol_phi).ravel()
    # -c is in the space; with M = (h^3/8) I its projection is exact
    e_minus = -(disc.grid.h**3 / 8.0) * X
    return e_plus, e_minus


def assemble_weighted_mass(disc: Discretization, coeffs) -> np.ndarray:
    """Diagonal blocks of ``M_phi''+``: ``int_E 3 c^2 phi_i phi_j``, shape ``(N_el, N_loc, N_loc)``."""
    cq = disc.volume_values(coeffs)
    nl = disc.n_loc
    return ((ddphi_plus(cq) * disc.vol_w) @ disc.t_vol_pp.reshape(len(disc.vol_w), -1)).reshape(
        -1, nl, nl
    )


def block_diag_apply(blocks: np.ndarray, x) -> np.ndarray:
    nl = blocks.shape[1]
    return np.einsum("kij,kj->ki", blocks, np.asarray(x).reshape(-1, nl)).ravel()


# -- manufactured-solution source vectors ----------------------------------------


def volume_source(disc: Discretization, f, t, extra_points=2) -> np.ndarray:
    """``[(f(t), phi_ki)]`` for a callable ``f(t, x)``.

    Sources are over-integrated with ``n_q + extra_points`` Gauss points: on
    coarse grids the one-point rule of ``p = 0`` samples only element centres.
    """
    g, h = disc.grid, disc.grid.h
    b = disc.basis.with_quadrature(disc.basis.quad.n_q + extra_points)
    pts = g.element_centers[:, None, :] + 0.5 * h * b.quad.volume_points[None]
    vals = np.asarray(f(t, pts), dtype=float)
    return ((vals * (b.vol_weights * h**3 / 8.0)) @ b.vol_phi).ravel()


def boundary_source(disc: Discretization, g_fn, t, skip_inflow_of: VelocityField | None = None,
                    extra_points=2):
    """``[int_{dOmega} g(t) phi_ki]`` over all boundary faces.

    ``g_fn(t, x, n)`` receives points ``(nf, q, 3)`` and the outward unit
    normal ``n`` (3-vector).  With ``skip_inflow_of`` given, exterior faces
    whose mean normal velocity points inward are excluded.
    """
    g, h = disc.grid, disc.grid.h
    b = disc.basis.with_quadrature(disc.basis.quad.n_q + extra_points)
    out = np.zeros((g.n_elements, disc.n_loc))
    wq = b.face_weights * h**2 / 4.0
    masks = inflow_masks(disc, skip_inflow_of, t) if skip_inflow_of is not None else {}
    bc = g.boundary_face_centers
    for group, idx in disc.bnd_index.items():
        if len(idx) == 0:
            continue
        axis, orient = group
        n = np.zeros(3)
        n[axis] = orient
        ref = _face_reference_points(axis, 0.0, b.quad.face_points)
        pts = bc[idx][:, None, :] + 0.5 * h * ref[None]
        vals = np.asarray(g_fn(t, pts, n), dtype=float)
        weight = np.broadcast_to(wq, vals.shape).copy()
        if group in masks:
            sub, vn, _ = masks[group]
            weight[sub] *= (vn.mean(axis=1) >= 0.0)[:, None]
        T = b.face_phi[axis][1 if orient > 0 else 0]
        np.add.at(out, g.bnd_element[idx], (vals * weight) @ T)
    return out.ravel()
