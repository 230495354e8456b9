"""Voxel-set triangulation of the unit cube.

Voxels are addressed either by a tuple index ``(i, j, k)`` or by the flat
index ``i + N*j + N**2*k``.  Pore voxels (``mask == True``) become elements,
numbered consecutively in increasing flat order.  Faces are materialized once
at build time because assembly walks them on every time step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

WALL = 0
EXTERIOR = 1

#: Names of the six sides of the unit cube, mapped to ``(axis, orientation)``.
CUBE_SIDES = {
    "x-": (0, -1),
    "x+": (0, 1),
    "y-": (1, -1),
    "y+": (1, 1),
    "z-": (2, -1),
    "z+": (2, 1),
}


class GridError(ValueError):
    """Raised for invalid voxel masks or index arguments."""


def flat_index(i, j, k, N):
    """Flat voxel index ``i + N*j + N**2*k``.

    Works elementwise on integer arrays as well as on scalars.
    """
    i, j, k = np.asarray(i), np.asarray(j), np.asarray(k)
    if np.any((i < 0) | (i >= N) | (j < 0) | (j >= N) | (k < 0) | (k >= N)):
        raise GridError(f"tuple index out of range for N={N}")
    n = i + N * j + N * N * k
    return int(n) if n.ndim == 0 else n


def tuple_index(n, N):
    """Inverse of :func:`flat_index`."""
    n = np.asarray(n)
    if np.any((n < 0) | (n >= N**3)):
        raise GridError(f"flat index out of range for N={N}")
    i, j, k = n % N, (n // N) % N, n // (N * N)
    if n.ndim == 0:
        return int(i), int(j), int(k)
    return i, j, k


def parse_exterior_spec(spec) -> frozenset:
    """Normalize an exterior-side specification.

    Accepts ``None``, a comma separated string such as ``"x-,x+"`` or an
    iterable of side names / ``(axis, orientation)`` pairs.
    """
    if spec is None:
        return frozenset()
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    sides = set()
    for s in spec:
        if isinstance(s, str):
            if s not in CUBE_SIDES:
                raise GridError(f"unknown cube side {s!r}; expected one of {sorted(CUBE_SIDES)}")
            sides.add(CUBE_SIDES[s])
        else:
            axis, orient = s
            if axis not in (0, 1, 2) or orient not in (-1, 1):
                raise GridError(f"invalid cube side {s!r}")
            sides.add((int(axis), int(orient)))
    return frozenset(sides)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Immutable pore-space mesh.

    Interior faces are stored per face as ``(minus, plus, axis)`` where
    ``minus`` is the element with the smaller flat index, so the face normal
    is ``+e_axis``.  Boundary faces carry the owning element, the axis, the
    outward orientation (``+1``/``-1``) and a class (:data:`WALL` or
    :data:`EXTERIOR`).
    """

    N: int
    mask: np.ndarray
    exterior_sides: frozenset
    voxel_of_element: np.ndarray
    element_of_voxel: np.ndarray
    int_minus: np.ndarray
    int_plus: np.ndarray
    int_axis: np.ndarray
    bnd_element: np.ndarray
    bnd_axis: np.ndarray
    bnd_orient: np.ndarray
    bnd_class: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def h_exact(self) -> Fraction:
        return Fraction(1, self.N)

    @property
    def n_elements(self) -> int:
        return len(self.voxel_of_element)

    @property
    def n_interior_faces(self) -> int:
        return len(self.int_minus)

    @property
    def n_boundary_faces(self) -> int:
        return len(self.bnd_element)

    @property
    def porosity(self) -> float:
        return self.n_elements / self.N**3

    @property
    def element_tuples(self) -> np.ndarray:
        """``(N_el, 3)`` integer voxel tuples of all elements."""
        if "tuples" not in self._cache:
            i, j, k = tuple_index(self.voxel_of_element, self.N)
            self._cache["tuples"] = np.stack([i, j, k], axis=1)
        return self._cache["tuples"]

    @property
    def element_centers(self) -> np.ndarray:
        return (self.element_tuples + 0.5) * self.h

    @property
    def interior_face_centers(self) -> np.ndarray:
        c = self.element_centers[self.int_minus].copy()
        c[np.arange(len(c)), self.int_axis] += 0.5 * self.h
        return c

    @property
    def boundary_face_centers(self) -> np.ndarray:
        c = self.element_centers[self.bnd_element].copy()
        c[np.arange(len(c)), self.bnd_axis] += 0.5 * self.h * self.bnd_orient
        return c

    @property
    def exterior_faces(self) -> np.ndarray:
        """Indices (into the boundary-face arrays) of exterior faces."""
        return np.flatnonzero(self.bnd_class == EXTERIOR)

    def locate(self, points) -> np.ndarray:
        """Element index containing each point, ``-1`` outside the pore space.

        Points exactly on a face belong to the voxel with the smaller tuple
        index along that axis (the E-minus side).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        t = np.ceil(points * self.N - 1.0).astype(int)
        t = np.clip(t, 0, self.N - 1)
        inside = np.all((points >= 0.0) & (points <= 1.0), axis=1)
        flat = t[:, 0] + self.N * t[:, 1] + self.N**2 * t[:, 2]
        out = np.where(inside, self.element_of_voxel[flat], -1)
        return out

    def element_faces(self):
        """Per-element count of interior and boundary faces (diagnostics)."""
        n_int = np.bincount(self.int_minus, minlength=self.n_elements) + np.bincount(
            self.int_plus, minlength=self.n_elements
        )
        n_bnd = np.bincount(self.bnd_element, minlength=self.n_elements)
        return n_int, n_bnd


def build_grid(mask, exterior_spec=None) -> VoxelGrid:
    """Build a :class:`VoxelGrid` from an ``(N, N, N)`` boolean mask.

    ``mask[i, j, k]`` marks voxel ``(i, j, k)`` as pore space.  Cube sides
    listed in ``exterior_spec`` (e.g. ``"x-,x+"``) are classified as exterior
    boundary, all other boundary faces are walls.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3 or len(set(mask.shape)) != 1:
        raise GridError(f"mask must be a cubic 3D array, got shape {mask.shape}")
    N = mask.shape[0]
    if N == 0 or not mask.any():
        raise GridError("empty domain: mask has no pore voxels")
    sides = parse_exterior_spec(exterior_spec)

    flat_mask = mask.ravel(order="F")
    voxel_of_element = np.flatnonzero(flat_mask)
    element_of_voxel = np.full(N**3, -1, dtype=np.int64)
    element_of_voxel[voxel_of_element] = np.arange(len(voxel_of_element))
    eov = element_of_voxel.reshape((N, N, N), order="F")

    int_minus, int_plus, int_axis = [], [], []
    bnd = {"e": [], "axis": [], "orient": [], "cls": []}
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, N - 1)
        hi[axis] = slice(1, N)
        a, b = eov[tuple(lo)], eov[tuple(hi)]
        both = (a >= 0) & (b >= 0)
        # F-order flattening keeps faces sorted by the flat index of E-minus
        m = a.ravel(order="F")[both.ravel(order="F")]
        p = b.ravel(order="F")[both.ravel(order="F")]
        int_minus.append(m)
        int_plus.append(p)
        int_axis.append(np.full(len(m), axis, dtype=np.int64))

        for orient in (-1, 1):
            # element on this side whose neighbor in direction orient is not a pore voxel
            padded = np.pad(eov, [(1, 1) if d == axis else (0, 0) for d in range(3)], constant_values=-1)
            sl_self = [slice(None)] * 3
            sl_nb = [slice(None)] * 3
            sl_self[axis] = slice(1, N + 1)
            sl_nb[axis] = slice(1 + orient, N + 1 + orient)
            own = padded[tuple(sl_self)]
            nb = padded[tuple(sl_nb)]
            hit = (own >= 0) & (nb < 0)
            # cube-side faces: neighbor outside the cube
            idx = np.arange(N)
            shape = [1, 1, 1]
            shape[axis] = N
            on_side = (idx == (N - 1 if orient > 0 else 0)).reshape(shape)
            on_side = np.broadcast_to(on_side, own.shape)
            cls = np.where(on_side & ((axis, orient) in sides), EXTERIOR, WALL)
            e = own.ravel(order="F")[hit.ravel(order="F")]
            bnd["e"].append(e)
            bnd["axis"].append(np.full(len(e), axis, dtype=np.int64))
            bnd["orient"].append(np.full(len(e), orient, dtype=np.int64))
            bnd["cls"].append(cls.ravel(order="F")[hit.ravel(order="F")].astype(np.int8))

    return VoxelGrid(
        N=N,
        mask=mask.copy(),
        exterior_sides=sides,
        voxel_of_element=voxel_of_element,
        element_of_voxel=element_of_voxel,
        int_minus=np.concatenate(int_minus),
        int_plus=np.concatenate(int_plus),
        int_axis=np.concatenate(int_axis),
        bnd_element=np.concatenate(bnd["e"]),
        bnd_axis=np.concatenate(bnd["axis"]),
        bnd_orient=np.concatenate(bnd["orient"]),
        bnd_class=np.concatenate(bnd["cls"]),
    )


def connected_components(grid: VoxelGrid) -> np.ndarray:
    """Label elements by 6-connected component, labels ``0..n_comp-1``.

    Labels are assigned in order of the first element of each component.
    """
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components as _cc

    n = grid.n_elements
    adj = sp.coo_matrix(
        (np.ones(grid.n_interior_faces), (grid.int_minus, grid.int_plus)), shape=(n, n)
    )
    _, labels = _cc(adj, directed=False)
    # relabel by first occurrence for determinism
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[labels]


# -- mask I/O -----------------------------------------------------------------


def read_mask(path, N=None) -> np.ndarray:
    """Read a voxel mask.

    Text format: a header line ``voxelmask <N>`` followed by ``N**3``
    characters ``0``/``1`` (whitespace ignored) in flat-index order.  Files
    without that header are read as raw bytes (one 0/1 byte per voxel) and
    need ``N``.
    """
    data = Path(path).read_bytes()
    if data.startswith(b"voxelmask"):
        header, _, body = data.partition(b"\n")
        parts = header.split()
        if len(parts) != 2:
            raise GridError(f"{path}: malformed header {header!r}")
        N = int(parts[1])
        chars = bytes(c for c in body if c not in b" \t\r\n")
        if len(chars) != N**3 or set(chars) - {ord("0"), ord("1")}:
            raise GridError(f"{path}: expected {N**3} characters '0'/'1', got {len(chars)}")
        flat = np.frombuffer(chars, dtype=np.uint8) == ord("1")
    else:
        if N is None:
            raise GridError(f"{path}: raw binary mask requires N")
        raw = np.frombuffer(data, dtype=np.uint8)
        if raw.size != N**3 or np.any(raw > 1):
            raise GridError(f"{path}: expected {N**3} bytes of 0/1, got {raw.size}")
        flat = raw.astype(bool)
    return flat.reshape((N, N, N), order="F")


def write_mask(path, mask, line_length=80) -> None:
    """Write ``mask`` in the text ``voxelmask`` format."""
    mask = np.asarray(mask, dtype=bool)
    N = mask.shape[0]
    chars = np.where(mask.ravel(order="F"), "1", "0")
    body = "".join(chars)
    lines = [body[i : i + line_length] for i in range(0, len(body), line_length)]
    Path(path).write_text(f"voxelmask {N}\n" + "\n".join(lines) + "\n")
