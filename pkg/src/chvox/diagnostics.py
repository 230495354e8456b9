"""Observables: mass, discrete free energy, error norms, line samples, bulk shift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chvox.basis import DGField
from chvox.operators import Discretization, VelocityField, boundary_data, inflow_masks, phi

SQRT8 = 2.0 * np.sqrt(2.0)


@dataclass(frozen=True)
class EnergyReport:
    chemical: float
    gradient: float
    time: float = 0.0

    @property
    def total(self) -> float:
        return self.chemical + self.gradient


@dataclass(frozen=True)
class ErrorReport:
    l2: float
    h1_broken: float


def total_mass(disc: Discretization, coeffs) -> float:
    """``int c_h``; only mode 0 has a nonzero mean."""
    X = np.asarray(coeffs).reshape(-1, disc.n_loc)
    return float(disc.grid.h**3 / SQRT8 * X[:, 0].sum())


def element_means(disc: Discretization, coeffs) -> np.ndarray:
    return np.asarray(coeffs).reshape(-1, disc.n_loc)[:, 0] / SQRT8


def discrete_energy(disc: Discretization, coeffs, kappa, A=None, t=0.0) -> EnergyReport:
    """``(Phi(c_h), 1) + (kappa/2) a_diff(1, c_h, c_h)``.

    ``A`` is the unit-coefficient diffusion matrix of the scheme; it is
    assembled when not supplied.
    """
    from chvox.operators import assemble_diffusion

    X = np.asarray(coeffs, dtype=float)
    if A is None:
        A = assemble_diffusion(disc)
    chem = float((phi(disc.volume_values(X)) * disc.vol_w).sum())
    grad = 0.5 * kappa * float(X @ (A @ X))
    return EnergyReport(chem, grad, t)


def error_norms(disc: Discretization, coeffs, c_exact, grad_exact, t, extra_points=2) -> ErrorReport:
    """L2 and broken H1-seminorm errors with ``n_q + extra_points`` Gauss points."""
    g, h = disc.grid, disc.grid.h
    b = disc.basis.with_quadrature(disc.basis.quad.n_q + extra_points)
    pts = g.element_centers[:, None, :] + 0.5 * h * b.quad.volume_points[None]
    X = np.asarray(coeffs).reshape(-1, disc.n_loc)
    w = b.vol_weights * h**3 / 8.0
    ch = X @ b.vol_phi.T
    gh = np.einsum("kj,qjd->kqd", X, b.vol_grad) * (2.0 / h)
    l2 = np.sqrt(float(((ch - c_exact(t, pts)) ** 2 * w).sum()))
    h1 = np.sqrt(float((((gh - grad_exact(t, pts)) ** 2).sum(-1) * w).sum()))
    return ErrorReport(l2, h1)


def observed_orders(errors) -> list:
    """``log2(e_coarse / e_fine)`` for successive factor-two refinements."""
    e = np.asarray(errors, dtype=float)
    return [None] + list(np.log2(e[:-1] / e[1:]))


def line_sample(field: DGField, start, end, samples: int):
    """Values along a segment: returns ``(arc_length, values)``.

    Points exactly on a face belong to the element on the lower side.
    """
    start, end = np.asarray(start, float), np.asarray(end, float)
    s = np.linspace(0.0, 1.0, samples)
    pts = start[None] + s[:, None] * (end - start)[None]
    return s * np.linalg.norm(end - start), field.evaluate(pts)


def bulk_shift(disc: Discretization, coeffs):
    """``(max(means) - 1, min(means) + 1)`` over the element means.

    Positive values mean the bulk values moved up.  A droplet of the
    ``+1`` phase pulls both bulks upward, so both numbers are positive for
    the usual curved-interface overshoot.
    """
    m = element_means(disc, coeffs)
    return float(m.max() - 1.0), float(m.min() + 1.0)


def front_position(grid, means, axis=0, level=0.0):
    """Furthest slab (along ``axis``) whose pore-averaged value reaches ``level``.

    Returns the slab's upper face coordinate, or 0.0 if no slab qualifies.
    """
    idx = grid.element_tuples[:, axis]
    sums = np.bincount(idx, weights=means, minlength=grid.N)
    counts = np.bincount(idx, minlength=grid.N)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    # contiguous run from the inlet
    run = 0
    for i in range(grid.N):
        if counts[i] == 0 or not avg[i] >= level:
            break
        run = i + 1
    return run * grid.h


def boundary_fluxes(disc: Discretization, velocity: VelocityField, t, coeffs, c_in=1.0):
    """``(inflow, outflow)`` integrals of ``c v.n`` over the exterior boundary.

    Inflow uses the boundary data ``c_in`` (the result is <= 0 for
    ``c_in >= 0``); outflow uses the trace of ``c_h``.
    """
    inflow = outflow = 0.0
    wq = disc.face_w
    for group, (sub, vn, is_in) in inflow_masks(disc, velocity, t).items():
        ch = disc.boundary_traces(coeffs, group)[sub]
        cin = boundary_data(c_in, t, disc.bnd_points[group][sub])
        inflow += float((wq * vn * cin * is_in).sum())
        outflow += float((wq * vn * ch * ~is_in).sum())
    return inflow, outflow


def mass_balance_residual(disc, X_new, X_old, tau, velocity, t, c_in=1.0) -> float:
    """``int c^n - int c^{n-1} + tau (inflow + outflow)``; zero for the exact discrete update."""
    inflow, outflow = boundary_fluxes(disc, velocity, t, X_new, c_in)
    return total_mass(disc, X_new) - total_mass(disc, X_old) + tau * (inflow + outflow)
