"""One convex-concave split time step in Schur-reduced form.

The chemical potential is eliminated with the diagonal mass matrix
``M = (h^3/8) I`` and the remaining nonlinear system in the order-parameter
coefficients ``Y`` is scaled by ``h^3 Pe / (8 tau)``::

    R(Y) = L Y + N(Y) + C
    L    = s I + (h^3 Pe / 8) A_adv + kappa A_M (A + B)
    N(Y) = A_M E_+(Y)
    C    = -A_M F_c - (h^3 Pe / (8 tau)) F_mu

with ``s = h^6 Pe / (64 tau)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from chvox.grid import connected_components
from chvox.operators import (
    Discretization,
    VelocityField,
    ZeroVelocity,
    assemble_advection,
    assemble_diffusion,
    assemble_inflow_dirichlet,
    assemble_weighted_mass,
    block_diag_apply,
    boundary_source,
    eval_nonlinear_vectors,
    mobility_coefficient,
    volume_source,
)


class FrozenStateError(RuntimeError):
    """The clamped mobility vanishes everywhere, so nothing can evolve."""


@dataclass
class ModelParams:
    kappa: float
    Pe: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.Pe <= 0:
            raise ValueError("Pe must be positive")
        if self.beta not in (0, 1, 0.0, 1.0):
            raise ValueError("beta must be 0 or 1")


@dataclass
class Sources:
    """Optional manufactured data.

    ``f(t, x)`` is a volume source of the order-parameter equation,
    ``g_c(t, x, n)`` and ``g_mu(t, x, n)`` are Neumann data for ``c`` and
    the mobility flux on the whole boundary.  ``f_mu(t, x)`` is added to the
    chemical potential, ``mu = Phi'(c) - kappa lap c + f_mu``.
    """

    f: Callable | None = None
    g_c: Callable | None = None
    g_mu: Callable | None = None
    f_mu: Callable | None = None


@dataclass(eq=False)
class Problem:
    """Everything that stays fixed across steps."""

    disc: Discretization
    params: ModelParams
    velocity: VelocityField = field(default_factory=ZeroVelocity)
    c_in: float | Callable = 1.0
    sources: Sources = field(default_factory=Sources)
    steady_velocity: bool = True

    def __post_init__(self):
        h = self.disc.grid.h
        if self.params.kappa < h * h * (1 - 1e-12):
            warnings.warn(
                f"kappa={self.params.kappa:g} is below h^2={h * h:g}; the interface is under-resolved",
                stacklevel=2,
            )
        self.A = assemble_diffusion(self.disc)
        self._flow_cache = None
        self.components = connected_components(self.disc.grid)
        self.n_components = int(self.components.max()) + 1

    @property
    def h(self) -> float:
        return self.disc.grid.h

    def flow_operators(self, t):
        """``(A_adv, B_adv, B_diff, D_diff)`` at time ``t`` (cached for steady flow)."""
        if self.steady_velocity and self._flow_cache is not None:
            return self._flow_cache
        A_adv, B_adv = assemble_advection(self.disc, self.velocity, t, self.c_in)
        B_diff, D_diff, _ = assemble_inflow_dirichlet(self.disc, self.velocity, t, self.c_in)
        out = (A_adv, B_adv, B_diff, D_diff)
        if self.steady_velocity and not callable(self.c_in):
            self._flow_cache = out
        return out

    def mass_modes(self) -> sp.csr_matrix:
        """Columns are mode-0 indicators of the connected components."""
        n, nl = self.disc.grid.n_elements, self.disc.n_loc
        return sp.csr_matrix(
            (np.ones(n), (np.arange(n) * nl, self.components)), shape=(n * nl, self.n_components)
        )

    def build_step(self, X_prev, t_n, tau) -> "StepSystem":
        return StepSystem(self, np.asarray(X_prev, dtype=float).copy(), float(t_n), float(tau))


class StepSystem:
    """Assembled Schur-reduced system for the step ``t_{n-1} -> t_n``."""

    def __init__(self, problem: Problem, X_prev, t_n, tau):
        if tau <= 0:
            raise ValueError("time step must be positive")
        self.problem = problem
        disc, prm = problem.disc, problem.params
        self.disc = disc
        self.X_prev, self.t, self.tau = X_prev, t_n, tau
        self.kappa, self.Pe, self.beta = prm.kappa, prm.Pe, prm.beta
        h = disc.grid.h
        self.h = h
        self.m = h**3 / 8.0
        self.s = h**6 * self.Pe / (64.0 * tau)
        self.c_adv = h**3 * self.Pe / 8.0

        z = mobility_coefficient(disc, X_prev, self.beta)
        if z is not None and not (
            z.vol.any() or any(a.any() for a in z.minus) or any(a.any() for a in z.plus)
        ):
            raise FrozenStateError(
                "mobility vanishes at every quadrature point; the state cannot evolve"
            )
        self.A = problem.A
        self.A_M = problem.A if z is None else assemble_diffusion(disc, z)
        self.A_adv, self.B_adv, self.B_diff, self.D_diff = problem.flow_operators(t_n)
        nl = disc.n_loc
        self.K0 = disc.make_matrix(_block_data(self.A, nl) + _block_data(self.B_diff, nl))
        self.has_flow = not problem.velocity.is_zero

        _, e_minus = eval_nonlinear_vectors(disc, X_prev)
        F_c = self.kappa * self.D_diff - e_minus
        F_mu = self.m * X_prev + tau * self.B_adv
        src = problem.sources
        if src.g_c is not None:
            F_c = F_c + self.kappa * boundary_source(disc, src.g_c, t_n, problem.velocity)
        if src.f_mu is not None:
            F_c = F_c - volume_source(disc, src.f_mu, t_n)
        if src.f is not None:
            F_mu = F_mu + tau * volume_source(disc, src.f, t_n)
        if src.g_mu is not None:
            F_mu = F_mu + (tau / self.Pe) * boundary_source(disc, src.g_mu, t_n)
        self.F_c, self.F_mu = F_c, F_mu
        self.C = -(self.A_M @ F_c) - (self.c_adv / tau) * F_mu

    # residual pieces ----------------------------------------------------------
    def linear_apply(self, x) -> np.ndarray:
        out = self.s * x + self.kappa * (self.A_M @ (self.K0 @ x))
        if self.has_flow:
            out += self.c_adv * (self.A_adv @ x)
        return out

    def nonlinear_apply(self, Y) -> np.ndarray:
        e_plus, _ = eval_nonlinear_vectors(self.disc, Y)
        return self.A_M @ e_plus

    def residual(self, Y) -> np.ndarray:
        e_plus, _ = eval_nonlinear_vectors(self.disc, Y)
        out = self.s * Y + self.A_M @ (self.kappa * (self.K0 @ Y) + e_plus) + self.C
        if self.has_flow:
            out += self.c_adv * (self.A_adv @ Y)
        return out

    def norm(self, r) -> float:
        """Discrete L2 norm ``h^{3/2} ||r||_2``."""
        return self.h**1.5 * float(np.linalg.norm(r))

    # linearization -----------------------------------------------------------
    def jacobian(self, Y) -> "Jacobian":
        return Jacobian(self, assemble_weighted_mass(self.disc, Y))

    def linear_matrix(self) -> sp.csr_matrix:
        L = self.kappa * (self.A_M @ self.K0) + self.s * sp.identity(self.disc.n_dof)
        if self.has_flow:
            L = L + self.c_adv * self.A_adv
        return sp.csr_matrix(L)

    def linear_diagonal_blocks(self) -> np.ndarray:
        """Diagonal blocks of ``L`` without forming the matrix product."""
        disc = self.disc
        nl = disc.n_loc
        am = _block_data(self.A_M, nl)
        k0 = _block_data(self.K0, nl)
        pos_t = disc.pos_transpose
        rows = np.repeat(np.arange(disc.grid.n_elements), np.diff(disc.indptr))
        # (A_M K0)_kk = sum_l A_M[k,l] K0[l,k]; both share the symmetric pattern
        prod = np.einsum("bij,bjk->bik", am, k0[pos_t])
        out = np.zeros((disc.grid.n_elements, nl, nl))
        np.add.at(out, rows, prod)
        out *= self.kappa
        out += self.s * np.eye(nl)
        if self.has_flow:
            out += self.c_adv * disc.block_diagonal(self.A_adv)
        return out

    def mass_defect(self, Y) -> np.ndarray:
        """Component sums of the mode-0 residual entries (zero for exact mass balance)."""
        return self.problem.mass_modes().T @ self.residual(Y)

    def recover_mu(self, X_c) -> np.ndarray:
        e_plus, _ = eval_nonlinear_vectors(self.disc, X_c)
        return (self.kappa * (self.K0 @ X_c) + e_plus - self.F_c) / self.m


def _block_data(A, nl) -> np.ndarray:
    if nl == 1:
        return np.asarray(A.data).reshape(-1, 1, 1)
    return A.data


class Jacobian:
    """``J = L + A_M M''(Y)`` applied matrix-free."""

    def __init__(self, system: StepSystem, mpp_blocks: np.ndarray):
        self.system = system
        self.mpp = mpp_blocks
        n = system.disc.n_dof
        self.shape = (n, n)
        self.dtype = np.dtype(float)

    def matvec(self, x) -> np.ndarray:
        sysm = self.system
        out = sysm.s * x + sysm.A_M @ (sysm.kappa * (sysm.K0 @ x) + block_diag_apply(self.mpp, x))
        if sysm.has_flow:
            out += sysm.c_adv * (sysm.A_adv @ x)
        return out

    __matmul__ = matvec

    def mpp_matrix(self) -> sp.bsr_matrix:
        n_el, nl, _ = self.mpp.shape
        idx = np.arange(n_el)
        return sp.bsr_matrix((self.mpp, idx, np.arange(n_el + 1)), shape=self.shape)

    def assemble(self) -> sp.csr_matrix:
        """Explicit sparse Jacobian (small problems and direct preconditioning)."""
        sysm = self.system
        return sp.csr_matrix(sysm.linear_matrix() + sysm.A_M @ self.mpp_matrix())

    def diagonal_blocks(self) -> np.ndarray:
        disc = self.system.disc
        am_diag = disc.block_diagonal(self.system.A_M)
        return self.system.linear_diagonal_blocks() + np.einsum("kij,kjl->kil", am_diag, self.mpp)


# -- time step schedules ---------------------------------------------------------


@dataclass
class TimeSchedule:
    """Piecewise constant step size: ``[(until_time, tau), ...]`` in increasing order."""

    pieces: list

    def __post_init__(self):
        last = -np.inf
        for until, tau in self.pieces:
            if tau <= 0 or until <= last:
                raise ValueError("schedule needs positive steps and increasing end times")
            last = until

    @classmethod
    def fixed(cls, tau, T):
        return cls([(T, tau)])

    @property
    def end_time(self):
        return self.pieces[-1][0]

    def steps(self):
        """Yield ``(n, t_prev, t_n, tau_n)``; the last step of a piece lands on its end time."""
        t0, n = 0.0, 0
        for until, tau in self.pieces:
            k = max(1, int(round((until - t0) / tau)))
            dt = (until - t0) / k
            for i in range(k):
                n += 1
                yield n, t0 + i * dt, (until if i == k - 1 else t0 + (i + 1) * dt), dt
            t0 = until
