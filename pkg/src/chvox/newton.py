"""Damped inexact Newton-Krylov solver for the Schur-reduced step system."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from chvox.fastdiag import TensorDiffusion, box_extent
from chvox.operators import block_diag_apply

log = logging.getLogger(__name__)

PRECONDITIONERS = ("auto", "none", "block-jacobi", "lu", "schur", "tensor")
# a Newton correction this many ulps of the iterate (or smaller) counts as round-off
STAGNATION_FACTOR = 1e3


class NewtonError(RuntimeError):
    """Non-convergence of the nonlinear iteration; carries the residual history."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class KrylovError(RuntimeError):
    pass


@dataclass
class NewtonConfig:
    tol_abs: float = 1e-16
    tol_rel: float = 1e-8
    max_iters: int = 50
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20

    def __post_init__(self):
        if self.tol_abs <= 0 or self.tol_rel <= 0:
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class KrylovConfig:
    restart: int = 60
    rtol: float = 1e-8
    atol: float = 1e-14
    max_iters: int = 2000
    preconditioner: str = "auto"
    # lagged preconditioners are rebuilt once GMRES needs more than this
    rebuild_iters: int = 30
    inner: str = "auto"  # inner solves of the factored preconditioner: splu | amg | auto
    amg_threshold: int = 60000
    # "auto" uses a direct factorization of the Jacobian up to this many unknowns
    lu_threshold: int = 30000
    # "adaptive": Eisenstat-Walker forcing terms bounded below by rtol; "fixed": always rtol
    forcing: str = "adaptive"
    eta0: float = 1e-4

    def __post_init__(self):
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.forcing not in ("adaptive", "fixed"):
            raise ValueError(f"unknown forcing rule {self.forcing!r}")
        if self.inner not in ("auto", "splu", "amg"):
            raise ValueError(f"unknown inner solver {self.inner!r}")


@dataclass
class NewtonResult:
    Y: np.ndarray
    iterations: int
    krylov_iterations: int
    history: list
    stationary: bool
    step_lengths: list = field(default_factory=list)
    # the residual sat at round-off level and could not be reduced further
    stagnated: bool = False

    @property
    def final_residual(self) -> float:
        return self.history[-1]


# -- preconditioners ---------------------------------------------------------------


class _Identity:
    kind = "none"

    def apply(self, r):
        return r


class BlockJacobi:
    """Inverse diagonal blocks of the linear Schur part."""

    kind = "block-jacobi"

    def __init__(self, system):
        self.inv = np.linalg.inv(system.linear_diagonal_blocks())

    def apply(self, r):
        return block_diag_apply(self.inv, r)


class DirectJacobian:
    """Sparse LU of the assembled Jacobian at the linearization point."""

    kind = "lu"

    def __init__(self, system, jac):
        self.lu = spla.splu(jac.assemble().tocsc())

    def apply(self, r):
        return self.lu.solve(r)


class _InnerSolver:
    def __init__(self, A, method, near_null=None):
        A = sp.csr_matrix(A)
        if method == "amg":
            import pyamg

            B = None if near_null is None else near_null.reshape(-1, 1)
            ml = pyamg.smoothed_aggregation_solver(A, B=B, max_coarse=500)
            self._apply = ml.aspreconditioner(cycle="V")
            self._apply_fn = lambda r: self._apply @ r
        else:
            lu = spla.splu(A.tocsc())
            self._apply_fn = lu.solve

    def __call__(self, r):
        return self._apply_fn(r)


class FactoredSchur:
    """Product approximation of the unreduced Jacobian.

    With ``gamma = sqrt(tau kappa / Pe)`` and ``K = kappa (A + B) + M''``::

        P = (M + gamma A_M + tau A_adv) M^{-1} (M + tau / (Pe gamma) K)

    reproduces ``M + tau A_adv + (tau / Pe) A_M M^{-1} K`` up to terms of order
    ``gamma``.  Two second-order solves per application.
    """

    kind = "schur"

    def __init__(self, system, jac, inner="auto", amg_threshold=60000):
        disc = system.disc
        n = disc.n_dof
        m, tau, Pe = system.m, system.tau, system.Pe
        gamma = math.sqrt(tau * system.kappa / Pe)
        I = sp.identity(n, format="csr")
        P1 = m * I + gamma * sp.csr_matrix(system.A_M)
        if system.has_flow:
            P1 = P1 + tau * sp.csr_matrix(system.A_adv)
        K = system.kappa * sp.csr_matrix(system.K0) + jac.mpp_matrix().tocsr()
        P2 = m * I + (tau / (Pe * gamma)) * K
        if inner == "auto":
            inner = "amg" if n > amg_threshold else "splu"
        near_null = np.zeros(n)
        near_null[:: disc.n_loc] = 1.0
        # advection makes P1 nonsymmetric; AMG is only used for the symmetric pair
        self.solve1 = _InnerSolver(P1, "splu" if system.has_flow else inner, near_null)
        self.solve2 = _InnerSolver(P2, inner, near_null)
        self.scale = 8.0 * tau / (system.h**3 * Pe)
        self.m = m

    def apply(self, r):
        return self.scale * self.solve2(self.m * self.solve1(r))


class TensorPreconditioner:
    """Fast-diagonalization inverse of the constant-mobility linear part.

    Without flow and with unit mobility the linear Schur operator is
    ``(h^3 Pe / (8 tau)) (m I + gamma^2 A A / m)``.  The same rational
    function of the tensor-space operator is applied exactly and restricted
    to the total-degree modes.  Only valid when the pore space fills a box.
    """

    kind = "tensor"

    def __init__(self, system, diag: TensorDiffusion):
        m, tau, Pe = system.m, system.tau, system.Pe
        g2 = tau * system.kappa / Pe
        self.diag = diag
        self.spectrum = (8.0 * tau / (system.h**3 * Pe)) * m / (m * m + g2 * diag.lam**2)

    def apply(self, r):
        return self.diag.apply_function(r, self.spectrum)


def tensor_applicable(system) -> bool:
    return box_extent(system.disc.grid) is not None and not system.has_flow


@dataclass
class PreconditionerCache:
    """Keeps a preconditioner alive across Newton iterations and steps."""

    config: KrylovConfig
    current: object = None
    builds: int = 0
    _tensor: tuple = (None, None)  # (discretization, its TensorDiffusion)

    def get(self, system, jac, force=False):
        if force or self.current is None:
            self.current = self._build(system, jac)
            self.builds += 1
        return self.current

    def invalidate(self):
        self.current = None

    def resolve_kind(self, system) -> str:
        kind = self.config.preconditioner
        if kind != "auto":
            return kind
        if tensor_applicable(system):
            return "tensor"
        return "lu" if system.disc.n_dof <= self.config.lu_threshold else "schur"

    def _build(self, system, jac):
        kind = self.resolve_kind(system)
        if kind == "tensor":
            if not tensor_applicable(system):
                raise ValueError("tensor preconditioner needs a full cube without flow")
            disc = system.disc
            if self._tensor[0] is not disc:
                self._tensor = (disc, TensorDiffusion(disc.grid, disc.p, disc.basis.modes, disc.sigma))
            return TensorPreconditioner(system, self._tensor[1])
        if kind == "none":
            return _Identity()
        if kind == "block-jacobi":
            return BlockJacobi(system)
        if kind == "lu":
            return DirectJacobian(system, jac)
        return FactoredSchur(system, jac, self.config.inner, self.config.amg_threshold)


# -- Krylov -------------------------------------------------------------------------


def gmres_solve(jac, r, precond, cfg: KrylovConfig, atol_euclid: float, rtol=None):
    """Preconditioned restarted GMRES.  Returns ``(u, iterations, converged)``.

    Convergence is judged on the true residual ``||J u - r||``.
    """
    n = len(r)
    A = spla.LinearOperator((n, n), matvec=jac.matvec, dtype=float)
    Mop = spla.LinearOperator((n, n), matvec=precond.apply, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    restart = min(cfg.restart, n)
    cycles = max(1, math.ceil(cfg.max_iters / restart))
    rnorm = float(np.linalg.norm(r))
    target = max((cfg.rtol if rtol is None else rtol) * rnorm, atol_euclid)
    if rnorm <= target:
        return np.zeros(n), 0, True
    u, info = spla.gmres(
        A,
        r,
        rtol=target / rnorm,
        atol=0.0,
        restart=restart,
        maxiter=cycles,
        M=Mop,
        callback=cb,
        callback_type="pr_norm",
    )
    true_res = float(np.linalg.norm(jac.matvec(u) - r))
    converged = true_res <= target * (1 + 1e-6)
    return u, count[0], converged


def mass_correction(jac, U, r, E):
    """Make the mode-0 component sums of ``J U - r`` vanish exactly.

    ``E`` holds the component mode-0 indicators; the correction is a uniform
    shift of the mode-0 coefficients on each connected component.
    """
    if E is None or E.shape[1] == 0:
        return U
    JE = np.column_stack([jac.matvec(E[:, j].toarray().ravel()) for j in range(E.shape[1])])
    G = E.T @ JE
    defect = E.T @ (r - jac.matvec(U))
    try:
        delta = np.linalg.solve(G, defect)
    except np.linalg.LinAlgError:
        return U
    return U + E @ delta


# -- Newton ---------------------------------------------------------------------------


def forcing_term(kcfg: KrylovConfig, it, r_norm, r_prev, target):
    """Relative GMRES tolerance for Newton iteration ``it``.

    The adaptive rule is Eisenstat-Walker choice 2 (``0.9 (r_k / r_{k-1})^2``),
    clipped to ``[rtol, 0.1]`` and never tighter than what the Newton
    target itself requires.
    """
    if kcfg.forcing == "fixed":
        return kcfg.rtol
    eta = kcfg.eta0 if it == 1 else 0.9 * (r_norm / r_prev) ** 2
    eta = max(eta, 0.5 * target / r_norm)
    return float(min(max(eta, kcfg.rtol), 0.1))


def armijo_backtrack(residual, norm, Y, U, r_norm, cfg: NewtonConfig):
    """Largest ``lam`` in ``{1, 1/2, ...}`` with ``||R(Y - lam U)|| <= (1 - c1 lam) ||R(Y)||``.

    Returns ``(lam, Y_new, R_new, norm_new)``; raises :class:`NewtonError` when
    the backtracking budget is exhausted.
    """
    lam = 1.0
    for _ in range(cfg.max_backtracks + 1):
        Y_new = Y - lam * U
        R_new = residual(Y_new)
        n_new = norm(R_new)
        if n_new <= (1.0 - cfg.armijo_c1 * lam) * r_norm:
            return lam, Y_new, R_new, n_new
        lam *= cfg.backtrack
    raise NewtonError(f"Armijo backtracking failed after {cfg.max_backtracks} halvings", [r_norm])


def newton_solve(
    system,
    Y0,
    cfg: NewtonConfig | None = None,
    kcfg: KrylovConfig | None = None,
    cache: PreconditionerCache | None = None,
    mass_modes=None,
) -> NewtonResult:
    """Solve ``R(Y) = 0`` starting from ``Y0``.

    ``system`` provides ``residual``, ``jacobian`` (an object with
    ``matvec``) and ``norm``.  A step is reported stationary when the initial
    residual is already below ``tol_abs``.
    """
    cfg = cfg or NewtonConfig()
    kcfg = kcfg or KrylovConfig()
    if cache is None:
        cache = PreconditionerCache(kcfg)
    Y = np.array(Y0, dtype=float)
    R = system.residual(Y)
    r0 = system.norm(R)
    history = [r0]
    if r0 <= cfg.tol_abs:
        return NewtonResult(Y, 0, 0, history, True)
    target = cfg.tol_abs + cfg.tol_rel * r0
    scale = system.norm(np.ones(1))  # h^{3/2}
    k_total, lams = 0, []
    r_norm = r_prev = r0
    for it in range(1, cfg.max_iters + 1):
        jac = system.jacobian(Y)
        eta = forcing_term(kcfg, it, r_norm, r_prev, target)
        # absolute Krylov floor in the discrete L2 norm, kept below the Newton target
        atol = min(kcfg.atol, 1e-2 * target) / scale
        fresh = False
        while True:
            precond = cache.get(system, jac, force=fresh)
            U, kits, ok = gmres_solve(jac, R, precond, kcfg, atol, eta)
            k_total += kits
            if ok and kits <= kcfg.rebuild_iters:
                break
            if fresh or kcfg.preconditioner == "none":
                if not ok:
                    raise KrylovError(
                        f"GMRES did not reach tolerance in {kcfg.max_iters} iterations "
                        f"(Newton iteration {it}, residual {r_norm:.3e})"
                    )
                break
            # lagged preconditioner degraded: rebuild at the current state
            if ok:
                cache.invalidate()
                break
            fresh = True
        U = mass_correction(jac, U, R, mass_modes)
        r_prev = r_norm
        try:
            lam, Y, R, r_norm = armijo_backtrack(system.residual, system.norm, Y, U, r_norm, cfg)
        except NewtonError:
            if np.abs(U).max() <= STAGNATION_FACTOR * np.finfo(float).eps * max(1.0, np.abs(Y).max()):
                log.debug("newton %d: stagnated at |R|=%.3e", it, r_norm)
                return NewtonResult(Y, it, k_total, history, False, lams, stagnated=True)
            raise NewtonError(
                f"Armijo backtracking failed at Newton iteration {it} (|R| = {r_norm:.3e})", history
            ) from None
        lams.append(lam)
        history.append(r_norm)
        log.debug("newton %d: |R|=%.3e lam=%g gmres=%d", it, r_norm, lam, kits)
        if r_norm <= target:
            return NewtonResult(Y, it, k_total, history, False, lams)
    raise NewtonError(
        f"Newton did not converge in {cfg.max_iters} iterations "
        f"(|R| = {r_norm:.3e}, target {target:.3e})",
        history,
    )
