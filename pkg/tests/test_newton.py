import numpy as np
import pytest
from scipy.optimize import fsolve

from chvox.basis import l2_project
from chvox.fastdiag import TensorDiffusion
from chvox.grid import build_grid
from chvox.newton import (
    KrylovConfig,
    NewtonConfig,
    NewtonError,
    PreconditionerCache,
    armijo_backtrack,
    newton_solve,
)
from chvox.operators import Discretization, assemble_diffusion
from chvox.scenarios import spinodal_initial
from chvox.stepper import ModelParams, Problem


class LinearSystem:
    def __init__(self, L, b):
        self.L, self.b = L, b

    def residual(self, y):
        return self.L @ y - self.b

    def jacobian(self, y):
        return self

    def matvec(self, v):
        return self.L @ v

    def norm(self, r):
        return float(np.linalg.norm(r))


class Unreducible:
    """Residual that no step can change, like round-off noise."""

    def __init__(self, r, scale):
        self.r, self.scale = np.asarray(r, float), scale

    def residual(self, y):
        return self.r

    def jacobian(self, y):
        return self

    def matvec(self, v):
        return self.scale * v

    def norm(self, r):
        return float(np.linalg.norm(r))


class Square:
    def residual(self, y):
        return y**2

    def norm(self, r):
        return float(np.abs(r).sum())


def spinodal_step(N, p, beta=0, tau=1e-3, seed=2):
    g = build_grid(np.ones((N, N, N), bool))
    disc = Discretization(g, p)
    pr = Problem(disc, ModelParams(g.h**2, 1.0, beta))
    X0 = l2_project(spinodal_initial(g.n_elements, seed), g, disc.basis).coeffs
    return pr.build_step(X0, tau, tau), X0


def test_linear_system_one_iteration():
    rng = np.random.default_rng(0)
    L = np.eye(6) * 4 + 0.3 * rng.standard_normal((6, 6))
    b = rng.standard_normal(6)
    kcfg = KrylovConfig(preconditioner="none", forcing="fixed", rtol=1e-10)
    res = newton_solve(LinearSystem(L, b), np.zeros(6), kcfg=kcfg)
    assert res.iterations == 1 and not res.stationary
    assert np.allclose(L @ res.Y, b, atol=1e-9)
    assert res.step_lengths == [1.0]


def test_armijo_full_step():
    lam, y, r, n = armijo_backtrack(Square().residual, Square().norm, np.array([1.0]),
                                    np.array([0.5]), 1.0, NewtonConfig())
    assert lam == 1.0 and y[0] == 0.5 and n == 0.25


def test_armijo_halves_an_overshoot():
    lam, y, _, n = armijo_backtrack(Square().residual, Square().norm, np.array([1.0]),
                                    np.array([2.5]), 1.0, NewtonConfig())
    assert lam == 0.5 and y[0] == -0.25 and n == 0.0625


def test_armijo_rejects_ascent_direction():
    with pytest.raises(NewtonError):
        armijo_backtrack(Square().residual, Square().norm, np.array([1.0]),
                         np.array([-1.0]), 1.0, NewtonConfig())


def test_roundoff_stagnation_is_accepted():
    kcfg = KrylovConfig(preconditioner="none")
    res = newton_solve(Unreducible([3e-16, -2e-16], 1e3), np.ones(2), kcfg=kcfg)
    assert res.stagnated and res.iterations == 1 and np.array_equal(res.Y, np.ones(2))
    with pytest.raises(NewtonError) as err:
        newton_solve(Unreducible([1.0, 0.5], 1.0), np.ones(2), kcfg=kcfg)
    assert err.value.history[0] > 1.0


def test_stopping_rule_uses_discrete_l2_norm():
    s, X0 = spinodal_step(4, 1)
    n = len(X0)
    assert abs(s.norm(np.ones(n)) - s.disc.grid.h**1.5 * np.sqrt(n)) < 1e-15
    cfg = NewtonConfig(tol_rel=1e-6)
    res = newton_solve(s, X0, cfg)
    r0 = res.history[0]
    assert res.final_residual <= cfg.tol_abs + cfg.tol_rel * r0
    assert all(h > cfg.tol_abs + cfg.tol_rel * r0 for h in res.history[:-1])
    assert abs(res.final_residual - s.norm(s.residual(res.Y))) < 1e-20


@pytest.mark.parametrize("p,beta", [(0, 0), (1, 1), (2, 1)])
def test_jacobian_matches_finite_differences(p, beta):
    s, X0 = spinodal_step(3, p, beta)
    rng = np.random.default_rng(1)
    Y = 0.8 * X0
    v = rng.standard_normal(len(Y))
    eps = 1e-6
    fd = (s.residual(Y + eps * v) - s.residual(Y - eps * v)) / (2 * eps)
    Jv = s.jacobian(Y).matvec(v)
    assert np.abs(fd - Jv).max() <= 1e-7 * np.abs(Jv).max()
    w = rng.standard_normal(len(Y))
    J = s.jacobian(Y)
    assert np.allclose(J.matvec(2 * v - 3 * w), 2 * J.matvec(v) - 3 * J.matvec(w), rtol=0,
                       atol=1e-12 * np.abs(Jv).max())
    assert np.abs(J.assemble() @ v - Jv).max() <= 1e-12 * np.abs(Jv).max()


def test_jacobian_at_zero_is_linear_part():
    s, X0 = spinodal_step(3, 1, 1)
    J = s.jacobian(np.zeros_like(X0)).assemble()
    assert abs(J - s.linear_matrix()).max() < 1e-15


def test_two_cube_fv_against_dense_oracle():
    # 2x2x2 cube, p = 0: two-field system written out by hand and solved with fsolve
    N, h, kappa, tau = 2, 0.5, 0.25, 0.01
    m = h**3 / 8
    r = 1 / (2 * np.sqrt(2))  # value of the constant mode
    lap = np.zeros((8, 8))
    for a in range(8):
        for b in range(8):
            if bin(a ^ b).count("1") == 1:
                lap[a, b] = -1
        lap[a, a] = 3
    A = (h / 8) * lap
    Xp = np.random.default_rng(3).uniform(-0.9, 0.9, 8) / r

    def F(z):
        xc, xm = z[:8], z[8:]
        c, cp = r * xc, r * Xp
        eq1 = m * (xc - Xp) + tau * A @ xm
        eq2 = m * xm - kappa * A @ xc - h**3 * r * (c**3 - cp)
        return np.concatenate([eq1, eq2])

    oracle = fsolve(F, np.concatenate([Xp, np.zeros(8)]), xtol=1e-14)
    assert np.abs(F(oracle)).max() < 1e-14

    g = build_grid(np.ones((N, N, N), bool))
    disc = Discretization(g, 0)
    s = Problem(disc, ModelParams(kappa, 1.0, 0)).build_step(Xp, tau, tau)
    res = newton_solve(s, Xp, NewtonConfig(tol_rel=1e-14, tol_abs=1e-20))
    assert np.abs(res.Y - oracle[:8]).max() < 1e-10
    assert np.abs(s.recover_mu(res.Y) - oracle[8:]).max() < 1e-10 * np.abs(oracle[8:]).max()


def test_deterministic():
    s, X0 = spinodal_step(4, 1, 1)
    a = newton_solve(s, X0).Y
    b = newton_solve(s, X0).Y
    assert np.array_equal(a, b)


def test_fast_local_convergence():
    s, X0 = spinodal_step(8, 1, 0, tau=1e-2)
    res = newton_solve(s, X0, NewtonConfig(tol_rel=1e-12))
    h = np.array(res.history)
    assert res.iterations <= 8
    # contraction factors shrink, the last one well below linear rates
    ratios = h[1:] / h[:-1]
    assert ratios[-1] < 1e-2
    assert ratios[-1] < ratios[0]


@pytest.mark.parametrize("kind", ["none", "block-jacobi", "lu", "schur", "tensor"])
def test_preconditioners_agree(kind):
    s, X0 = spinodal_step(4, 1, 1)
    ref = newton_solve(s, X0, NewtonConfig(tol_rel=1e-12), KrylovConfig(preconditioner="lu")).Y
    kcfg = KrylovConfig(preconditioner=kind, rtol=1e-10)
    Y = newton_solve(s, X0, NewtonConfig(tol_rel=1e-12), kcfg, PreconditionerCache(kcfg)).Y
    assert np.abs(Y - ref).max() <= 1e-8 * np.abs(ref).max()


def test_auto_preconditioner_choice():
    s, _ = spinodal_step(3, 1)
    assert PreconditionerCache(KrylovConfig()).resolve_kind(s) == "tensor"
    mask = np.ones((3, 3, 3), bool)
    mask[1, 1, 1] = False
    g = build_grid(mask)
    s2 = Problem(Discretization(g, 1), ModelParams(g.h**2, 1.0, 0)).build_step(
        np.zeros(26 * 4), 0.1, 0.1)
    assert PreconditionerCache(KrylovConfig()).resolve_kind(s2) == "lu"
    assert PreconditionerCache(KrylovConfig(lu_threshold=10)).resolve_kind(s2) == "schur"


@pytest.mark.parametrize("p", [0, 1, 2])
def test_tensor_diffusion_reproduces_assembly(p):
    mask = np.zeros((5, 5, 5), bool)
    mask[1:3, 0:3, 1:5] = True
    g = build_grid(mask)
    disc = Discretization(g, p)
    td = TensorDiffusion(g, p, disc.basis.modes, disc.sigma)
    A = assemble_diffusion(disc).toarray()
    assert np.abs(td.dense_matrix() - A).max() < 1e-12 * np.abs(A).max()
