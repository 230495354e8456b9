import numpy as np
import pytest

from chvox.basis import l2_project
from chvox.grid import build_grid
from chvox.operators import (
    ConstantVelocity,
    Discretization,
    FaceNormalVelocity,
    VelocityError,
    ZeroVelocity,
    assemble_advection,
    assemble_diffusion,
    assemble_inflow_dirichlet,
    assemble_weighted_mass,
    eval_nonlinear_vectors,
    mobility,
    mobility_coefficient,
    phi,
    phi_minus,
    phi_plus,
    plug_flow,
    upwind_value,
)

SQ8 = 2 * np.sqrt(2)


def full(N, exterior=None):
    return build_grid(np.ones((N, N, N), bool), exterior)


def const(disc, value):
    return l2_project(np.full(disc.grid.n_elements, float(value)), disc.grid, disc.basis).coeffs


def test_potential_split():
    c = np.linspace(-2, 2, 41)
    assert np.allclose(phi_plus(c) + phi_minus(c), phi(c), atol=1e-14)
    assert phi(1.0) == 0 and phi(-1.0) == 0 and phi(0.0) == 0.25


def test_mobility_clamped():
    assert np.allclose(mobility([-2.0, -1.0, 0.0, 0.5], 1), [0.0, 0.0, 1.0, 0.75])
    assert np.allclose(mobility([-2.0, 3.0], 0), 1.0)


def test_upwind_value():
    assert upwind_value(1.0, 3.0, 0.0) == 2.0
    w = upwind_value(1.0, 0.0, 0.05)
    assert abs(w - 1 / (1 + np.exp(-5))) < 1e-15
    assert abs(w - 0.993307) < 1e-6
    assert upwind_value(1.0, 0.0, 1e3) == 1.0
    assert upwind_value(1.0, 0.0, -1e3) == 0.0


def test_fv_two_elements():
    mask = np.zeros((2, 2, 2), bool)
    mask[:, 0, 0] = True
    g = build_grid(mask)
    A = assemble_diffusion(Discretization(g, 0)).toarray()
    h = g.h
    assert np.allclose(A, (h / 8) * np.array([[1, -1], [-1, 1]]), rtol=0, atol=1e-16)


def test_single_element_p1_diagonal():
    mask = np.zeros((3, 3, 3), bool)
    mask[1, 1, 1] = True
    g = build_grid(mask)
    A = assemble_diffusion(Discretization(g, 1)).toarray()
    assert abs(A[0, 0]) < 1e-15
    assert np.allclose(np.diag(A)[1:], 1.5 * g.h)
    assert np.allclose(A, np.diag(np.diag(A)))


@pytest.mark.parametrize("p", [0, 1, 2])
def test_diffusion_symmetric_with_constant_kernel(p):
    rng = np.random.default_rng(p)
    mask = rng.random((4, 4, 4)) < 0.7
    g = build_grid(mask)
    disc = Discretization(g, p)
    A = assemble_diffusion(disc)
    assert abs(A - A.T).max() < 1e-13
    assert np.abs(A @ const(disc, 1.0)).max() < 1e-13
    X = rng.standard_normal(disc.n_dof)
    z = mobility_coefficient(disc, 0.3 * X, 1)
    AM = assemble_diffusion(disc, z)
    assert abs(AM - AM.T).max() < 1e-13
    assert X @ (A @ X) > 0


@pytest.mark.parametrize("p", [1, 2])
def test_sipg_consistency_on_affine(p):
    g = full(3)
    disc = Discretization(g, p)
    grad = np.array([0.3, -1.2, 0.7])
    X = l2_project(lambda x: x @ grad + 0.4, g, disc.basis).coeffs
    A = assemble_diffusion(disc)
    assert abs(X @ (A @ X) - grad @ grad) < 1e-12


def test_inflow_dirichlet_single_face():
    mask = np.zeros((2, 2, 2), bool)
    mask[0, 0, 0] = True
    g = build_grid(mask, "x-")
    disc = Discretization(g, 0)
    B, D, n_in = assemble_inflow_dirichlet(disc, ConstantVelocity((1.0, 0, 0)), 0.0, 1.0)
    assert n_in == 1
    assert abs(D[0] - g.h / SQ8) < 1e-16
    # c_h = c_in on the inflow element: penalty rows cancel
    assert abs(B @ const(disc, 1.0) - D).max() < 1e-16
    B0, D0, n0 = assemble_inflow_dirichlet(disc, ZeroVelocity(), 0.0)
    assert n0 == 0 and abs(B0).max() == 0
    assert not D0.any()


def test_zero_velocity_has_no_advection():
    disc = Discretization(full(2), 1)
    A, B = assemble_advection(disc, ZeroVelocity(), 0.0)
    assert abs(A).max() == 0 and not B.any()


def test_two_element_upwind_coupling():
    mask = np.zeros((2, 2, 2), bool)
    mask[:, 0, 0] = True
    g = build_grid(mask)
    A, _ = assemble_advection(Discretization(g, 0), ConstantVelocity((1.0, 0, 0)), 0.0)
    s = 1 / (1 + np.exp(-100.0))
    q = g.h**2 / 8
    expect = q * np.array([[s, 1 - s], [-s, -(1 - s)]])
    assert np.allclose(A.toarray(), expect, rtol=1e-14, atol=0)
    assert 1 - s < 4e-44


@pytest.mark.parametrize("p", [0, 1])
def test_advection_row_sums_telescope(p):
    g = full(3)
    disc = Discretization(g, p)
    A, _ = assemble_advection(disc, ConstantVelocity((0.4, -0.2, 0.1)), 0.0)
    one = const(disc, 1.0)
    assert np.abs(A.T @ one).max() < 1e-15


@pytest.mark.parametrize("p", [0, 1])
def test_advection_is_dissipative(p):
    g = full(3, "x-,x+")
    disc = Discretization(g, p)
    A, _ = assemble_advection(disc, ConstantVelocity((1.0, 0, 0)), 0.0)
    rng = np.random.default_rng(4)
    for _ in range(5):
        X = rng.standard_normal(disc.n_dof)
        assert X @ (A @ X) >= -1e-12


def test_nonlinear_vectors():
    g = full(2)
    disc = Discretization(g, 1)
    h3 = g.h**3
    ep, em = eval_nonlinear_vectors(disc, const(disc, 0.0))
    assert not ep.any() and not em.any()
    ep, em = eval_nonlinear_vectors(disc, const(disc, 1.0))
    assert np.abs((ep + em).reshape(-1, 4)[:, 0]).max() < 1e-16
    ep, _ = eval_nonlinear_vectors(disc, const(disc, 0.5))
    assert np.allclose(ep.reshape(-1, 4)[:, 0], h3 / (8 * SQ8), rtol=1e-13)


def test_weighted_mass():
    g = full(2)
    disc = Discretization(g, 2)
    m = assemble_weighted_mass(disc, const(disc, 1.0))
    assert np.abs(m - 3 * g.h**3 / 8 * np.eye(10)).max() < 1e-15
    assert not assemble_weighted_mass(disc, const(disc, 0.0)).any()
    X = np.random.default_rng(0).standard_normal(disc.n_dof)
    m = assemble_weighted_mass(disc, X)
    assert np.abs(m - m.transpose(0, 2, 1)).max() < 1e-14


def test_face_velocity_file_roundtrip(tmp_path):
    mask = np.zeros((4, 4, 4), bool)
    mask[:, 1:3, 1:3] = True
    g = build_grid(mask, "x-,x+")
    v = plug_flow(g, 0, 0.5)
    assert np.abs(v.divergence()).max() == 0
    v.write(tmp_path / "v.txt")
    w = FaceNormalVelocity.from_file(tmp_path / "v.txt", g)
    assert np.array_equal(w.interior, v.interior) and np.array_equal(w.boundary, v.boundary)
    lines = (tmp_path / "v.txt").read_text().splitlines()
    # break solenoidality on one interior face
    a, i, j, k, val = lines[0].split()
    lines[0] = f"{a} {i} {j} {k} {float(val) + 1.0}"
    (tmp_path / "bad.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(VelocityError):
        FaceNormalVelocity.from_file(tmp_path / "bad.txt", g)


def test_plug_flow_rejects_dead_end():
    mask = np.zeros((4, 4, 4), bool)
    mask[:3, 1, 1] = True
    g = build_grid(mask, "x-,x+")
    with pytest.raises(VelocityError):
        plug_flow(g, 0, 1.0)
