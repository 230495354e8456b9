import numpy as np
import pytest

from chvox.basis import (
    QuadratureRule,
    eval_basis,
    eval_basis_grad,
    l2_project,
    mode_list,
    n_loc,
    quadrature_rule,
    reference_basis,
)
from chvox.grid import build_grid


def test_n_loc():
    assert [n_loc(p) for p in range(4)] == [1, 4, 10, 20]
    with pytest.raises(ValueError):
        n_loc(-1)


def test_mode_order_is_graded():
    modes = mode_list(2)
    assert modes[0] == (0, 0, 0)
    assert modes[1] == (1, 0, 0)
    assert [sum(m) for m in modes] == [0, 1, 1, 1, 2, 2, 2, 2, 2, 2]


def test_point_values():
    x = np.array([[0.3, -0.7, 0.1], [1.0, 0.0, 0.0]])
    phi = eval_basis(1, x)
    assert np.allclose(phi[:, 0], 1 / (2 * np.sqrt(2)), rtol=0, atol=1e-15)
    assert abs(phi[1, 1] - np.sqrt(6) / 4) < 1e-15


@pytest.mark.parametrize("p", [0, 1, 2, 3])
def test_orthonormal(p):
    b = reference_basis(p, max(3, p + 1))
    G = (b.vol_phi * b.vol_weights[:, None]).T @ b.vol_phi
    assert np.abs(G - np.eye(n_loc(p))).max() < 1e-13


def test_hierarchy_spans_lower_degree():
    # the first n_loc(q) functions of the degree-3 basis are the degree-q basis
    x = np.random.default_rng(1).uniform(-1, 1, (20, 3))
    full = eval_basis(3, x)
    for q in range(3):
        assert np.allclose(full[:, : n_loc(q)], eval_basis(q, x), atol=1e-14)


def test_gradient_matches_finite_difference():
    x = np.random.default_rng(2).uniform(-0.9, 0.9, (7, 3))
    g = eval_basis_grad(2, x)
    eps = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = eps
        fd = (eval_basis(2, x + e) - eval_basis(2, x - e)) / (2 * eps)
        assert np.abs(fd - g[:, :, d]).max() < 1e-8


def test_quadrature_rule_sizes():
    q0 = quadrature_rule(0)
    assert q0.n_q == 1 and np.allclose(q0.points, [0.0]) and np.allclose(q0.weights, [2.0])
    q1 = quadrature_rule(1)
    assert q1.n_q == 3
    for k in range(6):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert abs((q1.weights * q1.points**k).sum() - exact) < 1e-14


def test_quartic_of_linear_mode():
    # phi = sqrt(3/2) x / 2 on the reference cube: int phi^4 = (9/64) * (2/5) * 4 = 9/40
    b = reference_basis(1, 3)
    assert abs((b.vol_phi[:, 1] ** 4 * b.vol_weights).sum() - 9 / 40) < 1e-14
    r = QuadratureRule.gauss(3)
    assert abs(r.volume_weights.sum() - 8.0) < 1e-14


def test_project_constant_and_linear():
    g = build_grid(np.ones((3, 3, 3), bool))
    b = reference_basis(1)
    f1 = l2_project(lambda x: np.ones(x.shape[:-1]), g, b)
    assert np.allclose(f1.blocks[:, 1:], 0, atol=1e-14)
    assert np.allclose(f1.at_volume_points(), 1.0, atol=1e-14)
    fx = l2_project(lambda x: x[..., 0], g, b)
    pts = g.element_centers[:, None, :] + 0.5 * g.h * b.quad.volume_points[None]
    assert np.abs(fx.at_volume_points() - pts[..., 0]).max() < 1e-14
    assert abs(fx.evaluate([[0.51, 0.2, 0.9]])[0] - 0.51) < 1e-14


def test_projection_error_rate_p2():
    def f(x):
        return np.prod(np.sin(2 * np.pi * x), axis=-1)

    errs = []
    for N in (4, 8, 16):
        g = build_grid(np.ones((N, N, N), bool))
        fld = l2_project(f, g, reference_basis(2))
        fine = reference_basis(2, 7)
        pts = g.element_centers[:, None, :] + 0.5 * g.h * fine.quad.volume_points[None]
        diff = fld.at_volume_points(fine) - f(pts)
        errs.append(np.sqrt((diff**2 * fine.vol_weights * g.h**3 / 8).sum()))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios > 6.5) and np.all(ratios < 9.5)


def test_per_element_projection():
    g = build_grid(np.ones((2, 2, 2), bool))
    vals = np.arange(8.0)
    f = l2_project(vals, g, reference_basis(2))
    assert np.allclose(f.element_means(), vals)
    with pytest.raises(ValueError):
        l2_project(np.ones(3), g, reference_basis(0))
