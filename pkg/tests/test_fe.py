import numpy as np
import pytest

from polyelast.fe import (
    Discretization,
    constant_state,
    init_from_deformation,
    inject_gradient,
    project_H,
    project_U,
    update_xi,
)
from polyelast.mesh import build_uniform
from polyelast.tensor import cofactor, determinant, dphi_apply, null_lagrangian_residual, pack_xi


@pytest.fixture(scope="module")
def disc4():
    return Discretization(build_uniform(4), 1)


@pytest.fixture(scope="module")
def disc2k2():
    return Discretization(build_uniform(2), 2)


def test_project_constant(disc2):
    c = np.array([0.3, -1.0, 2.0])
    v = project_U(disc2, lambda x: np.broadcast_to(c, x.shape))
    assert np.allclose(v, c, atol=1e-13)


@pytest.mark.parametrize("name", ["disc2", "disc2k2"])
def test_project_idempotent(name, request, rng):
    d = request.getfixturevalue(name)
    v = rng.standard_normal((d.U.n_nodes, 3))
    assert np.allclose(d.U.project(d.U.values_at_quad(v)), v, atol=1e-12)


def test_project_orthogonality(disc4):
    U = disc4.U

    def f(x):
        out = np.zeros(x.shape)
        out[..., 0] = np.sin(2 * np.pi * x[..., 0])
        return out

    v = U.project(f)
    resid = U.load(f(U.points) - U.values_at_quad(v))
    assert np.abs(resid).max() <= 1e-10


def test_projector_self_adjoint(disc2, rng):
    U = disc2.U
    f_q = rng.standard_normal(U.points.shape)
    g_q = rng.standard_normal(U.points.shape)
    lhs = np.sum(U.wdet[..., None] * U.values_at_quad(U.project(f_q)) * g_q)
    rhs = np.sum(U.wdet[..., None] * f_q * U.values_at_quad(U.project(g_q)))
    assert abs(lhs - rhs) <= 1e-12


@pytest.mark.parametrize("name", ["disc2", "disc2k2"])
def test_project_H(name, request, rng):
    d = request.getfixturevalue(name)
    H, U = d.H, d.U
    nF, nZ, nw = H.sizes
    ne = d.mesh.n_elements
    coeffs = (rng.standard_normal((ne, nF, 3, 3)), rng.standard_normal((ne, nZ, 3, 3)), rng.standard_normal((ne, nw)))
    back = H.project(H.xi_at_quad(*coeffs))
    for a, b in zip(back, coeffs):
        assert np.allclose(a, b, atol=1e-12)
    # per-element orthogonality for a smooth field
    f = lambda x: np.sin(2 * np.pi * x[..., :1]) * np.ones(19)  # noqa: E731
    P = H.xi_at_quad(*project_H(d, f))
    r = f(U.points) - P
    for g, N in enumerate(H.N):
        sl = [slice(0, 9), slice(9, 18), slice(18, 19)][g]
        per = np.einsum("q,qa,eqA->eaA", H.quad.weights, N, r[..., sl])
        assert np.abs(per).max() <= 1e-12


def test_inject_gradient(disc2k2, rng):
    d = disc2k2
    U = d.U
    assert np.allclose(inject_gradient(d, np.ones((U.n_nodes, 3))), 0, atol=1e-13)
    v = U.project(lambda x: np.sin(2 * np.pi * x[..., [1, 2, 0]]))
    G = inject_gradient(d, v)
    assert np.allclose(d.H.F_at_quad(G), U.grad_at_quad(v), atol=1e-13)
    F2, _, _ = d.H.project(pack_xi(d.H.F_at_quad(G), np.zeros(3), np.zeros(1))[..., :19])
    assert np.allclose(F2, G, atol=1e-12)


def test_inject_gradient_periodized_linear(disc4):
    # P^U of sin(2 pi x_1) e_2 differentiated elementwise versus a brute-force difference quotient
    U = disc4.U
    v = U.project(lambda x: np.stack([0 * x[..., 0], np.sin(2 * np.pi * x[..., 0]), 0 * x[..., 0]], -1))
    G = disc4.H.F_at_quad(inject_gradient(disc4, v))
    h = 1e-6
    x = U.points.reshape(-1, 3)
    e, ref = U.locate(x)
    fd = np.zeros((len(x), 3, 3))
    for a in range(3):
        s = np.zeros(3)
        s[a] = h
        # evaluate inside the same element by stepping in reference space
        inv = U.inv_jac[e]
        rp = ref + np.einsum("eyx,x->ey", inv, s)
        rm = ref - np.einsum("eyx,x->ey", inv, s)
        Np = U.basis.eval(rp)
        Nm = U.basis.eval(rm)
        vp = np.einsum("pa,pai->pi", Np, v[U.conn[e]])
        vm = np.einsum("pa,pai->pi", Nm, v[U.conn[e]])
        fd[:, :, a] = (vp - vm) / (2 * h)
    assert np.allclose(G.reshape(-1, 3, 3), fd, atol=1e-8)


def test_state_space_embedding(disc2k2, rng):
    d = disc2k2
    H = d.H
    for _ in range(20):
        v = rng.standard_normal((d.U.n_nodes, 3))
        F = rng.standard_normal((d.mesh.n_elements, H.sizes[0], 3, 3))
        direct = dphi_apply(H.F_at_quad(F), d.U.grad_at_quad(v))
        proj = H.xi_at_quad(*H.project(direct))
        assert np.allclose(proj, direct, atol=1e-11 * np.abs(direct).max())


def test_update_xi_exact(disc2k2, rng):
    d = disc2k2
    s = constant_state(d, np.zeros(3), np.eye(3))
    s.F = s.F + 0.1 * rng.standard_normal(s.F.shape)
    v = rng.standard_normal((d.U.n_nodes, 3))
    F, Z, w = update_xi(d, s.F, s.Z, s.w, v, 0.1)
    expect = d.xi_at_quad(s) + 0.1 * dphi_apply(d.H.F_at_quad(s.F), d.U.grad_at_quad(v))
    assert np.allclose(d.H.xi_at_quad(F, Z, w), expect, atol=1e-12)


def test_cofactor_degree_roundtrip(disc2k2, rng):
    d = disc2k2
    H = d.H
    F = rng.standard_normal((d.mesh.n_elements, H.sizes[0], 3, 3))
    Fq = H.F_at_quad(F)
    _, Z, w = H.project(pack_xi(Fq, cofactor(Fq), determinant(Fq)))
    xi = H.xi_at_quad(F, Z, w)
    assert np.allclose(xi[..., 9:18].reshape(Fq.shape), cofactor(Fq), atol=1e-11)
    # det of a degree-1 F has degree 3, which H^w holds at k = 2
    assert np.allclose(xi[..., 18], determinant(Fq), atol=1e-11)


def test_init_examples(disc2):
    zero = lambda x: np.zeros(x.shape)  # noqa: E731
    s = init_from_deformation(disc2, lambda x: x, zero)
    assert np.allclose(s.F, np.eye(3)) and np.allclose(s.Z, np.eye(3)) and np.allclose(s.w, 1.0)
    assert np.array_equal(s.v, np.zeros_like(s.v)) and s.is_gradient


def test_init_is_discrete_gradient(disc2, rng):
    y = lambda x: x + 0.01 * np.sin(2 * np.pi * (x[..., [1, 2, 0]] + 0.3))  # noqa: E731
    s = init_from_deformation(disc2, y, lambda x: np.zeros(x.shape))
    u = disc2.U.project(lambda x: y(x) - x)
    phi_h = rng.standard_normal((disc2.U.n_nodes, 3))
    assert null_lagrangian_residual(disc2.U, u, phi_h, affine=np.eye(3)) <= 1e-12
    assert np.allclose(disc2.H.F_at_quad(s.F), np.eye(3) + disc2.U.grad_at_quad(u), atol=1e-14)


def test_periodic_evaluation(disc2k2, rng):
    U = disc2k2.U
    v = rng.standard_normal((U.n_nodes, 3))
    x = rng.random((50, 3))
    base = U.evaluate(v, x)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        assert np.allclose(U.evaluate(v, x + e), base, atol=1e-13)


def test_check_state(disc2):
    s = constant_state(disc2, np.zeros(3), np.eye(3))
    disc2.check_state(s)
    with pytest.raises(ValueError):
        disc2.check_state(s.copy(v=np.zeros((2, 3))))
