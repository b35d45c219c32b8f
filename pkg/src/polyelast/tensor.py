"""Fixed-size 3x3 algebra for the minors map ``Phi(F) = (F, cof F, det F)``.

All functions broadcast over leading axes: a ``Mat3`` is any array whose
last two axes are ``(3, 3)``, a ``Xi`` is any array whose last axis has
length 19.  The component ordering of a ``Xi`` is fixed everywhere:

    0..8    F   (row-major, index 3*i + alpha)
    9..17   Z   (row-major, shaped like cof F)
    18      w   (shaped like det F)
"""

import numpy as np

NXI = 19
F_SLICE = slice(0, 9)
Z_SLICE = slice(9, 18)
W_INDEX = 18

# Levi-Civita symbol eps[i, j, k].
EPS = np.zeros((3, 3, 3))
EPS[0, 1, 2] = EPS[1, 2, 0] = EPS[2, 0, 1] = 1.0
EPS[0, 2, 1] = EPS[2, 1, 0] = EPS[1, 0, 2] = -1.0

# _COF_D[(j,beta), (i,alpha), (k,gamma)] = eps_{jik} eps_{beta alpha gamma}
_COF_D = np.einsum("jik,bag->jbiakg", EPS, EPS).reshape(9, 9, 9)


def as_mat3(m):
    """Validate and return ``m`` as a float array with trailing shape (3, 3)."""
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def cofactor(m):
    """Cofactor matrix built from signed 2x2 minors.

    Valid for singular ``m``; satisfies ``m @ cofactor(m).T == det(m) * I``.
    """
    m = np.asarray(m, dtype=float)
    c = np.empty_like(m)
    c[..., 0, 0] = m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1]
    c[..., 0, 1] = m[..., 1, 2] * m[..., 2, 0] - m[..., 1, 0] * m[..., 2, 2]
    c[..., 0, 2] = m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]
    c[..., 1, 0] = m[..., 0, 2] * m[..., 2, 1] - m[..., 0, 1] * m[..., 2, 2]
    c[..., 1, 1] = m[..., 0, 0] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 0]
    c[..., 1, 2] = m[..., 0, 1] * m[..., 2, 0] - m[..., 0, 0] * m[..., 2, 1]
    c[..., 2, 0] = m[..., 0, 1] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 1]
    c[..., 2, 1] = m[..., 0, 2] * m[..., 1, 0] - m[..., 0, 0] * m[..., 1, 2]
    c[..., 2, 2] = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return c


def determinant(m):
    """Laplace expansion along the first row."""
    m = np.asarray(m, dtype=float)
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def pack_xi(F, Z, w):
    """Pack ``(F, Z, w)`` into the 19-component layout."""
    F = np.asarray(F, dtype=float)
    Z = np.asarray(Z, dtype=float)
    w = np.asarray(w, dtype=float)
    lead = np.broadcast_shapes(F.shape[:-2], Z.shape[:-2], w.shape)
    out = np.empty(lead + (NXI,))
    out[..., F_SLICE] = np.broadcast_to(F, lead + (3, 3)).reshape(lead + (9,))
    out[..., Z_SLICE] = np.broadcast_to(Z, lead + (3, 3)).reshape(lead + (9,))
    out[..., W_INDEX] = w
    return out


def unpack_xi(xi):
    """Inverse of :func:`pack_xi`; returns views ``(F, Z, w)``."""
    xi = np.asarray(xi, dtype=float)
    lead = xi.shape[:-1]
    return (
        xi[..., F_SLICE].reshape(lead + (3, 3)),
        xi[..., Z_SLICE].reshape(lead + (3, 3)),
        xi[..., W_INDEX],
    )


def phi(F):
    """The minors map ``F -> (F, cof F, det F)`` as a Xi."""
    F = np.asarray(F, dtype=float)
    return pack_xi(F, cofactor(F), determinant(F))


def cof_derivative_apply(F, A):
    """Directional derivative of ``cof`` at ``F`` along ``A``.

    ``(D cof(F)[A])_{j beta} = eps_{jik} eps_{beta alpha gamma} A_{i alpha} F_{k gamma}``
    """
    F = np.asarray(F, dtype=float)
    A = np.asarray(A, dtype=float)
    lead = np.broadcast_shapes(F.shape[:-2], A.shape[:-2])
    Fv = np.broadcast_to(F, lead + (3, 3)).reshape(lead + (9,))
    Av = np.broadcast_to(A, lead + (3, 3)).reshape(lead + (9,))
    out = np.einsum("...k,Jk->...J", Fv, _COF_D.reshape(81, 9)).reshape(lead + (9, 9))
    return np.einsum("...Ji,...i->...J", out, Av).reshape(lead + (3, 3))


def dphi_apply(F, A):
    """``DPhi(F)[A] = (A, Dcof(F)[A], cof(F) : A)``."""
    F = np.asarray(F, dtype=float)
    A = np.asarray(A, dtype=float)
    return pack_xi(
        np.broadcast_to(A, np.broadcast_shapes(F.shape, A.shape)),
        cof_derivative_apply(F, A),
        np.einsum("...ia,...ia->...", cofactor(F), A),
    )


def phi_jacobian(F):
    """Full Jacobian ``Phi^A_{,i alpha}(F)`` with shape ``(..., 19, 3, 3)``."""
    F = np.asarray(F, dtype=float)
    lead = F.shape[:-2]
    jac = np.zeros(lead + (NXI, 3, 3))
    jac[..., F_SLICE, :, :] = np.eye(9).reshape(9, 3, 3)
    jac[..., Z_SLICE, :, :] = (F.reshape(lead + (9,)) @ _COF_D.reshape(81, 9).T).reshape(lead + (9, 3, 3))
    jac[..., W_INDEX, :, :] = cofactor(F)
    return jac


def contract_stress(dG, jac):
    """``g_{i alpha} = dG_A Phi^A_{,i alpha}`` for a gradient and a Jacobian."""
    return np.einsum("...A,...Aia->...ia", dG, jac)


def null_lagrangian_residual(space, u, phi_h, z=None, affine=None):
    """Defect of the null-Lagrangian divergence identities for a discrete map.

    The map is ``y(x) = affine @ x + u_h(x)`` with ``u_h`` in the velocity
    space, so ``grad y`` is a discrete gradient.  Without ``z`` this returns
    ``max_A |int Phi^A_{,i alpha}(grad y) d_alpha phi_i dx|``.  With a scalar
    ``z`` (nodal values in the scalar counterpart of the velocity space) it
    returns ``max_A |lhs_A - rhs_A|`` for the weighted identity

        - int Phi^A_{,i alpha} z d_alpha phi_i  =  int Phi^A_{,i alpha} d_alpha z phi_i.

    Parameters
    ----------
    space : VelocitySpace
    u, phi_h : ndarray, shape (n_nodes, 3)
        Nodal coefficients.
    z : ndarray, shape (n_nodes,), optional
    affine : array_like (3, 3), optional
        Constant part of the deformation gradient (identity map for ``I``).
    """
    u = np.asarray(u, dtype=float)
    phi_h = np.asarray(phi_h, dtype=float)
    if u.shape != (space.n_nodes, 3) or phi_h.shape != (space.n_nodes, 3):
        raise ValueError("u and phi must be nodal coefficient arrays of the same space")
    F = space.grad_at_quad(u)
    if affine is not None:
        F = F + as_mat3(affine)
    return field_null_lagrangian_residual(space, F, phi_h, z)


def field_null_lagrangian_residual(space, F_q, phi_h, z=None):
    """Same as :func:`null_lagrangian_residual` for a field given at quadrature points."""
    jac = phi_jacobian(F_q)
    dphi = space.grad_at_quad(phi_h)
    wq = space.wdet
    if z is None:
        per_A = np.einsum("eq,eqAia,eqia->A", wq, jac, dphi)
        return float(np.max(np.abs(per_A)))
    z = np.asarray(z, dtype=float)
    if z.shape != (space.n_nodes,):
        raise ValueError("z must be nodal values of the scalar space")
    z_q = space.scalar_at_quad(z)
    dz_q = space.scalar_grad_at_quad(z)
    phi_q = space.values_at_quad(phi_h)
    lhs = -np.einsum("eq,eqAia,eq,eqia->A", wq, jac, z_q, dphi)
    rhs = np.einsum("eq,eqAia,eqa,eqi->A", wq, jac, dz_q, phi_q)
    return float(np.max(np.abs(lhs - rhs)))
