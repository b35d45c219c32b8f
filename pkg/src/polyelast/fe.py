"""Finite element spaces on the torus mesh.

``VelocitySpace`` is continuous vector P_k with periodic identification.
``StateSpaces`` holds the broken spaces for ``F`` (degree k-1), ``Z``
(degree 2(k-1)) and ``w`` (degree 3(k-1)); their functions are stored as
nodal values of a per-element Lagrange basis, so pointwise polynomial
identities carry over to coefficients with no representation error.
"""

from dataclasses import dataclass, replace
from itertools import permutations, product

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .mesh import MAX_QUAD_ORDER, quadrature
from .tensor import cof_derivative_apply, cofactor, determinant, pack_xi

_PERMS = list(permutations(range(3)))


def _monomials(d):
    return [(a, b, c) for a in range(d + 1) for b in range(d + 1 - a) for c in range(d + 1 - a - b)]


def _lattice_bary(d):
    if d == 0:
        return np.array([[0.25, 0.25, 0.25, 0.25]])
    pts = [m for m in product(range(d + 1), repeat=4) if sum(m) == d]
    return np.array(pts, dtype=float) / d


class LagrangeBasis:
    """Nodal P_d basis on the reference tetrahedron (d = 0 uses the centroid)."""

    def __init__(self, degree):
        self.degree = int(degree)
        self.nodes_bary = _lattice_bary(self.degree)
        self.nodes_ref = self.nodes_bary[:, 1:]
        self.exponents = np.array(_monomials(self.degree))
        vander = self._monomial_values(self.nodes_ref)
        self.coeffs = np.linalg.inv(vander)  # (n_mono, n_basis)
        self.size = len(self.nodes_ref)

    def _monomial_values(self, pts):
        pts = np.asarray(pts, dtype=float)
        e = self.exponents
        return np.prod(pts[:, None, :] ** e[None, :, :], axis=2)

    def _monomial_grads(self, pts):
        pts = np.asarray(pts, dtype=float)
        e = self.exponents
        out = np.zeros((len(pts), len(e), 3))
        for ax in range(3):
            de = e.copy()
            de[:, ax] -= 1
            mask = e[:, ax] > 0
            val = np.prod(pts[:, None, :] ** np.maximum(de, 0)[None, :, :], axis=2)
            out[:, :, ax] = np.where(mask[None, :], e[None, :, ax] * val, 0.0)
        return out

    def eval(self, pts):
        """Basis values (n_pts, n_basis)."""
        return self._monomial_values(pts) @ self.coeffs

    def grad(self, pts):
        """Reference gradients (n_pts, n_basis, 3)."""
        return np.einsum("pmx,mb->pbx", self._monomial_grads(pts), self.coeffs)

    def mass(self, quad):
        """Reference mass matrix (unit Jacobian)."""
        N = self.eval(quad.ref_points)
        return np.einsum("q,qa,qb->ab", quad.weights, N, N)


class VelocitySpace:
    """Continuous periodic vector Lagrange P_k on a :class:`TorusMesh`."""

    def __init__(self, mesh, degree=1, quad_order=None):
        if degree < 1:
            raise ValueError("velocity degree k must be >= 1")
        self.mesh = mesh
        self.degree = int(degree)
        if quad_order is None:
            quad_order = min(3 * self.degree + 1, MAX_QUAD_ORDER)
        self.quad = quadrature(int(quad_order))
        self.basis = LagrangeBasis(self.degree)
        self._number_nodes()

        ref = self.quad.ref_points
        self.N = self.basis.eval(ref)  # (nq, nloc)
        self.inv_jac = np.linalg.inv(mesh.jacobians)  # (ne, 3, 3)
        dref = self.basis.grad(ref)  # (nq, nloc, 3)
        # physical gradient: J^{-T} grad_ref
        self.dN = np.einsum("eyx,qby->eqbx", self.inv_jac, dref)
        self.wdet = self.quad.weights[None, :] * np.abs(np.linalg.det(mesh.jacobians))[:, None]
        self.points = mesh.map_points(ref)  # (ne, nq, 3)

        self.mass = self._assemble_scalar_mass()
        self._mass_factor = cho_factor(self.mass)

    def _number_nodes(self):
        mesh, k = self.mesh, self.degree
        m = k * mesh.n
        phys = np.einsum("nv,evx->enx", self.basis.nodes_bary, mesh.coords)
        lattice = np.mod(np.rint(phys * m).astype(np.int64), m)
        key = (lattice[..., 0] * m + lattice[..., 1]) * m + lattice[..., 2]
        uniq, inv = np.unique(key.ravel(), return_inverse=True)
        self.conn = inv.reshape(key.shape)  # (ne, nloc)
        self.n_nodes = len(uniq)
        self.node_coords = np.stack([uniq // (m * m), (uniq // m) % m, uniq % m], axis=1) / m

    @property
    def n_dofs(self):
        return 3 * self.n_nodes

    def _assemble_scalar_mass(self):
        local = np.einsum("eq,qa,qb->eab", self.wdet, self.N, self.N)
        M = np.zeros((self.n_nodes, self.n_nodes))
        rows = np.broadcast_to(self.conn[:, :, None], local.shape)
        cols = np.broadcast_to(self.conn[:, None, :], local.shape)
        np.add.at(M, (rows.ravel(), cols.ravel()), local.ravel())
        return M

    # -- evaluation at quadrature points ----------------------------------
    def values_at_quad(self, v):
        return np.einsum("qa,eai->eqi", self.N, v[self.conn])

    def grad_at_quad(self, v):
        """``d_alpha v_i`` at quadrature points, shape (ne, nq, 3, 3) indexed [i, alpha]."""
        return np.einsum("eqax,eai->eqix", self.dN, v[self.conn])

    def scalar_at_quad(self, z):
        return np.einsum("qa,ea->eq", self.N, z[self.conn])

    def scalar_grad_at_quad(self, z):
        return np.einsum("eqax,ea->eqx", self.dN, z[self.conn])

    def grad_at_ref(self, v, ref_points):
        """Elementwise gradient at arbitrary reference points (ne, np, 3, 3)."""
        dref = self.basis.grad(ref_points)
        dN = np.einsum("eyx,pby->epbx", self.inv_jac, dref)
        return np.einsum("epax,eai->epix", dN, v[self.conn])

    # -- projections --------------------------------------------------------
    def load(self, f_q):
        """``int f . phi_j`` for values at quadrature points (ne, nq, ...)."""
        local = np.einsum("eq,qa,eq...->ea...", self.wdet, self.N, f_q)
        out = np.zeros((self.n_nodes,) + f_q.shape[2:])
        np.add.at(out, self.conn.ravel(), local.reshape((-1,) + f_q.shape[2:]))
        return out

    def solve_mass(self, b):
        return cho_solve(self._mass_factor, b)

    def project(self, f):
        """L2 projection of a vector field (callable on (..., 3) points or quad values)."""
        f_q = f(self.points) if callable(f) else np.asarray(f, dtype=float)
        return self.solve_mass(self.load(f_q))

    def project_scalar(self, f):
        f_q = f(self.points) if callable(f) else np.asarray(f, dtype=float)
        return self.solve_mass(self.load(f_q))

    def interpolate(self, f):
        return np.asarray(f(self.node_coords), dtype=float)

    def inner(self, a, b):
        """L2 inner product of two nodal coefficient arrays."""
        return float(np.sum(a * (self.mass @ b)))

    def norm2(self, a):
        return self.inner(a, a)

    # -- point evaluation ---------------------------------------------------
    def locate(self, points):
        """Element index and reference coordinates of points (wrapped mod 1)."""
        mesh = self.mesh
        n = mesh.n
        x = np.mod(np.asarray(points, dtype=float), 1.0)
        cube = np.minimum(np.floor(x * n).astype(np.int64), n - 1)
        local = x * n - cube
        order = np.argsort(-local, axis=1, kind="stable")
        perm_index = np.array([_PERMS.index(tuple(o)) for o in order])
        cube_index = (cube[:, 0] * n + cube[:, 1]) * n + cube[:, 2]
        elem = cube_index * 6 + perm_index
        x_unwrapped = cube / n + local / n
        ref = np.einsum("eyx,ex->ey", self.inv_jac[elem], x_unwrapped - mesh.coords[elem, 0])
        return elem, ref

    def evaluate(self, v, points):
        """Values of a U_h function at physical points (m, 3)."""
        elem, ref = self.locate(points)
        vals = np.stack([self.basis.eval(r[None, :])[0] for r in ref])
        return np.einsum("pa,pai->pi", vals, v[self.conn[elem]])


class StateSpaces:
    """Broken spaces ``H^F x H^Z x H^w`` tied to a velocity space of degree k."""

    def __init__(self, vspace):
        k = vspace.degree
        self.vspace = vspace
        self.mesh = vspace.mesh
        self.degrees = (k - 1, 2 * (k - 1), 3 * (k - 1))
        self.bases = tuple(LagrangeBasis(d) for d in self.degrees)
        quad = vspace.quad
        self.N = tuple(b.eval(quad.ref_points) for b in self.bases)
        self.mass_inv = tuple(np.linalg.inv(b.mass(quad)) for b in self.bases)
        self.quad = quad

    @property
    def sizes(self):
        return tuple(b.size for b in self.bases)

    def xi_at_quad(self, F, Z, w):
        """Pack the state at quadrature points (ne, nq, 19)."""
        NF, NZ, Nw = self.N
        return pack_xi(
            np.einsum("qa,eaij->eqij", NF, F),
            np.einsum("qa,eaij->eqij", NZ, Z),
            np.einsum("qa,ea->eq", Nw, w),
        )

    def F_at_quad(self, F):
        return np.einsum("qa,eaij->eqij", self.N[0], F)

    def F_at_ref(self, F, ref_points):
        return np.einsum("pa,eaij->epij", self.bases[0].eval(ref_points), F)

    def _project_group(self, g, f_q):
        local = np.einsum("q,qa,eq...->ea...", self.quad.weights, self.N[g], f_q)
        return np.einsum("ab,eb...->ea...", self.mass_inv[g], local)

    def project(self, f_q):
        """Elementwise L2 projection of Xi values at quadrature points (ne, nq, 19)."""
        f_q = np.asarray(f_q, dtype=float)
        lead = f_q.shape[:2]
        F = self._project_group(0, f_q[..., 0:9].reshape(lead + (3, 3)))
        Z = self._project_group(1, f_q[..., 9:18].reshape(lead + (3, 3)))
        w = self._project_group(2, f_q[..., 18])
        return F, Z, w

    def inner(self, a, b):
        """L2 inner product of two states given as (F, Z, w) coefficient triples."""
        xa = self.xi_at_quad(*a)
        xb = self.xi_at_quad(*b)
        return float(np.einsum("eq,eqA,eqA->", self.vspace.wdet, xa, xb))


@dataclass
class DiscreteState:
    """One time level: velocity nodal values and the (F, Z, w) coefficients."""

    v: np.ndarray  # (n_nodes, 3)
    F: np.ndarray  # (ne, nF, 3, 3)
    Z: np.ndarray  # (ne, nZ, 3, 3)
    w: np.ndarray  # (ne, nw)
    n: int = 0
    is_gradient: bool = False

    @property
    def xi(self):
        return (self.F, self.Z, self.w)

    def copy(self, **changes):
        fields = dict(v=self.v.copy(), F=self.F.copy(), Z=self.Z.copy(), w=self.w.copy())
        fields.update(changes)
        return replace(self, **fields)


class Discretization:
    """Mesh + velocity space + state spaces bundled for the scheme."""

    def __init__(self, mesh, degree=1, quad_order=None):
        self.mesh = mesh
        self.U = VelocitySpace(mesh, degree, quad_order)
        self.H = StateSpaces(self.U)

    @property
    def degree(self):
        return self.U.degree

    def xi_at_quad(self, state):
        return self.H.xi_at_quad(state.F, state.Z, state.w)

    def check_state(self, state):
        nF, nZ, nw = self.H.sizes
        ne = self.mesh.n_elements
        if (
            state.v.shape != (self.U.n_nodes, 3)
            or state.F.shape != (ne, nF, 3, 3)
            or state.Z.shape != (ne, nZ, 3, 3)
            or state.w.shape != (ne, nw)
        ):
            raise ValueError("state arrays do not match the discretization")
        return state


def project_U(disc, f):
    return disc.U.project(f)


def project_H(disc, f):
    """Elementwise projection of a Xi-valued field (callable on points or quad values)."""
    f_q = f(disc.U.points) if callable(f) else f
    return disc.H.project(f_q)


def inject_gradient(disc, v):
    """``grad v_h`` as exact H^F coefficients (nodal values at the F nodes)."""
    return disc.U.grad_at_ref(v, disc.H.bases[0].nodes_ref)


def update_xi(disc, F_prev, Z_prev, w_prev, v, tau):
    """``xi_prev + tau DPhi(F_prev)[grad v]`` evaluated node-by-node in each group.

    Every group is a polynomial of its space's degree, so nodal evaluation
    is the exact representation.
    """
    H = disc.H
    out = []
    nodes = [b.nodes_ref for b in H.bases]
    gF = disc.U.grad_at_ref(v, nodes[0])
    out.append(F_prev + tau * gF)
    gZ = disc.U.grad_at_ref(v, nodes[1])
    out.append(Z_prev + tau * cof_derivative_apply(H.F_at_ref(F_prev, nodes[1]), gZ))
    gw = disc.U.grad_at_ref(v, nodes[2])
    Fw = H.F_at_ref(F_prev, nodes[2])
    out.append(w_prev + tau * np.einsum("epia,epia->ep", cofactor(Fw), gw))
    return tuple(out)


def init_from_deformation(disc, y, v0, affine=None):
    """Discrete initial data from a deformation ``y`` and velocity ``v0``.

    ``y(x) - affine @ x`` must be periodic.  ``F0`` is the gradient of the
    projected map, ``Z0``/``w0`` the projections of its cofactor/determinant.
    """
    A = np.eye(3) if affine is None else np.asarray(affine, dtype=float)
    U = disc.U

    def displacement(x):
        return y(x) - np.einsum("ij,...j->...i", A, x)

    u_h = U.project(displacement)
    v_h = U.project(v0)
    F0 = A + inject_gradient(disc, u_h)
    Fq = disc.H.F_at_quad(F0)
    _, Z0, _ = disc.H.project(pack_xi(Fq, cofactor(Fq), np.zeros(Fq.shape[:-2])))
    _, _, w0 = disc.H.project(pack_xi(Fq, Fq, determinant(Fq)))
    return DiscreteState(v_h, F0, Z0, w0, n=0, is_gradient=True)


def constant_state(disc, v_const, F_const):
    """State with constant velocity and ``xi = Phi(F_const)`` everywhere."""
    F_const = np.asarray(F_const, dtype=float)
    nF, nZ, nw = disc.H.sizes
    ne = disc.mesh.n_elements
    v = np.broadcast_to(np.asarray(v_const, dtype=float), (disc.U.n_nodes, 3)).copy()
    return DiscreteState(
        v,
        np.broadcast_to(F_const, (ne, nF, 3, 3)).copy(),
        np.broadcast_to(cofactor(F_const), (ne, nZ, 3, 3)).copy(),
        np.full((ne, nw), float(determinant(F_const))),
        n=0,
        is_gradient=True,
    )
