"""One step of the fully discrete variational scheme, and trajectory runs.

The state update ``xi^n = xi^{n-1} + tau DPhi(F^{n-1})[grad v^n]`` is
substituted into the per-step functional, so each step is an unconstrained
convex minimization in the velocity alone, solved by damped Newton.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .fe import update_xi
from .tensor import dphi_apply, phi_jacobian

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    """Newton failed to converge; carries the last residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LineSearchError(StepError):
    """No descent along a Newton direction: the energy is not convex."""


class RunAborted(RuntimeError):
    def __init__(self, message, trajectory, step):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


@dataclass(frozen=True)
class StepConfig:
    tau: float
    newton_tol: float = 1e-10
    max_newton: int = 50
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("time step tau must be positive")
        if not (self.newton_tol > 0 and self.max_newton >= 1):
            raise ValueError("solver tolerances must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.armijo_shrink < 1):
            raise ValueError("Armijo parameters must lie in (0, 1)")


@dataclass
class StepCertificate:
    """Energy bookkeeping of one step.

    ``energy_after + dissipation_velocity + bregman_dissipation`` equals
    ``energy_before + identity_defect`` exactly; the defect is the Newton
    residual tested against ``v^n`` and is what the certificate allows as
    solver slack.
    """

    energy_before: float
    energy_after: float
    dissipation_velocity: float
    bregman_dissipation: float
    identity_defect: float
    residual: float
    residual_scale: float
    newton_iterations: int
    functional_history: list = field(default_factory=list)

    @property
    def solver_slack(self):
        return abs(self.identity_defect) + 64 * np.finfo(float).eps * max(abs(self.energy_before), 1.0)

    @property
    def excess(self):
        """``energy_after + dissipation_velocity - energy_before`` (should be <= 0)."""
        return self.energy_after + self.dissipation_velocity - self.energy_before

    @property
    def passed(self):
        return self.excess <= self.solver_slack


class StepProblem:
    """Per-step functional ``J_h`` and its derivatives over the velocity DOFs."""

    def __init__(self, disc, model, prev, tau):
        self.disc = disc
        self.model = model
        self.prev = prev
        self.tau = float(tau)
        U = disc.U
        self.Fprev_q = disc.H.F_at_quad(prev.F)
        self.jac = phi_jacobian(self.Fprev_q)  # (ne, nq, 19, 3, 3)
        # B[e,q,A,b,i]: d xi_A / d v_{b,i} per unit tau
        ne, nq, nloc = U.dN.shape[:3]
        self.B = np.swapaxes(self.jac @ np.swapaxes(U.dN, -1, -2)[:, :, None], -1, -2)
        self._Bflat = np.ascontiguousarray(self.B).reshape(ne, nq * 19, 3 * nloc)
        self.xi0 = disc.xi_at_quad(prev)
        self.v0 = prev.v
        nloc = U.conn.shape[1]
        self.dofs = (U.conn[:, :, None] * 3 + np.arange(3)).reshape(len(U.conn), 3 * nloc)
        self.basis_norm = np.sqrt(np.diag(U.mass))

    def xi_q(self, v):
        ne, nq = self.xi0.shape[:2]
        vloc = v[self.disc.U.conn].reshape(ne, -1, 1)
        return self.xi0 + self.tau * (self._Bflat @ vloc).reshape(ne, nq, 19)

    def value(self, v, xi=None):
        U = self.disc.U
        dv = v - self.v0
        xi = self.xi_q(v) if xi is None else xi
        return 0.5 * float(np.sum(dv * (U.mass @ dv))) + float(np.sum(U.wdet * self.model.eval(xi)))

    def stress_load(self, xi):
        """``int G_{,A}(xi) Phi^A_{,i alpha}(F^{n-1}) d_alpha phi`` per basis function."""
        U = self.disc.U
        ne = len(U.conn)
        wg = (U.wdet[:, :, None] * self.model.grad(xi)).reshape(ne, 1, -1)
        local = (wg @ self._Bflat).reshape(ne, -1, 3)
        out = np.zeros((U.n_nodes, 3))
        np.add.at(out, U.conn.ravel(), local.reshape(-1, 3))
        return out

    def gradient(self, v, xi=None):
        xi = self.xi_q(v) if xi is None else xi
        return self.disc.U.mass @ (v - self.v0) + self.tau * self.stress_load(xi)

    def hessian(self, v, xi=None):
        U = self.disc.U
        xi = self.xi_q(v) if xi is None else xi
        hG = self.model.hess(xi)
        ne, nq = U.wdet.shape
        L = self._Bflat.shape[-1]
        B = self._Bflat.reshape(ne, nq, 19, L)
        T = (hG @ B) * U.wdet[:, :, None, None]
        local = np.swapaxes(self._Bflat, 1, 2) @ T.reshape(ne, nq * 19, L)
        local = (self.tau**2) * local
        K = np.kron(U.mass, np.eye(3))
        rows = np.broadcast_to(self.dofs[:, :, None], local.shape)
        cols = np.broadcast_to(self.dofs[:, None, :], local.shape)
        np.add.at(K, (rows.ravel(), cols.ravel()), local.ravel())
        return K

    def residual(self, v, xi=None):
        """Normalized Euler-Lagrange residual and the stress-term scale."""
        xi = self.xi_q(v) if xi is None else xi
        stress = self.stress_load(xi)
        r = self.disc.U.mass @ (v - self.v0) / self.tau + stress
        res = float(np.max(np.abs(r) / self.basis_norm[:, None]))
        scale = float(np.max(np.abs(stress) / self.basis_norm[:, None]))
        return res, scale


def step_functional(disc, model, v, prev, tau):
    """``J_h[v] = int 1/2 |v - v^{n-1}|^2 + G(xi^{n-1} + tau DPhi(F^{n-1})[grad v])``."""
    return StepProblem(disc, model, prev, tau).value(v)


def euler_lagrange_residual(disc, model, prev, nxt, tau):
    """Max over basis functions of the weak momentum-equation defect / basis norm.

    Uses ``xi`` of ``nxt`` as stored, not recomputed from its velocity.
    """
    disc.check_state(prev)
    disc.check_state(nxt)
    problem = StepProblem(disc, model, prev, tau)
    return problem.residual(nxt.v, disc.xi_at_quad(nxt))[0]


def _line_search(problem, v, p, f0, slope, cfg):
    alpha = 1.0
    while alpha > 1e-12:
        f = problem.value(v + alpha * p)
        if f <= f0 + cfg.armijo_c * alpha * slope:
            return alpha, f
        alpha *= cfg.armijo_shrink
    return None, None


def solve_step(disc, model, prev, cfg):
    """Advance one step.  Returns ``(next_state, StepCertificate)``."""
    disc.check_state(prev)
    tau = cfg.tau
    problem = StepProblem(disc, model, prev, tau)
    v = prev.v.copy()
    f = problem.value(v)
    history = [f]
    eps = np.finfo(float).eps
    for it in range(cfg.max_newton + 1):
        xi = problem.xi_q(v)
        res, scale = problem.residual(v, xi)
        if res <= cfg.newton_tol * max(1.0, scale):
            break
        if it == cfg.max_newton:
            raise StepError(f"Newton did not converge in {cfg.max_newton} iterations (residual {res:.3e})", res, it)
        g = problem.gradient(v, xi).ravel()
        K = problem.hessian(v, xi)
        try:
            p = -cho_solve(cho_factor(K), g)
        except LinAlgError as exc:
            raise LineSearchError("Newton matrix not positive definite", res, it) from exc
        slope = float(g @ p)
        p = p.reshape(v.shape)
        if -slope <= 16 * eps * max(abs(f), 1.0):
            # decrement at rounding level: take the full step, no decrease is measurable
            v = v + p
            f = problem.value(v)
            history.append(f)
            continue
        alpha, f_new = _line_search(problem, v, p, f, slope, cfg)
        if alpha is None:
            raise LineSearchError(f"line search failed at Newton iteration {it} (residual {res:.3e})", res, it)
        v = v + alpha * p
        f = f_new
        history.append(f)

    F, Z, w = update_xi(disc, prev.F, prev.Z, prev.w, v, tau)
    nxt = prev.copy(v=v, F=F, Z=Z, w=w)
    nxt.n = prev.n + 1

    U = disc.U
    xi_prev = problem.xi0
    xi_next = disc.xi_at_quad(nxt)
    G_prev = float(np.sum(U.wdet * model.eval(xi_prev)))
    G_next = float(np.sum(U.wdet * model.eval(xi_next)))
    dG_next = model.grad(xi_next)
    bregman = G_prev - G_next - float(np.einsum("eq,eqA,eqA->", U.wdet, dG_next, xi_prev - xi_next))
    g = problem.gradient(v, xi_next)
    cert = StepCertificate(
        energy_before=0.5 * U.norm2(prev.v) + G_prev,
        energy_after=0.5 * U.norm2(v) + G_next,
        dissipation_velocity=0.5 * U.norm2(v - prev.v),
        bregman_dissipation=bregman,
        identity_defect=float(np.sum(g * v)),
        residual=res,
        residual_scale=scale,
        newton_iterations=it,
        functional_history=history,
    )
    w_min = float(np.min(nxt.w))
    if w_min <= 0:
        log.warning("step %d: min w = %.3e <= 0 (orientation lost)", nxt.n, w_min)
    return nxt, cert


def gradient_conservation_defect(disc, prev, nxt, tau):
    """``max |F^n - F^{n-1} - tau grad v^n|`` over elements and quadrature points."""
    U, H = disc.U, disc.H
    dF = H.F_at_quad(nxt.F) - H.F_at_quad(prev.F)
    return float(np.max(np.abs(dF - tau * U.grad_at_quad(nxt.v))))


def projection_pairings(disc, model, prev, nxt, tau):
    """Pairings against ``DG(xi^n)`` with and without the elementwise projection.

    Returns ``((a, Pa), (b, Pb))`` where ``a = (xi^n - xi^{n-1}, DG)``,
    ``b = (DPhi(F^{n-1}) grad v^n, DG)`` and ``P*`` use ``P^H DG`` instead.
    The increments lie in the state spaces, so each pair agrees.
    """
    H, wq = disc.H, disc.U.wdet
    dg = model.grad(disc.xi_at_quad(nxt))
    pdg = H.xi_at_quad(*H.project(dg))
    dxi = disc.xi_at_quad(nxt) - disc.xi_at_quad(prev)
    dphi = dphi_apply(H.F_at_quad(prev.F), disc.U.grad_at_quad(nxt.v))

    def pair(a, b):
        return float(np.einsum("eq,eqA,eqA->", wq, a, b))

    return (pair(dxi, dg), pair(dxi, pdg)), (pair(dphi, dg), pair(dphi, pdg))


def increment_norm2(disc, prev, nxt):
    """``||Theta^n - Theta^{n-1}||^2_{L2}`` over all 22 components."""
    dv = nxt.v - prev.v
    d = (nxt.F - prev.F, nxt.Z - prev.Z, nxt.w - prev.w)
    return disc.U.norm2(dv) + disc.H.inner(d, d)


def total_energy(disc, model, state):
    kinetic = 0.5 * disc.U.norm2(state.v)
    internal = float(np.sum(disc.U.wdet * model.eval(disc.xi_at_quad(state))))
    return kinetic, internal


@dataclass
class Trajectory:
    disc: object
    model: object
    tau: float
    states: list
    certificates: list = field(default_factory=list)
    increments: list = field(default_factory=list)

    @property
    def n_steps(self):
        return len(self.states) - 1

    @property
    def times(self):
        return np.arange(len(self.states)) * self.tau

    @property
    def increment_sum(self):
        return float(np.sum(self.increments))

    def energies(self):
        """(kinetic, internal) per state."""
        return np.array([total_energy(self.disc, self.model, s) for s in self.states])


def run(disc, model, initial, tau, t_final, hooks=(), cfg=None):
    """Advance ``initial`` to ``t_final`` with ``N = t_final / tau`` steps.

    ``hooks`` are called as ``hook(prev, next, certificate)`` after each step.
    On a step failure :class:`RunAborted` carries the partial trajectory.
    """
    n_steps = int(round(t_final / tau))
    if n_steps < 1 or abs(n_steps * tau - t_final) > 1e-9 * max(abs(t_final), 1.0):
        raise ValueError(f"tau={tau} does not divide t_final={t_final}")
    cfg = StepConfig(tau=tau) if cfg is None else cfg
    if cfg.tau != tau:
        raise ValueError("StepConfig.tau disagrees with tau")
    disc.check_state(initial)
    traj = Trajectory(disc, model, tau, [initial])
    state = initial
    for n in range(1, n_steps + 1):
        try:
            nxt, cert = solve_step(disc, model, state, cfg)
        except StepError as exc:
            raise RunAborted(f"step {n} failed: {exc}", traj, n) from exc
        traj.states.append(nxt)
        traj.certificates.append(cert)
        traj.increments.append(increment_norm2(disc, state, nxt))
        for hook in hooks:
            hook(state, nxt, cert)
        state = nxt
    return traj
