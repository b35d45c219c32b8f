"""Entropy, relative entropy and the term-by-term relative entropy identity.

Everything is evaluated at the quadrature points of the velocity space and
integrated with its weights, so for piecewise-polynomial data the identity
holds to rounding.  Reference solutions expose their values and first
spatial derivatives at physical points.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import phi, phi_jacobian


# -- interpolants ------------------------------------------------------------


class Interpolants:
    """Time reconstructions of a trajectory.

    For ``t`` in ``I_n = [(n-1) tau, n tau)``: ``hat`` is linear between
    iterates ``n-1`` and ``n``, ``bar`` is iterate ``n`` and ``bar_star``
    holds ``F^{n-1}``.
    """

    def __init__(self, traj):
        self.traj = traj
        self.disc = traj.disc
        self.tau = traj.tau
        self.N = traj.n_steps

    def interval(self, t, strict=False):
        """Index ``n`` with ``t`` in ``I_n``; the final time belongs to ``I_N``."""
        s = t / self.tau
        n = int(math.floor(s + 1e-12)) + 1
        if strict and abs(s - round(s)) < 1e-9:
            raise ValueError(f"t={t} is a grid time; pass the interval explicitly")
        if n > self.N:
            if s <= self.N + 1e-9:
                n = self.N
            else:
                raise ValueError(f"t={t} outside trajectory span [0, {self.N * self.tau}]")
        if n < 1:
            raise ValueError(f"t={t} outside trajectory span")
        return n

    def weight(self, t, n):
        lam = (t - (n - 1) * self.tau) / self.tau
        # grid times reproduce the iterates exactly
        if abs(lam) < 1e-12:
            return 0.0
        if abs(lam - 1.0) < 1e-12:
            return 1.0
        return lam

    def hat(self, t, n=None):
        """Coefficients ``(v, F, Z, w)`` of the piecewise-linear interpolant."""
        n = self.interval(t) if n is None else n
        lam = self.weight(t, n)
        a, b = self.traj.states[n - 1], self.traj.states[n]
        if lam == 1.0:
            return b.v, b.F, b.Z, b.w
        return (
            a.v + lam * (b.v - a.v),
            a.F + lam * (b.F - a.F),
            a.Z + lam * (b.Z - a.Z),
            a.w + lam * (b.w - a.w),
        )

    def bar(self, t, n=None):
        n = self.interval(t) if n is None else n
        return self.traj.states[n]

    def bar_star(self, t, n=None):
        n = self.interval(t) if n is None else n
        return self.traj.states[n - 1].F

    def hat_q(self, t, n=None):
        v, F, Z, w = self.hat(t, n)
        return self.disc.U.values_at_quad(v), self.disc.H.xi_at_quad(F, Z, w)

    def bar_q(self, t, n=None):
        s = self.bar(t, n)
        return self.disc.U.values_at_quad(s.v), self.disc.xi_at_quad(s)

    def bar_star_q(self, t, n=None):
        return self.disc.H.F_at_quad(self.bar_star(t, n))


# -- reference solutions -----------------------------------------------------


class ReferenceSolution:
    """Classical solution of the enlarged system, ``xi = Phi(F)``.

    Subclasses implement ``velocity``, ``deformation_gradient``,
    ``grad_velocity`` and ``grad_xi`` on arrays of points (..., 3).
    """

    classical = True

    def velocity(self, x, t):
        raise NotImplementedError

    def deformation_gradient(self, x, t):
        raise NotImplementedError

    def grad_velocity(self, x, t):
        """``d_alpha v_i`` indexed [..., i, alpha]."""
        raise NotImplementedError

    def grad_xi(self, x, t):
        """``d_alpha xi_B`` indexed [..., B, alpha]."""
        raise NotImplementedError

    def xi(self, x, t):
        return phi(self.deformation_gradient(x, t))

    def sample(self, disc, t):
        x = disc.U.points
        return self.velocity(x, t), self.xi(x, t)

    def bound_M(self, model, disc, times):
        """``sup (sum |d_alpha v_i| + sum |d_alpha G_{,A}(xi)|)`` over quad points and ``times``."""
        x = disc.U.points
        m = 0.0
        for t in times:
            dG = np.einsum("...AB,...Ba->...Aa", model.hess(self.xi(x, t)), self.grad_xi(x, t))
            val = np.abs(self.grad_velocity(x, t)).sum(axis=(-1, -2)) + np.abs(dG).sum(axis=(-1, -2))
            m = max(m, float(val.max()))
        return m


class EquilibriumReference(ReferenceSolution):
    """``v = 0``, ``F = F*`` constant."""

    def __init__(self, F=None):
        self.F = np.eye(3) if F is None else np.asarray(F, dtype=float)

    def velocity(self, x, t):
        return np.zeros(np.shape(x))

    def deformation_gradient(self, x, t):
        return np.broadcast_to(self.F, np.shape(x)[:-1] + (3, 3)).copy()

    def grad_velocity(self, x, t):
        return np.zeros(np.shape(x)[:-1] + (3, 3))

    def grad_xi(self, x, t):
        return np.zeros(np.shape(x)[:-1] + (19, 3))


class TranslationReference(EquilibriumReference):
    """``v = c`` constant, ``F = F*`` constant (rigid translation)."""

    def __init__(self, c, F=None):
        super().__init__(F)
        self.c = np.asarray(c, dtype=float)

    def velocity(self, x, t):
        return np.broadcast_to(self.c, np.shape(x)).copy()


class SurrogateReference:
    """Hat interpolant of a fine-step run on the same discretization.

    Used only for relative-entropy rate studies; not a classical solution.
    """

    classical = False

    def __init__(self, traj):
        self.interp = Interpolants(traj)

    def sample(self, disc, t):
        return self.interp.hat_q(t)


# -- densities and integrals -------------------------------------------------


def eta_density(model, v_q, xi_q):
    return 0.5 * np.sum(v_q * v_q, axis=-1) + model.eval(xi_q)


def eta_r_density(model, v_hat, xi_hat, v_ref, xi_ref):
    """Bregman divergence of ``eta`` at the reference, pointwise."""
    dv = v_hat - v_ref
    dxi = xi_hat - xi_ref
    bregman_G = model.eval(xi_hat) - model.eval(xi_ref) - np.sum(model.grad(xi_ref) * dxi, axis=-1)
    return 0.5 * np.sum(dv * dv, axis=-1) + bregman_G


def entropy(disc, model, state):
    """``int 1/2 |v|^2 + G(xi) dx``."""
    v_q = disc.U.values_at_quad(state.v)
    return float(np.sum(disc.U.wdet * eta_density(model, v_q, disc.xi_at_quad(state))))


def _as_samples(disc, approx, t):
    if isinstance(approx, Interpolants):
        return approx.hat_q(t)
    return approx


def relative_entropy(disc, model, approx, ref, t):
    """``int eta(hat Theta) - eta(Theta) - D eta(Theta)(hat Theta - Theta) dx`` at time ``t``.

    ``approx`` is an :class:`Interpolants` or a pair ``(v_q, xi_q)`` of
    quadrature samples; ``ref`` is anything with ``sample(disc, t)``.
    """
    v_hat, xi_hat = _as_samples(disc, approx, t)
    v_ref, xi_ref = ref.sample(disc, t)
    return float(np.sum(disc.U.wdet * eta_r_density(model, v_hat, xi_hat, v_ref, xi_ref)))


def q_density(model, v_hat, xi_hat, v_ref, xi_ref, grad_v, dGA):
    """The quadratic term, pointwise.  ``dGA`` is ``d_alpha G_{,A}(xi)`` [..., A, alpha]."""
    jh = phi_jacobian(xi_hat[..., 0:9].reshape(xi_hat.shape[:-1] + (3, 3)))
    jr = phi_jacobian(xi_ref[..., 0:9].reshape(xi_ref.shape[:-1] + (3, 3)))
    gh, gr = model.grad(xi_hat), model.grad(xi_ref)
    lin = np.einsum("...AB,...B->...A", model.hess(xi_ref), xi_hat - xi_ref)
    dj = jh - jr
    return (
        np.einsum("...Aa,...Aia,...i->...", dGA, dj, v_hat - v_ref)
        + np.einsum("...ia,...A,...Aia->...", grad_v, gh - gr, dj)
        + np.einsum("...ia,...A,...Aia->...", grad_v, gh - gr - lin, jr)
    )


@dataclass
class EntropyReport:
    t: float
    eta: float
    eta_r: float
    Q: float
    D: float
    E: float
    Ebar: float
    lhs: float = float("nan")
    rhs: float = float("nan")
    identity_residual: float = float("nan")

    def row(self):
        return asdict(self)


def _ref_fields(disc, model, ref, t):
    x = disc.U.points
    v_ref = ref.velocity(x, t)
    xi_ref = ref.xi(x, t)
    grad_v = ref.grad_velocity(x, t)
    dGA = np.einsum("...AB,...Ba->...Aa", model.hess(xi_ref), ref.grad_xi(x, t))
    return v_ref, xi_ref, grad_v, dGA


def identity_terms(disc, model, interp, ref, t, n=None, delta=None):
    """Assemble every term of the integrated relative entropy identity at ``t``.

    ``t`` must lie in the interior of a step interval unless ``n`` picks the
    interval.  The left side is a fourth-order centered difference of
    ``int eta_r`` with step ``delta`` (default ``tau / 100``) inside the same
    interval.
    """
    n = interp.interval(t, strict=True) if n is None else n
    tau = interp.tau
    delta = tau / 100.0 if delta is None else delta
    t0, t1 = (n - 1) * tau, n * tau
    if not (t0 <= t - 2 * delta and t + 2 * delta <= t1):
        raise ValueError("difference stencil leaves the step interval")
    U = disc.U
    wq = U.wdet

    v_hat, xi_hat = interp.hat_q(t, n)
    v_bar, xi_bar = interp.bar_q(t, n)
    Fstar = interp.bar_star_q(t, n)
    prev, cur = interp.traj.states[n - 1], interp.traj.states[n]
    dv = U.values_at_quad(cur.v - prev.v)
    dxi = disc.xi_at_quad(cur) - disc.xi_at_quad(prev)

    v_ref, xi_ref, grad_v, dGA = _ref_fields(disc, model, ref, t)
    Fhat = xi_hat[..., 0:9].reshape(xi_hat.shape[:-1] + (3, 3))
    Fref = xi_ref[..., 0:9].reshape(xi_ref.shape[:-1] + (3, 3))
    jh, jr, js = phi_jacobian(Fhat), phi_jacobian(Fref), phi_jacobian(Fstar)
    gh, gr, gb = model.grad(xi_hat), model.grad(xi_ref), model.grad(xi_bar)

    Q = q_density(model, v_hat, xi_hat, v_ref, xi_ref, grad_v, dGA)
    D = np.sum((v_bar - v_hat) * dv, axis=-1) + np.sum((gb - gh) * dxi, axis=-1)

    dvb = v_bar - v_hat
    E = np.einsum(
        "...Aa,...Aia->...",
        dGA,
        jr * dvb[..., None, :, None]
        + (jh - jr) * dvb[..., None, :, None]
        + (js - jh) * dvb[..., None, :, None]
        + (js - jh) * (v_hat - v_ref)[..., None, :, None],
    )
    dgb = (gb - gh)[..., :, None, None]
    E = E + np.einsum(
        "...ia,...Aia->...",
        grad_v,
        dgb * jr + dgb * (js - jh) + dgb * (jh - jr) + (gh - gr)[..., :, None, None] * (js - jh),
    )

    Pv = U.project(ref.velocity(U.points, t))
    Ebar = np.einsum("...A,...Aia,...ia->...", gb, js, U.grad_at_quad(Pv) - grad_v)

    integ = lambda f: float(np.sum(wq * f))  # noqa: E731
    Qi, Di, Ei, Ebi = integ(Q), integ(D), integ(E), integ(Ebar)
    rhs = -Di / tau + Qi + Ei + Ebi

    def eta_r_at(s):
        vh, xh = interp.hat_q(s, n)
        vr, xr = ref.sample(disc, s)
        return float(np.sum(wq * eta_r_density(model, vh, xh, vr, xr)))

    lhs = (
        eta_r_at(t - 2 * delta) - 8 * eta_r_at(t - delta) + 8 * eta_r_at(t + delta) - eta_r_at(t + 2 * delta)
    ) / (12.0 * delta)
    eta = float(np.sum(wq * eta_density(model, v_hat, xi_hat)))
    return EntropyReport(
        t=t,
        eta=eta,
        eta_r=integ(eta_r_density(model, v_hat, xi_hat, v_ref, xi_ref)),
        Q=Qi,
        D=Di,
        E=Ei,
        Ebar=Ebi,
        lhs=lhs,
        rhs=rhs,
        identity_residual=abs(lhs - rhs),
    )


def verify_identity(disc, model, interp, ref, t_grid):
    """Reports (with ``|LHS - RHS|``) at each sample time."""
    return [identity_terms(disc, model, interp, ref, t) for t in t_grid]


def midpoint_times(interp, count=None):
    """Interval midpoints, optionally thinned to ``count`` evenly spread samples."""
    mids = (np.arange(1, interp.N + 1) - 0.5) * interp.tau
    if count is not None and count < len(mids):
        idx = np.unique(np.linspace(0, len(mids) - 1, count).round().astype(int))
        mids = mids[idx]
    return mids


@dataclass
class GrowthReport:
    times: np.ndarray
    eta_r: np.ndarray
    accumulated_error: np.ndarray
    sup_eta_r: float
    growth_constant: float  # nan when ratios are undefined
    absolute: bool  # True when int eta_r(0) == 0, values reported as-is


def gronwall_monitor(disc, model, interp, ref):
    """Track ``int eta_r`` at grid times against ``e^{Ct} int eta_r(0) + acc(t)``.

    ``acc`` accumulates ``|int E| + |int Ebar|`` by the midpoint rule; it is
    only available for classical references (others contribute zero).
    """
    N, tau = interp.N, interp.tau
    times = np.arange(N + 1) * tau
    eta_r = np.array([relative_entropy(disc, model, interp, ref, t) for t in times])
    acc = np.zeros(N + 1)
    if getattr(ref, "classical", False):
        for n in range(1, N + 1):
            rep = identity_terms(disc, model, interp, ref, (n - 0.5) * tau, n=n)
            acc[n] = acc[n - 1] + tau * (abs(rep.E) + abs(rep.Ebar))
    sup = float(eta_r.max())
    eta0 = eta_r[0]
    if eta0 > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.log(np.maximum(eta_r[1:] - acc[1:], eta0) / eta0) / times[1:]
        C = float(np.max(ratios)) if len(ratios) else 0.0
        return GrowthReport(times, eta_r, acc, sup, C, False)
    return GrowthReport(times, eta_r, acc, sup, float("nan"), True)


def q_eta_ratio(model, M, sample_count=1000, radius=1.0, seed=0):
    """Max of ``|Q| / eta_r`` over random approximate states near a random reference.

    Reference derivatives are scaled so that the sum of their absolute
    values equals ``M``.  Diagnostic only.
    """
    rng = np.random.default_rng(seed)
    F = np.eye(3) + 0.1 * rng.standard_normal((sample_count, 3, 3))
    xi_ref = phi(F)
    v_ref = rng.standard_normal((sample_count, 3))
    grad_v = rng.standard_normal((sample_count, 3, 3))
    dGA = rng.standard_normal((sample_count, 19, 3))
    total = np.abs(grad_v).sum(axis=(1, 2)) + np.abs(dGA).sum(axis=(1, 2))
    grad_v *= (M / total)[:, None, None]
    dGA *= (M / total)[:, None, None]
    v_hat = v_ref + radius * rng.standard_normal((sample_count, 3))
    xi_hat = xi_ref + radius * rng.standard_normal((sample_count, 19))
    q = q_density(model, v_hat, xi_hat, v_ref, xi_ref, grad_v, dGA)
    er = eta_r_density(model, v_hat, xi_hat, v_ref, xi_ref)
    return float(np.max(np.abs(q) / er))
