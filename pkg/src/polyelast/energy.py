"""Polyconvex stored energies ``G(xi) = H(F) + R(xi)`` on the 19-dim minor space.

The default family is ``H(F) = kappa |F|^p`` and ``R(xi) = gamma/2 |xi|^2``.
Evaluators broadcast over leading axes of ``xi``.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import F_SLICE, NXI, contract_stress, phi_jacobian


class EnergyParameterError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyParams:
    """Coefficients of the default family and the bound constants it satisfies.

    ``kappa``/``gamma``/``p`` define the energy.  The remaining fields are the
    constants of the convexity, growth and third-derivative bounds; they are
    filled from the closed form of the family when left as ``None``.
    """

    kappa: float = 1.0
    gamma: float = 1.0
    p: float = 7.0
    hess_h_lower: float = None  # kappa in the Hessian bound of H
    hess_h_upper: float = None  # kappa'
    hess_r_lower: float = None  # gamma
    hess_r_upper: float = None  # gamma'
    c: tuple = field(default=None)  # c1..c8

    def __post_init__(self):
        k, g, p = float(self.kappa), float(self.gamma), float(self.p)
        defaults = dict(
            hess_h_lower=k * p,
            hess_h_upper=k * p * (p - 1.0),
            hess_r_lower=g,
            hess_r_upper=g,
        )
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if self.c is None:
            object.__setattr__(self, "c", closed_form_constants(k, g, p))

    def validate(self):
        if not self.p > 6:
            raise EnergyParameterError(f"p must exceed 6 (got p={self.p})")
        if not (self.kappa > 0 and self.gamma > 0):
            raise EnergyParameterError("kappa and gamma must be positive")
        if not self.hess_h_lower <= self.hess_h_upper:
            raise EnergyParameterError("H Hessian bounds must satisfy lower <= upper")
        if not self.hess_r_lower <= self.hess_r_upper:
            raise EnergyParameterError("R Hessian bounds must satisfy lower <= upper")
        if len(self.c) != 8 or min(self.c) <= 0:
            raise EnergyParameterError("constants c1..c8 must be eight positive numbers")
        return self


def closed_form_constants(kappa, gamma, p):
    """Constants ``c1..c8`` valid for ``kappa |F|^p + gamma/2 |xi|^2``.

    c1..c4  lower growth bound (c4 only needs to be >= 0; a tiny positive
            value keeps all constants positive)
    c5      upper growth bound
    c6      gradient growth bound, from (a+b)^r <= 2^(r-1)(a^r+b^r) and
            |x|^s <= |x|^2 + 1 for s <= 2
    c7, c8  third-derivative bounds of H and R
    """
    r = p / (p - 1.0)
    g = abs(gamma)  # keeps tampered (non-convex) parameter sets real-valued
    c6 = 2.0 ** (r - 1.0) * (abs(kappa * p) ** r + g**r)
    c6 += g ** (p / (p - 2.0)) + g ** (p / (p - 3.0))
    return (
        kappa,
        gamma / 2.0,
        gamma / 2.0,
        1e-12,
        kappa + gamma / 2.0,
        c6,
        kappa * p * (p - 1.0) * (p - 2.0),
        gamma,
    )


class EnergyModel:
    """Base class: subclasses provide the ``H`` and ``R`` parts."""

    family = "abstract"

    def __init__(self, params, validate=True):
        self.params = params.validate() if validate else params

    # -- parts ------------------------------------------------------------
    def eval_H(self, F):
        raise NotImplementedError

    def grad_H(self, F):
        raise NotImplementedError

    def hess_H(self, F):
        raise NotImplementedError

    def eval_R(self, xi):
        raise NotImplementedError

    def grad_R(self, xi):
        raise NotImplementedError

    def hess_R(self, xi):
        raise NotImplementedError

    # -- full energy --------------------------------------------------------
    def eval(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.eval_H(xi[..., F_SLICE]) + self.eval_R(xi)

    def grad(self, xi):
        xi = np.asarray(xi, dtype=float)
        g = self.grad_R(xi)
        g[..., F_SLICE] += self.grad_H(xi[..., F_SLICE])
        return g

    def hess(self, xi):
        xi = np.asarray(xi, dtype=float)
        h = self.hess_R(xi)
        h[..., F_SLICE, F_SLICE] += self.hess_H(xi[..., F_SLICE])
        return h

    def __repr__(self):
        p = self.params
        return f"{type(self).__name__}(kappa={p.kappa}, gamma={p.gamma}, p={p.p})"


class PowerLawEnergy(EnergyModel):
    """``G(xi) = kappa |F|^p + gamma/2 |xi|^2`` (Frobenius norms).

    ``H`` is written in terms of the 9-vector ``F`` so that the Hessian is
    ``kappa p |F|^(p-2) (I + (p-2) F F^T / |F|^2)``; both terms vanish at
    ``F = 0`` for ``p > 4``.
    """

    family = "power_law"

    def eval_H(self, F):
        s = np.sum(F * F, axis=-1)
        return self.params.kappa * s ** (self.params.p / 2.0)

    def grad_H(self, F):
        k, p = self.params.kappa, self.params.p
        s = np.sum(F * F, axis=-1)
        return (k * p * s ** ((p - 2.0) / 2.0))[..., None] * F

    def hess_H(self, F):
        k, p = self.params.kappa, self.params.p
        s = np.sum(F * F, axis=-1)[..., None, None]
        outer = F[..., :, None] * F[..., None, :]
        return k * p * (s ** ((p - 2.0) / 2.0) * np.eye(9) + (p - 2.0) * s ** ((p - 4.0) / 2.0) * outer)

    def eval_R(self, xi):
        return 0.5 * self.params.gamma * np.sum(xi * xi, axis=-1)

    def grad_R(self, xi):
        return self.params.gamma * np.array(xi, dtype=float)

    def hess_R(self, xi):
        shape = np.shape(xi)[:-1] + (NXI, NXI)
        return np.broadcast_to(self.params.gamma * np.eye(NXI), shape).copy()


def default_model(kappa=1.0, gamma=1.0, p=7.0):
    return PowerLawEnergy(EnergyParams(kappa=kappa, gamma=gamma, p=p))


def eval_G(model, xi):
    return model.eval(xi)


def grad_G(model, xi):
    return model.grad(xi)


def hess_G(model, xi):
    return model.hess(xi)


def stress_g(model, xi, F_tilde):
    """``g_{i alpha}(xi, F~) = G_{,A}(xi) Phi^A_{,i alpha}(F~)``."""
    return contract_stress(model.grad(xi), phi_jacobian(F_tilde))


# -- hypothesis checker ------------------------------------------------------


@dataclass
class HypothesisResult:
    name: str
    passed: bool
    worst_margin: float  # min over samples of (bound - value) / scale; < 0 means violated
    witness: np.ndarray = None
    detail: str = ""


@dataclass
class HypothesisReport:
    results: list
    sample_count: int

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def violations(self):
        return [r for r in self.results if not r.passed]

    def lines(self):
        out = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            out.append(f"{status} {r.name}: worst margin {r.worst_margin:.3e} {r.detail}".rstrip())
        return out


def _samples(rng, sample_count, radius):
    # uniform in the 19-ball
    d = rng.standard_normal((sample_count, NXI))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    uniform = d * radius * rng.random(sample_count)[:, None] ** (1.0 / NXI)
    # heavy tail: Cauchy radii, capped to keep |F|^p finite in double precision
    n_tail = max(1, sample_count // 10)
    d = rng.standard_normal((n_tail, NXI))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radii = np.minimum(np.abs(rng.standard_cauchy(n_tail)) * radius, 100.0 * radius)
    return np.concatenate([uniform, d * radii[:, None]])


def _worst(name, margin, samples, detail="", tol=1e-9):
    i = int(np.argmin(margin))
    ok = bool(margin[i] >= -tol)
    return HypothesisResult(name, ok, float(margin[i]), None if ok else samples[i].copy(), detail)


def check_hypotheses(model, sample_count=1000, radius=10.0, seed=0):
    """Sample ``xi`` and test the convexity/growth/derivative bounds of ``model``.

    Violations are reported with a witnessing sample, never raised.  Margins
    are relative: ``(bound - value) / max(|bound|, 1)``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    prm = model.params
    c1, c2, c3, c4, c5, c6, c7, c8 = prm.c
    p = prm.p
    rng = np.random.default_rng(seed)
    xi = _samples(rng, sample_count, radius)
    F, Z, w = xi[:, :9], xi[:, 9:18], xi[:, 18]
    nF2 = np.sum(F * F, axis=1)
    nF = np.sqrt(nF2)
    nZ2 = np.sum(Z * Z, axis=1)
    results = []

    # H1: two-sided Hessian bounds for H, uniform convexity of R
    eig_h = np.linalg.eigvalsh(model.hess_H(F))
    scale_h = nF ** (p - 2.0)
    lo = eig_h[:, 0] - prm.hess_h_lower * scale_h
    hi = prm.hess_h_upper * scale_h - eig_h[:, -1]
    denom = np.maximum(prm.hess_h_upper * scale_h, 1.0)
    eig_r = np.linalg.eigvalsh(model.hess_R(xi))
    r_floor = max(prm.hess_r_lower, 0.0)
    r_lo = (eig_r[:, 0] - r_floor) / max(abs(r_floor), 1.0)
    r_hi = (prm.hess_r_upper - eig_r[:, -1]) / max(abs(prm.hess_r_upper), 1.0)
    margin = np.minimum.reduce([lo / denom, hi / denom, r_lo, r_hi])
    h1 = _worst("H1", margin, xi)
    if prm.hess_r_lower <= 0 or prm.hess_h_lower <= 0:
        h1.passed = False
        h1.detail = "convexity constants must be positive"
        if h1.witness is None:
            h1.witness = xi[int(np.argmin(margin))].copy()
    elif not h1.passed:
        h1.detail = "Hessian outside declared bounds (R not uniformly convex)" if r_lo.min() < 0 else "Hessian outside declared bounds"
    if not (p > 6):
        h1.passed = False
        h1.detail = (h1.detail + f" p={p} not in (6, inf)").strip()
    results.append(h1)

    G = model.eval(xi)
    # H2
    lower = c1 * nF**p + c2 * nZ2 + c3 * w**2 - c4
    results.append(_worst("H2", (G - lower) / np.maximum(np.abs(G), 1.0), xi))
    # H3
    upper = c5 * (nF**p + nZ2 + w**2 + 1.0)
    results.append(_worst("H3", (upper - G) / np.maximum(upper, 1.0), xi))
    # H4
    dG = model.grad(xi)
    lhs = (
        np.linalg.norm(dG[:, :9], axis=1) ** (p / (p - 1.0))
        + np.linalg.norm(dG[:, 9:18], axis=1) ** (p / (p - 2.0))
        + np.abs(dG[:, 18]) ** (p / (p - 3.0))
    )
    rhs = c6 * (nF**p + nZ2 + w**2 + 1.0)
    results.append(_worst("H4", (rhs - lhs) / np.maximum(rhs, 1.0), xi))

    # H5: third derivatives by central differences of the Hessians
    results.append(_check_third(model, xi, nF, c7, c8, p))
    # G >= 0 on the whole space
    results.append(_worst("nonnegative", G / np.maximum(np.abs(G), 1.0), xi))
    return HypothesisReport(results, len(xi))


def _check_third(model, xi, nF, c7, c8, p):
    F = xi[:, :9]
    keep = nF > 1e-6
    margin = np.full(len(xi), np.inf)
    h = 1e-4 * nF[keep]
    worst_h = np.zeros(keep.sum())
    worst_r = np.zeros(len(xi))
    for m in range(9):
        e = np.zeros(9)
        e[m] = 1.0
        Fp = F[keep] + h[:, None] * e
        Fm = F[keep] - h[:, None] * e
        t = (model.hess_H(Fp) - model.hess_H(Fm)) / (2.0 * h[:, None, None])
        worst_h = np.maximum(worst_h, np.abs(t).max(axis=(1, 2)))
    for m in range(NXI):
        e = np.zeros(NXI)
        e[m] = 1e-4
        t = (model.hess_R(xi + e) - model.hess_R(xi - e)) / 2e-4
        worst_r = np.maximum(worst_r, np.abs(t).max(axis=(1, 2)))
    bound_h = c7 * nF[keep] ** (p - 3.0)
    # finite-difference error is O(h^2) relative, allow 1e-6
    margin[keep] = (bound_h * (1 + 1e-6) - worst_h) / np.maximum(bound_h, 1.0)
    margin = np.minimum(margin, (c8 + 1e-6 - worst_r) / max(c8, 1.0))
    return _worst("H5", margin, xi, tol=0.0)
