"""Acceptance criteria, each at its stated tolerance.

Every test records exactly one PASS/FAIL line, printed in the pytest
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

from polyelast.energy import EnergyParams, PowerLawEnergy, check_hypotheses, grad_G, hess_G
from polyelast.entropy import EquilibriumReference, Interpolants, TranslationReference, midpoint_times, verify_identity
from polyelast.runner import parse_config, refinement_study
from polyelast.stepper import gradient_conservation_defect, projection_pairings, run
from polyelast.runner import initial_state
from polyelast.tensor import dphi_apply, null_lagrangian_residual, phi

T_STUDY = 0.04


@pytest.fixture(scope="module")
def timed_run(disc2, model, perturbed_cfg):
    s0 = initial_state(perturbed_cfg, disc2)
    start = time.perf_counter()
    traj = run(disc2, model, s0, 1e-3, 0.1)
    return traj, time.perf_counter() - start


def test_ac1_gradient_conservation(timed_run, disc2, report):
    traj, wall = timed_run
    defects = [gradient_conservation_defect(disc2, a, b, traj.tau) for a, b in zip(traj.states, traj.states[1:])]
    worst = max(defects)
    ok = traj.n_steps == 100 and worst <= 1e-12 and wall <= 60.0
    report("AC1 gradient conservation", ok, f"max |F^n - F^(n-1) - tau grad v^n| = {worst:.3e} over 100 steps (<= 1e-12), run {wall:.1f}s (<= 60s)")
    assert ok


def test_ac2_energy_stability(timed_run, report):
    traj, _ = timed_run
    total = traj.energies().sum(axis=1)
    E0 = total[0]
    excess = max(c.excess for c in traj.certificates)
    rises = float(np.max(np.diff(total)))
    ok = excess <= 1e-10 * E0 and rises <= 0.0
    report(
        "AC2 a-priori stability",
        ok,
        f"max per-step excess {excess:.3e} (<= 1e-10 E0 = {1e-10 * E0:.3e}), max energy increase {rises:.3e} (<= 0)",
    )
    assert ok


def test_ac3_iterate_bound(timed_run, model, report):
    traj, _ = timed_run
    total = traj.energies().sum(axis=1)
    bound = 2.0 * (total[0] - total[-1]) / min(1.0, model.params.gamma)
    s = traj.increment_sum
    ok = s <= bound and bound <= 2.0 * total[0] / min(1.0, model.params.gamma)
    report("AC3 iterate bound", ok, f"sum ||Theta^n - Theta^(n-1)||^2 = {s:.6f} <= 2 (E0 - EN) / min(1, gamma) = {bound:.6f}")
    assert ok


def test_ac4_relative_entropy_identity(disc2, model, timed_run, report):
    traj, _ = timed_run
    interp = Interpolants(traj)
    times = midpoint_times(interp, 10)
    start = time.perf_counter()
    worst, all_ok, d_min = 0.0, True, np.inf
    for ref in (EquilibriumReference(), TranslationReference([0.05, 0.025, 0.0125])):
        reps = verify_identity(disc2, model, interp, ref, times)
        for r in reps:
            rel = r.identity_residual / max(1.0, abs(r.rhs))
            worst = max(worst, rel)
            d_min = min(d_min, r.D)
            all_ok &= rel <= 1e-8 and r.D >= 0
    wall = time.perf_counter() - start
    ok = bool(all_ok and len(times) == 10 and wall <= 120.0)
    report(
        "AC4 relative entropy identity",
        ok,
        f"max |LHS - RHS| / max(1, |RHS|) = {worst:.3e} (<= 1e-8), min D = {d_min:.3e} (>= 0), 2 refs x 10 times in {wall:.1f}s",
    )
    assert ok


def test_ac5_null_lagrangian(disc2, report):
    U = disc2.U
    rng = np.random.default_rng(5)
    worst_plain = worst_z = 0.0
    for _ in range(20):
        u = 0.2 * rng.standard_normal((U.n_nodes, 3))
        A = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
        phi_h = rng.standard_normal((U.n_nodes, 3))
        z = rng.standard_normal(U.n_nodes)
        worst_plain = max(worst_plain, null_lagrangian_residual(U, u, phi_h, affine=A))
        worst_z = max(worst_z, null_lagrangian_residual(U, u, phi_h, z=z, affine=A))
    ok = worst_plain <= 1e-12 and worst_z <= 1e-12
    report("AC5 null-Lagrangian identities", ok, f"20 random discrete gradients: max residual {worst_plain:.3e} without z, {worst_z:.3e} with z (<= 1e-12)")
    assert ok


def test_ac6_time_refinement_rate(report):
    base = parse_config(f"mesh.n = 2\ntime.dt = {T_STUDY / 40!r}\ntime.t_final = {T_STUDY!r}\ninitial.preset = perturbed\n")
    taus = [T_STUDY / 40, T_STUDY / 80, T_STUDY / 160]
    start = time.perf_counter()
    rep = refinement_study(base, taus, refine=16)
    wall = time.perf_counter() - start
    ok = 0.7 <= rep.slope <= 1.3 and wall <= 600.0
    report(
        "AC6 O(tau) refinement",
        ok,
        f"slope of sup int eta_r vs tau = {rep.slope:.3f} (target [0.7, 1.3]); "
        f"pairwise ratios {', '.join(f'{r:.2f}' for r in rep.ratios)}; "
        f"slope of sqrt(sup int eta_r) = {rep.sqrt_slope:.3f}; {wall:.0f}s",
    )
    assert ok


def test_ac7_derivative_oracles(report):
    rng = np.random.default_rng(7)
    model = PowerLawEnergy(EnergyParams())
    h = 1e-5
    start = time.perf_counter()
    e_phi = e_grad = e_hess = 0.0
    I19 = np.eye(19)
    for _ in range(100):
        F, A = rng.standard_normal((2, 3, 3))
        fd = (phi(F + h * A) - phi(F - h * A)) / (2 * h)
        d = dphi_apply(F, A)
        e_phi = max(e_phi, np.linalg.norm(fd - d) / np.linalg.norm(d))

        xi = rng.standard_normal(19)
        fd = (model.eval(xi + h * I19) - model.eval(xi - h * I19)) / (2 * h)
        g = grad_G(model, xi)
        e_grad = max(e_grad, np.linalg.norm(fd - g) / np.linalg.norm(g))
        fd = (grad_G(model, xi + h * I19) - grad_G(model, xi - h * I19)).T / (2 * h)
        H = hess_G(model, xi)
        e_hess = max(e_hess, np.linalg.norm(fd - H) / np.linalg.norm(H))
    wall = time.perf_counter() - start
    ok = max(e_phi, e_grad, e_hess) <= 1e-6 and wall <= 10.0
    report("AC7 derivative oracles", ok, f"rel. errors dphi {e_phi:.2e}, grad_G {e_grad:.2e}, hess_G {e_hess:.2e} (<= 1e-6), {wall:.2f}s")
    assert ok


def test_ac8_hypothesis_suite(report):
    good = check_hypotheses(PowerLawEnergy(EnergyParams(kappa=1.0, gamma=1.0, p=7.0)), sample_count=1000)
    bad = check_hypotheses(PowerLawEnergy(EnergyParams(gamma=-1.0), validate=False), sample_count=1000)
    detected = not bad["H1"].passed and bad["H1"].witness is not None
    ok = good.passed and detected
    worst = min(r.worst_margin for r in good.results)
    report("AC8 hypothesis suite", ok, f"default family all pass (worst margin {worst:.2e}); non-convex counterexample detected: {detected}")
    assert ok


def test_ac9_projection_equivalences(timed_run, disc2, model, report):
    traj, _ = timed_run
    worst1 = worst2 = 0.0
    for a, b in zip(traj.states, traj.states[1:]):
        (x, px), (y, py) = projection_pairings(disc2, model, a, b, traj.tau)
        worst1 = max(worst1, abs(x - px) / max(1.0, abs(x)))
        worst2 = max(worst2, abs(y - py) / max(1.0, abs(y)))
    ok = worst1 <= 1e-12 and worst2 <= 1e-12
    report("AC9 projection equivalences", ok, f"increment pairing defect {worst1:.2e}, DPhi pairing defect {worst2:.2e} (<= 1e-12)")
    assert ok
