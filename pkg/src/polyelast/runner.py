"""Run configuration, single experiments and refinement studies.

Configs are plain sectioned text::

    [mesh]
    n = 2
    [time]
    dt = 1e-3
    t_final = 1e-2

Dotted keys at the top of the file (``mesh.n = 2``) are accepted as well.
All numbers in the written files use the shortest round-trip ``repr``, so
outputs are byte-stable for a fixed config.
"""

import configparser
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .energy import EnergyParameterError, EnergyParams, PowerLawEnergy, check_hypotheses
from .entropy import (
    EquilibriumReference,
    Interpolants,
    SurrogateReference,
    TranslationReference,
    identity_terms,
    midpoint_times,
    relative_entropy,
)
from .fe import Discretization, constant_state, init_from_deformation
from .mesh import MAX_QUAD_ORDER, build_uniform
from .stepper import RunAborted, StepConfig, gradient_conservation_defect, run

log = logging.getLogger(__name__)

SCHEME_VERSION = "1"
PRESETS = ("equilibrium", "translation", "perturbed")
REFERENCES = ("none", "equilibrium", "translation")
TRANSLATION_DIRECTION = (1.0, 0.5, 0.25)
ROOT = "__root__"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mesh_n: int
    time_dt: float
    time_t_final: float
    fem_degree: int = 1
    fem_quad_order: int = None
    energy_kappa: float = 1.0
    energy_gamma: float = 1.0
    energy_p: float = 7.0
    solver_newton_tol: float = 1e-10
    solver_max_newton: int = 50
    initial_preset: str = "perturbed"
    initial_amplitude: float = 0.05
    initial_seed: int = 0
    monitor_reference: str = "none"
    monitor_samples: int = 0  # 0 means one sample per step
    output_dir: str = "out"

    @property
    def dt(self):
        return self.time_dt

    @property
    def t_final(self):
        return self.time_t_final

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def echo(self):
        """Config as a nested dict keyed like the file."""
        out = {}
        for name, value in asdict(self).items():
            section, key = name.split("_", 1)
            out.setdefault(section, {})[key] = value
        return out

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return RunConfig(**d)


# key -> (field, converter, required)
_KEYS = {
    "mesh.n": ("mesh_n", int, True),
    "fem.degree": ("fem_degree", int, False),
    "fem.quad_order": ("fem_quad_order", int, False),
    "time.dt": ("time_dt", float, True),
    "time.t_final": ("time_t_final", float, True),
    "energy.kappa": ("energy_kappa", float, False),
    "energy.gamma": ("energy_gamma", float, False),
    "energy.p": ("energy_p", float, False),
    "solver.newton_tol": ("solver_newton_tol", float, False),
    "solver.max_newton": ("solver_max_newton", int, False),
    "initial.preset": ("initial_preset", str, False),
    "initial.amplitude": ("initial_amplitude", float, False),
    "initial.seed": ("initial_seed", int, False),
    "monitor.reference": ("monitor_reference", str, False),
    "monitor.samples": ("monitor_samples", int, False),
    "output.dir": ("output_dir", str, False),
}


def _convert(key, conv, raw):
    raw = raw.strip()
    try:
        if conv is int:
            return int(raw)
        if conv is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {conv.__name__}") from None


def _check_ranges(cfg):
    def bad(key, msg):
        raise ConfigError(f"{key}: {msg}")

    if cfg.mesh_n < 2:
        bad("mesh.n", "must be >= 2")
    if cfg.fem_degree < 1:
        bad("fem.degree", "must be >= 1")
    if cfg.fem_quad_order is not None and not 1 <= cfg.fem_quad_order <= MAX_QUAD_ORDER:
        bad("fem.quad_order", f"must lie in 1..{MAX_QUAD_ORDER}")
    if not cfg.dt > 0:
        bad("time.dt", "must be positive")
    if not cfg.t_final > 0:
        bad("time.t_final", "must be positive")
    n = cfg.n_steps
    if n < 1 or abs(n * cfg.dt - cfg.t_final) > 1e-9 * cfg.t_final:
        bad("time.dt", f"must divide time.t_final={cfg.t_final!r}")
    if not cfg.energy_p > 6:
        bad("energy.p", f"p must exceed 6 (got {cfg.energy_p!r})")
    if not cfg.energy_kappa > 0:
        bad("energy.kappa", "must be positive")
    if not cfg.energy_gamma > 0:
        bad("energy.gamma", "must be positive")
    if not cfg.solver_newton_tol > 0:
        bad("solver.newton_tol", "must be positive")
    if cfg.solver_max_newton < 1:
        bad("solver.max_newton", "must be >= 1")
    if cfg.initial_preset not in PRESETS:
        bad("initial.preset", f"must be one of {', '.join(PRESETS)}")
    if cfg.initial_amplitude < 0:
        bad("initial.amplitude", "must be >= 0")
    if cfg.monitor_reference not in REFERENCES:
        bad("monitor.reference", f"must be one of {', '.join(REFERENCES)}")
    if cfg.monitor_samples < 0:
        bad("monitor.samples", "must be >= 0")


def parse_config(text):
    """Parse and validate config text; messages name the offending key."""
    parser = configparser.ConfigParser(
        strict=True, interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    try:
        parser.read_string(f"[{ROOT}]\n" + text)
    except configparser.DuplicateOptionError as exc:
        key = exc.option if exc.section == ROOT else f"{exc.section}.{exc.option}"
        raise ConfigError(f"{key}: duplicate key") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"[{exc.section}]: duplicate section") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section, raw=True):
            full = key if section == ROOT else f"{section}.{key}"
            if full not in _KEYS:
                raise ConfigError(f"{full}: unknown key")
            if full in values:
                raise ConfigError(f"{full}: duplicate key")
            values[full] = raw
    kwargs = {}
    for key, (name, conv, required) in _KEYS.items():
        if key in values:
            kwargs[name] = _convert(key, conv, values[key])
        elif required:
            raise ConfigError(f"{key}: required key missing")
    cfg = RunConfig(**kwargs)
    _check_ranges(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# -- building blocks ---------------------------------------------------------


def build_model(cfg):
    try:
        return PowerLawEnergy(EnergyParams(cfg.energy_kappa, cfg.energy_gamma, cfg.energy_p))
    except EnergyParameterError as exc:
        raise ConfigError(f"energy: {exc}") from None


def build_discretization(cfg):
    return Discretization(build_uniform(cfg.mesh_n), cfg.fem_degree, cfg.fem_quad_order)


def translation_velocity(cfg):
    return cfg.initial_amplitude * np.array(TRANSLATION_DIRECTION)


def perturbed_fields(amplitude, seed):
    """Deformation and velocity of the perturbed preset.

    Each sine/cosine carries a phase drawn from ``seed``, so the profiles do
    not vanish identically at the vertices of coarse meshes.
    """
    ph = np.random.default_rng(seed).random((2, 3))
    tp = 2.0 * np.pi
    a = amplitude

    def y(x):
        return x + a * np.stack(
            [
                np.sin(tp * (x[..., 1] + ph[0, 0])),
                np.sin(tp * (x[..., 2] + ph[0, 1])),
                np.sin(tp * (x[..., 0] + ph[0, 2])),
            ],
            axis=-1,
        )

    def v0(x):
        return a * np.stack(
            [
                np.cos(tp * (x[..., 2] + ph[1, 0])),
                np.cos(tp * (x[..., 0] + ph[1, 1])),
                np.cos(tp * (x[..., 1] + ph[1, 2])),
            ],
            axis=-1,
        )

    return y, v0


def initial_state(cfg, disc):
    if cfg.initial_preset == "equilibrium":
        return constant_state(disc, np.zeros(3), np.eye(3))
    if cfg.initial_preset == "translation":
        return constant_state(disc, translation_velocity(cfg), np.eye(3))
    y, v0 = perturbed_fields(cfg.initial_amplitude, cfg.initial_seed)
    return init_from_deformation(disc, y, v0)


def build_reference(cfg):
    if cfg.monitor_reference == "equilibrium":
        return EquilibriumReference()
    if cfg.monitor_reference == "translation":
        return TranslationReference(translation_velocity(cfg))
    return None


def step_config(cfg, dt=None):
    return StepConfig(
        tau=cfg.dt if dt is None else dt,
        newton_tol=cfg.solver_newton_tol,
        max_newton=cfg.solver_max_newton,
    )


def simulate(cfg, disc=None, model=None, dt=None, t_final=None):
    """Build everything from ``cfg`` and run; returns the trajectory."""
    disc = build_discretization(cfg) if disc is None else disc
    model = build_model(cfg) if model is None else model
    dt = cfg.dt if dt is None else dt
    t_final = cfg.t_final if t_final is None else t_final
    return run(disc, model, initial_state(cfg, disc), dt, t_final, cfg=step_config(cfg, dt))


# -- output ------------------------------------------------------------------


def fmt(x):
    """Shortest round-trip decimal, locale independent."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


ENERGY_COLUMNS = ("t", "kinetic", "internal", "total", "step_dissipation")
ENTROPY_COLUMNS = ("t", "eta", "eta_r", "Q", "D", "E", "Ebar", "residual")
RATE_COLUMNS = ("tau", "steps", "sup_eta_r", "sqrt_sup_eta_r")


@dataclass
class RunSummary:
    passed: bool
    steps_completed: int
    steps_requested: int
    failed_step: int
    error: str
    initial_energy: float
    final_kinetic: float
    final_internal: float
    final_total: float
    dissipation_sum: float
    increment_sum: float
    increment_bound: float
    max_excess: float
    max_gradient_defect: float
    min_w: float
    max_identity_residual: float
    wall_time: float
    config: dict
    scheme_version: str = SCHEME_VERSION

    def to_json(self):
        """Deterministic content: wall time is excluded."""
        d = asdict(self)
        d.pop("wall_time")
        return d


def _entropy_rows(disc, model, traj, ref, samples):
    interp = Interpolants(traj)
    times = midpoint_times(interp, samples or None)
    reports = [identity_terms(disc, model, interp, ref, t) for t in times]
    rows = [(r.t, r.eta, r.eta_r, r.Q, r.D, r.E, r.Ebar, r.identity_residual) for r in reports]
    return rows, reports


def run_experiment(cfg, out_dir=None):
    """Run ``cfg``, write its files, and return ``(summary, exit_code)``.

    On a solver failure the partial trajectory is still written and the
    failing step index is recorded in the summary.
    """
    out_dir = cfg.output_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    disc = build_discretization(cfg)
    model = build_model(cfg)
    start = time.perf_counter()
    failed_step, error = 0, ""
    try:
        traj = simulate(cfg, disc, model)
    except RunAborted as exc:
        traj, failed_step, error = exc.trajectory, exc.step, str(exc)
        log.error("run aborted at step %d: %s", exc.step, exc)

    energies = traj.energies()
    total = energies.sum(axis=1)
    certs = traj.certificates
    diss = [0.0] + [c.dissipation_velocity + c.bregman_dissipation for c in certs]
    write_csv(
        os.path.join(out_dir, "energy.csv"),
        ENERGY_COLUMNS,
        [(t, k, i, k + i, d) for t, (k, i), d in zip(traj.times, energies, diss)],
    )

    max_res = float("nan")
    ref = build_reference(cfg)
    if ref is not None and traj.n_steps >= 1:
        rows, reports = _entropy_rows(disc, model, traj, ref, cfg.monitor_samples)
        write_csv(os.path.join(out_dir, "entropy_report.csv"), ENTROPY_COLUMNS, rows)
        max_res = max(r.identity_residual for r in reports)

    defects = [gradient_conservation_defect(disc, a, b, traj.tau) for a, b in zip(traj.states, traj.states[1:])]
    passed = failed_step == 0 and all(c.passed for c in certs)
    summary = RunSummary(
        passed=passed,
        steps_completed=traj.n_steps,
        steps_requested=cfg.n_steps,
        failed_step=failed_step,
        error=error,
        initial_energy=float(total[0]),
        final_kinetic=float(energies[-1, 0]),
        final_internal=float(energies[-1, 1]),
        final_total=float(total[-1]),
        dissipation_sum=float(np.sum(diss)),
        increment_sum=traj.increment_sum,
        increment_bound=2.0 * float(total[0] - total[-1]) / min(1.0, cfg.energy_gamma),
        max_excess=max((c.excess for c in certs), default=0.0),
        max_gradient_defect=max(defects, default=0.0),
        min_w=float(min(s.w.min() for s in traj.states)),
        max_identity_residual=max_res,
        wall_time=time.perf_counter() - start,
        config=cfg.echo(),
    )
    write_json(os.path.join(out_dir, "summary.json"), summary.to_json())
    return summary, 0 if passed else 1


# -- refinement study --------------------------------------------------------


@dataclass
class RateReport:
    taus: np.ndarray
    sup_eta_r: np.ndarray
    slope: float  # nan when undefined
    sqrt_slope: float
    ratios: np.ndarray  # sup_eta_r[i] / sup_eta_r[i+1]
    flagged: str  # non-empty when the fit is undefined
    reference_tau: float


def fit_slope(taus, values):
    """Least-squares slope of ``log values`` against ``log taus``; nan if undefined."""
    taus, values = np.asarray(taus, dtype=float), np.asarray(values, dtype=float)
    if len(taus) < 2 or np.any(values <= 0) or not np.all(np.isfinite(values)):
        return float("nan")
    return float(np.polyfit(np.log(taus), np.log(values), 1)[0])


def refinement_study(base_cfg, taus, out_dir=None, refine=16, time_samples=None):
    """sup_t int eta_r of runs at each ``tau`` against a run at ``min(taus)/refine``.

    The fine run serves as a surrogate reference on the same mesh and
    degree.  ``sup_t`` is taken over a common grid of ``time_samples``
    points (default: the grid of the finest study step, refined 4x).
    """
    taus = np.asarray(sorted(taus, reverse=True), dtype=float)
    if len(taus) < 3:
        raise ValueError("a refinement study needs at least three time steps")
    q = taus[:-1] / taus[1:]
    if not np.allclose(q, q[0], rtol=1e-9):
        raise ValueError("time steps must form a geometric sequence")
    T = base_cfg.t_final
    disc = build_discretization(base_cfg)
    model = build_model(base_cfg)
    tau_ref = taus[-1] / refine
    fine = simulate(base_cfg, disc, model, dt=tau_ref)
    ref = SurrogateReference(fine)
    if time_samples is None:
        time_samples = 4 * int(round(T / taus[-1])) + 1
    grid = np.linspace(0.0, T, time_samples)
    sups = []
    for tau in taus:
        traj = simulate(base_cfg, disc, model, dt=float(tau))
        interp = Interpolants(traj)
        sups.append(max(relative_entropy(disc, model, interp, ref, t) for t in grid))
    sups = np.array(sups)
    slope = fit_slope(taus, sups)
    flagged = "" if math.isfinite(slope) else "slope undefined: sup eta_r vanishes"
    report = RateReport(
        taus,
        sups,
        slope,
        fit_slope(taus, np.sqrt(sups)),
        np.where(sups[1:] > 0, sups[:-1] / np.where(sups[1:] > 0, sups[1:], 1.0), np.nan),
        flagged,
        tau_ref,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(
            os.path.join(out_dir, "rates.csv"),
            RATE_COLUMNS,
            [(t, int(round(T / t)), s, math.sqrt(s)) for t, s in zip(taus, sups)],
        )
        write_json(
            os.path.join(out_dir, "rates_summary.json"),
            {
                "slope": slope,
                "sqrt_slope": report.sqrt_slope,
                "ratios": list(report.ratios),
                "flagged": flagged,
                "reference_tau": tau_ref,
                "config": base_cfg.echo(),
                "scheme_version": SCHEME_VERSION,
            },
        )
    return report


def check_energy(cfg, sample_count=1000, seed=0):
    """Hypothesis suite for the configured energy."""
    return check_hypotheses(build_model(cfg), sample_count=sample_count, seed=seed)
