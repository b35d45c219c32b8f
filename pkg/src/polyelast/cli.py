"""Command line entry point: ``solve``, ``study`` and ``check-energy``."""

import argparse
import logging
import sys

from .runner import ConfigError, check_energy, load_config, refinement_study, run_experiment


def _parse_dt_list(text):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --dt-list {text!r}") from None
    if len(vals) < 3 or min(vals) <= 0:
        raise argparse.ArgumentTypeError("--dt-list needs at least three positive values")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="polyelast", description="Variational polyconvex elastodynamics on the 3-torus.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run one experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override output.dir")
    s.add_argument("--dump-mesh", metavar="PATH", help="write the mesh listing to PATH")

    st = sub.add_parser("study", help="time-step refinement study")
    st.add_argument("--config", required=True)
    st.add_argument("--dt-list", required=True, type=_parse_dt_list)
    st.add_argument("--out", help="override output.dir")
    st.add_argument("--refine", type=int, default=16, help="surrogate reference step is min(dt)/REFINE")

    c = sub.add_parser("check-energy", help="sample the energy hypotheses")
    c.add_argument("--config", required=True)
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "solve":
        if args.dump_mesh:
            from .mesh import build_uniform

            build_uniform(cfg.mesh_n).dump(args.dump_mesh)
        summary, code = run_experiment(cfg, args.out)
        status = "passed" if summary.passed else "FAILED"
        print(
            f"{status}: {summary.steps_completed}/{summary.steps_requested} steps, "
            f"E0={summary.initial_energy!r} E={summary.final_total!r}, wall {summary.wall_time:.2f}s"
        )
        if summary.failed_step:
            print(f"failing step: {summary.failed_step}: {summary.error}", file=sys.stderr)
        return code

    if args.command == "study":
        rep = refinement_study(cfg, args.dt_list, out_dir=args.out or cfg.output_dir, refine=args.refine)
        for tau, s in zip(rep.taus, rep.sup_eta_r):
            print(f"tau={tau!r} sup_eta_r={s!r}")
        print(rep.flagged or f"slope={rep.slope!r} sqrt_slope={rep.sqrt_slope!r}")
        return 0

    report = check_energy(cfg, args.samples, args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
