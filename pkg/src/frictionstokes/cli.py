"""Command line entry point: ``frictionstokes <subcommand> --scenario FILE --out DIR``."""
import argparse
import contextlib
import csv
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from .coulomb import CoulombConfig, self_consistency_residual, solve_coulomb
from .errors import FrictionStokesError, NonContractionError, ScenarioError, StepError, UsageError
from .io import fmt, parse_scenario, write_manifest, write_outputs
from .mesh import build_mesh, dump_mesh
from .stepping import discretize, run_tresca
from .verification import (
    VerificationReport,
    couette_check,
    empirical_orders,
    eps_convergence_study,
    order_study,
    verify_trajectory,
)

log = logging.getLogger("frictionstokes")


def _parser():
    p = argparse.ArgumentParser(prog="frictionstokes", description="Unsteady Stokes flow with friction-type slip walls.")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--scenario", required=True, help="scenario TOML file")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread count")

    common(sub.add_parser("mesh", help="build the mesh and write its ASCII dump"))
    common(sub.add_parser("run-tresca", help="march the Tresca problem over [0, T]"))
    rc = sub.add_parser("run-coulomb", help="windowed fixed point for the history-dependent threshold")
    common(rc)
    rc.add_argument("--checkpoint", help="checkpoint file written after every converged window")
    rc.add_argument("--resume", action="store_true", help="continue from --checkpoint when it exists")
    rc.add_argument("--dump-thresholds", action="store_true", help="write every threshold iterate")
    rc.add_argument("--stop-after-windows", type=int, default=None, help="stop after this many windows")
    common(sub.add_parser("verify", help="run and check energy, divergence, friction law and the Couette oracle"))
    common(sub.add_parser("study-eps", help="friction gap and stick zone across the verify eps_list"))
    common(sub.add_parser("study-dt", help="temporal order against a Richardson reference"))
    return p


def _cmd_mesh(sc, args):
    os.makedirs(args.out, exist_ok=True)
    mesh = build_mesh(sc.domain, sc.resolution)
    dump_mesh(mesh, os.path.join(args.out, "mesh.txt"))
    write_manifest(args.out, ["mesh.txt"])
    print(f"mesh: {len(mesh.vertices)} vertices, {mesh.num_cells} cells")
    return 0


def _cmd_run_tresca(sc, args):
    if sc.coulomb is not None:
        raise UsageError("scenario has a Coulomb friction section; use run-coulomb")
    disc = discretize(sc)
    traj = run_tresca(sc, disc=disc)
    report = verify_trajectory(traj, disc)
    write_outputs(traj, disc, args.out, report)
    print(report.to_text(), end="")
    return 0


def _cmd_run_coulomb(sc, args):
    if sc.coulomb is None:
        raise UsageError("scenario has no Coulomb friction section")
    if args.resume and not args.checkpoint:
        raise UsageError("--resume needs --checkpoint")
    disc = discretize(sc)
    config = CoulombConfig(
        checkpoint=args.checkpoint,
        resume=args.resume,
        dump_thresholds=os.path.join(args.out, "thresholds") if args.dump_thresholds else None,
        stop_after_windows=args.stop_after_windows,
    )
    traj, trace = solve_coulomb(sc, config, disc)
    if len(traj.states) - 1 < sc.n_steps:
        print(f"stopped at t={fmt(traj.final.t)} after {len(trace.schedule)} windows")
        return 0
    report = verify_trajectory(traj, disc)
    res, size = self_consistency_residual(traj, sc.coulomb, disc)
    tol = 2.0 * sc.coulomb.tol * (1.0 + size)
    report.add("self_consistency", res <= tol, res, tol)
    write_outputs(traj, disc, args.out, report, trace)
    print(report.to_text(), end="")
    return 0


def _cmd_verify(sc, args):
    os.makedirs(args.out, exist_ok=True)
    report = VerificationReport()
    disc = discretize(sc)
    if sc.coulomb is None:
        traj = run_tresca(sc, disc=disc)
        trace = None
    else:
        traj, trace = solve_coulomb(sc, CoulombConfig(), disc)
        res, size = self_consistency_residual(traj, sc.coulomb, disc)
        tol = 2.0 * sc.coulomb.tol * (1.0 + size)
        report.add("self_consistency", res <= tol, res, tol)
    verify_trajectory(traj, disc, report)
    steady_zeta = sc.zeta.kind == "constant"
    if sc.coulomb is None and sc.wall.kind == "couette" and steady_zeta and sc.domain.periodic and _zero_force(sc):
        c = couette_check(sc, steady_tol=sc.verify.steady_tol)
        report.add("couette_speed", c.speed_error <= 1e-3, c.speed_error, 1e-3, c.oracle.regime)
        report.add("couette_stress", c.stress_error <= 1e-3, c.stress_error, 1e-3, c.oracle.regime)
    write_outputs(traj, disc, args.out, report, trace)
    print(report.to_text(), end="")
    return 0 if report.passed else 1


def _zero_force(sc):
    return all(fn.kind == "constant" and fn.params["value"] == 0.0 for fn in sc.f if hasattr(fn, "kind"))


def _cmd_study_eps(sc, args):
    os.makedirs(args.out, exist_ok=True)
    rows = eps_convergence_study(sc, sc.verify.eps_list)
    path = os.path.join(args.out, "eps_study.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "gap", "bound", "stick_measure", "infeasibility", "alignment"])
        for r in rows:
            w.writerow([fmt(r.eps), fmt(r.gap), fmt(r.bound), fmt(r.stick_measure), fmt(r.infeasibility), fmt(r.alignment)])
    write_manifest(args.out, ["eps_study.csv"])
    report = VerificationReport()
    for r in rows:
        report.add(f"gap_bound eps={r.eps:g}", 0.0 <= r.gap <= r.bound * (1 + 1e-12), r.gap, r.bound)
    gaps = [r.gap for r in rows]
    mono = all(b < a for a, b in zip(gaps, gaps[1:]))
    report.add("gap_monotone", mono, gaps[-1], gaps[0])
    if all(g > 0 for g in gaps) and len(gaps) > 1:
        orders = empirical_orders([r.eps for r in rows], gaps)
        print("empirical orders in eps: " + " ".join(f"{o:.3f}" for o in orders))
    print(report.to_text(), end="")
    return 0 if report.passed else 1


def _cmd_study_dt(sc, args):
    os.makedirs(args.out, exist_ok=True)
    st = order_study(sc, sc.verify.dt_list, sc.verify.reference_dts)
    path = os.path.join(args.out, "dt_study.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dt", "error", "order"])
        for i, (dt, err) in enumerate(zip(st.dts, st.errors)):
            w.writerow([fmt(dt), fmt(err), fmt(st.orders[i - 1]) if i else ""])
    write_manifest(args.out, ["dt_study.csv"])
    report = VerificationReport()
    for o in st.orders:
        report.add("temporal_order", abs(o - 1.0) <= 0.2, o, 0.2, "expected 1")
    print(report.to_text(), end="")
    return 0 if report.passed else 1


COMMANDS = {
    "mesh": _cmd_mesh,
    "run-tresca": _cmd_run_tresca,
    "run-coulomb": _cmd_run_coulomb,
    "verify": _cmd_verify,
    "study-eps": _cmd_study_eps,
    "study-dt": _cmd_study_dt,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(name)s: %(message)s")
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            sc = parse_scenario(args.scenario)
            return COMMANDS[args.command](sc, args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonContractionError as exc:
        print(f"non-contraction: {exc}", file=sys.stderr)
        return 4
    except StepError as exc:
        print(f"step failure at step {exc.step_index}: {exc}", file=sys.stderr)
        return 3
    except FrictionStokesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
