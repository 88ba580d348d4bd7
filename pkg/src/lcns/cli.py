"""Command-line interface: ``lcns <command> --config FILE``.

Commands: manufacture, forward, adjoint, optimize, verify [CHECK], report.
Artifacts go to ``--out`` (default: the config's ``[output] dir``). Set
``LCNS_LOG`` to a logging level name (DEBUG, INFO, ...) for diagnostics.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import CHECKS, parse_config
from .errors import ConfigError, LCNSError, StagnationWithoutConvergence
from .io import RunManifest, atomic_write, export_csv, export_snapshots, read_manifest

log = logging.getLogger("lcns")

EXIT_FAIL = 1
EXIT_ERROR = 2


# ---------------------------------------------------------------------------
# Shared setup


class _Run:
    """Config plus the objects every command needs."""

    def __init__(self, args):
        overrides = {}
        if args.seed is not None:
            overrides["run.seed"] = str(args.seed)
        self.cfg = parse_config(args.config, overrides)
        self.out = args.out or self.cfg.out_dir
        os.makedirs(self.out, exist_ok=True)
        self.threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
        self.manifest = RunManifest(args.command, self.cfg.hash, seed=self.cfg.seed)
        self._base = None

    @property
    def base(self):
        if self._base is None:
            self._base = self.cfg.base()
        return self._base

    def system(self, base=None):
        from .forward import LinearizedSystem
        return LinearizedSystem(base or self.base, linear_solver=self.cfg.get("run", "linear_solver"))

    def path(self, name):
        return os.path.join(self.out, name)

    def artifact(self, written):
        self.manifest.add_artifact(written, self.out)
        return written

    def finish(self):
        path = self.manifest.write(self.out)
        print(f"wrote {path}")


def _write_state(run, traj, prefix=""):
    g = run.base.grid
    run.artifact(export_snapshots(run.path(f"{prefix}state_rho.lcns"), g, traj.rho, traj.times))
    run.artifact(export_snapshots(run.path(f"{prefix}state_u.lcns"), g, traj.u, traj.times))
    if traj.energy is not None:
        run.artifact(export_csv(run.path(f"{prefix}energy.csv"),
                                ("t", "E", "dissipation", "identity_residual", "groenwall_bound"),
                                traj.energy.rows()))


def _write_control(run, control):
    t = run.base.times[:-1]
    run.artifact(export_snapshots(run.path("control.lcns"), run.base.grid, control, t))


def _write_adjoint(run, adj):
    g = run.base.grid
    run.artifact(export_snapshots(run.path("adjoint_sigma.lcns"), g, adj.sigma, adj.times))
    run.artifact(export_snapshots(run.path("adjoint_xi.lcns"), g, adj.xi, adj.times))
    s, x = adj.norms(g)
    run.artifact(export_csv(run.path("adjoint_norms.csv"), ("t", "sigma_L2", "xi_L2"),
                            list(zip(adj.times, s, x))))


# ---------------------------------------------------------------------------
# Commands


def cmd_manufacture(run, args):
    from .base_state import validate
    b = run.base
    rep = validate(b)
    g = b.grid
    run.artifact(export_snapshots(run.path("base_rho.lcns"), g, [b.rho_tilde], [0.0]))
    run.artifact(export_snapshots(run.path("base_u.lcns"), g, b.u_tilde, b.times))
    run.artifact(export_snapshots(run.path("base_f.lcns"), g, b.f, b.times))
    names = sorted(rep.coefficients)
    rows = [(t,) + tuple(rep.coefficients[k][n] for k in names) for n, t in enumerate(b.times)]
    run.artifact(export_csv(run.path("base_coefficients.csv"), ("t",) + tuple(names), rows))
    run.manifest.summary = {"rho_min": rep.rho_min, "rho_max": rep.rho_max, "m": rep.m,
                            "M": rep.M, "mass_residual": rep.mass_residual,
                            "boundary_trace": rep.boundary_trace, "violations": rep.violations}
    for v in rep.violations:
        print(f"warning: base state violates {v}", file=sys.stderr)
    return 0


def cmd_forward(run, args):
    from .forward import solve_linearized
    b = run.base
    rho0, u0 = run.cfg.initial(b.grid)
    U = run.cfg.control(b.grid, b.times)
    traj = solve_linearized(b, U, rho0=rho0, u0=u0, system=run.system(),
                            cfl=run.cfg.get("time", "cfl"), monitor=True)
    _write_state(run, traj)
    e = traj.energy
    run.manifest.summary = {"E_final": float(e.E[-1]), "E_max": float(e.E.max()),
                            "identity_residual_max": float(np.abs(e.identity_residual).max()),
                            "groenwall_margin_min": float((e.groenwall_bound - e.E).min())}
    return 0


def _load_state(run):
    from .errors import GridMismatch, MissingFile
    from .forward import StateTrajectory
    from .snapshot import read_sequence
    paths = [run.path("state_rho.lcns"), run.path("state_u.lcns")]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise MissingFile([f"{p} not found; run 'lcns forward' first" for p in missing])
    g, rho, t = read_sequence(paths[0])
    _, u, _ = read_sequence(paths[1])
    b = run.base
    if g.extents != b.grid.extents or len(t) != len(b.times):
        raise GridMismatch("persisted state does not match the configured grid and time steps")
    if u.ndim == rho.ndim:          # 1D velocity frames are stored as one component
        u = u[:, None]
    return StateTrajectory(t, rho, u)


def cmd_adjoint(run, args):
    from .adjoint import AdjointSources, solve_adjoint
    b = run.base
    st = _load_state(run)
    tg = run.cfg.targets(b.grid, b.times)
    lam = run.cfg.get("optimizer", "lambda")
    adj = solve_adjoint(b, st, AdjointSources(lam, tg.rho_d, tg.u_d), mode=args.mode,
                        system=run.system())
    _write_adjoint(run, adj)
    s, x = adj.norms(b.grid)
    run.manifest.summary = {"mode": args.mode, "sigma0_L2": float(s[0]), "xi0_L2": float(x[0])}
    return 0


def _run_optimizer(run):
    from .optimize import optimize
    b = run.base
    g = b.grid
    rho0, u0 = run.cfg.initial(g)
    return optimize(b, rho0, u0, run.cfg.targets(g, b.times), run.cfg.constraint(g, b.times),
                    run.cfg.radius, run.cfg.optimizer_options(),
                    U0=run.cfg.control(g, b.times), system=run.system())


def cmd_optimize(run, args):
    from .optimize import IterateRecord
    try:
        res = _run_optimizer(run)
    except StagnationWithoutConvergence as exc:
        print(f"error: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_FAIL
    run.artifact(export_csv(run.path("iterates.csv"), IterateRecord.CSV_COLUMNS,
                            [r.row() for r in res.log]))
    _write_control(run, res.control.values)
    _write_state(run, res.state, prefix="optimal_")
    m = res.multipliers
    run.manifest.summary = {"converged": res.converged, "J": res.cost.J, "J_star": res.J_star,
                            "lambda": m.get("lambda"), "a_norm": m.get("a_norm"),
                            "eps": m.get("eps"), "iterations": len(res.log)}
    return 0


# -- verify ---------------------------------------------------------------


def _spike_setup(run):
    b = run.base
    dt = b.dt
    tau = run.cfg.get("verify", "spike_tau")
    k = int(round((b.times[-1] / 2 if tau is None else tau) / dt))
    widths = [w for w in run.cfg.get("verify", "spike_widths") if 1 <= w <= k]
    return k * dt, [w * dt for w in widths]


def _gradient_level(run, base, mode):
    from .verification import check_gradient, smooth_directions
    g = base.grid
    rho0, u0 = run.cfg.initial(g)
    # the same seed draws the same smooth direction functions on every grid
    dirs = smooth_directions(g, base.times, run.cfg.get("verify", "gradient_directions"),
                             np.random.default_rng(run.cfg.seed))
    U = run.cfg.control(g, base.times) if base is run.base else np.zeros_like(dirs[0])
    return check_gradient(base, U, run.cfg.targets(g, base.times), dirs, mode=mode,
                          rho0=rho0, u0=u0, lambda_mult=run.cfg.get("optimizer", "lambda"),
                          system=run.system(base))


def _check_gradient(run, ctx):
    from .verification import check_gradient_refinement
    mode = run.cfg.get("verify", "adjoint_mode")
    coarse = _gradient_level(run, run.base, mode)
    if mode == "transpose" or run.cfg.get("control", "file"):
        return [coarse]
    fine = _gradient_level(run, run.cfg.base(time_refine=2, space_refine=2), mode)
    return [coarse, check_gradient_refinement(coarse, fine)]


def _check_pontryagin(run, ctx):
    from .verification import check_pontryagin
    res = ctx["opt"]
    return [check_pontryagin(res.control, res.adjoint.xi, run.base, res.multipliers["lambda"],
                             run.cfg.get("verify", "samples"), run.cfg.seed)]


def _check_cone(run, ctx):
    from .verification import check_epsilon_optimality, check_normal_cone
    res, con = ctx["opt"], ctx["constraint"]
    b = run.base
    rho0, u0 = run.cfg.initial(b.grid)
    x = con.observe(res.state) if con.active else None
    return [check_normal_cone(con if con.active else None, x, res.multipliers.get("a"),
                              run.cfg.get("verify", "samples"), run.cfg.seed),
            check_epsilon_optimality(res, b, con, run.cfg.targets(b.grid, b.times),
                                     seed=run.cfg.seed, rho0=rho0, u0=u0)]


def _check_spike(run, ctx):
    from .verification import check_spike_convergence
    b = run.base
    tau, hs = _spike_setup(run)
    rho0, u0 = run.cfg.initial(b.grid)
    return [check_spike_convergence(b, run.cfg.control(b.grid, b.times), tau,
                                    run.cfg.spike_value(b.grid), hs, rho0, u0, run.system())]


def _perturbations(run, base):
    W = run.cfg.spike_value(base.grid)
    return [a * np.broadcast_to(W, (base.nsteps,) + W.shape).copy()
            for a in run.cfg.get("verify", "dependence_alphas")]


def _check_dependence(run, ctx):
    from .verification import check_continuous_dependence
    fine = run.cfg.base(time_refine=2, space_refine=2)
    return [check_continuous_dependence(run.base, _perturbations(run, run.base),
                                        (fine, _perturbations(run, fine)), run.system())]


def _check_lame(run, ctx):
    from .grid import Grid
    from .verification import check_lame
    n = run.cfg.get("verify", "lame_cells")
    return [check_lame(Grid((n, n)), run.cfg.params())]


def _check_energy(run, ctx):
    from .forward import solve_linearized
    from .verification import check_energy_certificates
    b = run.base
    half = run.cfg.base(time_refine=2)
    rho0, u0 = run.cfg.initial(b.grid)
    U = run.cfg.control(b.grid, b.times).values + _perturbations(run, b)[0]
    Uh = np.repeat(U, 2, axis=0)
    tr = solve_linearized(b, U, rho0, u0, system=run.system(), monitor=True)
    th = solve_linearized(half, Uh, rho0, u0, system=run.system(half), monitor=True)
    return [check_energy_certificates(tr, b, half=(th, half))]


def _check_ekeland(run, ctx):
    from .verification import check_ekeland
    b = run.base
    return [check_ekeland(run.cfg.control(b.grid, b.times), seed=run.cfg.seed)]


CHECK_FUNCS = {"gradient": _check_gradient, "pontryagin": _check_pontryagin, "cone": _check_cone,
               "spike": _check_spike, "dependence": _check_dependence, "lame": _check_lame,
               "energy": _check_energy, "ekeland": _check_ekeland}


def run_checks(run, names):
    """Run the named certificates concurrently; returns reports sorted by name."""
    ctx = {"constraint": run.cfg.constraint(run.base.grid, run.base.times)}
    if {"pontryagin", "cone"} & set(names):
        ctx["opt"] = _run_optimizer(run)
    _ = run.base  # build once before the worker threads share it
    with ThreadPoolExecutor(max_workers=run.threads) as pool:
        futures = {n: pool.submit(CHECK_FUNCS[n], run, ctx) for n in names}
        reports = [r for n in names for r in futures[n].result()]
    return sorted(reports, key=lambda r: r.name)


def cmd_verify(run, args):
    names = list(CHECKS) if args.check == "all" else [args.check]
    if args.check == "all" and run.cfg.get("verify", "checks") != "all":
        names = run.cfg.checks()
    reports = run_checks(run, names)
    doc = {"config_hash": run.cfg.hash, "seed": run.cfg.seed, "tool_version": __version__,
           "reports": [r.to_dict() for r in reports]}
    run.artifact(atomic_write(run.path("verify_report.json"),
                              json.dumps(doc, indent=2, sort_keys=True) + "\n"))
    lines = [r.summary() for r in reports]
    run.artifact(atomic_write(run.path("verify_summary.txt"), "\n".join(lines) + "\n"))
    for line in lines:
        print(line)
    run.manifest.certificates = {r.name: r.status for r in reports}
    return EXIT_FAIL if any(not r.passed for r in reports) else 0


def cmd_report(run, args):
    found = sorted(f for f in os.listdir(run.out) if f.startswith("manifest_")
                   and f.endswith(".json") and f != "manifest_report.json")
    if not found:
        print(f"no manifests in {run.out}", file=sys.stderr)
        return EXIT_FAIL
    lines = []
    for f in found:
        m = read_manifest(os.path.join(run.out, f))
        stale = "" if m["config_hash"] == run.cfg.hash else " (config changed since this run)"
        lines.append(f"{m['command']}: config {m['config_hash'][:12]}{stale}, "
                     f"{len(m['artifacts'])} artifacts")
        for k, v in sorted(m.get("summary", {}).items()):
            lines.append(f"  {k} = {v}")
        for k, v in sorted(m.get("certificates", {}).items()):
            lines.append(f"  [{v}] {k}")
    text = "\n".join(lines) + "\n"
    run.artifact(atomic_write(run.path("report.txt"), text))
    sys.stdout.write(text)
    return 0


COMMANDS = {"manufacture": cmd_manufacture, "forward": cmd_forward, "adjoint": cmd_adjoint,
            "optimize": cmd_optimize, "verify": cmd_verify, "report": cmd_report}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario file (INI format)")
    common.add_argument("--out", help="output directory (default: [output] dir)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--threads", type=int, default=0, help="worker threads, 0 = auto")
    p = argparse.ArgumentParser(prog="lcns", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lcns {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("manufacture", parents=[common], help="build and validate the base state")
    sub.add_parser("forward", parents=[common], help="solve the linearized state equation")
    a = sub.add_parser("adjoint", parents=[common], help="solve the adjoint from the saved state")
    a.add_argument("--mode", choices=("continuous", "transpose"), default="continuous")
    sub.add_parser("optimize", parents=[common], help="run the optimal-control solver")
    v = sub.add_parser("verify", parents=[common], help="run numerical certificates")
    v.add_argument("check", nargs="?", default="all", choices=CHECKS + ("all",))
    sub.add_parser("report", parents=[common], help="summarize manifests in the output directory")
    return p


def main(argv=None):
    level = os.environ.get("LCNS_LOG")
    if level:
        logging.basicConfig(level=level.upper(), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        run = _Run(args)
        code = COMMANDS[args.command](run, args)
        run.finish()
        return code
    except ConfigError as exc:
        print(f"config error ({type(exc).__name__}):", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_ERROR
    except LCNSError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
