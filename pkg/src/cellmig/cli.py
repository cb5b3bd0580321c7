"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import verify
from .config import RunConfig, load_config
from .errors import CFLError, ClosureError, ConfigError, FluxDirectionError, NonContractiveError
from .hydro import HydroSolver, SweepConfig, epsilon_sweep, hydro_from_kinetic, hydro_W
from .io import FieldContainer, write_timeseries
from .kernels import build_kernels
from .kinetic import KineticSolver, KineticState, initial_state, picard_iterate
from .moments import compute_moments

log = logging.getLogger("cellmig")

# auto dt is taken from the initial state, so leave room for speeds to grow
SAFETY = 0.8

COMMANDS = ("simulate-kinetic", "simulate-hydro", "limit-sweep", "picard", "verify")


def _initial(cfg: RunConfig, grid, kernels, seed: int) -> KineticState:
    run = cfg["run"]
    return initial_state(grid, kernels, run["initial"], amplitude=run["amplitude"], velocity=run["velocity"],
                         fiber=run["fiber"], fiber_bias=run["fiber_bias"], seed=seed)


def _steps(t_final: float, dt: float) -> tuple:
    n = max(1, int(math.ceil(t_final / dt - 1e-12)))
    return n, t_final / n


def _kinetic_fields(state: KineticState, grid) -> FieldContainer:
    m = compute_moments(state.f, grid)
    return FieldContainer({"t": [state.t], "x": grid.space.mesh(), "f": state.f, "Q": state.Q, "L": state.L,
                           "rho": m.rho, "rhoU": m.rhoU, "rhoW": m.rhoW})


def simulate_kinetic(cfg: RunConfig, out: Path, threads: int, seed: int) -> int:
    grid = cfg.build_grid()
    params = cfg.model_params()
    solver = KineticSolver(grid, params, threads=threads)
    state = _initial(cfg, grid, solver.kernels, seed)
    dt = SAFETY * solver.max_dt(state) if cfg["run"]["dt"] == "auto" else cfg["run"]["dt"]
    nsteps, dt = _steps(cfg["run"]["t_final"], dt)
    cols = ["t", "mass", "fiber_total", "chemical_total", "compound_Q", "compound_L", "min_f", "min_Q", "min_L"]
    rows = []

    def record(s):
        m = compute_moments(s.f, grid)
        cq, cl = solver.compound_totals(s)
        rows.append([s.t, grid.integrate_x(m.rho), grid.integrate_x(s.Q @ grid.theta.weights),
                     grid.integrate_x(s.L), cq, cl, s.f.min(), s.Q.min(), s.L.min()])

    record(state)
    cadence = cfg["output"]["cadence"]
    try:
        for k in range(1, nsteps + 1):
            state, _ = solver.step(state, dt)
            if k % cadence == 0 or k == nsteps:
                record(state)
                if cfg["output"]["snapshots"] and k != nsteps:
                    _kinetic_fields(state, grid).write(out / f"kinetic_{k:06d}.kcm")
    finally:
        solver.close()
    write_timeseries(out / "kinetic_series.csv", cols, rows)
    _kinetic_fields(state, grid).write(out / "kinetic_final.kcm")
    log.info("simulate-kinetic: %d steps of dt=%.6g, final mass %.16e", nsteps, dt, rows[-1][1])
    return 0


def simulate_hydro(cfg: RunConfig, out: Path, threads: int, seed: int) -> int:
    grid = cfg.build_grid()
    params = cfg.model_params()
    kernels = build_kernels(grid, params)
    hstate = hydro_from_kinetic(_initial(cfg, grid, kernels, seed), grid)
    solver = HydroSolver(grid, params, kernels)
    dt = SAFETY * solver.max_dt(hstate) if cfg["run"]["dt"] == "auto" else cfg["run"]["dt"]
    nsteps, dt = _steps(cfg["run"]["t_final"], dt)
    cols = ["t", "mass", "momentum", "fiber_total", "chemical_total", "min_rho"]
    rows = []

    def record(s):
        rows.append([s.t, grid.integrate_x(s.rho), grid.integrate_x(s.m[..., 0]),
                     grid.integrate_x(s.Q @ grid.theta.weights), grid.integrate_x(s.L), s.rho.min()])

    record(hstate)
    for k in range(1, nsteps + 1):
        hstate = solver.hydro_step(hstate, dt)
        if k % cfg["output"]["cadence"] == 0 or k == nsteps:
            record(hstate)
    write_timeseries(out / "hydro_series.csv", cols, rows)
    FieldContainer({"t": [hstate.t], "x": grid.space.mesh(), "rho": hstate.rho, "m": hstate.m,
                    "W": hydro_W(hstate, grid, params), "Q": hstate.Q, "L": hstate.L}).write(out / "hydro_final.kcm")
    log.info("simulate-hydro: %d steps of dt=%.6g", nsteps, dt)
    return 0


def limit_sweep(cfg: RunConfig, out: Path, threads: int, seed: int) -> int:
    sc, sw = cfg["scaling"], cfg["sweep"]
    params = cfg.model_params()
    base = params.with_(eps=1.0)
    g = cfg["grid"]
    scfg = SweepConfig(eps_list=tuple(sc["eps_list"]), a=sc["a"], b=sc["b"], d=sc["d"], t_final=sw["t_final"],
                       x_cells=sw["x_cells"], box=sw["box"], radial_count=g["radial_count"],
                       activity_subdivision=g["activity_subdivision"], n=g["n"], s=g["s"],
                       dt_factor=sw["dt_factor"], base=base)
    rep = epsilon_sweep(scfg, workers=threads)
    rows = [[e.eps, e.rho_l1_diff, e.closure_residual, e.kinetic_eq_distance] for e in rep.entries]
    rows.append(["slope", rep.slopes["rho_l1_diff"], rep.slopes["closure_residual"], rep.slopes["kinetic_eq_distance"]])
    rows.append(["monotone"] + [int(rep.monotone[k]) for k in ("rho_l1_diff", "closure_residual",
                                                               "kinetic_eq_distance")])
    write_timeseries(out / "sweep_report.csv", ["epsilon", "rho_L1_diff", "closure_residual", "kinetic_eq_distance"],
                     rows)
    for e in rep.entries:
        log.info("eps=%g rho_diff=%.3e closure=%.3e eq_dist=%.3e", e.eps, e.rho_l1_diff, e.closure_residual,
                 e.kinetic_eq_distance)
    log.info("slopes %s", rep.slopes)
    if not rep.passed:
        log.error("limit verification failed: non-monotone column(s) %s",
                  [k for k, v in rep.monotone.items() if not v])
        return 1
    return 0


def picard(cfg: RunConfig, out: Path, threads: int, seed: int) -> int:
    grid = cfg.build_grid()
    params = cfg.model_params()
    solver = KineticSolver(grid, params, threads=threads)
    init = _initial(cfg, grid, solver.kernels, seed)
    run = cfg["run"]
    try:
        res = picard_iterate(init.f, init.Q, run["picard_t0"], run["picard_tol"], run["picard_max_iter"], solver)
    finally:
        solver.close()
    ratios = [math.nan] + res.ratios
    write_timeseries(out / "picard_residuals.csv", ["iteration", "residual", "ratio"],
                     [[i + 1, r, q] for i, (r, q) in enumerate(zip(res.residuals, ratios))])
    log.info("picard: %d iterations, final residual %.3e", len(res.residuals), res.residuals[-1])
    return 0


def run_verify(cfg: RunConfig, out: Path, threads: int, seed: int) -> int:
    results = verify.run_all(seed=seed)
    # one kinetic run so that solver output is part of the verified artefacts
    grid = cfg.build_grid()
    solver = KineticSolver(grid, cfg.model_params(), threads=threads)
    state = _initial(cfg, grid, solver.kernels, seed)
    dt = solver.max_dt(state)
    for _ in range(10):
        state, _ = solver.step(state, dt)
    solver.close()
    _kinetic_fields(state, grid).write(out / "verify_kinetic.kcm")
    write_timeseries(out / "verify_report.csv", ["check", "value", "threshold", "passed"],
                     [[r.name.replace(",", ";"), r.value, r.threshold, int(r.passed)] for r in results])
    for r in results:
        (log.info if r.passed else log.error)("%s", r.line())
    failed = [r for r in results if not r.passed]
    log.info("verify: %d checks, %d failed", len(results), len(failed))
    return 1 if failed else 0


HANDLERS = {
    "simulate-kinetic": simulate_kinetic,
    "simulate-hydro": simulate_hydro,
    "limit-sweep": limit_sweep,
    "picard": picard,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellmig", description="Kinetic cell-migration model and its hydrodynamic limit.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="sectioned key = value config file")
    parser.add_argument("--output", type=Path, help="output directory (overrides [output] directory)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    parser.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s", stream=sys.stdout,
                        force=True)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return 2
    out = args.output if args.output is not None else Path(cfg["output"]["directory"])
    seed = args.seed if args.seed is not None else cfg["run"]["seed"]
    try:
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, out, args.threads, seed)
    except (CFLError, ClosureError, FluxDirectionError, NonContractiveError, ConfigError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
