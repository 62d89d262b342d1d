"""Batch front door: solve, check, evolve, sweep.

One command per invocation; every artifact embeds the config hash.
Exit codes: 0 success, 1 check failure, 2 non-convergence or blow-up,
3 invalid input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig, load_config
from .dynamics import stability_experiment
from .errors import (BracketFailure, InvalidMass, NoConvergence,
                     PropertyViolation)
from .profiles import make_polytrope, reduce_profile
from .radial_field import RadialDensity, RadialGrid, lp_norm, make_external
from .rearrange import CellProfile, rearranged_cells, riesz_gain
from .regularity import regularity_report
from .variational import (SolverOptions, SteadyState, el_residual,
                          feasibility_corpus, solve_steady_state)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_NO_CONVERGENCE = 2
EXIT_INVALID = 3


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "out", None):
        cfg = replace(cfg, out=args.out)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg


def _solve(cfg: RunConfig, r_init: float = 1.0) -> SteadyState:
    micro = make_polytrope(cfg.profile.k)
    external = make_external(cfg.external.kind, cfg.external.params)
    opts = SolverOptions(omega=cfg.solver.omega, tol=cfg.solver.tol,
                         max_iter=cfg.solver.max_iter, n_nodes=cfg.grid.n,
                         r_init=r_init)
    grid = None
    if cfg.grid.r_max is not None:
        grid = RadialGrid.make(cfg.grid.n, cfg.grid.r_max, cfg.grid.mode)
    return solve_steady_state(micro, cfg.M, external=external, grid=grid,
                              opts=opts)


def _load_or_solve(cfg: RunConfig) -> SteadyState:
    outdir = cfg.out
    if (os.path.exists(os.path.join(outdir, "steady_state.json"))
            and os.path.exists(os.path.join(outdir, "steady_state.csv"))):
        return SteadyState.load(outdir)
    state = _solve(cfg)
    state.save(outdir, cfg.config_hash())
    return state


def _print_state(state: SteadyState):
    e = state.energies
    print(f"E0       = {state.E0:.8f}")
    print(f"R0       = {state.R0:.8f}")
    print(f"E_kin    = {e.e_kin:.8f}")
    print(f"Casimir  = {e.casimir:.8f}")
    print(f"E_pot^1  = {e.e_pot1:.8f}")
    print(f"E_pot^ext= {e.e_pot_ext:.8f}")
    print(f"E_C      = {e.e_c:.8f}")
    print(f"E_C^r    = {e.e_c_r:.8f}")
    print(f"residual = {state.diagnostics.get('residual', float('nan')):.3e}")


def cmd_solve(cfg: RunConfig) -> int:
    try:
        state = _solve(cfg)
    except (NoConvergence, BracketFailure) as exc:
        os.makedirs(cfg.out, exist_ok=True)
        doc = {"error": str(exc), "config_sha256": cfg.config_hash()}
        if isinstance(exc, NoConvergence):
            doc["diagnostics"] = {k: v for k, v in exc.diagnostics.items()
                                  if np.isscalar(v) or isinstance(v, list)}
        with open(os.path.join(cfg.out, "solve_failure.json"), "w") as fh:
            json.dump(doc, fh, indent=2, default=float)
            fh.write("\n")
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    state.save(cfg.out, cfg.config_hash())
    _print_state(state)
    return EXIT_OK


def _corpus_checks(checks: list):
    reduced = {n: reduce_profile(make_polytrope(n - 1.0))
               for n in (1.1, 1.5, 1.9)}
    corpus = feasibility_corpus()
    norm_ok = 0
    riesz_ok = 0
    interp_ok = {n: 0 for n in reduced}
    for dens in corpus:
        cells = CellProfile.from_radial(dens)
        star = rearranged_cells(cells)
        if all(cells.lp_norm(p) == star.lp_norm(p) for p in (1.0, 2.0, 4.0)):
            norm_ok += 1
        try:
            riesz_gain(dens)
            riesz_ok += 1
        except PropertyViolation:
            pass
        m = dens.mass
        l43 = lp_norm(dens, 4.0 / 3.0)
        for n in reduced:
            bound = m ** ((3.0 - n) / 4.0) * lp_norm(
                dens, 1.0 + 1.0 / n) ** ((n + 1.0) / 4.0)
            if l43 <= bound * (1.0 + 1e-9):
                interp_ok[n] += 1
    total = len(corpus)
    checks.append(("norm_preservation", norm_ok == total,
                   f"{norm_ok}/{total} exact at cell level"))
    checks.append(("riesz_gain", riesz_ok == total,
                   f"{riesz_ok}/{total} within quadrature tolerance"))
    for n, count in interp_ok.items():
        checks.append((f"interpolation_n{n:g}", count == total,
                       f"{count}/{total} densities"))


def _regularity_checks(state: SteadyState, checks: list):
    rep = regularity_report(state)
    sm = rep.smoothing
    checks.append(("smoothing", sm.passed,
                   f"{sm.verdict} variation={sm.variation:.4f}"))
    checks.append(("holder", rep.holder.verdict == "PASS",
                   f"{rep.holder.verdict} growth={rep.holder.growth:.4f} "
                   f"exponent={rep.holder.exponent:g}"))
    checks.append(("fourier_symbol", rep.symbol.verdict == "PASS",
                   f"{rep.symbol.verdict} "
                   f"max_rel_err={rep.symbol.max_rel_err:.4f}"))
    l4n_ok = rep.l4n is not None and np.isfinite(rep.l4n)
    detail = (f"norm={rep.l4n:.4f} bound_ratio={rep.l4n_ratio:.6f}"
              if l4n_ok else "not finite")
    checks.append(("l4n_norm", l4n_ok, detail))
    jumps = ", ".join(f"{row.n_nodes}:{row.max_jump:.3f}"
                      for row in rep.continuity)
    checks.append(("continuity_table", None, jumps))


def cmd_check(cfg: RunConfig, suite: str) -> int:
    try:
        state = _load_or_solve(cfg)
    except (NoConvergence, BracketFailure) as exc:
        print(f"no state to check: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE

    checks = []   # (name, passed | None for diagnostics, detail)
    res = el_residual(state)
    checks.append(("el_residual", res < 1e-4, f"{res:.3e}"))
    mass_err = abs(state.rho0.mass - state.M) / state.M
    checks.append(("mass_conservation", mass_err <= 1e-6, f"{mass_err:.3e}"))
    e = state.energies
    ident = abs(e.e_kin + e.casimir - e.psi_integral)
    ident_tol = 1e-5 * abs(e.psi_integral)
    checks.append(("energy_identity", ident <= ident_tol,
                   f"|E_kin+C-int(Psi)| = {ident:.3e}"))
    vals = state.rho0.values
    slack = 1e-12 * max(1.0, float(vals.max(initial=0.0)))
    compact = state.R0 < state.grid.r_max and vals[-1] == 0.0
    monotone = not np.any(np.diff(vals) > slack)
    checks.append(("monotone_compact", monotone and compact,
                   f"monotone={monotone} compact={compact}"))

    if suite in ("inequalities", "all"):
        _corpus_checks(checks)
    if suite in ("regularity", "all"):
        _regularity_checks(state, checks)

    width = max(len(name) for name, _, _ in checks)
    failed = False
    for name, passed, detail in checks:
        if passed is None:
            tag = "INFO"
        elif passed:
            tag = "PASS"
        else:
            tag = "FAIL"
            failed = True
        print(f"{name:<{width}}  {tag}  {detail}")

    os.makedirs(cfg.out, exist_ok=True)
    doc = {
        "config_sha256": cfg.config_hash(),
        "suite": suite,
        "checks": [{"name": n, "passed": None if p is None else bool(p),
                    "detail": d}
                   for n, p, d in checks],
        "all_pass": not failed,
    }
    with open(os.path.join(cfg.out, "check_report.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_evolve(cfg: RunConfig, threads: int) -> int:
    try:
        state = _load_or_solve(cfg)
        d = cfg.dynamics
        metrics = stability_experiment(
            state, delta_pert=d.delta_pert, n_particles=d.N, dt=d.dt,
            t_end=d.t_end, seed=cfg.seed, threads=threads,
            softening=d.softening, field_mode=d.field_mode)
    except (NoConvergence, BracketFailure) as exc:
        print(f"evolve failed: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE

    os.makedirs(cfg.out, exist_ok=True)
    chash = cfg.config_hash()
    metrics.to_csv(os.path.join(cfg.out, "stability.csv"),
                   comment=f"config={chash}")
    n_steps = int(round(d.t_end / d.dt))
    flagged_frac = len(metrics.flagged_steps) / max(n_steps, 1)
    doc = {
        "config_sha256": chash,
        "delta_pert": d.delta_pert,
        "t_dyn": metrics.t_dyn,
        "initial_combined": metrics.initial_combined,
        "max_combined": metrics.max_combined,
        "excursion_ratio": metrics.excursion_ratio,
        "max_ec_drift": float(np.max(np.abs(metrics.ec_drift))),
        "max_mass_drift": float(np.max(np.abs(metrics.mass_drift))),
        "flagged_step_fraction": flagged_frac,
        "wall_time": metrics.wall_time,
    }
    with open(os.path.join(cfg.out, "stability_summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2, default=float)
        fh.write("\n")
    print(f"initial combined = {metrics.initial_combined:.6e}")
    print(f"max combined     = {metrics.max_combined:.6e}")
    print(f"excursion ratio  = {metrics.excursion_ratio:.3f}")
    print(f"max E_C drift    = {doc['max_ec_drift']:.3e}")
    if flagged_frac > 0.10:
        print(f"warning: {flagged_frac:.0%} of steps moved a particle "
              f"beyond the step-rejection threshold; reduce dt",
              file=sys.stderr)
    return EXIT_OK


_SWEEP_COLUMNS = ("param", "value", "status", "E0", "R0", "e_kin", "casimir",
                  "psi_integral", "e_pot1", "e_pot_ext", "e_c", "e_c_r",
                  "residual")


def cmd_sweep(cfg: RunConfig, param: str, values: list) -> int:
    if not values:
        print("sweep needs a nonempty --values list", file=sys.stderr)
        return EXIT_INVALID
    rows = []
    n_ok = 0
    r_init = 1.0
    for val in values:
        sub = replace(cfg, out=os.path.join(cfg.out, f"{param}_{val:g}"))
        if param == "M":
            sub = replace(sub, M=val)
        elif param == "k":
            sub = replace(sub, profile=replace(cfg.profile, k=val))
        else:   # Mext: kuzmin external of mass val
            params = dict(cfg.external.params) or {"a": 1.0}
            params["M"] = val
            params.setdefault("a", 1.0)
            sub = replace(sub, external=replace(cfg.external, kind="kuzmin",
                                                params=params))
        try:
            sub.validate()
            state = _solve(sub, r_init=r_init)
        except (NoConvergence, BracketFailure, ValueError, InvalidMass) as exc:
            print(f"{param}={val:g}: failed ({exc})", file=sys.stderr)
            rows.append((param, val, "failed") + ("",) * 10)
            continue
        state.save(sub.out, sub.config_hash())
        e = state.energies
        rows.append((param, val, "ok", state.E0, state.R0, e.e_kin,
                     e.casimir, e.psi_integral, e.e_pot1, e.e_pot_ext,
                     e.e_c, e.e_c_r,
                     state.diagnostics.get("residual", "")))
        print(f"{param}={val:g}: E0={state.E0:.6f} R0={state.R0:.6f}")
        r_init = state.R0
        n_ok += 1

    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "sweep.csv"), "w", newline="\n") as fh:
        fh.write(f"# config={cfg.config_hash()}\n")
        fh.write(",".join(_SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(c)) if isinstance(c, float)
                              else str(c) for c in row) + "\n")
    return EXIT_OK if n_ok > 0 else EXIT_NO_CONVERGENCE


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="flatdisk",
        description="Steady states and stability of self-gravitating "
                    "razor-thin disks")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap for parallel sections")
    sub = p.add_subparsers(dest="command", required=True)
    for name, desc in (("solve", "solve the constrained minimizer"),
                       ("check", "run property checks against a state"),
                       ("evolve", "perturb and evolve the sampled state"),
                       ("sweep", "solve across a parameter list")):
        sp = sub.add_parser(name, help=desc)
        sp.add_argument("--config", help="JSON config path")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        if name == "check":
            sp.add_argument("--suite",
                            choices=("inequalities", "regularity", "all"),
                            default="all")
        if name == "sweep":
            sp.add_argument("--param", choices=("M", "k", "Mext"),
                            required=True)
            sp.add_argument("--values", required=True,
                            help="comma-separated numbers")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _build_config(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "solve":
        return cmd_solve(cfg)
    if args.command == "check":
        return cmd_check(cfg, args.suite)
    if args.command == "evolve":
        return cmd_evolve(cfg, args.threads)
    try:
        values = [float(tok) for tok in args.values.split(",") if tok.strip()]
    except ValueError as exc:
        print(f"invalid --values: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return cmd_sweep(cfg, args.param, values)


if __name__ == "__main__":
    sys.exit(main())
