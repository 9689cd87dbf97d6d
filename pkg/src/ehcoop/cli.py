"""Command-line front end.

Subcommands: solve, example, region, coopprob, bsweep, oracle.  Every
file-writing command drops a manifest.json next to its outputs recording
the command line, resolved config, seed, tool version and duration, so a
run can be repeated exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .analysis import (battery_sweep, check_propositions,
                       cooperation_probability, rate_region)
from .baseline import solve_no_coop
from .io import (format_float, load_config, report_to_dict, tool_version,
                 write_csv, write_manifest)
from .model import (ConfigError, DomainError, ScenarioConfig, ShapeError,
                    child_rng, primary_coop_rate, sample_realization,
                    secondary_rate)
from .optimizer import solve
from .oracle import GridBudgetError, brute_force_solve
from .reference import reference_instance, reference_policy

__all__ = ["main"]


def _resolve_config(path) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return load_config(path)


def _instance(cfg: ScenarioConfig, seed: int):
    return sample_realization(cfg, child_rng(seed, 0))


def _grid(lo: float, hi: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if steps == 1:
        return np.asarray([lo], dtype=float)
    return np.linspace(lo, hi, steps)


def _print_policy(pol):
    print("slot      p_d  delta_r     p_sp     p_ss")
    for i in range(pol.p_d.size):
        print(f"{i + 1:4d} {pol.p_d[i]:8.4f} {pol.delta_r[i]:8.4f}"
              f" {pol.p_sp[i]:8.4f} {pol.p_ss[i]:8.4f}")
    print(f"sum(p_d + delta_r) = {np.sum(pol.p_d + pol.delta_r):.4f}")
    print(f"sum(p_sp + p_ss)   = {np.sum(pol.p_sp + pol.p_ss):.4f}")


def _print_audit(audit):
    if not audit.applicable:
        print("audit: not applicable (solve did not converge)")
        return
    m4 = ",".join(str(s + 1) for s in audit.prop4_violations) or "none"
    m5 = ",".join(str(s + 1) for s in audit.prop5_violations) or "none"
    print(f"audit: floor gap {audit.prop1_gap:.2e},"
          f" PT energy gap {audit.prop2_gap:.2e},"
          f" ST energy gap {audit.prop3_gap:.2e},"
          f" transfer-and-relay slots {m4}, direct-power slots {m5}"
          f" -> {'pass' if audit.ok else 'fail'}")


def _manifest(out_dir, argv, cfg, seed, outputs, t0):
    path = os.path.join(out_dir, "manifest.json")
    write_manifest(path, "ehcoop " + " ".join(argv), cfg, seed, outputs,
                   time.perf_counter() - t0)


def _cmd_solve(args, argv):
    t0 = time.perf_counter()
    cfg = _resolve_config(args.config)
    ch, hv = _instance(cfg, args.seed)
    rep = solve(cfg, ch, hv)
    audit = check_propositions(rep, cfg)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    doc = report_to_dict(rep)
    doc["audit"] = {
        "prop1_gap": audit.prop1_gap, "prop2_gap": audit.prop2_gap,
        "prop3_gap": audit.prop3_gap,
        "prop4_violations": audit.prop4_violations,
        "prop5_violations": audit.prop5_violations,
        "applicable": audit.applicable, "ok": audit.ok, "tol": audit.tol,
    }
    with open(report_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(args.out, argv, cfg, args.seed, [report_path], t0)
    state = "converged" if rep.converged else "did not converge"
    print(f"{state} in {rep.iterations} iterations;"
          f" objective {rep.objective:.4f} nats,"
          f" benchmark {rep.rates.r_p_bar:.4f} nats/slot,"
          f" cooperation {'on' if rep.cooperation_successful else 'off'}")
    _print_policy(rep.policy)
    _print_audit(audit)
    print(f"wrote {report_path}")
    return 0


def _cmd_example(args, argv):
    cfg, ch, hv = reference_instance()
    rep = solve(cfg, ch, hv)
    print("Built-in five-slot demonstration instance")
    print(f"no-cooperation benchmark: {rep.rates.r_p_bar:.4f} nats/slot")
    print()
    print("Published cooperative schedule:")
    ref = reference_policy()
    _print_policy(ref)
    ref_obj = float(np.sum(primary_coop_rate(ch, ref.p_d, ref.p_sp)))
    print(f"objective {ref_obj:.4f} nats,"
          f" secondary {np.sum(secondary_rate(ch, ref.p_ss)):.4f} nats")
    print()
    print("Solver schedule:")
    _print_policy(rep.policy)
    print(f"objective {rep.objective:.4f} nats"
          f" ({rep.iterations} iterations)")
    _print_audit(check_propositions(rep, cfg))
    return 0


def _cmd_region(args, argv):
    t0 = time.perf_counter()
    cfg = _resolve_config(args.config)
    ch, hv = _instance(cfg, args.seed)
    grid = _grid(args.rs_from, args.rs_to, args.steps)
    nan = float("nan")
    joint = rate_region(cfg, ch, hv, grid, mode="joint") \
        if args.mode in ("joint", "both") else np.full(grid.size, nan)
    info = rate_region(cfg, ch, hv, grid, mode="info") \
        if args.mode in ("info", "both") else np.full(grid.size, nan)
    base = solve_no_coop(ch.h_p, hv.e_p).r_p_bar
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "region.csv")
    rows = [(grid[j], joint[j], info[j], base) for j in range(grid.size)]
    write_csv(path, ("rs_bar", "rp_joint", "rp_info", "rp_nocoop"), rows)
    _manifest(args.out, argv, cfg, args.seed, [path], t0)
    print(f"wrote {path}")
    return 0


def _cmd_coopprob(args, argv):
    t0 = time.perf_counter()
    cfg = _resolve_config(args.config)
    grid = _grid(args.rs_from, args.rs_to, args.steps)
    rows = []
    for rs in grid:
        c = replace(cfg, rs_bar=float(rs))
        pj = cooperation_probability(c, args.realizations, mode="joint",
                                     master_seed=args.seed,
                                     workers=args.workers)
        pi = cooperation_probability(c, args.realizations, mode="info",
                                     master_seed=args.seed,
                                     workers=args.workers)
        rows.append((float(rs), pj, pi, args.realizations))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "coopprob.csv")
    write_csv(path, ("rs_bar", "p_joint", "p_info", "realizations"), rows)
    _manifest(args.out, argv, cfg, args.seed, [path], t0)
    print(f"wrote {path}")
    return 0


def _cmd_bsweep(args, argv):
    t0 = time.perf_counter()
    cfg = _resolve_config(args.config)
    grid = _grid(args.bmax_from, args.bmax_to, args.steps)
    res = battery_sweep(cfg, grid, args.realizations, master_seed=args.seed,
                        workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "bsweep.csv")
    rows = [(res.grid[j], res.rate_joint[j], res.rate_info[j],
             args.realizations) for j in range(grid.size)]
    write_csv(path, ("b_max", "rp_joint", "rp_info", "realizations"), rows)
    _manifest(args.out, argv, cfg, args.seed, [path], t0)
    print(f"wrote {path}")
    return 0


def _cmd_oracle(args, argv):
    cfg = _resolve_config(args.config)
    ch, hv = _instance(cfg, args.seed)
    res = brute_force_solve(cfg, ch, hv, grid_step=args.grid_step)
    if not res.feasible:
        print("oracle: instance infeasible at this grid")
        rep = solve(cfg, ch, hv)
        print(f"solver: converged={rep.converged}")
        return 0
    rep = solve(cfg, ch, hv)
    gap = abs(rep.objective - res.objective) / max(1.0, abs(res.objective))
    print(f"oracle objective {format_float(res.objective)}"
          f" (grid step {format_float(res.grid_step)})")
    print(f"solver objective {format_float(rep.objective)}"
          f" (converged={rep.converged})")
    print(f"relative gap {gap:.3e}")
    _print_policy(res.policy)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ehcoop",
        description="Offline power policies for joint information and"
                    " energy cooperation between energy-harvesting"
                    " transmitters.")
    ap.add_argument("--version", action="version", version=tool_version())
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, out=True):
        p.add_argument("--config", default=None, help="TOML scenario file")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        if out:
            p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("solve", help="solve one sampled instance")
    common(p)
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("example", help="run the built-in demonstration")
    p.set_defaults(fn=_cmd_example)

    p = sub.add_parser("region", help="primary rate vs secondary floor")
    common(p)
    p.add_argument("--rs-from", type=float, required=True)
    p.add_argument("--rs-to", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--mode", choices=("joint", "info", "both"),
                   default="both")
    p.set_defaults(fn=_cmd_region)

    p = sub.add_parser("coopprob",
                       help="cooperation probability vs secondary floor")
    common(p)
    p.add_argument("--rs-from", type=float, required=True)
    p.add_argument("--rs-to", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--realizations", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_coopprob)

    p = sub.add_parser("bsweep", help="mean primary rate vs battery size")
    common(p)
    p.add_argument("--bmax-from", type=float, required=True)
    p.add_argument("--bmax-to", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--realizations", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_bsweep)

    p = sub.add_parser("oracle",
                       help="exhaustive check for short horizons (N <= 3)")
    common(p, out=False)
    p.add_argument("--grid-step", type=float, default=None)
    p.set_defaults(fn=_cmd_oracle)

    return ap


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args, list(argv))
    except (ConfigError, ShapeError, DomainError, GridBudgetError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
