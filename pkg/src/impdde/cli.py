"""Command-line interface: ``impdde {solve,check,extend,scenarios}``.

Exit codes: 0 ok, 2 configuration or usage error, 3 solver did not converge,
4 numerical blow-up, 5 a hypothesis inequality fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import hypotheses as hyp
from .config import ConfigError, LoadedConfig, list_scenarios, load_config
from .core import build_mesh
from .errors import DomainError, NumericError
from .evolution import build_cache
from .exprdsl import EvalError, ExprError, parse
from .io import write_json, write_trajectory
from .operators import phi_tilde
from .prolongation import extend_solution, gronwall_bound
from .solver import solve, verify_solution

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_BLOWUP, EXIT_HYPOTHESIS = 0, 2, 3, 4, 5

log = logging.getLogger("impdde")


def _setup_logging():
    level = os.environ.get("IMPDDE_LOG", "").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _common(defaults: bool) -> argparse.ArgumentParser:
    """Flags accepted before or after the command name."""
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="config file or built-in scenario name")
    p.add_argument("--out", default=d("."), help="output directory")
    p.add_argument("--grid-step", type=float, default=d(None), help="mesh step (overrides the config)")
    p.add_argument("--seed", type=int, default=d(0), help="sampling seed")
    p.add_argument("--samples", type=int, default=d(2000), help="samples per estimated constant")
    p.add_argument("--json", action="store_true", default=d(False), help="print machine-readable output")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impdde", parents=[_common(True)], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(False)
    sub.add_parser("solve", parents=[common], help="solve on [-r, tau] and write the trajectory")
    c = sub.add_parser("check", parents=[common], help="check the hypothesis inequalities")
    g = c.add_mutually_exclusive_group()
    g.add_argument("--rho", type=float, default=None, help="ball radius (default: config operator.rho)")
    g.add_argument("--find-rho", action="store_true", help="search the smallest feasible rho")
    c.add_argument("--rho-max", type=float, default=100.0, help="upper end of the rho search")
    c.add_argument("--include-h4", action="store_true", help="require the H4 inequalities in the rho search")
    c.add_argument("--estimate", action="store_true", help="estimate L, N_q, K, Psi by sampling")
    e = sub.add_parser("extend", parents=[common], help="solve, then continue past tau")
    e.add_argument("--to", type=float, required=True, help="end time T > tau")
    e.add_argument("--growth", default=None, help="growth bound h(t) for the a-priori estimate")
    sub.add_parser("scenarios", parents=[common], help="list built-in scenarios")
    return parser


def _load(args) -> tuple[LoadedConfig, object, object]:
    if not args.config:
        raise ConfigError("--config", "a config file or scenario name is required")
    cfg = load_config(args.config)
    step = args.grid_step if args.grid_step is not None else cfg.grid_step
    mesh = build_mesh(cfg.spec, step)
    cache = build_cache(cfg.spec, mesh)
    return cfg, mesh, cache


def _emit(args, text: str, obj) -> None:
    print(json.dumps(obj, indent=2, default=float) if args.json else text)


def _solve(cfg, cache):
    z, diag = solve(cfg.spec, cache, cfg.operator, cfg.solver)
    ver = verify_solution(cfg.spec, cache, z)
    return z, diag, ver


def _summary(cfg, diag, ver) -> str:
    return "\n".join([
        f"system: {cfg.spec.name}",
        f"converged: {diag.converged} after {diag.iterations} iterations",
        f"last step: {diag.final_residual:.3e}, fixed-point residual: {diag.characterization_residual:.3e}",
        f"empirical contraction: {diag.empirical_contraction:.4f}",
        f"residuals ode/impulse/non-local: {ver.ode_residual:.3e} / {ver.impulse_residual:.3e} / {ver.nonlocal_residual:.3e}",
    ])


def cmd_solve(args) -> int:
    cfg, mesh, cache = _load(args)
    z, diag, ver = _solve(cfg, cache)
    out = Path(args.out)
    write_trajectory(z, out / "trajectory.csv")
    text = _summary(cfg, diag, ver)
    doc = {"system": cfg.spec.name, "M": cache.M, "nodes": len(mesh), **diag.to_dict(),
           "verification": ver.to_dict(), "summary": text}
    write_json(doc, out / "diagnostics.json")
    _emit(args, text, doc)
    return EXIT_OK if diag.converged else EXIT_NOT_CONVERGED


def constant_set(cfg: LoadedConfig, cache, radius: float, estimate: bool, samples: int, seed: int) -> hyp.ConstantSet:
    """Declared constants where available, sampled ones where requested."""
    spec, p, dc = cfg.spec, cfg.spec.partition, cfg.constants
    source = {"M": "declared" if dc.M is not None else "evolution"}
    vals = {}
    for key, trivial in (("L", p.N == 0), ("N_q", p.q == 0)):
        if trivial:
            vals[key], source[key] = 0.0, "exact"
        elif estimate:
            est = hyp.estimate_lipschitz_impulses if key == "L" else hyp.estimate_lipschitz_g
            vals[key], source[key] = float(est(spec, samples, radius, seed)), "estimated"
        elif getattr(dc, key) is not None:
            vals[key], source[key] = getattr(dc, key), "declared"
        else:
            raise ConfigError(f"constants.{key}", "not declared; declare it or pass --estimate")
    if estimate:
        grid = np.linspace(radius / 8, radius, 8)
        tables = hyp.estimate_K_Psi(spec, samples, grid, seed)
        K, Psi = tables.K, tables.Psi
        source["K"] = source["Psi"] = "estimated"
    else:
        if dc.K is None or dc.Psi is None:
            missing = "K" if dc.K is None else "Psi"
            raise ConfigError(f"constants.{missing}", "not declared; declare it or pass --estimate")
        K, Psi = dc.K, dc.Psi
        source["K"] = source["Psi"] = "declared"
    M = dc.M if dc.M is not None else cache.M
    return hyp.ConstantSet(M, vals["L"], vals["N_q"], p.q, K, Psi, source, hyp.structural_residual(spec))


def cmd_check(args) -> int:
    cfg, mesh, cache = _load(args)
    c = phi_tilde(cfg.spec, cache, cfg.operator).norm()
    rho = args.rho if args.rho is not None else cfg.operator.rho
    radius = c + (args.rho_max if args.find_rho else rho)
    consts = constant_set(cfg, cache, radius, args.estimate, args.samples, args.seed)
    alpha, beta = cfg.operator.alpha, cfg.operator.beta
    search = None
    if args.find_rho:
        search = hyp.find_rho(consts, cfg.spec.partition, c, alpha, beta, args.rho_max, args.include_h4)
        if not search.feasible:
            text = f"no feasible rho in (0, {args.rho_max}]; binding inequality: {search.binding}"
            doc = {"feasible": False, "binding": search.binding, "rho_max": args.rho_max, "summary": text}
            if consts.estimated:
                doc["caveat"] = hyp.CAVEAT
                text += "\n" + hyp.CAVEAT
            write_json(doc, Path(args.out) / "hypotheses.json")
            _emit(args, text, doc)
            return EXIT_HYPOTHESIS
        rho = search.rho
    report = hyp.check_hypotheses(consts, cfg.spec.partition, c, rho, alpha, beta)
    doc = report.to_dict()
    text = report.summary()
    if search is not None:
        doc["search"] = {"feasible": True, "rho": search.rho, "resolution": search.resolution}
        text = f"rho = {search.rho:.10g}\n" + text
    write_json(doc, Path(args.out) / "hypotheses.json")
    _emit(args, text, doc)
    return EXIT_OK if report.overall else EXIT_HYPOTHESIS


def _growth(cfg, text):
    if text is None:
        return cfg.constants.h
    try:
        ast = parse(text, "h")
    except ExprError as e:
        raise ConfigError("--growth", str(e)) from None
    return lambda t: float(ast.evaluate({**cfg.params, "t": float(t)}))


def cmd_extend(args) -> int:
    cfg, mesh, cache = _load(args)
    spec = cfg.spec
    if not args.to > spec.partition.tau:
        raise ConfigError("--to", f"end time {args.to} must exceed tau = {spec.partition.tau}")
    h = _growth(cfg, args.growth)
    z, diag, ver = _solve(cfg, cache)
    out = Path(args.out)
    doc = {"system": spec.name, "solve": diag.to_dict(), "to": args.to}
    if not diag.converged:
        write_trajectory(z, out / "trajectory.csv")
        doc["summary"] = _summary(cfg, diag, ver)
        write_json(doc, out / "extension.json")
        _emit(args, doc["summary"], doc)
        return EXIT_NOT_CONVERGED
    ext = extend_solution(spec, z, args.to)
    write_trajectory(ext.trajectory, out / "trajectory.csv")
    doc.update(escaped=ext.escaped, escape_time=ext.escape_time, end=ext.trajectory.mesh.end)
    lines = [f"extended to {ext.trajectory.mesh.end:.10g}"]
    if ext.escaped:
        lines.append(f"blow-up: escape time {ext.escape_time:.10g}")
    if h is not None:
        p = spec.partition
        a = p.s(p.N) if p.N else 0.0
        b = ext.trajectory.mesh.end
        bound = gronwall_bound(spec, ext.trajectory, (a, b), h, M=cache.M if cfg.constants.M is None else None)
        seen = ext.trajectory.values[ext.trajectory.times >= a]
        peak = float(np.max(np.linalg.norm(seen, axis=1)))
        doc["gronwall"] = {"interval": [a, b], "bound": bound, "max_norm": peak, "exceeded": peak > bound}
        lines.append(f"Gronwall bound on [{a:.6g}, {b:.6g}]: {bound:.6g} (max norm {peak:.6g})")
    doc["summary"] = "\n".join(lines)
    write_json(doc, out / "extension.json")
    _emit(args, doc["summary"], doc)
    return EXIT_BLOWUP if ext.escaped else EXIT_OK


def cmd_scenarios(args) -> int:
    items = list_scenarios()
    if args.json:
        print(json.dumps(items, indent=2))
    else:
        width = max(len(s["name"]) for s in items)
        for s in items:
            print(f"{s['name']:<{width}}  {s['description']}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "check": cmd_check, "extend": cmd_extend, "scenarios": cmd_scenarios}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, EvalError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
