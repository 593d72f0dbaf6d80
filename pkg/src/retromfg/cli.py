"""
Command-line driver: one experiment per invocation.

    retromfg --config exp.yaml [--out DIR] [--workers N] [--seed K] [--override key=value ...]

Exit status is 0 on success, 1 when the experiment itself fails (the reason
is written to ``failure.json`` in the output directory and echoed as JSON on
stderr) and 2 for an invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import traceback
from pathlib import Path

import numpy as np
import yaml

from . import carleman, families, forward, retro
from .config import ConfigError, ExperimentConfig, parse_config
from .expr import GRAMMAR_VERSION, field_from_expr
from .grid import build_grid, integrate
from .io import write_csv, write_field
from .report import svg_plot, to_jsonable, write_json

logger = logging.getLogger(__name__)

__all__ = ["main", "run_experiment", "build_problem", "build_spacetime_grid"]


def build_spacetime_grid(cfg: ExperimentConfig):
    g = cfg.block("grid")
    return build_grid(g["half_widths"], g["T"], g["nodes"], g["time_steps"])


def build_problem(cfg: ExperimentConfig) -> forward.MfgProblem:
    grid = build_spacetime_grid(cfg)
    p = cfg.block("problem")
    m0 = field_from_expr(grid, p["m_0"])
    if p["normalize_m0"]:
        m0 = forward.unit_mass(m0)
    g0 = field_from_expr(grid, p["g0"], spacetime=True)
    interaction = forward.InteractionSpec(
        p["c1"], p["c2"], p["s1"], p["s2"], None if not np.any(g0.values) else g0
    )
    return forward.MfgProblem(
        grid, p["beta"], field_from_expr(grid, p["kappa"]), field_from_expr(grid, p["v_T"]), m0,
        interaction, forward.KernelSpec(p["k0"], p["sigma_k"]),
        require_unit_mass=p["normalize_m0"], linear_solver=p["linear_solver"],
        allow_cfl_violation=p["allow_cfl_violation"], kappa_expr=p["kappa"],
    )


def _picard(cfg, problem):
    p = cfg.block("problem")
    return forward.picard_solve(problem, p["damping"], p["tol"], p["max_iter"])


def _objective(cfg, problem):
    w = cfg.block("weight")
    return retro.WeightedObjective.default(problem, lam=w["lambda"], nu=w["nu"], a=w["a"], alpha=w["alpha"])


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _orders(hs, errs):
    out = []
    for (h0, e0), (h1, e1) in zip(zip(hs, errs), zip(hs[1:], errs[1:])):
        out.append(math.log(e0 / e1) / math.log(h0 / h1) if e0 > 0 and e1 > 0 else math.nan)
    return out


# ---------------------------------------------------------------- runners
# each returns (summary, {table name: rows}, {plot name: kwargs}, {field name: ScalarField})


def run_identity(cfg):
    blk = cfg.block("identity")
    hw = cfg.block("grid")["half_widths"]
    rows = []
    for n in blk["resolutions"]:
        g = build_grid(hw, 1.0, n, 2)
        rep = carleman.verify_identity(field_from_expr(g, blk["field"]), blk["bc"])
        row = dict(nodes=n, h=rep.h, lhs=rep.lhs, rhs=rep.rhs, relative_gap=rep.relative_gap)
        if blk["exact"] is not None:
            row["lhs_error"] = abs(rep.lhs - blk["exact"])
            row["rhs_error"] = abs(rep.rhs - blk["exact"])
        rows.append(row)
    hs = [r["h"] for r in rows]
    summary = dict(rows=rows, gap_orders=_orders(hs, [r["relative_gap"] for r in rows]))
    if blk["exact"] is not None:
        summary["lhs_orders"] = _orders(hs, [r["lhs_error"] for r in rows])
    plot = dict(series={"relative gap": (hs, [r["relative_gap"] for r in rows])}, logx=True, logy=True,
                title="identity gap", xlabel="h", ylabel="relative gap")
    return summary, {"identity": rows}, {"identity": plot}, {}


def _holdout(which, holdout, cal, blk):
    reps = carleman.estimate_reports(which, holdout, [x for x in blk["lambda_grid"] if x >= cal.lambda_star],
                                     cal.nu, blk["beta"], a=blk["a"], sigma=cal.sigma)
    margins = [r.margin(cal.C) for _, r in reps]
    return reps, all(m >= 0 for m in margins), min(r.critical_C() for _, r in reps)


def run_carleman(cfg):
    blk = cfg.block("carleman")
    grid = build_spacetime_grid(cfg)
    cal_ss, hold_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    kw = dict(max_mode=blk["max_mode"], n_terms=blk["n_terms"])
    fam = families.cosine_family(grid, blk["family_size"], cal_ss, **kw)
    hold = families.cosine_family(grid, blk["holdout_size"], hold_ss, **kw)
    which = blk["estimate"]
    nus = blk["nu_grid"] if which == "backward" else [blk["nu"]]
    search, chosen = [], None
    for nu in nus:
        cal = carleman.calibrate_constant(which, fam, blk["lambda_grid"], nu, blk["beta"], a=blk["a"],
                                          sigma=blk["sigma"], certify=blk["certify"])
        reps, ok, crit = _holdout(which, hold, cal, blk)
        search.append(dict(nu=nu, C=cal.C, degenerate=cal.degenerate, violated=cal.violated,
                           binding_member=cal.binding_member, binding_lambda=cal.binding_lambda,
                           holdout_ok=ok, holdout_min_critical_C=crit))
        if chosen is None and cal.C > 0 and ok:
            chosen = (cal, reps, ok, crit)
    tables = {"nu_search": search} if which == "backward" else {}
    summary = dict(estimate=which, certify=blk["certify"], sigma=blk["sigma"], nu_search=search)
    if chosen is None:
        summary.update(found=False)
        return summary, tables, {}, {}
    cal, reps, ok, crit = chosen
    summary.update(found=True, nu0=cal.nu, calibration=cal.summary(), holdout_ok=ok, holdout_min_critical_C=crit)
    rows = [dict(set="calibration", **r) for r in cal.rows()]
    rows += [dict(set="holdout", member=i, **r.with_C(cal.C).as_dict()) for i, r in reps]
    tables["carleman"] = rows
    lam = sorted({r["lam"] for r in rows})
    series = {}
    for name in ("calibration", "holdout"):
        series[f"min critical C ({name})"] = (
            lam, [min(r.critical_C() for _, r in (cal.reports if name == "calibration" else reps) if r.lam == x) for x in lam]
        )
    series["calibrated C"] = (lam, [cal.C] * len(lam))
    plot = dict(series=series, logy=True, title=f"{which} estimate", xlabel="lambda", ylabel="C")
    return summary, tables, {"carleman": plot}, {}


def run_forward(cfg):
    problem = build_problem(cfg)
    pair = _picard(cfg, problem)
    g = problem.grid
    masses = [integrate(pair.m, time_index=k) for k in range(g.time_steps + 1)]
    bounds = retro.measured_bounds(pair, problem)
    summary = dict(
        picard_iterations=pair.picard_iterations, final_update_norm=pair.final_update_norm,
        residual_norms=list(pair.residual_norms), mass_drift=max(abs(m - masses[0]) for m in masses),
        min_density=float(pair.m.values.min()), contraction_ratios=pair.contraction_ratios,
        measured_bounds=dict(M1=bounds.M1, M2=bounds.M2, M3=bounds.M3, M4=bounds.M4, M=bounds.M),
    )
    trace = [dict(iteration=i + 1, update=u) for i, u in enumerate(pair.update_trace)]
    plot = dict(series={"sup |m_new - m|": (list(range(1, len(trace) + 1)), pair.update_trace)}, logy=True,
                title="Picard updates", xlabel="iteration", ylabel="update")
    return summary, {"picard": trace}, {"picard": plot}, {"v": pair.v, "m": pair.m}


def run_retro(cfg):
    problem = build_problem(cfg)
    truth = _picard(cfg, problem)
    sw = cfg.block("sweep") if "sweep" in cfg.blocks else {"delta": 0.0, "method": "gauss-newton", "max_iter": 50}
    exact = retro.exact_data(truth)
    data = retro.perturb_data(exact, sw["delta"], _derived_seed(cfg.seed))
    res = retro.reconstruct(data, _objective(cfg, problem), method=sw["method"], max_iter=sw["max_iter"], truth=truth)
    summary = dict(delta=sw["delta"], data_norm=retro.data_norm(data, exact), converged=res.converged,
                   iterations=res.iterations, message=res.message, objective=res.objective_trace[-1],
                   gradient_norm=res.gradient_norm, errors_vs_truth=res.errors)
    trace = [dict(iteration=i, objective=f) for i, f in enumerate(res.objective_trace)]
    plot = dict(series={"J": (list(range(len(trace))), res.objective_trace)}, logy=True,
                title="objective", xlabel="iteration", ylabel="J")
    return summary, {"objective": trace}, {"objective": plot}, {"v_hat": res.v_hat, "m_hat": res.m_hat, "v": truth.v, "m": truth.m}


def run_sweep(cfg):
    problem = build_problem(cfg)
    sw = cfg.block("sweep")
    truth = _picard(cfg, problem)
    seeds = [_derived_seed(cfg.seed, s) for s in sw["seeds"]]
    res = retro.stability_sweep(problem, sw["delta_grid"], seeds, _objective(cfg, problem), truth=truth,
                                workers=cfg.workers, method=sw["method"], max_iter=sw["max_iter"])
    deltas = sorted(set(res.delta_grid))
    series = {}
    for key in retro.ERROR_KEYS:
        xs, ys = [], []
        for d in deltas:
            sel = [r for r in res.rows if r["delta"] == d and r["converged"]]
            if sel:
                xs.append(float(np.mean([r["data_norm"] for r in sel])))
                ys.append(float(np.mean([r[key] for r in sel])))
        series[key] = (xs, ys)
    plot = dict(series=series, logx=True, logy=True, title="error against data norm", xlabel="data norm", ylabel="error")
    return res.summary(), {"sweep": res.rows}, {"sweep": plot}, {}


def run_uniqueness(cfg):
    problem = build_problem(cfg)
    n = cfg.blocks.get("sweep", {}).get("n_inits", 4)
    sw = cfg.blocks.get("sweep") or {}
    rep = retro.uniqueness_check(problem, _objective(cfg, problem), n, seed=cfg.seed, truth=_picard(cfg, problem),
                                 method=sw.get("method", "gauss-newton"), max_iter=sw.get("max_iter", 50))
    rows = [dict(init=i, objective=f, converged=i not in rep.non_converged) for i, f in enumerate(rep.objectives)]
    return rep.as_dict(), {"inits": rows}, {}, {}


RUNNERS = {
    "verify-identity": run_identity,
    "verify-carleman": run_carleman,
    "solve-forward": run_forward,
    "solve-retro": run_retro,
    "stability-sweep": run_sweep,
    "uniqueness-check": run_uniqueness,
}


def _origin(exc: BaseException) -> str:
    """Innermost package module in the traceback."""
    mod = "cli"
    for fr in traceback.extract_tb(exc.__traceback__):
        p = Path(fr.filename)
        if p.parent.name == "retromfg":
            mod = p.stem
    return mod


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> int:
    """Run one experiment and write its artifacts; returns the exit status."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.as_dict()
    resolved["expression_grammar"] = GRAMMAR_VERSION
    (out / "config.resolved.yaml").write_text(yaml.safe_dump(to_jsonable(resolved), sort_keys=False))
    try:
        summary, tables, plots, fields = RUNNERS[cfg.kind](cfg)
    except Exception as exc:  # reported, not raised: the exit code carries it
        fail = dict(status="error", kind=cfg.kind, module=_origin(exc), error=type(exc).__name__, reason=str(exc))
        write_json(out / "failure.json", fail)
        print(json.dumps(fail), file=sys.stderr)
        logger.debug("experiment failed", exc_info=True)
        return 1
    for name, rows in tables.items():
        write_csv(out / f"{name}.csv", rows)
    for name, kw in plots.items():
        svg_plot(out / f"{name}.svg", **kw)
    for name, f in fields.items():
        write_field(out / f"{name}.field", f)
    write_json(out / "summary.json", dict(status="ok", kind=cfg.kind, seed=cfg.seed, results=summary))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="retromfg", description="Run one retrospective mean-field-games experiment.")
    ap.add_argument("--config", required=True, metavar="PATH", help="YAML experiment file")
    ap.add_argument("--out", metavar="DIR", help="output directory (overrides 'output')")
    ap.add_argument("--workers", type=int, metavar="N", help="worker processes (overrides 'workers')")
    ap.add_argument("--seed", type=int, metavar="K", help="master seed (overrides 'seed')")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override, repeatable")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    try:
        cfg = parse_config(args.config, overrides=overrides)
    except ConfigError as exc:
        print(json.dumps(dict(status="config-error", errors=exc.errors)), file=sys.stderr)
        return 2
    return run_experiment(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
