"""Experiment runner: load a JSON scenario config, execute solve / verify /
constants / compare-oracle workflows, write CSV time series and JSON summaries.

Exit codes: 0 success, 1 verification failed, 2 fixed-point non-convergence,
3 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lossop, scenarios
from .condexp import LATTICE_MAX_STEPS, LatticeBackend, LatticeModel, RegressionBackend
from .model import LIPSCHITZ, QUADRATIC, ScenarioSpec, validate_assumptions
from .paths import antithetic as make_antithetic
from .paths import make_grid, sample_ensemble
from .picard import (ConvergenceError, contraction_estimate, picard_solve,
                     scenario_constants)
from .reflect import ReflectedSolution, default_tolerances
from .stitch import plan_intervals, solve_global, stitch_constants

HL_PROBE_PASS = 1.0 + 1e-6
CONTRACTION_SLACK = 0.1


class ConfigError(ValueError):
    pass


def _require_keys(section: str, cfg: dict, allowed: set[str]):
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"cli: unknown keys in {section}: {sorted(unknown)}")


@dataclass(eq=False)
class RunConfig:
    scenario: ScenarioSpec
    scenario_cfg: dict
    n: int
    N: int = 20000
    seed: int = 0
    antithetic: bool = True
    backend_kind: str = "regression"
    degree: int = 3
    mode: str | None = None
    picard_tol: float | None = None
    picard_max_iter: int = 50
    tol_constraint: float | None = None
    tol_flatness: float | None = None
    flat_slack: float = 1.0
    stitch_intervals: int | None = None
    stitch_auto: bool = False
    inflate_k: float = 0.0
    lattice_budget: float = 1e-10
    mc_budget: float = 1e-2
    raw: dict = field(default_factory=dict)


def load_config(path: str | Path, backend_override: str | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cli: cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cli: config is not valid JSON: {exc}") from exc
    return parse_config(raw, backend_override)


def parse_config(raw: dict, backend_override: str | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("cli: config must be a JSON object")
    _require_keys("config", raw, {"scenario", "grid", "ensemble", "backend",
                                  "mode", "picard", "tolerances", "stitch",
                                  "debug", "compare"})
    sc = raw.get("scenario")
    try:
        if isinstance(sc, str):
            spec = scenarios.get(sc).spec
        elif isinstance(sc, dict):
            spec = scenarios.scenario_from_dict(sc)
        else:
            raise ConfigError("cli: scenario must be a name or an inline object")
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"cli: bad scenario: {exc}") from exc

    grid_cfg = dict(raw.get("grid") or {})
    _require_keys("grid", grid_cfg, {"n", "T"})
    if "n" not in grid_cfg:
        raise ConfigError("cli: grid.n is required")
    n = int(grid_cfg["n"])
    if n < 1:
        raise ConfigError("cli: grid.n must be >= 1")
    if "T" in grid_cfg:
        horizon = float(grid_cfg["T"])
        if horizon <= 0:
            raise ConfigError("cli: grid.T must be positive")
        spec = scenarios.with_horizon(spec, horizon)

    ens_cfg = dict(raw.get("ensemble") or {})
    _require_keys("ensemble", ens_cfg, {"N", "seed", "antithetic", "d"})
    backend_cfg = dict(raw.get("backend") or {})
    _require_keys("backend", backend_cfg, {"kind", "degree"})
    backend_kind = backend_override or backend_cfg.get("kind", "regression")
    if backend_kind not in ("regression", "lattice"):
        raise ConfigError(f"cli: unknown backend kind {backend_kind!r}")

    mode = raw.get("mode")
    if mode is not None and mode not in (LIPSCHITZ, QUADRATIC):
        raise ConfigError(f"cli: invalid mode {mode!r}")

    pic_cfg = dict(raw.get("picard") or {})
    _require_keys("picard", pic_cfg, {"tol", "max_iter"})
    tol_cfg = dict(raw.get("tolerances") or {})
    _require_keys("tolerances", tol_cfg, {"constraint", "flatness", "flat_slack"})
    stitch_cfg = dict(raw.get("stitch") or {})
    _require_keys("stitch", stitch_cfg, {"intervals", "auto"})
    debug_cfg = dict(raw.get("debug") or {})
    _require_keys("debug", debug_cfg, {"inflate_k"})
    compare_cfg = dict(raw.get("compare") or {})
    _require_keys("compare", compare_cfg, {"lattice_budget", "mc_budget"})

    cfg = RunConfig(
        scenario=spec,
        scenario_cfg=scenarios.scenario_to_dict(spec),
        n=n,
        N=int(ens_cfg.get("N", 20000)),
        seed=int(ens_cfg.get("seed", 0)),
        antithetic=bool(ens_cfg.get("antithetic", True)),
        backend_kind=backend_kind,
        degree=int(backend_cfg.get("degree", 3)),
        mode=mode,
        picard_tol=(None if pic_cfg.get("tol") is None else float(pic_cfg["tol"])),
        picard_max_iter=int(pic_cfg.get("max_iter", 50)),
        tol_constraint=(None if tol_cfg.get("constraint") is None
                        else float(tol_cfg["constraint"])),
        tol_flatness=(None if tol_cfg.get("flatness") is None
                      else float(tol_cfg["flatness"])),
        flat_slack=float(tol_cfg.get("flat_slack", 1.0)),
        stitch_intervals=(None if stitch_cfg.get("intervals") is None
                          else int(stitch_cfg["intervals"])),
        stitch_auto=bool(stitch_cfg.get("auto", False)),
        inflate_k=float(debug_cfg.get("inflate_k", 0.0)),
        lattice_budget=float(compare_cfg.get("lattice_budget", 1e-10)),
        mc_budget=float(compare_cfg.get("mc_budget", 1e-2)),
        raw=raw,
    )
    if cfg.backend_kind == "lattice":
        if spec.brownian_dim != 1:
            raise ConfigError("cli: the lattice backend is one-dimensional")
        if n > LATTICE_MAX_STEPS:
            raise ConfigError(f"cli: the lattice backend supports n <= {LATTICE_MAX_STEPS}")
    else:
        if cfg.N < 2:
            raise ConfigError("cli: ensemble.N must be >= 2")
        if cfg.antithetic and cfg.N % 2:
            raise ConfigError("cli: antithetic ensembles need an even N")
    return cfg


def build_backend(cfg: RunConfig, grid):
    if cfg.backend_kind == "lattice":
        return LatticeBackend(LatticeModel(grid))
    half = cfg.N // 2 if cfg.antithetic else cfg.N
    ens = sample_ensemble(grid, half, cfg.scenario.brownian_dim, cfg.seed)
    if cfg.antithetic:
        ens = make_antithetic(ens)
    return RegressionBackend(ens, degree=cfg.degree)


def scenario_hash(spec: ScenarioSpec) -> str:
    payload = json.dumps(scenarios.scenario_to_dict(spec), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _inflate(solution: ReflectedSolution, amount: float) -> ReflectedSolution:
    """Negative control: add a spurious terminal jump to the reflection, which
    shifts every non-terminal value up and must break flatness."""
    k = solution.k.copy()
    k[-1] += amount
    y = [v + amount for v in solution.y[:-1]] + [solution.y[-1]]
    return ReflectedSolution(lo=solution.lo, hi=solution.hi, y=y, z=solution.z,
                             k=k, y_deflated=solution.y_deflated, x=solution.x,
                             rho=solution.rho,
                             diagnostics=dict(solution.diagnostics))


@dataclass(eq=False)
class RunResult:
    cfg: RunConfig
    grid: object
    backend: object
    solution: ReflectedSolution
    histories: list
    constants: object
    stitch_report: object = None
    runtime_ms: float = 0.0


def execute(cfg: RunConfig) -> RunResult:
    start = time.perf_counter()
    grid = make_grid(cfg.scenario.horizon, cfg.n)
    backend = build_backend(cfg, grid)
    mode = cfg.mode or cfg.scenario.mode
    stitch_report = None
    if cfg.stitch_intervals is not None or cfg.stitch_auto:
        constants = stitch_constants(cfg.scenario)
        plan = plan_intervals(cfg.scenario, grid, constants, mode,
                              intervals=cfg.stitch_intervals)
        solution, report = solve_global(cfg.scenario, grid, backend, plan,
                                        mode=mode, tol=cfg.picard_tol,
                                        max_iter=cfg.picard_max_iter)
        histories = report.histories
        stitch_report = report
    else:
        constants = scenario_constants(cfg.scenario)
        solution, history = picard_solve(cfg.scenario, grid, backend, mode=mode,
                                         tol=cfg.picard_tol,
                                         max_iter=cfg.picard_max_iter)
        histories = [history]
    if cfg.inflate_k:
        solution = _inflate(solution, cfg.inflate_k)
        recompute_diagnostics(cfg.scenario, grid, backend, solution)
    runtime_ms = (time.perf_counter() - start) * 1e3
    return RunResult(cfg=cfg, grid=grid, backend=backend, solution=solution,
                     histories=histories, constants=constants,
                     stitch_report=stitch_report, runtime_ms=runtime_ms)


def recompute_diagnostics(scenario, grid, backend, solution: ReflectedSolution):
    from .reflect import flatness_residual

    m = solution.hi - solution.lo
    constraint = np.empty(m + 1)
    constraint_se = np.empty(m + 1)
    for j in range(m + 1):
        vals = scenario.loss.evaluate(grid.nodes[solution.lo + j], solution.y[j])
        constraint[j], constraint_se[j] = backend.mean_se(solution.lo + j, vals)
    right, left = flatness_residual(scenario.loss, grid, backend,
                                    solution.y, solution.k, solution.lo)
    solution.diagnostics.update(
        constraint=constraint, constraint_se=constraint_se,
        min_constraint=float(np.min(constraint)),
        flatness_right=right, flatness_left=left)


def shift_at_zero_max(scenario, grid) -> float:
    law = lossop.EmpiricalLaw(np.array([0.0]), np.array([1.0]))
    return max(lossop.loss_operator(scenario.loss, float(t), law)
               for t in grid.nodes)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_results_csv(path: Path, result: RunResult):
    sol, grid, backend = result.solution, result.grid, result.backend
    d = backend.d
    cols = (["t", "mean_Y", "std_Y"] + [f"mean_Z_{j + 1}" for j in range(d)]
            + ["K", "dK", "constraint_value"])
    lines = [",".join(cols)]
    constraint = sol.diagnostics["constraint"]
    for j, y in enumerate(sol.y):
        i = sol.lo + j
        mean_y = backend.mean(i, y)
        var_y = max(backend.mean(i, (y - mean_y) ** 2), 0.0)
        mean_z = np.atleast_1d(backend.mean(i, sol.z[j]))
        dk = sol.k[j] - sol.k[j - 1] if j else 0.0
        row = ([_fmt(grid.nodes[i]), _fmt(mean_y), _fmt(math.sqrt(var_y))]
               + [_fmt(c) for c in mean_z]
               + [_fmt(sol.k[j]), _fmt(dk), _fmt(constraint[j])])
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def summarize(result: RunResult) -> dict:
    from .reflect import empirical_norms

    sol = result.solution
    history = result.histories[-1]
    try:
        est = contraction_estimate(history)
        contraction = {"max_ratio": est.max_ratio, "bound": est.bound,
                       "metric": est.metric}
    except ValueError:
        contraction = None
    norms = empirical_norms(sol.y, sol.z, sol.k, result.grid, result.backend, sol.lo)
    warnings = []
    for h in result.histories:
        warnings.extend(h.warnings)
    defaults = default_tolerances(sol, result.grid, result.cfg.flat_slack)
    if len(result.histories) == 1:
        distances = result.histories[0].distances
    else:
        distances = [h.distances for h in result.histories]
    resolved = {
        "scenario": result.cfg.scenario_cfg,
        "grid": {"T": result.grid.T, "n": result.grid.n},
        "ensemble": {"N": result.cfg.N, "seed": result.cfg.seed,
                     "antithetic": result.cfg.antithetic},
        "backend": {"kind": result.cfg.backend_kind, "degree": result.cfg.degree},
        "mode": result.cfg.mode or result.cfg.scenario.mode,
        "picard": {"tol": result.cfg.picard_tol,
                   "max_iter": result.cfg.picard_max_iter},
    }
    summary = {
        "config": result.cfg.raw,
        "resolved_config": resolved,
        "scenario_hash": scenario_hash(result.cfg.scenario),
        "seed": result.cfg.seed,
        "flatness_residual": sol.diagnostics["flatness_right"],
        "flatness_residual_left": sol.diagnostics["flatness_left"],
        "min_constraint": sol.diagnostics["min_constraint"],
        "picard_distances": distances,
        "picard_history": [h.to_dict() for h in result.histories],
        "contraction_ratio": contraction,
        "norms": norms,
        "constants_report": {
            **result.constants.to_dict(),
            "shift_at_zero_max": shift_at_zero_max(result.cfg.scenario, result.grid),
        },
        "default_tolerances": defaults,
        "warnings": warnings,
        "converged": all(h.converged for h in result.histories),
        "sweeps": sum(len(h.distances) for h in result.histories),
        "runtime_ms": result.runtime_ms,
    }
    if result.stitch_report is not None:
        summary["stitch"] = {
            "breaks": result.stitch_report.plan.breaks,
            "seam_constraints": result.stitch_report.seam_constraints,
            "seam_gaps": result.stitch_report.seam_gaps,
        }
    return summary


def write_summary(path: Path, summary: dict):
    path.write_text(json.dumps(summary, indent=2, sort_keys=True,
                               allow_nan=False, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def cmd_solve(args) -> int:
    cfg = load_config(args.config, args.backend)
    out = Path(args.out)
    result = execute(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", result)
    write_summary(out / "summary.json", summarize(result))
    return 0


def verify_checks(result: RunResult) -> list[dict]:
    sol, cfg = result.solution, result.cfg
    defaults = default_tolerances(sol, result.grid, cfg.flat_slack)
    eps_c = cfg.tol_constraint if cfg.tol_constraint is not None else defaults["constraint"]
    eps_f = cfg.tol_flatness if cfg.tol_flatness is not None else defaults["flatness"]

    checks = [
        {"name": "constraint_profile", "value": sol.diagnostics["min_constraint"],
         "threshold": -eps_c, "passed": bool(sol.diagnostics["min_constraint"] >= -eps_c)},
        {"name": "flatness", "value": sol.diagnostics["flatness_right"],
         "threshold": eps_f,
         "passed": bool(abs(sol.diagnostics["flatness_right"]) <= eps_f)},
        {"name": "k_monotone",
         "value": float(np.min(np.diff(sol.k), initial=0.0)),
         "threshold": 0.0,
         "passed": bool(sol.k[0] == 0.0 and np.all(np.diff(sol.k) >= 0.0))},
    ]

    history = result.histories[-1]
    try:
        est = contraction_estimate(history)
        checks.append({"name": "contraction_ratio", "value": est.max_ratio,
                       "threshold": est.bound + CONTRACTION_SLACK,
                       "passed": bool(est.max_ratio <= est.bound + CONTRACTION_SLACK)})
    except ValueError:
        checks.append({"name": "contraction_ratio", "value": None,
                       "threshold": None, "passed": True,
                       "detail": "not enough sweeps to estimate"})

    worst = hl_probe_worst(result)
    checks.append({"name": "hl_probe", "value": worst, "threshold": HL_PROBE_PASS,
                   "passed": bool(worst <= HL_PROBE_PASS)})

    report = validate_assumptions(cfg.scenario, probes=256, seed=cfg.seed + 1)
    checks.append({"name": "assumptions", "value": max(
        (c.worst_ratio for c in report.checks if math.isfinite(c.worst_ratio)),
        default=0.0), "threshold": 1.0 + 1e-9, "passed": report.passed})
    return checks


def hl_probe_worst(result: RunResult) -> float:
    """Probe the shift operator's mean-Lipschitz bound on coupled perturbations
    of the solved target-process laws."""
    sol, backend = result.solution, result.backend
    loss = result.cfg.scenario.loss
    m = sol.hi - sol.lo
    worst = 0.0
    for j in (0, m // 2, m):
        law = backend.law(sol.lo + j, sol.x[j])
        atoms = law.atoms
        pairs = [
            (law, lossop.EmpiricalLaw(atoms + 0.25, law.weights)),
            (law, lossop.EmpiricalLaw(atoms * 1.1, law.weights)),
            (law, lossop.EmpiricalLaw(atoms + 0.1 * np.sin(atoms), law.weights)),
        ]
        t_j = float(result.grid.nodes[sol.lo + j])
        worst = max(worst, lossop.hl_lipschitz_probe(loss, t_j, pairs))
    return worst


def cmd_verify(args) -> int:
    cfg = load_config(args.config, args.backend)
    result = execute(cfg)
    checks = verify_checks(result)
    summary = summarize(result)
    report = {
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "warnings": summary["warnings"],
        "scenario_hash": summary["scenario_hash"],
    }
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.json").write_text(text + "\n")
    print(text)
    return 0 if report["passed"] else 1


def cmd_constants(args) -> int:
    from .picard import constants_report

    try:
        if args.C < 0 or args.L <= 0 or args.lam <= 0 or not 0 <= args.alpha < 1:
            raise ValueError("need C >= 0, L > 0, lambda > 0, alpha in [0, 1)")
        if args.T is not None and args.T <= 0:
            raise ValueError("T must be positive")
        report = constants_report(hl_const=args.C, bound=args.L, lam=args.lam,
                                  alpha=args.alpha, horizon=args.T,
                                  radius=args.A_tilde)
    except ValueError as exc:
        print(f"picard: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_compare_oracle(args) -> int:
    from .oracle import OracleError, oracle_compare

    cfg = load_config(args.config)
    mc = {"N": cfg.N, "seed": cfg.seed, "degree": cfg.degree,
          "antithetic": cfg.antithetic, "tol": cfg.picard_tol}
    try:
        report = oracle_compare(cfg.scenario, args.steps, mc,
                                lattice_budget=cfg.lattice_budget,
                                mc_budget=cfg.mc_budget)
    except OracleError as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        return 3
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_comparison_csv(out / "comparison.csv", report)
    print(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    ok = report["lattice"]["within"] and report["regression"]["within"]
    return 0 if ok else 1


def _write_comparison_csv(path: Path, report: dict):
    lines = ["node,exact_mean_y,exact_k"]
    for i, (my, k) in enumerate(zip(report["exact"]["mean_y"], report["exact"]["k"])):
        lines.append(f"{i},{_fmt(my)},{_fmt(k)}")
    lines.append("")
    lines.append("backend,max_dev_mean_y,max_dev_k,dev_flatness,within")
    for kind in ("lattice", "regression"):
        r = report[kind]
        lines.append(f"{kind},{_fmt(r['mean_y'])},{_fmt(r['k'])},"
                     f"{_fmt(r['flatness'])},{r['within']}")
    path.write_text("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrbsde",
        description="Mean-reflected BSDE solver and verification harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a solve and write CSV/JSON results")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--backend", choices=["lattice", "regression"])
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="run a solve and assert its contracts")
    p_verify.add_argument("--config", required=True)
    p_verify.add_argument("--out")
    p_verify.add_argument("--backend", choices=["lattice", "regression"])
    p_verify.set_defaults(func=cmd_verify)

    p_const = sub.add_parser("constants", help="print the horizon/bound constants")
    p_const.add_argument("--C", type=float, required=True)
    p_const.add_argument("--L", type=float, required=True)
    p_const.add_argument("--lambda", dest="lam", type=float, required=True)
    p_const.add_argument("--alpha", type=float, default=0.0)
    p_const.add_argument("--T", type=float)
    p_const.add_argument("--A-tilde", dest="A_tilde", type=float)
    p_const.set_defaults(func=cmd_constants)

    p_cmp = sub.add_parser("compare-oracle",
                           help="compare both backends against the exact solver")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--steps", type=int, required=True)
    p_cmp.add_argument("--out")
    p_cmp.set_defaults(func=cmd_compare_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"picard: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
