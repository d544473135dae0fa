"""Command-line runs: trajectory CSV, convergence tables and diagnostics JSON.

    dcls simulate run.cfg --out traj.csv
    dcls converge run.cfg --h 0.2,0.1,0.05,0.025
    dcls diagnose run.cfg --seed 3

Numbers are written with 17 significant digits so files round-trip exactly.
Every command exits with status 0 iff the run completed and every applicable
check passed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import diagnostics as dg
from . import discrete_form as df
from . import reference as ref
from . import segments as seg
from . import solver as so
from . import systems as sy
from .config import RunConfig, load_config
from .errors import ConfigError, DCLSError

PASS, FAIL, NOT_APPLICABLE = dg.PASS, dg.FAIL, dg.NOT_APPLICABLE

SYMPLECTIC_TOL = 1e-6
NONHOLONOMIC_MOMENTUM_TOL = 1e-8
INVOLUTIVITY_TOL = 1e-8
SYMPLECTIC_STATES = 3
PAIR_SAMPLES = 20


def fmt(x) -> str:
    return format(float(x), ".17g")


def _json_number(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


# ----------------------------------------------------------------------------
# construction

def build_system(cfg: RunConfig) -> sy.ContinuousSystem:
    try:
        system = sy.builtin_system(cfg.system, cfg.params)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]), key="system") from None
    except ValueError as exc:
        raise ConfigError(str(exc), key="params") from None
    if len(cfg.q0) != system.dim_q:
        raise ConfigError(f"'q0' has {len(cfg.q0)} entries, system {cfg.system} needs {system.dim_q}", key="q0")
    return system


def build_discrete_system(cfg: RunConfig) -> df.DiscreteSystem:
    system = build_system(cfg)
    if cfg.segment == "linear":
        generator = seg.Linear()
    else:
        if cfg.field == "lagrangian":
            generator = ref.lagrangian_flow(system, cfg.method, cfg.substeps)
        else:
            generator = seg.FlowOfField(seg.zero_field, method=cfg.method, substeps=cfg.substeps)
    scheme = seg.SegmentScheme(seg.Bias(cfg.gamma), generator, cfg.h)
    return df.DiscreteSystem(system, scheme, df.get_quadrature(cfg.quadrature),
                             sigma_mode=cfg.sigma, constraint_placement=cfg.placement)


def monitored_generators(cfg: RunConfig, system: sy.ContinuousSystem) -> List[int]:
    count = len(system.generators)
    if cfg.generators is None:
        return list(range(count))
    bad = [i for i in cfg.generators if not 0 <= i < count]
    if bad:
        raise ConfigError(f"'generators' index {bad[0]} out of range; {cfg.system} has {count}", key="generators")
    return list(cfg.generators)


def step_config(cfg: RunConfig) -> so.StepConfig:
    return so.StepConfig(tol=cfg.newton_tol, max_iter=cfg.newton_max_iter)


# ----------------------------------------------------------------------------
# checks

def _entry(residual, threshold, status, **extra) -> dict:
    out = {"residual": _json_number(residual), "threshold": _json_number(threshold), "status": status}
    out.update(extra)
    return out


def _sample(count, limit):
    if count <= 0:
        return []
    return sorted(set(np.linspace(0, count - 1, min(count, limit)).round().astype(int).tolist()))


def _symmetric_generators(d, gens, state):
    scale = max(1.0, float(np.max(np.abs(df.sigma_d(d, *state)))))
    return [i for i in gens if dg.symmetry_defect(d, i, *state) <= 1e-10 * scale]


def check_momentum_theorem(d, traj, gens, cfg) -> dict:
    threshold = 10 * cfg.newton_tol
    worst, applicable = 0.0, 0
    for v, w, lam in traj.pairs():
        for i in gens:
            res = dg.momentum_theorem_check(d, (v, w), i, newton_tol=cfg.newton_tol)
            if res.status != NOT_APPLICABLE:
                applicable += 1
                worst = max(worst, res.residual)
    if not applicable:
        return _entry(None, threshold, NOT_APPLICABLE, detail="no admissible symmetry generator")
    return _entry(worst, threshold, PASS if worst <= threshold else FAIL, checks=applicable)


def check_nonholonomic_momentum(d, traj, cfg) -> dict:
    threshold = NONHOLONOMIC_MOMENTUM_TOL
    gens = list(range(len(d.system.generators)))
    if d.m == 0 or not gens or traj.steps == 0:
        return _entry(None, threshold, NOT_APPLICABLE, detail="needs constraints, generators and one step")
    if len(_symmetric_generators(d, gens, traj.state(0))) != len(gens):
        return _entry(None, threshold, NOT_APPLICABLE, detail="system is not symmetric under every generator")
    worst, used = 0.0, 0
    for i in gens:
        xi = dg.admissible_generator(d, np.eye(len(gens))[i])
        try:
            worst = max(worst, max(dg.nonholonomic_momentum_residual(d, (v, w), xi) for v, w, _ in traj.pairs()))
            used += 1
        except DCLSError:
            continue
    if not used:
        return _entry(None, threshold, NOT_APPLICABLE, detail="no admissible generator field")
    return _entry(worst, threshold, PASS if worst <= threshold else FAIL, generators=used)


def check_legendre_match(d, traj, cfg) -> dict:
    threshold = 10 * cfg.newton_tol
    if traj.steps == 0:
        return _entry(None, threshold, NOT_APPLICABLE, detail="no completed step")
    r = dg.legendre_match_series(d, traj)
    return _entry(r, threshold, PASS if r <= threshold else FAIL)


def check_constraint(d, traj) -> dict:
    threshold = d.feasibility_tol
    if d.m == 0:
        return _entry(None, threshold, NOT_APPLICABLE, detail="unconstrained system")
    g = max(float(np.max(np.abs(df.discrete_constraint(d, *traj.state(k))))) for k in range(len(traj.Q)))
    return _entry(g, threshold, PASS if g <= threshold else FAIL)


def check_involutivity(d, cfg) -> dict:
    if d.m == 0:
        return _entry(0.0, INVOLUTIVITY_TOL, PASS, involutive=True)
    fields = dg.distribution_fields(d.system, np.asarray(cfg.q0, float), np.asarray(cfg.v0, float))
    res = dg.involutivity_check(fields, np.asarray(cfg.q0, float), tol=INVOLUTIVITY_TOL)
    # a non-integrable distribution is a property of the system, not a failure
    status = PASS if res.involutive else NOT_APPLICABLE
    return _entry(res.max_defect, INVOLUTIVITY_TOL, status, involutive=res.involutive)


def check_k_dimensions(d, traj) -> dict:
    expected = 2 * (d.n - d.m)
    worst = 0
    for k in _sample(len(traj.Q), PAIR_SAMPLES):
        try:
            kb = dg.k_bases(d, *traj.state(k))
        except DCLSError:
            return _entry(None, 0.0, FAIL, expected=expected, detail=f"rank failure at state {k}")
        worst = max(worst, *(abs(B.shape[1] - expected) for B in (kb.minus, kb.zero, kb.plus)))
    return _entry(worst, 0.0, PASS if worst == 0 else FAIL, expected=expected)


def check_symplectic(d, traj, cfg, involutive: bool) -> dict:
    closed = d.sigma_mode == df.EXACT or d.scheme.is_linear
    sc = dg.SymplecticConfig(pairs=10, seed=cfg.seed, fd_step=1e-6 * cfg.fd_step_scale)
    worst, failed = 0.0, None
    for k in _sample(traj.steps, SYMPLECTIC_STATES):
        try:
            worst = max(worst, dg.symplectic_check(d, *traj.state(k), sc).max_defect)
        except DCLSError as exc:
            failed = f"state {k}: {exc}"
            break
    if traj.steps == 0:
        return _entry(None, SYMPLECTIC_TOL, NOT_APPLICABLE, detail="no completed step")
    if not closed:
        return _entry(worst, SYMPLECTIC_TOL, NOT_APPLICABLE, detail="sigma_d is not closed")
    if d.m and not involutive:
        return _entry(worst, SYMPLECTIC_TOL, NOT_APPLICABLE, detail="non-integrable constraint distribution")
    if failed:
        return _entry(None, SYMPLECTIC_TOL, FAIL, detail=failed)
    return _entry(worst, SYMPLECTIC_TOL, PASS if worst <= SYMPLECTIC_TOL else FAIL)


def _regularity_pairs(d, traj):
    pairs = [(v, w) for v, w, _ in traj.pairs()]
    if pairs:
        return [pairs[k] for k in _sample(len(pairs), PAIR_SAMPLES)]
    # no step succeeded: use the state and its adjacent state of equal velocity
    v = traj.state(0)
    return [(v, so.adjacent_state(d, v, v[1]))]


def _relative_sigma_min(sv):
    return float(sv[-1] / max(1.0, sv[0])) if len(sv) else 0.0


def check_regularity(d, pairs) -> dict:
    threshold = so.NONDEGENERATE_RTOL
    worst = math.inf
    for v, w in pairs:
        try:
            worst = min(worst, _relative_sigma_min(so.regularity_matrix(d, v, w).singular_values))
        except DCLSError:
            worst = 0.0
    return _entry(worst, threshold, PASS if worst > threshold else FAIL, measure="min sigma_min/max(1, sigma_max)",
                  pairs=len(pairs))


def check_skew_hessian(d, pairs) -> dict:
    threshold = so.NONDEGENERATE_RTOL
    worst = math.inf
    for pair in pairs:
        try:
            worst = min(worst, _relative_sigma_min(so.skew_hessian(d, pair).singular_values))
        except DCLSError:
            worst = 0.0
    return _entry(worst, threshold, PASS if worst > threshold else FAIL, measure="min sigma_min/max(1, sigma_max)",
                  pairs=len(pairs))


def _all_pass(checks: Dict[str, dict]) -> bool:
    return all(c["status"] != FAIL for c in checks.values())


# ----------------------------------------------------------------------------
# simulate

def trajectory_rows(d, traj, gens):
    n, m = d.n, d.m
    header = (["k", "t"] + [f"q_{i}" for i in range(n)] + [f"v_{i}" for i in range(n)] + ["E"]
              + [f"J_{i}" for i in gens] + [f"g_{i}" for i in range(m)] + [f"lambda_{i}" for i in range(m)]
              + ["newton_iters", "residual"])
    rows = [header]
    for k in range(len(traj.Q)):
        q, v = traj.state(k)
        lam = traj.multipliers[k - 1] if k else np.zeros(m)
        iters = int(traj.iterations[k - 1]) if k else 0
        res = traj.residuals[k - 1] if k else 0.0
        row = [str(k), fmt(k * d.h)] + [fmt(x) for x in q] + [fmt(x) for x in v]
        row.append(fmt(dg.energy(d, q, v)))
        row += [fmt(df.momentum(d, i, q, v)) for i in gens]
        row += [fmt(x) for x in df.discrete_constraint(d, q, v)]
        row += [fmt(x) for x in lam]
        row += [str(iters), fmt(res)]
        rows.append(row)
    return rows


def _write_csv(path: Path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _write_json(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _run_header(cfg, traj):
    return {
        "system": cfg.system,
        "h": cfg.h,
        "steps_requested": cfg.steps,
        "steps_completed": traj.steps,
        "failed_at": traj.failed_at,
        "error": traj.error,
    }


def run_simulate(cfg: RunConfig, out: Optional[Path] = None) -> int:
    """Evolve, write the trajectory CSV and a JSON summary next to it; return the exit status."""
    d = build_discrete_system(cfg)
    gens = monitored_generators(cfg, d.system)
    out = Path(out or cfg.output or f"{cfg.system}.csv")
    traj = so.evolve(d, (np.array(cfg.q0), np.array(cfg.v0)), cfg.steps, step_config(cfg))
    _write_csv(out, trajectory_rows(d, traj, gens))

    E = [dg.energy(d, *traj.state(k)) for k in range(len(traj.Q))]
    checks = {
        "momentum_theorem": check_momentum_theorem(d, traj, gens, cfg),
        "nonholonomic_momentum": check_nonholonomic_momentum(d, traj, cfg),
        "legendre_match": check_legendre_match(d, traj, cfg),
        "constraint": check_constraint(d, traj),
    }
    summary = _run_header(cfg, traj)
    summary.update({
        "max_newton_residual": float(np.max(traj.residuals)) if traj.steps else 0.0,
        "max_newton_iterations": int(np.max(traj.iterations)) if traj.steps else 0,
        "energy_drift": float(np.max(np.abs(np.array(E) - E[0]))),
        "checks": checks,
    })
    _write_json(out.with_suffix(".json"), summary)
    return 0 if traj.ok and _all_pass(checks) else 1


# ----------------------------------------------------------------------------
# converge

def convergence_rows(result: dg.ConvergenceResult):
    rows = [["h", "error", "ratio", "slope"]]
    hs, es = result.hs, result.errors
    for i, (h, e) in enumerate(zip(hs, es)):
        if i == 0 or result.exact or es[i] == 0 or es[i - 1] == 0:
            rows.append([fmt(h), fmt(e), "", ""])
            continue
        ratio = es[i - 1] / e
        rows.append([fmt(h), fmt(e), fmt(ratio), fmt(math.log(ratio) / math.log(hs[i - 1] / h))])
    rows.append(["lsq", "", "", "exact" if result.exact else fmt(result.slope)])
    return rows


def parse_h_list(text: str) -> List[float]:
    items = [x.strip() for x in (text or "").split(",") if x.strip()]
    if not items:
        raise ConfigError("step-size list is empty", key="h")
    try:
        hs = [float(x) for x in items]
    except ValueError:
        raise ConfigError(f"step sizes must be numbers, got {text!r}", key="h") from None
    if any(not h > 0 for h in hs):
        raise ConfigError("step sizes must be positive", key="h")
    return hs


def run_converge(cfg: RunConfig, hs, out: Optional[Path] = None) -> int:
    hs = list(hs)
    if not hs:
        raise ConfigError("step-size list is empty", key="h")
    d = build_discrete_system(cfg)
    out = Path(out or "convergence.csv")
    T = cfg.final_time
    q0, v0 = np.array(cfg.q0), np.array(cfg.v0)
    try:
        result = dg.convergence_order(d, q0, v0, T, hs, cfg=step_config(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc), key="h") from None
    _write_csv(out, convergence_rows(result))
    return 0


# ----------------------------------------------------------------------------
# diagnose

def diagnose(cfg: RunConfig) -> dict:
    """Run the configured evolution and every structural check; return the JSON report."""
    d = build_discrete_system(cfg)
    gens = monitored_generators(cfg, d.system)
    traj = so.evolve(d, (np.array(cfg.q0), np.array(cfg.v0)), cfg.steps, step_config(cfg))
    pairs = _regularity_pairs(d, traj)
    involutivity = check_involutivity(d, cfg)
    checks = {
        "momentum_theorem": check_momentum_theorem(d, traj, gens, cfg),
        "nonholonomic_momentum": check_nonholonomic_momentum(d, traj, cfg),
        "symplectic": check_symplectic(d, traj, cfg, involutivity.get("involutive", False)),
        "legendre_match": check_legendre_match(d, traj, cfg),
        "k_dimensions": check_k_dimensions(d, traj),
        "involutivity": involutivity,
        "regularity": check_regularity(d, pairs),
        "skew_hessian": check_skew_hessian(d, pairs),
    }
    report = _run_header(cfg, traj)
    report["seed"] = cfg.seed
    report["checks"] = checks
    report["status"] = PASS if traj.ok and _all_pass(checks) else FAIL
    return report


def run_diagnose(cfg: RunConfig, out: Optional[Path] = None) -> int:
    report = diagnose(cfg)
    _write_json(Path(out or "diagnostics.json"), report)
    return 0 if report["status"] == PASS else 1


# ----------------------------------------------------------------------------
# entry point

def _parser():
    p = argparse.ArgumentParser(prog="dcls", description="Discrete Lagrange-d'Alembert integrator and diagnostics.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "evolve and write a trajectory CSV plus JSON summary"),
                           ("converge", "tabulate endpoint errors over step sizes"),
                           ("diagnose", "run every structural check and write a JSON report")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("config", type=Path)
        c.add_argument("--out", type=Path, default=None)
        c.add_argument("--seed", type=int, default=None)
        if name == "converge":
            c.add_argument("--h", required=True, help="comma-separated step sizes, e.g. 0.2,0.1,0.05")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("'seed' must be non-negative", key="seed")
            cfg = cfg.replace(seed=args.seed)
        if args.command == "simulate":
            return run_simulate(cfg, args.out)
        if args.command == "converge":
            return run_converge(cfg, parse_h_list(args.h), args.out)
        return run_diagnose(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DCLSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
