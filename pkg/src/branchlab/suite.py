"""The acceptance battery: ten criteria on pinned desk-scale problems.

Each ``criterion_*`` function writes its CSVs into ``out`` and returns a dict
with at least ``pass`` (bool) and ``kind`` (``"check"`` or ``"trend"``). Only
failed checks make the CLI exit nonzero.
"""
from __future__ import annotations

import filecmp
import math
import tempfile
from pathlib import Path
from typing import Callable, Dict

import numpy as np

from . import oracle
from .asymptotics import (
    asymptotic_mass,
    contraction_experiment,
    convergence_profile,
    convexity_experiment,
    sandwich_report,
)
from .branching import BatterySpec, Configuration, estimate
from .duality import (
    check_laplace_duality,
    check_markov_duality,
    check_occupation_representation,
)
from .field import GridField, GridSpec, l1_norm, sup_norm
from .offspring import make_offspring
from .pde import (
    EvolutionSpec,
    log_laplace_exponent,
    solve,
    solve_terminal,
    splitting_product,
)
from .shapes import Bump, Constant, Gaussian, SmoothedIndicator

BINARY = {"1": 0.5, "2": 0.5}
STANDARD_GRID = GridSpec(1, 20.0, 512)
LONG_GRID = GridSpec(1, 40.0, 512)
STANDARD_PHI = Gaussian(0.0, 1.0, 0.9)

DEFAULTS = {
    "seed": 12345,
    "R": 100000,
    "jobs": 1,
    "verify_determinism": True,
}


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def sub_seeds(master: int, k: int = 16) -> list:
    return [int(s) for s in np.random.SeedSequence(int(master)).generate_state(k)]


# -- criteria --------------------------------------------------------------

def criterion_1(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    phi = GridField.constant(STANDARD_GRID, 0.5, True)
    u = solve_terminal(phi, EvolutionSpec(dist, 1.0, 256))
    exact = oracle.reaction_closed_form_binary(0.5, 1.0)
    rk = oracle.integrate(oracle.ScalarIVP("reaction", dist, 0.5, 1.0, 10 ** 5)).final
    err = float(np.max(np.abs(u.values - exact)))
    _write_rows(out / "c1_constant.csv", ["quantity", "value"],
                [("pde_min", u.values.min()), ("pde_max", u.values.max()),
                 ("closed_form", exact), ("rk4_oracle", rk), ("sup_error", err)])
    ok = err <= 5e-6 and abs(rk - exact) <= 1e-10
    return {"pass": ok, "kind": "check", "sup_error": err, "oracle_error": abs(rk - exact)}


def criterion_2(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    phi1 = STANDARD_PHI.on_grid(STANDARD_GRID)
    phi2 = Gaussian(0.5, 1.5, 0.6).on_grid(STANDARD_GRID)
    spec = EvolutionSpec(dist, 4.0, 256)
    tr1, tr2 = solve(phi1, spec, stride=1), solve(phi2, spec, stride=1)
    m = tr1.masses()
    sups = np.max(tr1.values, axis=1)
    l1 = np.sum(np.abs(tr1.values - tr2.values), axis=1) * STANDARD_GRID.cell_volume
    bound = np.exp((dist.mean_q - 1.0) * tr1.times) * l1_norm(phi1 - phi2)
    mass_ok = bool(np.all(np.diff(m) <= 1e-8 * m[0]))
    sup_ok = bool(np.all(sups <= sup_norm(phi1) + 1e-9))
    l1_ok = bool(np.all(l1 <= bound * (1.0 + 1e-6)))
    _write_rows(out / "c2_invariants.csv", ["t", "mass", "sup", "l1_diff", "l1_bound"],
                zip(tr1.times, m, sups, l1, bound))
    return {"pass": mass_ok and sup_ok and l1_ok, "kind": "check",
            "mass_nonincreasing": mass_ok, "sup_bound": sup_ok, "l1_contraction": l1_ok}


def criterion_3(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    phi = STANDARD_PHI.on_grid(LONG_GRID)
    tr = solve(phi, EvolutionSpec(dist, 12.0, 12 * 64), stride=16)
    rep = sandwich_report(tr)
    _write_rows(out / "c3_sandwich.csv", ["t", "lower_ok", "upper_constant"],
                zip(rep.times, rep.lower_ok, rep.upper_constant))
    late = rep.late_constants()
    return {"pass": rep.lower_holds and rep.upper_bounded, "kind": "check",
            "lower_holds": rep.lower_holds, "upper_bounded": rep.upper_bounded,
            "late_median": float(np.median(late)), "late_max": float(late.max())}


def criterion_4(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    phi = STANDARD_PHI.on_grid(LONG_GRID)
    trace = asymptotic_mass(phi, dist, t_max=30.0)
    tr = solve(phi, EvolutionSpec(dist, 8.0, 8 * 64), stride=16)
    prof = convergence_profile(tr, trace.c_phi)
    e1, e8 = prof.at(1.0), prof.at(8.0)
    rel_inc = trace.last_increment / trace.c_phi
    _write_rows(out / "c4_profile.csv", ["t", "scaled_error"], zip(prof.times, prof.values))
    _write_rows(out / "c4_mass.csv", ["t", "rescaled_mass"],
                zip(trace.times[::16], trace.masses[::16]))
    ok = trace.converged and rel_inc < 1e-5 and e8 < 0.25 * e1
    return {"pass": ok, "kind": "check", "c_phi": trace.c_phi, "t_converged": trace.t_end,
            "final_window_increment": rel_inc, "e_1": e1, "e_8": e8, "ratio": e8 / e1}


CONVEXITY_PAIRS = [
    (Gaussian(-1.5, 1.0, 0.9), Gaussian(1.5, 1.0, 0.9)),
    (Gaussian(0.0, 1.0, 0.9), Gaussian(0.0, 1.5, 0.5)),
    (Gaussian(-1.0, 0.7, 0.8), Gaussian(2.0, 1.2, 0.6)),
    (Bump(0.0, 3.0, 0.9), Gaussian(0.5, 1.0, 0.9)),
    (SmoothedIndicator(0.0, 2.0, 0.25, 0.8), Gaussian(1.0, 1.0, 0.5)),
]


def criterion_5(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    rows, holds = [], []
    for i, (a, b) in enumerate(CONVEXITY_PAIRS):
        p1, p2 = a.on_grid(LONG_GRID), b.on_grid(LONG_GRID)
        for lam in (0.25, 0.5, 0.75):
            rep = convexity_experiment(p1, p2, lam, dist, t_max=25.0, t_min=20.0)
            holds.append(rep["holds"])
            rows.append((i, lam, rep["c1"], rep["c2"], rep["c_mix"], rep["rhs"], rep["gap"],
                         rep["holds"]))
    _write_rows(out / "c5_convexity.csv",
                ["pair", "lambda", "c1", "c2", "c_mix", "rhs", "gap", "holds"], rows)
    zero = GridField.constant(LONG_GRID, 0.0, True)
    ratios = []
    for s in (1.0, 0.5, 0.25):
        rep = contraction_experiment(STANDARD_PHI.scaled(s).on_grid(LONG_GRID), zero, dist,
                                     t_max=25.0, t_min=20.0)
        ratios.append((s, rep["lhs"], rep["rhs_norm"], rep["ratio"]))
    _write_rows(out / "c5_contraction.csv", ["scale", "lhs", "rhs_norm", "ratio"], ratios)
    r = [x[3] for x in ratios]
    spread = max(r) / min(r)
    return {"pass": all(holds) and spread <= 3.0, "kind": "check",
            "convexity_holds": int(sum(holds)), "convexity_total": len(holds),
            "min_gap": min(row[6] for row in rows), "contraction_spread": spread}


def criterion_6(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    R, jobs = int(cfg["R"]), int(cfg["jobs"])
    s = sub_seeds(cfg["seed"])
    reports = [
        check_markov_duality(0.0, STANDARD_PHI, dist, 1.0, R=R, seed=s[0], jobs=jobs),
        check_laplace_duality(0.0, STANDARD_PHI, dist, 1.0, R=R, seed=s[1], jobs=jobs),
        check_occupation_representation(0.0, STANDARD_PHI, Constant(0.0), dist, 1.0, R=R,
                                        seed=s[2], jobs=jobs),
    ]
    trivial = [
        check_markov_duality(0.0, Constant(1.0), dist, 1.0, R=1000, seed=s[3]),
        check_laplace_duality(0.0, Constant(0.0), dist, 1.0, R=1000, seed=s[4]),
        check_occupation_representation(0.0, Constant(0.0), Constant(0.0), dist, 1.0,
                                        R=1000, seed=s[5]),
    ]
    rows = [(r.name, "standard", r.pde_value, r.mc_mean, r.mc_se, r.z) for r in reports]
    rows += [(r.name, "trivial", r.pde_value, r.mc_mean, r.mc_se, r.z) for r in trivial]
    _write_rows(out / "c6_duality.csv", ["identity", "problem", "pde", "mc_mean", "mc_se", "z"],
                rows)
    ok = all(r.passed for r in reports) and all(r.z == 0.0 for r in trivial)
    return {"pass": ok, "kind": "check", "z": {r.name: r.z for r in reports},
            "trivial_z": {r.name: r.z for r in trivial}}


def criterion_7(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    R, jobs = int(cfg["R"]), int(cfg["jobs"])
    s = sub_seeds(cfg["seed"])
    q1 = dist.mean_q - 1.0
    one = Configuration.of(0.0)
    rows, ok = [], True
    for i, T in enumerate((1.0, 2.0)):
        est = estimate(BatterySpec(one, dist, T, functionals=("count",), R=R, seed=s[6 + i],
                                   jobs=jobs))["count"]
        target = math.exp(q1 * T)
        z = (est.mean - target) / est.se
        ok &= abs(z) <= 4.0
        rows.append(("count", T, target, est.mean, est.se, z))
    est = estimate(BatterySpec(one, dist, 1.0, phi=Constant(1.0), functionals=("occupation",),
                               R=R, seed=s[8], jobs=jobs))["occupation"]
    target = (math.exp(q1) - 1.0) / q1
    z = (est.mean - target) / est.se
    ok &= abs(z) <= 4.0
    rows.append(("occupation", 1.0, target, est.mean, est.se, z))
    _write_rows(out / "c7_moments.csv", ["functional", "T", "oracle", "mc_mean", "mc_se", "z"],
                rows)
    return {"pass": bool(ok), "kind": "check", "z": [r[-1] for r in rows]}


SPLIT_SHAPE = Gaussian(0.0, 3.0, 1.0)


def criterion_8(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    f = SPLIT_SHAPE.on_grid(STANDARD_GRID, probability=False)
    phi = f
    ref = log_laplace_exponent(f, phi, dist, 1.0, 8192)
    Ns = (4, 8, 16, 32, 64)
    errs = []
    for N in Ns:
        approx = splitting_product(f, phi, dist, 1.0, N, max(1, 2048 // N))
        errs.append(float(np.max(np.abs(approx.values - ref.values))))
    ratios = [errs[i] / errs[i + 1] for i in range(len(Ns) - 1)]
    _write_rows(out / "c8_splitting.csv", ["N", "sup_error", "ratio_to_next"],
                [(N, e, r) for N, e, r in zip(Ns, errs, ratios + [math.nan])])
    rate_ok = all(1.6 <= r <= 2.4 for r in ratios[:3])
    return {"pass": rate_ok and errs[-1] <= 1e-3, "kind": "check", "errors": errs,
            "ratios": ratios, "error_N64": errs[-1]}


def criterion_9(out: Path, cfg: dict) -> dict:
    dist = make_offspring(BINARY)
    fp1 = dist.mean_q - 1.0
    lim1 = oracle.occupation_limit_one(dist, 1.0, horizon=20.0)
    lim1_ok = lim1.final < 1e-3 and bool(np.all(np.diff(lim1.values) < 0))
    oracle.write_trace_csv(lim1, out / "c9_limit_one.csv")

    alpha = 0.95 / fp1
    lim2 = oracle.occupation_limit_two(dist, 1.0, alpha)
    g_rk = [oracle.integrate(oracle.ScalarIVP("linear_bound", dist, 1.0, t, 10 ** 5,
                                              M=1.0, T=T)).final
            for T, t in zip(lim2.T, lim2.t_eval)]
    g_err = float(np.max(np.abs(np.array(g_rk) - lim2.lower)))
    lower_ok = bool(np.all(lim2.values >= lim2.lower))
    lim2_ok = lim2.increasing and lim2.values[-1] >= 0.99
    _write_rows(out / "c9_limit_two.csv", ["T", "t", "v_T", "g_T_explicit", "g_T_rk4"],
                zip(lim2.T, lim2.t_eval, lim2.values, lim2.lower, g_rk))
    ok = lim1_ok and lim2_ok and g_err <= 1e-9 and lower_ok
    return {"pass": bool(ok), "kind": "check", "limit_one_final": lim1.final,
            "limit_two_values": lim2.values.tolist(), "limit_two_increasing": lim2.increasing,
            "limit_two_final_ge_0.99": bool(lim2.values[-1] >= 0.99),
            "g_T_rk_error": g_err, "g_T_lower_bound": lower_ok}


CRITERIA: Dict[str, Callable] = {
    "c1_constant_exactness": criterion_1,
    "c2_solution_invariants": criterion_2,
    "c3_heat_sandwich": criterion_3,
    "c4_profile_and_mass": criterion_4,
    "c5_contraction_convexity": criterion_5,
    "c6_duality": criterion_6,
    "c7_moment_oracles": criterion_7,
    "c8_splitting": criterion_8,
    "c9_occupation_limits": criterion_9,
}
DETERMINISM_KEY = "c10_determinism"


def run_criteria(out: Path, cfg: dict, only=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for key, fn in CRITERIA.items():
        if only and key not in only:
            continue
        results[key] = fn(out, cfg)
    return results


def compare_csvs(a: Path, b: Path) -> list:
    """Names of CSV files that differ (or are missing) between two directories."""
    names = sorted({p.name for p in a.glob("*.csv")} | {p.name for p in b.glob("*.csv")})
    return [n for n in names
            if not ((a / n).exists() and (b / n).exists()
                    and filecmp.cmp(a / n, b / n, shallow=False))]


def run_suite(out: Path, cfg: dict, only=None) -> dict:
    """Run every criterion; with ``verify_determinism`` rerun into a scratch
    directory and compare all CSVs byte for byte."""
    cfg = {**DEFAULTS, **cfg}
    results = run_criteria(out, cfg, only)
    if cfg["verify_determinism"]:
        with tempfile.TemporaryDirectory() as tmp:
            run_criteria(Path(tmp), cfg, only)
            diff = compare_csvs(out, Path(tmp))
        results[DETERMINISM_KEY] = {"pass": not diff, "kind": "check", "differing": diff,
                                    "files": len(list(out.glob("*.csv")))}
    return results
