"""Command-line experiment runner.

    branchlab SUBCOMMAND [--config PATH] [--set KEY=VALUE ...] [--jobs N]
                         [--out DIR] [--seed U64]

Every run writes ``manifest.json`` (config echo, versions, timing), one or more
long-format CSVs, and ``summary.json`` mapping check names to results. Exit
codes: 0 success, 1 a non-trend check failed, 2 the configuration is invalid.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import logging
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import oracle, suite
from .anchors import ANCHORS
from .asymptotics import asymptotic_mass, convergence_profile, sandwich_report
from .branching import FUNCTIONALS, BatterySpec, Configuration, estimate, write_replica_csv
from .duality import (
    check_laplace_duality,
    check_longtime_distribution,
    check_markov_duality,
    check_occupation_representation,
)
from .errors import BranchLabError, ConfigError, OffspringError
from .field import GridSpec
from .offspring import make_offspring
from .pde import EvolutionSpec, log_laplace_exponent, solve, splitting_product, write_trajectory_csv
from .shapes import Constant, shape_from_json

log = logging.getLogger("branchlab")

BINARY = {"1": 0.5, "2": 0.5}
GAUSS = {"shape": "gaussian", "center": 0.0, "width": 1.0, "peak": 0.9}
STD_GRID = {"d": 1, "half_width": 20.0, "n": 512}
LONG_GRID = {"d": 1, "half_width": 40.0, "n": 512}

DEFAULTS = {
    "solve": {"offspring": BINARY, "grid": STD_GRID, "phi": GAUSS, "horizon": 1.0,
              "steps": 256, "stride": None, "kill": None, "kill_scale": 1.0},
    "mass": {"offspring": BINARY, "grid": LONG_GRID, "phi": GAUSS, "t_max": 30.0,
             "tol": 1e-5, "profile_horizon": 8.0},
    "simulate": {"offspring": BINARY, "start": [[0.0]], "T": 1.0, "functionals": ["count"],
                 "phi": None, "f": None, "R": 100000, "h_occ": None, "occ_scale": 1.0,
                 "dump_replicas": False},
    "duality": {"offspring": BINARY, "grid": STD_GRID, "x0": [0.0], "phi": GAUSS, "g": GAUSS,
                "f": {"shape": "constant", "value": 0.0}, "T": 1.0, "R": 100000,
                "longtime": False},
    "splitting": {"offspring": BINARY, "grid": STD_GRID,
                  "f": {"shape": "gaussian", "center": 0.0, "width": 3.0, "peak": 1.0},
                  "phi": {"shape": "gaussian", "center": 0.0, "width": 3.0, "peak": 1.0},
                  "t": 1.0, "Ns": [4, 8, 16, 32, 64], "ref_steps": 8192, "inner_total": 2048},
    "occupation": {"offspring": BINARY, "c": 1.0, "horizon": 20.0, "M": 1.0, "alpha": None,
                   "T_grid": [1e2, 1e3, 1e4, 1e5], "steps": 100000},
    "suite": {"R": 100000, "verify_determinism": True, "only": None},
}
COMMON = {"seed": 12345, "jobs": 1}


# -- config ----------------------------------------------------------------

def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = parse_value(raw)


def load_config(command: str, path=None, sets=(), seed=None, jobs=None) -> dict:
    cfg = copy.deepcopy({**COMMON, **DEFAULTS[command]})
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(user)
    for s in sets:
        apply_override(cfg, s)
    if seed is not None:
        cfg["seed"] = seed
    if jobs is not None:
        cfg["jobs"] = jobs
    return cfg


def _dist(cfg):
    try:
        return make_offspring(cfg["offspring"])
    except OffspringError as exc:
        raise ConfigError(
            "offspring law violates the standing hypothesis (weights q_k >= 0 indexed by "
            f"k >= 1, sum q_k = 1, mean sum k q_k > 1): {exc}"
        ) from None


def _shape(obj, what, datum=False):
    if obj is None:
        return None
    if isinstance(obj, (int, float)):
        obj = {"shape": "constant", "value": obj}
    try:
        sh = shape_from_json(obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what} shape: {exc}") from None
    if datum and not 0.0 <= sh.sup <= 1.0:
        raise ConfigError(f"{what} peak must lie in [0, 1], got {sh.sup}")
    return sh


def _grid(cfg):
    try:
        return GridSpec.from_json(cfg["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from None


def _entry(key, passed, kind="check", **extra):
    return {"pass": bool(passed), "kind": kind, "anchor": ANCHORS[key], **extra}


def _csv(path, header, rows):
    suite._write_rows(path, header, rows)


# -- subcommands -----------------------------------------------------------
# Each returns a callable run(out) after validating the config, so all
# configuration errors surface before any work starts.

def prep_solve(cfg):
    dist, grid = _dist(cfg), _grid(cfg)
    phi = _shape(cfg["phi"], "phi", datum=True)
    kill = _shape(cfg["kill"], "kill")
    try:
        spec = EvolutionSpec(dist, float(cfg["horizon"]), int(cfg["steps"]),
                             kill=None if kill is None else kill.on_grid(grid, False),
                             kill_scale=float(cfg["kill_scale"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    def run(out):
        tr = solve(phi.on_grid(grid), spec, stride=cfg["stride"])
        write_trajectory_csv(tr, out / "trajectory.csv")
        summary = {}
        if kill is None:
            m = tr.masses()
            summary["mass_nonincreasing"] = _entry(
                "mass_nonincreasing", np.all(np.diff(m) <= 1e-8 * m[0]))
        sups = tr.values.reshape(len(tr), -1).max(axis=1)
        summary["sup_bound"] = _entry("sup_bound", np.all(sups <= sups[0] + 1e-9))
        return summary

    return run


def prep_mass(cfg):
    dist, grid = _dist(cfg), _grid(cfg)
    phi = _shape(cfg["phi"], "phi", datum=True)
    t_max, tol, horizon = float(cfg["t_max"]), float(cfg["tol"]), float(cfg["profile_horizon"])

    def run(out):
        field0 = phi.on_grid(grid)
        trace = asymptotic_mass(field0, dist, tol=tol, t_max=t_max)
        tr = solve(field0, EvolutionSpec(dist, horizon, int(round(horizon * 64))), stride=16)
        sand = sandwich_report(tr)
        prof = convergence_profile(tr, trace.c_phi)
        _csv(out / "mass.csv", ["t", "rescaled_mass"], zip(trace.times, trace.masses))
        _csv(out / "sandwich.csv", ["t", "lower_ok", "upper_constant"],
             zip(sand.times, sand.lower_ok, sand.upper_constant))
        _csv(out / "profile.csv", ["t", "scaled_error"], zip(prof.times, prof.values))
        mono = np.all(np.diff(trace.masses) >= -1e-8 * trace.masses[1:])
        return {
            "mass_converged": _entry("mass_converged", trace.converged, c_phi=trace.c_phi,
                                     t_end=trace.t_end),
            "mass_monotone": _entry("mass_monotone", mono),
            "sandwich_lower": _entry("sandwich_lower", sand.lower_holds),
            "sandwich_upper_bounded": _entry("sandwich_upper_bounded", sand.upper_bounded,
                                             kind="trend"),
            "profile_decrease": _entry("profile_decrease", prof.values[-1] < prof.values[0],
                                       kind="trend", first=float(prof.values[0]),
                                       last=float(prof.values[-1])),
        }

    return run


def prep_simulate(cfg):
    dist = _dist(cfg)
    try:
        start = Configuration(np.array(cfg["start"], dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad start configuration: {exc}") from None
    funcs = list(cfg["functionals"])
    bad = set(funcs) - set(FUNCTIONALS)
    if bad:
        raise ConfigError(f"unknown functionals {sorted(bad)}; expected {FUNCTIONALS}")
    if int(cfg["R"]) < 100:
        raise ConfigError("R must be >= 100")
    spec = BatterySpec(start, dist, float(cfg["T"]), phi=_shape(cfg["phi"], "phi"),
                       f=_shape(cfg["f"], "f"), functionals=funcs, R=int(cfg["R"]),
                       seed=int(cfg["seed"]), h_occ=cfg["h_occ"],
                       occ_scale=float(cfg["occ_scale"]), jobs=int(cfg["jobs"]))

    def run(out):
        rep = estimate(spec)
        (out / "report.json").write_text(json.dumps(rep.to_json(), indent=2, sort_keys=True))
        _csv(out / "estimates.csv", ["functional", "mean", "se", "R"],
             [(k, e.mean, e.se, e.R) for k, e in rep.estimates.items()])
        if cfg["dump_replicas"]:
            write_replica_csv(rep, out / "replicas.csv")
        return {"battery": _entry("battery", True, kind="report", estimates=rep.to_json())}

    return run


def prep_duality(cfg):
    dist, grid = _dist(cfg), _grid(cfg)
    phi = _shape(cfg["phi"], "phi", datum=True)
    g = _shape(cfg["g"], "g")
    f = _shape(cfg["f"], "f")
    x0 = cfg["x0"]
    T, R, seed, jobs = float(cfg["T"]), int(cfg["R"]), int(cfg["seed"]), int(cfg["jobs"])

    def run(out):
        s = suite.sub_seeds(seed)
        kw = dict(R=R, grid=grid, jobs=jobs)
        reps = [
            check_markov_duality(x0, phi, dist, T, seed=s[0], **kw),
            check_laplace_duality(x0, g, dist, T, seed=s[1], **kw),
            check_occupation_representation(x0, phi, f, dist, T, seed=s[2], **kw),
        ]
        triv = [
            check_markov_duality(x0, Constant(1.0), dist, T, R=1000, grid=grid, seed=s[3]),
            check_laplace_duality(x0, Constant(0.0), dist, T, R=1000, grid=grid, seed=s[4]),
            check_occupation_representation(x0, Constant(0.0), Constant(0.0), dist, T,
                                            R=1000, grid=grid, seed=s[5]),
        ]
        _csv(out / "duality.csv", ["identity", "problem", "pde", "mc_mean", "mc_se", "z"],
             [(r.name, p, r.pde_value, r.mc_mean, r.mc_se, r.z)
              for p, group in (("configured", reps), ("trivial", triv)) for r in group])
        summary = {r.name: _entry(r.name, r.passed, z=r.z) for r in reps}
        summary["trivial_rows"] = _entry("trivial_rows", all(r.z == 0.0 for r in triv))
        if cfg["longtime"]:
            lt = check_longtime_distribution(
                _shape({"shape": "indicator-smoothed", "radius": 1.0, "softness": 0.1}, "A"),
                dist, R=R, seed=s[6], jobs=jobs)
            _csv(out / "longtime.csv", ["t", "rescaled_mc", "rescaled_se", "predicted",
                                        "scaled_discrepancy"],
                 zip(lt.times, lt.rescaled_mc, lt.rescaled_se, lt.predicted, lt.discrepancy))
            summary["longtime_trend"] = _entry("longtime_trend", lt.decreasing, kind="trend")
        return summary

    return run


def prep_splitting(cfg):
    dist, grid = _dist(cfg), _grid(cfg)
    f, phi = _shape(cfg["f"], "f"), _shape(cfg["phi"], "phi")
    Ns = [int(n) for n in cfg["Ns"]]
    if not Ns or min(Ns) < 1:
        raise ConfigError("Ns must be a nonempty list of positive integers")

    def run(out):
        fg, pg = f.on_grid(grid, False), phi.on_grid(grid, False)
        t = float(cfg["t"])
        ref = log_laplace_exponent(fg, pg, dist, t, int(cfg["ref_steps"]))
        errs = [float(np.max(np.abs(
            splitting_product(fg, pg, dist, t, N, max(1, int(cfg["inner_total"]) // N)).values
            - ref.values))) for N in Ns]
        ratios = [a / b for a, b in zip(errs, errs[1:])]
        _csv(out / "splitting.csv", ["N", "sup_error", "ratio_to_next"],
             zip(Ns, errs, ratios + [math.nan]))
        return {
            "splitting_rate": _entry("splitting_rate",
                                     all(1.6 <= r <= 2.4 for r in ratios), ratios=ratios),
            "splitting_final_error": _entry("splitting_final_error", errs[-1] <= 1e-3,
                                            error=errs[-1], N=Ns[-1]),
        }

    return run


def prep_occupation(cfg):
    dist = _dist(cfg)
    fp1 = dist.mean_q - 1.0
    alpha = cfg["alpha"] if cfg["alpha"] is not None else 0.95 / fp1
    if alpha * fp1 >= 1.0 or alpha <= 0:
        raise ConfigError(f"alpha must lie in (0, 1/F'(1)) = (0, {1.0 / fp1:.6g})")
    steps = int(cfg["steps"])

    def run(out):
        lim1 = oracle.occupation_limit_one(dist, float(cfg["c"]), float(cfg["horizon"]), steps)
        oracle.write_trace_csv(lim1, out / "limit_one.csv")
        M = float(cfg["M"])
        lim2 = oracle.occupation_limit_two(dist, M, alpha, cfg["T_grid"], steps)
        g_rk = [oracle.integrate(oracle.ScalarIVP("linear_bound", dist, 1.0, t, steps,
                                                  M=M, T=T)).final
                for T, t in zip(lim2.T, lim2.t_eval)]
        _csv(out / "limit_two.csv", ["T", "t", "v_T", "g_T_explicit", "g_T_rk4"],
             zip(lim2.T, lim2.t_eval, lim2.values, lim2.lower, g_rk))
        err = float(np.max(np.abs(np.array(g_rk) - lim2.lower)))
        return {
            "limit_one": _entry("limit_one", lim1.final < 1e-3, final=lim1.final),
            "limit_two": _entry("limit_two", lim2.increasing and lim2.values[-1] >= 0.99,
                                values=lim2.values.tolist()),
            "g_T_oracle": _entry("g_T_oracle", err <= 1e-9, max_error=err),
            "g_T_lower_bound": _entry("g_T_lower_bound", np.all(lim2.values >= lim2.lower)),
        }

    return run


def prep_suite(cfg):
    if int(cfg["R"]) < 100:
        raise ConfigError("R must be >= 100")
    only = cfg["only"]
    if only is not None:
        unknown = set(only) - set(suite.CRITERIA)
        if unknown:
            raise ConfigError(f"unknown criteria {sorted(unknown)}")

    def run(out):
        res = suite.run_suite(out, {"seed": int(cfg["seed"]), "R": int(cfg["R"]),
                                    "jobs": int(cfg["jobs"]),
                                    "verify_determinism": bool(cfg["verify_determinism"])},
                              only=only)
        return {k: {**v, "anchor": ANCHORS[k]} for k, v in res.items()}

    return run


COMMANDS = {
    "solve": prep_solve,
    "mass": prep_mass,
    "simulate": prep_simulate,
    "duality": prep_duality,
    "splitting": prep_splitting,
    "occupation": prep_occupation,
    "suite": prep_suite,
}


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("numba", "joblib", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    return out


def _jsonable(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="branchlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry; dotted keys, JSON values")
    p.add_argument("--jobs", type=int, help="worker processes for particle batteries")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.command, args.config, args.sets, args.seed, args.jobs)
        run = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"branchlab: config error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, TypeError, ValueError, BranchLabError) as exc:
        print(f"branchlab: config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        summary = run(out)
    except BranchLabError as exc:
        # domain errors at run time (box margin, horizon cap) stem from the config
        print(f"branchlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - t0

    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n")
    manifest = {"command": args.command, "config": cfg, "versions": _versions(),
                "started": started, "wall_time_s": wall}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n")

    failed = [k for k, v in summary.items() if v["kind"] == "check" and not v["pass"]]
    for k, v in summary.items():
        print(f"{'PASS' if v['pass'] else 'FAIL'}  {k}  ({v['kind']})")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
