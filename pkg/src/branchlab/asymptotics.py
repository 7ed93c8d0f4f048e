"""Long-time behaviour of kill-free solutions.

The rescaled field v = exp((1 - q_1) t) u has non-decreasing mass whose limit
C_phi is the asymptotic mass of the initial datum phi. This module measures
C_phi, checks the two-sided heat-kernel sandwich, tracks the distance of v to
C_phi K_t, and runs the contraction and convexity experiments on phi -> C_phi.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BoxMarginViolated, KillPresent, NotConverged
from .field import GridField, GridSpec, check_same_grid, heat_kernel_values, heat_values, l1_norm, mass
from .offspring import OffspringDistribution, make_offspring
from .pde import StrangIntegrator, Trajectory
from .shapes import Shape, shape_from_json

DEFAULT_TOL = 1e-5
DEFAULT_DT = 1.0 / 64.0
#: relative mass allowed within the boundary margin
MARGIN_REL = 1e-10
#: nodes where the heat term is below this fraction of its max are skipped
UPPER_FLOOR = 1e-8


def margin_width(t_max: float) -> float:
    return 4.0 * math.sqrt(2.0 * t_max)


def check_box_margin(phi0: GridField, t_max: float) -> None:
    """Refuse data with mass near the periodic boundary.

    Raises :class:`BoxMarginViolated` if the mass of |phi0| at nodes closer
    than ``margin_width(t_max)`` to the box boundary exceeds ``MARGIN_REL``
    times the total.
    """
    spec = phi0.spec
    total = float(np.abs(phi0.values).sum())
    if total == 0.0:
        return
    depth = spec.half_width - np.abs(spec.nodes()).max(axis=-1)
    near = depth < margin_width(t_max)
    outer = float(np.abs(phi0.values[near]).sum())
    if outer > MARGIN_REL * total:
        raise BoxMarginViolated(
            f"{outer / total:.2e} of the mass lies within {margin_width(t_max):.3g} "
            f"of the boundary of [-{spec.half_width:g}, {spec.half_width:g}); enlarge the box"
        )


def _as_field(phi0, grid: Optional[GridSpec]) -> GridField:
    if isinstance(phi0, GridField):
        if grid is not None and grid != phi0.spec:
            raise ValueError("grid argument disagrees with the grid of phi0")
        return phi0
    if isinstance(phi0, Shape):
        if grid is None:
            raise ValueError("a grid is needed to sample a shape")
        return phi0.on_grid(grid)
    raise TypeError(f"unsupported initial datum {type(phi0).__name__}")


@dataclass(frozen=True, eq=False)
class MassTrace:
    """Rescaled mass m(t) on the step grid of one run."""

    times: np.ndarray
    masses: np.ndarray
    converged: bool
    c_phi: float
    last_increment: float
    final: Optional[GridField] = field(default=None, repr=False)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def require(self) -> "MassTrace":
        """Return self, or raise :class:`NotConverged`."""
        if not self.converged:
            raise NotConverged(
                f"mass not converged by t={self.t_end:g} "
                f"(last unit-window increment {self.last_increment:.3e})"
            )
        return self


def asymptotic_mass(phi0, dist: OffspringDistribution, grid: Optional[GridSpec] = None,
                    tol: float = DEFAULT_TOL, t_max: float = 40.0, dt: float = DEFAULT_DT,
                    t_min: float = 0.0) -> MassTrace:
    """Integrate until the rescaled mass settles.

    Convergence is declared at the first step time t >= max(1, t_min) where
    m(t) - m(t - 1) < tol * m(t). Running to a common ``t_min`` lets several
    data be compared at the same time, which matters when the differences of
    interest are below the truncation error ``tol * m``.

    A trace that reaches ``t_max`` first is returned with ``converged=False``;
    call :meth:`MassTrace.require` to turn that into :class:`NotConverged`.
    """
    phi = _as_field(phi0, grid)
    check_box_margin(phi, t_max)
    per_unit = round(1.0 / dt)
    if abs(per_unit * dt - 1.0) > 1e-12:
        raise ValueError("dt must divide 1 exactly")
    m0 = mass(phi)
    if m0 == 0.0:
        return MassTrace(np.zeros(1), np.zeros(1), True, 0.0, 0.0, phi)

    growth = dist.decay_rate
    integ = StrangIntegrator(phi, dist, dt)
    cell = phi.spec.cell_volume
    n_max = int(math.ceil(t_max * per_unit - 1e-9))
    n_min = int(math.ceil(max(1.0, t_min) * per_unit - 1e-9))
    masses = [m0]
    converged = False
    increment = math.inf
    for i in range(1, n_max + 1):
        integ.step()
        masses.append(math.exp(growth * i * dt) * float(integ.values.sum()) * cell)
        if i >= n_min:
            increment = masses[i] - masses[i - per_unit]
            if increment < tol * masses[i]:
                converged = True
                break
    times = dt * np.arange(len(masses))
    return MassTrace(times, np.array(masses), converged, masses[-1], increment, integ.field())


# -- sandwich and profile --------------------------------------------------

@dataclass(frozen=True, eq=False)
class SandwichReport:
    times: np.ndarray
    lower_ok: np.ndarray
    upper_constant: np.ndarray
    lower_slack: float

    @property
    def lower_holds(self) -> bool:
        return bool(np.all(self.lower_ok))

    def late_constants(self) -> np.ndarray:
        T = self.times[-1]
        return self.upper_constant[self.times >= 0.5 * T]

    @property
    def upper_bounded(self) -> bool:
        """Late constants stay within a factor 2 of their median."""
        late = self.late_constants()
        med = float(np.median(late))
        return bool(np.all(late <= 2.0 * med) and np.all(late >= 0.5 * med))


def sandwich_report(traj: Trajectory, lower_slack: float = 1e-7) -> SandwichReport:
    """Compare each snapshot with the damped heat flow of the initial datum.

    The lower check is exp(-(1-q_1) t) (K_t * phi0) <= u + slack at every
    node. The upper constant is max u / (exp(-(1-q_1) t) K_t * phi0) over
    nodes where the denominator is at least ``UPPER_FLOOR`` of its max.
    """
    if traj.spec.kill is not None and traj.spec.kill_scale != 0:
        raise KillPresent("sandwich bounds concern kill-free runs")
    grid = traj.grid
    phi0 = traj.values[0]
    rate = traj.spec.dist.decay_rate
    lower_ok, consts = [], []
    for t, u in zip(traj.times, traj.values):
        base = math.exp(-rate * t) * heat_values(grid, phi0, t)
        lower_ok.append(bool(np.all(base <= u + lower_slack)))
        mask = base >= UPPER_FLOOR * base.max()
        consts.append(float(np.max(u[mask] / base[mask])))
    return SandwichReport(np.array(traj.times), np.array(lower_ok), np.array(consts), lower_slack)


@dataclass(frozen=True)
class ConvergenceProfile:
    """e(t) = t^(d/2) sup |v(t) - c_phi K_t| on snapshot times t >= 1."""

    times: np.ndarray
    values: np.ndarray
    c_phi: float

    def at(self, t: float) -> float:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"no profile sample at t={t}")
        return float(self.values[i])


def convergence_profile(traj: Trajectory, c_phi: float) -> ConvergenceProfile:
    if traj.spec.kill is not None and traj.spec.kill_scale != 0:
        raise KillPresent("the profile is defined for kill-free runs")
    grid = traj.grid
    rate = traj.spec.dist.decay_rate
    times, vals = [], []
    for t, u in zip(traj.times, traj.values):
        if t < 1.0:
            continue
        v = math.exp(rate * t) * u
        err = np.max(np.abs(v - c_phi * heat_kernel_values(grid, t)))
        times.append(float(t))
        vals.append(float(t ** (grid.d / 2.0) * err))
    return ConvergenceProfile(np.array(times), np.array(vals), float(c_phi))


# -- experiments -----------------------------------------------------------

def _common_masses(data: Sequence[GridField], dist, tol, t_max, dt, t_min):
    """Asymptotic masses of several data, all read off at one common time."""
    traces = [asymptotic_mass(p, dist, tol=tol, t_max=t_max, dt=dt, t_min=t_min).require()
              for p in data]
    ends = [tr.t_end for tr in traces if tr.c_phi > 0]
    if ends and max(ends) - min(ends) > 0.5 * dt:
        t_common = max(ends)
        traces = [asymptotic_mass(p, dist, tol=tol, t_max=t_max, dt=dt, t_min=t_common).require()
                  for p in data]
    return traces


def contraction_experiment(phi1: GridField, phi2: GridField, dist: OffspringDistribution,
                           t_max: float = 40.0, tol: float = DEFAULT_TOL,
                           dt: float = DEFAULT_DT, t_min: float = 0.0) -> dict:
    """|C_1 - C_2| against the L1 distance of the data."""
    check_same_grid(phi1, phi2)
    t1, t2 = _common_masses([phi1, phi2], dist, tol, t_max, dt, t_min)
    lhs = abs(t1.c_phi - t2.c_phi)
    norm = l1_norm(phi1 - phi2)
    return {
        "c1": t1.c_phi,
        "c2": t2.c_phi,
        "lhs": lhs,
        "rhs_norm": norm,
        "ratio": lhs / norm if norm > 0 else 0.0,
    }


def convexity_experiment(phi1: GridField, phi2: GridField, lam: float,
                         dist: OffspringDistribution, t_max: float = 40.0,
                         tol: float = DEFAULT_TOL, dt: float = DEFAULT_DT,
                         t_min: float = 20.0, slack: float = 1e-6) -> dict:
    """C of the mixture against the mixture of the C values."""
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    check_same_grid(phi1, phi2)
    mix = GridField(phi1.spec, lam * phi1.values + (1.0 - lam) * phi2.values, True)
    t1, t2, tm = _common_masses([phi1, phi2, mix], dist, tol, t_max, dt, t_min)
    rhs = lam * t1.c_phi + (1.0 - lam) * t2.c_phi
    return {
        "lambda": lam,
        "c1": t1.c_phi,
        "c2": t2.c_phi,
        "c_mix": tm.c_phi,
        "rhs": rhs,
        "gap": rhs - tm.c_phi,
        "t_common": tm.t_end,
        "holds": bool(tm.c_phi <= rhs + slack),
    }


# -- battery runner --------------------------------------------------------

def _datum(obj, grid):
    return shape_from_json(obj).on_grid(grid)


def run_battery(experiments: Sequence[dict], out_dir) -> dict:
    """Run a JSON list of long-time experiments.

    Each entry has ``name``, ``kind`` (``mass``, ``contraction`` or
    ``convexity``), ``offspring``, ``grid`` and the data (``phi`` or
    ``phi1``/``phi2`` as shape objects). Writes ``<name>.csv`` per experiment
    and returns the summary dict (also written to ``summary.json``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for exp in experiments:
        name, kind = exp["name"], exp["kind"]
        dist = make_offspring(exp["offspring"])
        grid = GridSpec.from_json(exp["grid"])
        t_max = float(exp.get("t_max", 40.0))
        tol = float(exp.get("tol", DEFAULT_TOL))
        if kind == "mass":
            tr = asymptotic_mass(_datum(exp["phi"], grid), dist, tol=tol, t_max=t_max)
            with open(out / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "mass"])
                w.writerows([repr(float(t)), repr(float(m))] for t, m in zip(tr.times, tr.masses))
            mono = bool(np.all(np.diff(tr.masses) >= -1e-8 * tr.masses[1:]))
            summary[name] = {"c_phi": tr.c_phi, "converged": tr.converged, "monotone": mono,
                             "pass": tr.converged and mono}
        elif kind in ("contraction", "convexity"):
            p1, p2 = _datum(exp["phi1"], grid), _datum(exp["phi2"], grid)
            if kind == "contraction":
                rep = contraction_experiment(p1, p2, dist, t_max=t_max, tol=tol)
                rep["pass"] = True
            else:
                rep = convexity_experiment(p1, p2, float(exp.get("lambda", 0.5)), dist,
                                           t_max=t_max, tol=tol,
                                           t_min=float(exp.get("t_min", 20.0)))
                rep["pass"] = rep["holds"]
            with open(out / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["key", "value"])
                w.writerows([k, repr(v)] for k, v in rep.items())
            summary[name] = rep
        else:
            raise ValueError(f"unknown experiment kind {kind!r}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
