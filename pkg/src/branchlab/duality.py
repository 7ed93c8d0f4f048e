"""Statistical cross-checks between the grid solver and the particle simulator.

Each check computes a particle-system expectation by Monte Carlo and the
matching functional of a PDE solution, then reports the z-score
(MC - PDE) / SE. PDE values at start points come from multilinear
interpolation on the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .asymptotics import asymptotic_mass, margin_width
from .branching import BatterySpec, Configuration, estimate
from .errors import BoxMarginViolated
from .field import GridField, GridSpec, heat_kernel_values, interpolate
from .offspring import OffspringDistribution
from .pde import EvolutionSpec, log_laplace_exponent, nonlinear_semigroup_U, solve_terminal
from .shapes import Constant, Shape

Z_MAX = 4.0
STANDARD_GRID = GridSpec(1, 20.0, 512)
#: PDE steps per unit time for the duality solves
STEPS_PER_UNIT = 256


def z_score(mc: float, se: float, pde: float) -> float:
    diff = mc - pde
    if diff == 0.0:
        return 0.0
    if se == 0.0:
        return math.inf
    return diff / se


@dataclass(frozen=True)
class DualityReport:
    name: str
    pde_value: float
    mc_mean: float
    mc_se: float
    z: float
    z_max: float = Z_MAX
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return abs(self.z) <= self.z_max

    def to_json(self) -> dict:
        return {
            "identity": self.name,
            "pde": self.pde_value,
            "mc_mean": self.mc_mean,
            "mc_se": self.mc_se,
            "z": self.z,
            "z_max": self.z_max,
            "pass": self.passed,
            **self.extra,
        }


def _starts(x0, d: int) -> Configuration:
    if isinstance(x0, Configuration):
        return x0
    pts = np.asarray(x0, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None] if d == 1 else pts[None, :]
    return Configuration(pts)


def check_start_margin(config: Configuration, grid: GridSpec, T: float) -> None:
    reach = float(np.abs(config.positions).max()) + margin_width(T)
    if reach > grid.half_width:
        raise BoxMarginViolated(
            f"start points plus margin {margin_width(T):.3g} reach {reach:.3g}, "
            f"outside the box half-width {grid.half_width:g}"
        )


def _on_grid(w, grid: GridSpec) -> GridField:
    if isinstance(w, GridField):
        if w.spec != grid:
            raise ValueError("weight lives on a different grid")
        return w
    if isinstance(w, (int, float)):
        w = Constant(float(w))
    return w.on_grid(grid, probability=False)


def _steps(T: float, steps: Optional[int]) -> int:
    return steps if steps is not None else max(1, int(math.ceil(STEPS_PER_UNIT * T)))


def check_markov_duality(x0, phi, dist: OffspringDistribution, T: float, R: int = 10 ** 5,
                         grid: GridSpec = STANDARD_GRID, seed: int = 0, steps: Optional[int] = None,
                         jobs: int = 1, z_max: float = Z_MAX) -> DualityReport:
    """E prod phi(X_T) from the start configuration against prod_i u(x_i, T)."""
    start = _starts(x0, grid.d)
    check_start_margin(start, grid, T)
    phi_grid = _on_grid(phi, grid).as_probability()
    u = solve_terminal(phi_grid, EvolutionSpec(dist, T, _steps(T, steps)))
    pde = float(np.prod(interpolate(u, start.positions)))
    rep = estimate(BatterySpec(start, dist, T, phi=phi, functionals=("multiplicative",),
                               R=R, seed=seed, jobs=jobs))
    est = rep["multiplicative"]
    return DualityReport("markov", pde, est.mean, est.se, z_score(est.mean, est.se, pde), z_max)


def check_laplace_duality(x0, g, dist: OffspringDistribution, s: float, R: int = 10 ** 5,
                          grid: GridSpec = STANDARD_GRID, seed: int = 0, steps: Optional[int] = None,
                          jobs: int = 1, z_max: float = Z_MAX) -> DualityReport:
    """E exp(-<g, X_s>) against exp(-sum_i (log flow of g)(x_i))."""
    start = _starts(x0, grid.d)
    check_start_margin(start, grid, s)
    g_grid = _on_grid(g, grid)
    ug = nonlinear_semigroup_U(g_grid, dist, s, _steps(s, steps))
    pde = math.exp(-float(np.sum(interpolate(ug, start.positions))))
    rep = estimate(BatterySpec(start, dist, s, f=g, functionals=("laplace",),
                               R=R, seed=seed, jobs=jobs))
    est = rep["laplace"]
    return DualityReport("laplace", pde, est.mean, est.se, z_score(est.mean, est.se, pde), z_max)


def check_occupation_representation(x0, phi, f, dist: OffspringDistribution, t: float,
                                    R: int = 10 ** 5, grid: GridSpec = STANDARD_GRID,
                                    seed: int = 0, steps: Optional[int] = None,
                                    kill_scale: float = 1.0, jobs: int = 1,
                                    z_max: float = Z_MAX) -> DualityReport:
    """E exp(-<f, X_t> - s Y_t(phi)) against the killed solve with weight s phi."""
    start = _starts(x0, grid.d)
    check_start_margin(start, grid, t)
    phi_grid = _on_grid(phi, grid)
    f_grid = _on_grid(f, grid)
    vt = log_laplace_exponent(f_grid, phi_grid, dist, t, _steps(t, steps), kill_scale)
    pde = math.exp(-float(np.sum(interpolate(vt, start.positions))))
    occ_scale = math.inf if kill_scale == 0 else 1.0 / kill_scale
    rep = estimate(BatterySpec(start, dist, t, phi=phi, f=f, functionals=("joint",),
                               R=R, seed=seed, occ_scale=occ_scale, jobs=jobs))
    est = rep["joint"]
    return DualityReport("occupation", pde, est.mean, est.se, z_score(est.mean, est.se, pde), z_max)


@dataclass(frozen=True)
class LongtimeReport:
    """Scaled discrepancy t^(d/2) |exp((1-q_1) t) MC - C K_t(x0)| per time."""

    times: np.ndarray
    rescaled_mc: np.ndarray
    rescaled_se: np.ndarray
    predicted: np.ndarray
    discrepancy: np.ndarray
    c_phi: float

    @property
    def decreasing(self) -> bool:
        return bool(self.discrepancy[-1] < self.discrepancy[0])

    def to_json(self) -> dict:
        return {
            "times": self.times.tolist(),
            "rescaled_mc": self.rescaled_mc.tolist(),
            "rescaled_se": self.rescaled_se.tolist(),
            "predicted": self.predicted.tolist(),
            "discrepancy": self.discrepancy.tolist(),
            "c_phi": self.c_phi,
            "decreasing": self.decreasing,
        }


def check_longtime_distribution(a_smooth: Shape, dist: OffspringDistribution,
                                times: Sequence[float] = (1.0, 2.0, 4.0), x0: float = 0.0,
                                R: int = 10 ** 5, grid: GridSpec = GridSpec(1, 40.0, 512),
                                seed: int = 0, t_mass: float = 30.0, jobs: int = 1) -> LongtimeReport:
    """Trend diagnostic for the long-time law of the multiplicative functional.

    For a single particle at ``x0`` the MC mean of prod a_smooth(X_t) is
    u(x0, t); after multiplying by exp((1-q_1) t) it should approach
    C K_t(x0), where C is the asymptotic mass of ``a_smooth``. The report
    lists the discrepancy scaled by t^(d/2); only its trend is meaningful.
    """
    lo, hi = 0.0, a_smooth.sup
    if not 0.0 <= hi <= 1.0 or lo < 0.0:
        raise ValueError("the smoothed set weight must take values in [0, 1]")
    start = _starts(x0, grid.d)
    check_start_margin(start, grid, max(times))
    c_phi = asymptotic_mass(a_smooth.on_grid(grid), dist, t_max=t_mass).require().c_phi
    rate = dist.decay_rate
    pos = start.positions[0]
    mc, se, pred, disc = [], [], [], []
    for i, t in enumerate(times):
        rep = estimate(BatterySpec(start, dist, t, phi=a_smooth, functionals=("multiplicative",),
                                   R=R, seed=seed + i, jobs=jobs))
        est = rep["multiplicative"]
        scale = math.exp(rate * t)
        k_t = float(interpolate(GridField(grid, heat_kernel_values(grid, t)), pos[None, :])[0])
        mc.append(scale * est.mean)
        se.append(scale * est.se)
        pred.append(c_phi * k_t)
        disc.append(t ** (grid.d / 2.0) * abs(mc[-1] - pred[-1]))
    return LongtimeReport(np.array(times, dtype=float), np.array(mc), np.array(se),
                          np.array(pred), np.array(disc), c_phi)
