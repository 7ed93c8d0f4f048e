"""Time stepping for the semilinear and killed equations.

All equations share one form,

    w_t = Laplacian(w) + F(w) - s * kappa(x) * w,    F(w) = -w + sum_k q_k w^k,

with an optional non-negative killing weight ``kappa`` scaled by ``s``. Each
step of size h is a Strang splitting: half a step of the nodewise ODE
``w' = F(w) - s kappa w`` (one classical RK4 substep), a full exact heat step,
and the second half step of the ODE. The linear decay -w lives inside F, so the
diffusion substep is a pure Markov kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GridMismatch, KillPresent, LogDomain, NegativeTime
from .field import GridField, check_same_grid, clamp_unit, heat_values
from .offspring import OffspringDistribution

#: intermediate states may leave [0, 1] by this much before it is an error
RANGE_TOL = 1e-6
#: default cap on stored snapshots per run
MAX_SNAPSHOTS = 1024
#: smallest terminal value accepted before taking a logarithm
LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class EvolutionSpec:
    """Parameters of one run: law, optional killing weight, horizon and steps."""

    dist: OffspringDistribution
    horizon: float
    steps: int
    kill: Optional[GridField] = None
    kill_scale: float = 1.0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if self.kill_scale < 0:
            raise ValueError("kill_scale must be >= 0")
        if self.kill is not None and float(self.kill.values.min()) < 0:
            raise ValueError("killing weight must be non-negative")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    def to_json(self) -> dict:
        return {
            "offspring": self.dist.to_json(),
            "horizon": self.horizon,
            "steps": self.steps,
            "killed": self.kill is not None,
            "kill_scale": self.kill_scale,
        }


class StrangIntegrator:
    """Stateful stepper; ``solve`` and the long-time drivers are built on it."""

    def __init__(self, w0: GridField, dist: OffspringDistribution, h: float,
                 kill: Optional[GridField] = None, kill_scale: float = 1.0):
        if kill is not None:
            check_same_grid(w0, kill)
        self.grid = w0.spec
        self.dist = dist
        self.h = float(h)
        self.values = clamp_unit(np.array(w0.values, dtype=float), 1e-9)
        self.t = 0.0
        self.n_steps = 0
        if kill is None or kill_scale == 0:
            self._kill = None
        else:
            self._kill = kill_scale * kill.values

    def _rhs(self, w):
        out = self.dist.pgf(w) - w
        if self._kill is not None:
            out -= self._kill * w
        return out

    def _react(self, w, dt):
        k1 = self._rhs(w)
        k2 = self._rhs(w + 0.5 * dt * k1)
        k3 = self._rhs(w + 0.5 * dt * k2)
        k4 = self._rhs(w + dt * k3)
        return w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step(self) -> None:
        h = self.h
        w = clamp_unit(self._react(self.values, 0.5 * h), RANGE_TOL)
        w = clamp_unit(heat_values(self.grid, w, h), RANGE_TOL)
        self.values = clamp_unit(self._react(w, 0.5 * h), RANGE_TOL)
        self.n_steps += 1
        self.t = self.n_steps * h

    def field(self) -> GridField:
        return GridField(self.grid, self.values, probability=True)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Snapshots of a solve: ``values[i]`` is the field at ``times[i]``."""

    times: np.ndarray
    values: np.ndarray = field(repr=False)
    spec: EvolutionSpec
    grid: object

    def __len__(self):
        return len(self.times)

    def field(self, i: int) -> GridField:
        return GridField(self.grid, self.values[i], probability=True)

    @property
    def terminal(self) -> GridField:
        return self.field(-1)

    def masses(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return self.values.sum(axis=axes) * self.grid.cell_volume


def default_stride(steps: int) -> int:
    return max(1, math.ceil(steps / (MAX_SNAPSHOTS - 2)))


def solve(phi0: GridField, spec: EvolutionSpec, stride: Optional[int] = None) -> Trajectory:
    """Integrate from ``phi0`` (values in [0, 1]) to ``spec.horizon``.

    Snapshots are stored at t = 0, every ``stride`` steps, and at the horizon.

    Raises
    ------
    GridMismatch
        ``phi0`` and the killing weight live on different grids.
    RangeViolation
        An intermediate state left [0, 1] by more than ``RANGE_TOL``.
    """
    if spec.kill is not None and spec.kill.spec != phi0.spec:
        raise GridMismatch("initial datum and killing weight are on different grids")
    stride = default_stride(spec.steps) if stride is None else int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")

    integ = StrangIntegrator(phi0, spec.dist, spec.h, spec.kill, spec.kill_scale)
    times = [0.0]
    snaps = [integ.values.copy()]
    for i in range(1, spec.steps + 1):
        integ.step()
        if i % stride == 0 or i == spec.steps:
            times.append(integ.t)
            snaps.append(integ.values.copy())
    times[-1] = float(spec.horizon)
    return Trajectory(np.array(times), np.array(snaps), spec, phi0.spec)


def solve_terminal(phi0: GridField, spec: EvolutionSpec) -> GridField:
    """Terminal state of :func:`solve` without keeping snapshots."""
    if spec.kill is not None and spec.kill.spec != phi0.spec:
        raise GridMismatch("initial datum and killing weight are on different grids")
    integ = StrangIntegrator(phi0, spec.dist, spec.h, spec.kill, spec.kill_scale)
    for _ in range(spec.steps):
        integ.step()
    return integ.field()


def _safe_neg_log(g: GridField) -> GridField:
    low = float(g.values.min())
    if low < LOG_FLOOR:
        raise LogDomain(
            f"terminal value {low:.3e} underflows; horizon too long for the dynamic range"
        )
    return GridField(g.spec, -np.log(g.values))


def nonlinear_semigroup_U(f: GridField, dist: OffspringDistribution, t: float,
                          steps: int) -> GridField:
    """Log-transformed flow f -> -ln U_t(exp(-f)) for f >= 0."""
    if t < 0:
        raise NegativeTime(f"t must be >= 0, got {t}")
    if float(f.values.min()) < 0:
        raise ValueError("f must be non-negative")
    if t == 0:
        return f
    g = GridField(f.spec, np.exp(-f.values), probability=True)
    return _safe_neg_log(solve_terminal(g, EvolutionSpec(dist, t, steps)))


def log_laplace_exponent(f: GridField, phi: GridField, dist: OffspringDistribution,
                         t: float, steps: int, kill_scale: float = 1.0) -> GridField:
    """-ln of the killed solve started from exp(-f) with killing weight ``phi``.

    This is the exponent of the joint Laplace functional of the terminal
    configuration and the occupation time: exp(-result(x)) is the expectation
    for one particle started at x.
    """
    check_same_grid(f, phi)
    if t == 0:
        return f
    g = GridField(f.spec, np.exp(-f.values), probability=True)
    spec = EvolutionSpec(dist, t, steps, kill=phi, kill_scale=kill_scale)
    return _safe_neg_log(solve_terminal(g, spec))


def w_step_additive(f: GridField, phi: GridField, t: float) -> GridField:
    """Occupation source step in log form: f + t phi."""
    check_same_grid(f, phi)
    return GridField(f.spec, f.values + t * phi.values)


def w_step_multiplicative(g: GridField, phi: GridField, t: float) -> GridField:
    """Occupation source step in product form: g exp(-t phi)."""
    check_same_grid(g, phi)
    return GridField(g.spec, g.values * np.exp(-t * phi.values), g.probability)


def splitting_product(f: GridField, phi: GridField, dist: OffspringDistribution,
                      t: float, N: int, inner_steps: int) -> GridField:
    """N-fold alternation of the additive source step and the log flow, each of
    length t/N; the inner flow uses ``inner_steps`` Strang steps."""
    if N < 1:
        raise ValueError("N must be >= 1")
    check_same_grid(f, phi)
    tau = t / N
    out = f
    for _ in range(N):
        out = w_step_additive(out, phi, tau)
        out = nonlinear_semigroup_U(out, dist, tau, inner_steps)
    return out


@dataclass(frozen=True, eq=False)
class RescaledView:
    """exp((1 - q_1) t) u(., t) on the snapshot times of a kill-free run."""

    times: np.ndarray
    values: np.ndarray = field(repr=False)
    grid: object
    q1: float

    def field(self, i: int) -> GridField:
        return GridField(self.grid, self.values[i])

    def masses(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return self.values.sum(axis=axes) * self.grid.cell_volume


def rescaled_view(traj: Trajectory) -> RescaledView:
    if traj.spec.kill is not None and traj.spec.kill_scale != 0:
        raise KillPresent("the rescaled view is defined for kill-free runs only")
    q1 = traj.spec.dist.q1
    factor = np.exp((1.0 - q1) * traj.times)
    shape = (-1,) + (1,) * (traj.values.ndim - 1)
    return RescaledView(traj.times, traj.values * factor.reshape(shape), traj.grid, q1)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Long format ``t,node,value`` with the flat C-order node index."""
    with open(path, "w", newline="") as fh:
        fh.write("t,node,value\n")
        for t, snap in zip(traj.times, traj.values):
            ts = repr(float(t))
            flat = snap.reshape(-1)
            fh.writelines(f"{ts},{j},{float(v)!r}\n" for j, v in enumerate(flat))
