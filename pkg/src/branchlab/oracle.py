"""Scalar ODE ground truth for spatially constant data.

With constant data the diffusion drops out and every equation becomes an ODE
in t. The integrator here is plain Python RK4 and evaluates the reaction
directly from the offspring probabilities, sharing no code with the grid
solver, so agreement between the two is meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AlphaTooLarge, RangeEscape, SingularDenominator
from .offspring import OffspringDistribution

KINDS = ("reaction", "killed", "scaled_killed", "linear_bound")
PROBABILITY_KINDS = ("reaction", "killed", "scaled_killed")
#: probability-kind trajectories may not leave [-ESCAPE, 1 + ESCAPE]
ESCAPE = 0.01


def _reaction(probs, v):
    # -v + sum q_k v^k from the raw probabilities (Horner-free on purpose)
    return -v + math.fsum(q * v ** k for k, q in probs)


def _fp1(probs) -> float:
    return math.fsum((k - 1) * q for k, q in probs)


@dataclass(frozen=True)
class ScalarIVP:
    """One scalar initial value problem.

    kinds
    -----
    reaction       u' = F(u)
    killed         v' = F(v) - c v
    scaled_killed  v' = F(v) - (M / T) v
    linear_bound   g' = (F'(1) - M / T) g - F'(1)
    """

    kind: str
    dist: OffspringDistribution
    y0: float
    horizon: float
    steps: int = 10 ** 5
    c: float = 0.0
    M: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind in PROBABILITY_KINDS and not 0.0 <= self.y0 <= 1.0:
            raise ValueError("initial value must lie in [0, 1]")
        if self.steps < 1 or self.horizon < 0:
            raise ValueError("need steps >= 1 and horizon >= 0")
        if self.kind in ("scaled_killed", "linear_bound") and self.T <= 0:
            raise ValueError("T must be positive")

    def rhs(self):
        probs = tuple(sorted(self.dist.probs.items()))
        if self.kind == "reaction":
            return lambda y: _reaction(probs, y)
        if self.kind == "killed":
            c = self.c
            return lambda y: _reaction(probs, y) - c * y
        if self.kind == "scaled_killed":
            rate = self.M / self.T
            return lambda y: _reaction(probs, y) - rate * y
        fp1 = _fp1(probs)
        slope = fp1 - self.M / self.T
        return lambda y: slope * y - fp1


@dataclass(frozen=True)
class Trace:
    times: np.ndarray
    values: np.ndarray

    @property
    def final(self) -> float:
        return float(self.values[-1])


def integrate(ivp: ScalarIVP) -> Trace:
    """Classical RK4 at ``ivp.steps`` uniform steps; the full trace is returned."""
    f = ivp.rhs()
    h = ivp.horizon / ivp.steps
    check = ivp.kind in PROBABILITY_KINDS
    y = float(ivp.y0)
    out = [y]
    for _ in range(ivp.steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if check and not -ESCAPE <= y <= 1.0 + ESCAPE:
            raise RangeEscape(f"{ivp.kind} solution left [0, 1]: {y!r}")
        out.append(y)
    return Trace(np.linspace(0.0, ivp.horizon, ivp.steps + 1), np.array(out))


def reaction_closed_form_binary(u0: float, t: float) -> float:
    """Exact solution of u' = (u^2 - u) / 2, the law {1: 1/2, 2: 1/2}."""
    if u0 == 0.0:
        return 0.0
    return 1.0 / (1.0 + ((1.0 - u0) / u0) * math.exp(0.5 * t))


def g_T_explicit(t: float, T: float, M: float, fp1: float) -> float:
    """Closed-form solution of g' = (fp1 - M/T) g - fp1 with g(0) = 1.

    g(t) = T fp1 / (T fp1 - M) - M / (T fp1 - M) * exp((fp1 - M/T) t).
    """
    denom = T * fp1 - M
    if abs(denom) <= 1e-14 * max(abs(T * fp1), abs(M), 1.0):
        raise SingularDenominator("T * F'(1) equals M; the closed form is undefined")
    return T * fp1 / denom - (M / denom) * math.exp(fp1 * t) * math.exp(-M * t / T)


def occupation_limit_one(dist: OffspringDistribution, c: float, horizon: float = 20.0,
                         steps: int = 10 ** 5) -> Trace:
    """v' = F(v) - c v from v(0) = 1: E exp(-c Y_t) for one particle and phi = c."""
    if c < 0:
        raise ValueError("c must be >= 0")
    return integrate(ScalarIVP("killed", dist, 1.0, horizon, steps, c=c))


DEFAULT_T_GRID = (1e2, 1e3, 1e4, 1e5)


@dataclass(frozen=True)
class LimitTwoTrace:
    T: np.ndarray
    t_eval: np.ndarray
    values: np.ndarray
    lower: np.ndarray

    @property
    def increasing(self) -> bool:
        return bool(np.all(np.diff(self.values) > 0))


def occupation_limit_two(dist: OffspringDistribution, M: float, alpha: float,
                         T_grid: Sequence[float] = DEFAULT_T_GRID,
                         steps: int = 10 ** 5) -> LimitTwoTrace:
    """v_T(alpha ln T) for the scaled-killed problem, with the linear lower bound.

    Requires 0 < alpha < 1 / F'(1).
    """
    fp1 = dist.mean_q - 1.0
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if alpha * fp1 >= 1.0:
        raise AlphaTooLarge(f"alpha={alpha} must be below 1/F'(1) = {1.0 / fp1:.6g}")
    Ts, ts, vals, lows = [], [], [], []
    for T in T_grid:
        t = alpha * math.log(T)
        tr = integrate(ScalarIVP("scaled_killed", dist, 1.0, t, steps, M=M, T=T))
        Ts.append(float(T))
        ts.append(t)
        vals.append(tr.final)
        lows.append(g_T_explicit(t, T, M, fp1))
    return LimitTwoTrace(np.array(Ts), np.array(ts), np.array(vals), np.array(lows))


def write_trace_csv(trace: Trace, path, stride: Optional[int] = None) -> None:
    """``t,value`` rows; ``stride`` thins long traces (the last row is kept)."""
    n = len(trace.times)
    stride = max(1, stride or math.ceil(n / 2000))
    idx = list(range(0, n, stride))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    with open(path, "w", newline="") as fh:
        fh.write("t,value\n")
        for i in idx:
            fh.write(f"{float(trace.times[i])!r},{float(trace.values[i])!r}\n")
