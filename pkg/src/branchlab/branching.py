"""Exact-event simulation of branching Brownian motion in free space.

Each particle dies at rate 1 and is replaced by k children at its death
position with probability q_k. Between events particles follow independent
Brownian motions whose generator is the Laplacian, so a coordinate moves with
variance 2 dt over time dt (not dt: the factor matters for every comparison
with the PDE).

Waiting times are drawn as one exponential with rate equal to the current
population, and the dying particle is then picked uniformly; this is equal in
law to per-particle clocks. The weighted occupation integral
Y_T = int_0^T <phi, X_s> ds is accumulated by the trapezoid rule on substeps of
length at most ``h_occ`` inside every inter-event interval.

Replica ``i`` of a battery is seeded with ``replica_seeds(master, R)[i]``, so
results do not depend on how replicas are split across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numba
import numpy as np

from .errors import HorizonTooLong, RangeError
from .field import GridField
from .offspring import OffspringDistribution
from .shapes import Constant, Shape

#: default cap on the projected mean population size(start) * exp((q-1) T)
DEFAULT_CAP = 10 ** 6
#: tolerance on the [0, 1] range of multiplicative weights
RANGE_TOL = 1e-9
GRID_KIND = 4

FUNCTIONALS = ("count", "occupation", "occupation_half", "multiplicative", "laplace", "joint",
               "occupation_scaled")


# -- weights ---------------------------------------------------------------

def encode_weight(w, d: int):
    """Pack a weight (Shape, GridField, number or None) into ``(rows, table)``."""
    if w is None:
        return np.zeros((0, 6)), np.zeros(0)
    if isinstance(w, (int, float)):
        w = Constant(float(w))
    if isinstance(w, Shape):
        return w.encode(d)[None, :], np.zeros(0)
    if isinstance(w, GridField):
        if w.spec.d != d:
            raise ValueError(f"weight grid has d={w.spec.d}, configuration has d={d}")
        row = np.zeros((1, 6))
        row[0, :3] = (GRID_KIND, w.spec.half_width, w.spec.n)
        return row, np.ascontiguousarray(w.values.reshape(-1))
    raise TypeError(f"unsupported weight type {type(w).__name__}")


def weight_bounds(w) -> tuple:
    """(inf, sup) of a weight; exact for shapes and grids."""
    if w is None:
        return 0.0, 0.0
    if isinstance(w, (int, float)):
        return float(w), float(w)
    if isinstance(w, GridField):
        return float(w.values.min()), float(w.values.max())
    if isinstance(w, Constant):
        return w.sup, w.sup
    return 0.0, w.sup


@numba.njit(cache=True)
def _interp(table, half_width, n, x):
    d = x.shape[0]
    dx = 2.0 * half_width / n
    s0 = (x[0] + half_width) / dx
    b0 = math.floor(s0)
    f0 = s0 - b0
    i0 = int(b0) % n
    j0 = (i0 + 1) % n
    if d == 1:
        return (1.0 - f0) * table[i0] + f0 * table[j0]
    s1 = (x[1] + half_width) / dx
    b1 = math.floor(s1)
    f1 = s1 - b1
    i1 = int(b1) % n
    j1 = (i1 + 1) % n
    return ((1.0 - f0) * (1.0 - f1) * table[i0 * n + i1]
            + (1.0 - f0) * f1 * table[i0 * n + j1]
            + f0 * (1.0 - f1) * table[j0 * n + i1]
            + f0 * f1 * table[j0 * n + j1])


@numba.njit(cache=True)
def _weight_value(rows, table, x):
    d = x.shape[0]
    total = 0.0
    for r in range(rows.shape[0]):
        kind = int(rows[r, 0])
        a = rows[r, 1]
        b = rows[r, 2]
        c = rows[r, 3]
        if kind == 0:
            total += a
            continue
        if kind == 4:
            total += _interp(table, a, int(b), x)
            continue
        r2 = 0.0
        for j in range(d):
            diff = x[j] - rows[r, 4 + j]
            r2 += diff * diff
        if kind == 1:
            total += a * math.exp(-r2 / (2.0 * b * b))
        elif kind == 2:
            s = r2 / (b * b)
            if s < 1.0:
                total += a * math.exp(1.0 - 1.0 / (1.0 - s))
        elif kind == 3:
            z = (math.sqrt(r2) - b) / c
            total += a * 0.5 * (1.0 - math.tanh(0.5 * z))
    return total


# -- kernels ---------------------------------------------------------------

@numba.njit(cache=True)
def _evolve(pos, n, T, cum, rows, table, occ, h_occ, paired, checkpoints, counts, cap):
    """Run one replica in place from the configuration ``pos[:n]``.

    Returns ``(pos, n, Y, Y_half, status)``; ``pos`` may be a reallocated
    buffer and ``status`` is -1 if the population exceeded ``cap``. With
    ``paired`` the path is sampled at twice the resolution; Y then uses every
    other sample (step <= h_occ) and Y_half all of them (step <= h_occ / 2),
    both on the same path. Otherwise Y_half equals Y.
    """
    d = pos.shape[1]
    k_max = cum.shape[0]
    t = 0.0
    Y = 0.0
    ci = 0
    nc = checkpoints.shape[0]
    Y_half = 0.0
    cur = 0.0
    if occ:
        for i in range(n):
            cur += _weight_value(rows, table, pos[i])
    while True:
        t_next = t + np.random.exponential(1.0) / n
        while ci < nc and checkpoints[ci] < t_next:
            counts[ci] = n
            ci += 1
        seg_end = t_next if t_next < T else T
        span = seg_end - t
        if occ:
            m = int(math.ceil(span / h_occ))
            if m < 1:
                m = 1
            sub = 2 * m if paired else m
            dt = span / sub
            sd = math.sqrt(2.0 * dt)
            pair_start = cur
            for s in range(sub):
                new = 0.0
                for i in range(n):
                    for j in range(d):
                        pos[i, j] += sd * np.random.standard_normal()
                    new += _weight_value(rows, table, pos[i])
                if paired:
                    Y_half += 0.5 * dt * (cur + new)
                    if s % 2 == 0:
                        pair_start = cur
                    else:
                        Y += dt * (pair_start + new)
                else:
                    Y += 0.5 * dt * (cur + new)
                cur = new
        else:
            sd = math.sqrt(2.0 * span)
            for i in range(n):
                for j in range(d):
                    pos[i, j] += sd * np.random.standard_normal()
        t = seg_end
        if t_next >= T:
            break
        parent = int(np.random.random() * n)
        if parent >= n:
            parent = n - 1
        k = np.searchsorted(cum, np.random.random(), side="right") + 1
        if k > k_max:
            k = k_max
        if k > 1:
            need = n + k - 1
            if need > pos.shape[0]:
                grown = np.empty((max(2 * pos.shape[0], need), d))
                grown[:n] = pos[:n]
                pos = grown
            for c in range(n, need):
                for j in range(d):
                    pos[c, j] = pos[parent, j]
            if occ:
                cur += (k - 1) * _weight_value(rows, table, pos[parent])
            n = need
            if n > cap:
                return pos, n, Y, Y_half, -1
    while ci < nc:
        counts[ci] = n
        ci += 1
    if not paired:
        Y_half = Y
    return pos, n, Y, Y_half, 0


@numba.njit(cache=True)
def _simulate_one(seed, start, T, cum, rows, table, occ, h_occ, checkpoints, cap):
    np.random.seed(seed)
    m0 = start.shape[0]
    pos = np.empty((max(16, 2 * m0), start.shape[1]))
    pos[:m0] = start
    counts = np.zeros(checkpoints.shape[0], dtype=np.int64)
    pos, n, Y, _, status = _evolve(pos, m0, T, cum, rows, table, occ, h_occ, False,
                                   checkpoints, counts, cap)
    return pos[:n].copy(), counts, Y, status


@numba.njit(cache=True)
def _battery(seeds, start, T, cum, rows_o, table_o, occ, h_occ, paired,
             rows_p, table_p, need_p, rows_f, table_f, need_f, cap, out):
    m0 = start.shape[0]
    pos = np.empty((max(64, 4 * m0), start.shape[1]))
    no_checkpoints = np.empty(0)
    counts = np.zeros(0, dtype=np.int64)
    for r in range(seeds.shape[0]):
        np.random.seed(seeds[r])
        pos[:m0] = start
        pos, n, Y, Y_half, status = _evolve(pos, m0, T, cum, rows_o, table_o, occ, h_occ,
                                            paired, no_checkpoints, counts, cap)
        if status != 0:
            return r
        prod = 1.0
        if need_p:
            for i in range(n):
                prod *= _weight_value(rows_p, table_p, pos[i])
        sf = 0.0
        if need_f:
            for i in range(n):
                sf += _weight_value(rows_f, table_f, pos[i])
        out[r, 0] = n
        out[r, 1] = Y
        out[r, 2] = sf
        out[r, 3] = prod
        out[r, 4] = Y_half
    return -1


# -- public types ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Configuration:
    """Finite set of particle positions, array of shape (size, d)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2:
            raise ValueError("positions must have shape (size, d)")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @classmethod
    def of(cls, *points, d: Optional[int] = None) -> "Configuration":
        """``Configuration.of(0.0, 1.5)`` in 1-d, ``.of((0, 0), (1, 0))`` in 2-d."""
        if not points:
            return cls(np.zeros((0, d or 1)))
        return cls(np.array([np.atleast_1d(p) for p in points], dtype=float))

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def __len__(self):
        return self.size


@dataclass(frozen=True, eq=False)
class SimOutcome:
    terminal: Configuration
    checkpoints: np.ndarray
    counts: np.ndarray
    occupation: float
    seed: int


def replica_seeds(master: int, R: int, offset: int = 0) -> np.ndarray:
    """Per-replica 32-bit seeds from a master seed by a counter scheme.

    Seed i is ``base + i * golden`` modulo 2^32, with ``base`` hashed from the
    master seed; the multiplier is odd, so the R seeds are distinct.
    """
    base = int(np.random.SeedSequence(int(master)).generate_state(1, np.uint32)[0])
    idx = np.arange(offset, offset + R, dtype=np.uint64)
    return ((np.uint64(base) + idx * np.uint64(0x9E3779B9)) % np.uint64(2 ** 32)).astype(np.uint32)


def default_h_occ(T: float) -> float:
    return min(1.0 / 64.0, T / 64.0) if T > 0 else 1.0


def _check_horizon(size: int, dist: OffspringDistribution, T: float, cap: int) -> None:
    projected = size * math.exp((dist.mean_q - 1.0) * T)
    if projected > cap:
        raise HorizonTooLong(
            f"projected mean population {projected:.3g} exceeds the cap {cap:g}"
        )


def _as_start(start) -> np.ndarray:
    if isinstance(start, Configuration):
        return np.ascontiguousarray(start.positions)
    return np.ascontiguousarray(Configuration(start).positions)


def simulate(start, dist: OffspringDistribution, T: float, phi=None,
             checkpoints: Sequence[float] = (), seed: int = 0,
             h_occ: Optional[float] = None, cap: int = DEFAULT_CAP) -> SimOutcome:
    """Simulate one replica from ``start`` up to time ``T``.

    ``phi`` (optional) is the occupation weight; without it the occupation
    integral is 0 and no substepping happens. ``seed`` is a 32-bit integer;
    ``replica_seeds(master, R)[i]`` reproduces replica ``i`` of a battery.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    pos0 = _as_start(start)
    if pos0.shape[0] == 0:
        raise ValueError("start configuration must be nonempty")
    _check_horizon(pos0.shape[0], dist, T, cap)
    cps = np.sort(np.asarray(checkpoints, dtype=float))
    if cps.size and (cps[0] < 0 or cps[-1] > T):
        raise ValueError("checkpoints must lie in [0, T]")
    rows, table = encode_weight(phi, pos0.shape[1])
    h = default_h_occ(T) if h_occ is None else float(h_occ)
    terminal, counts, Y, status = _simulate_one(
        np.uint32(seed), pos0, float(T), np.asarray(dist.cumulative), rows, table,
        phi is not None, h, cps, 100 * cap,
    )
    if status != 0:
        raise HorizonTooLong("population exceeded the hard cap during the run")
    return SimOutcome(Configuration(terminal), cps, counts, float(Y), int(seed))


def multiplicative_functional(config: Configuration, phi) -> float:
    """Product of phi over the particles; 1 for the empty configuration.

    ``phi`` is any callable on arrays of points of shape (m, d) with values in
    [0, 1] (shapes, grid fields or plain functions).
    """
    if config.size == 0:
        return 1.0
    vals = np.asarray(phi(config.positions), dtype=float)
    if np.any(vals < 0) or np.any(vals > 1.0 + RANGE_TOL):
        raise RangeError("multiplicative weights must take values in [0, 1]")
    return float(np.prod(vals))


# -- batteries -------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    R: int

    def to_json(self) -> dict:
        return {"mean": self.mean, "se": self.se, "R": self.R}


def summarize(samples: np.ndarray) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    R = samples.shape[0]
    se = float(np.std(samples, ddof=1) / math.sqrt(R)) if R > 1 else math.inf
    return Estimate(float(np.mean(samples)), se, R)


@dataclass
class BatterySpec:
    """Inputs of an estimator battery.

    ``phi`` is both the multiplicative weight and the occupation weight;
    ``f`` is the terminal Laplace weight; ``occ_scale`` is the divisor c of the
    occupation integral in the joint and scaled functionals, exp(-<f, X_T> - Y / c)
    and exp(-Y / c).
    """

    start: object
    dist: OffspringDistribution
    T: float
    phi: object = None
    f: object = None
    functionals: Sequence[str] = ("count",)
    R: int = 10 ** 5
    seed: int = 0
    h_occ: Optional[float] = None
    occ_scale: float = 1.0
    cap: int = DEFAULT_CAP
    jobs: int = 1
    #: also accumulate the occupation at step h_occ / 2 on the same paths
    paired_occupation: bool = False


@dataclass(frozen=True, eq=False)
class BatteryReport:
    """Per-functional estimates plus the raw per-replica samples.

    ``samples`` has one row per replica, in seed order, with columns
    count, Y, <f, X_T>, prod phi(X_T), Y at step h_occ / 2.
    """

    estimates: Dict[str, Estimate]
    R: int
    seed: int
    samples: np.ndarray = field(repr=False)
    replica_seeds: np.ndarray = field(repr=False)

    def __getitem__(self, key) -> Estimate:
        return self.estimates[key]

    def functional_samples(self, name: str, occ_scale: float = 1.0) -> np.ndarray:
        return _functional(self.samples, name, occ_scale)

    def to_json(self) -> dict:
        return {k: v.to_json() for k, v in self.estimates.items()}


def _functional(samples, name, occ_scale):
    count, Y, sf, prod, Y_half = samples.T
    if name == "count":
        return count
    if name == "occupation":
        return Y
    if name == "occupation_half":
        return Y_half
    if name == "multiplicative":
        return prod
    if name == "laplace":
        return np.exp(-sf)
    if name == "joint":
        return np.exp(-sf - Y / occ_scale)
    if name == "occupation_scaled":
        return np.exp(-Y / occ_scale)
    raise ValueError(f"unknown functional {name!r}; expected one of {FUNCTIONALS}")


def _run_chunk(seeds, start, T, cum, enc_o, occ, h_occ, paired, enc_p, need_p, enc_f,
               need_f, cap):
    out = np.zeros((seeds.shape[0], 5))
    bad = _battery(seeds, start, T, cum, enc_o[0], enc_o[1], occ, h_occ, paired,
                   enc_p[0], enc_p[1], need_p, enc_f[0], enc_f[1], need_f, cap, out)
    if bad >= 0:
        raise HorizonTooLong(f"replica {bad} exceeded the population hard cap")
    return out


def estimate(spec: BatterySpec) -> BatteryReport:
    """Run ``spec.R`` independent replicas and average the requested functionals."""
    if spec.R < 100:
        raise ValueError("a battery needs R >= 100 replicas")
    unknown = set(spec.functionals) - set(FUNCTIONALS)
    if unknown:
        raise ValueError(f"unknown functionals {sorted(unknown)}")
    start = _as_start(spec.start)
    if start.shape[0] == 0:
        raise ValueError("start configuration must be nonempty")
    d = start.shape[1]
    _check_horizon(start.shape[0], spec.dist, spec.T, spec.cap)

    wanted = set(spec.functionals)
    occ = bool(wanted & {"occupation", "occupation_half", "joint", "occupation_scaled"})
    if "occupation_half" in wanted and not spec.paired_occupation:
        raise ValueError("occupation_half needs paired_occupation=True")
    need_p = "multiplicative" in wanted
    need_f = bool(wanted & {"laplace", "joint"})
    if (occ or need_p) and spec.phi is None:
        raise ValueError("these functionals need a weight phi")
    if need_f and spec.f is None:
        raise ValueError("laplace/joint functionals need a terminal weight f")
    if need_p:
        lo, hi = weight_bounds(spec.phi)
        if lo < 0 or hi > 1.0 + RANGE_TOL:
            raise RangeError("multiplicative weight must take values in [0, 1]")
    if occ and weight_bounds(spec.phi)[0] < 0:
        raise RangeError("occupation weight must be non-negative")
    if occ and weight_bounds(spec.phi) == (0.0, 0.0):
        # Y is identically 0; skipping the substeps keeps the random stream of
        # the occupation-free functionals
        occ = False

    enc_phi = encode_weight(spec.phi, d)
    enc_f = encode_weight(spec.f, d)
    h = default_h_occ(spec.T) if spec.h_occ is None else float(spec.h_occ)
    seeds = replica_seeds(spec.seed, spec.R)
    args = (start, float(spec.T), np.asarray(spec.dist.cumulative), enc_phi, occ, h,
            bool(spec.paired_occupation), enc_phi, need_p, enc_f, need_f, 100 * spec.cap)

    if spec.jobs > 1:
        from joblib import Parallel, delayed

        chunks = np.array_split(seeds, spec.jobs)
        parts = Parallel(n_jobs=spec.jobs)(delayed(_run_chunk)(c, *args) for c in chunks)
        samples = np.concatenate(parts, axis=0)
    else:
        samples = _run_chunk(seeds, *args)

    estimates = {
        name: summarize(_functional(samples, name, spec.occ_scale))
        for name in spec.functionals
    }
    return BatteryReport(estimates, spec.R, int(spec.seed), samples, seeds)


def write_replica_csv(report: BatteryReport, path) -> None:
    """Optional per-replica dump: ``seed,count,Y``."""
    with open(path, "w", newline="") as fh:
        fh.write("seed,count,Y\n")
        for s, row in zip(report.replica_seeds, report.samples):
            fh.write(f"{int(s)},{int(row[0])},{float(row[1])!r}\n")
