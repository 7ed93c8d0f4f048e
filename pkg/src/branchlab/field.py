"""Periodic grid fields and the spectral heat propagator.

The continuum problem lives on R^d; numerically we work on the periodic box
[-L, L)^d with ``n`` nodes per axis. The heat flow is applied exactly in
Fourier space (mode xi multiplied by exp(-|xi|^2 t)), so the only error of the
linear part is the periodic wrap, which is negligible once L is several
diffusion lengths larger than the support of the data.
"""
from __future__ import annotations

import functools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch, NegativeTime, RangeViolation, ZeroTime

log = logging.getLogger(__name__)

#: clamps of probability-range fields larger than this are reported
CLAMP_WARN = 1e-6


class ClampWarning(RuntimeWarning):
    """A probability-range field needed a clamp larger than ``CLAMP_WARN``."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [-half_width, half_width)^d."""

    d: int
    half_width: float
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"only d = 1 or 2 is supported, got d={self.d}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.d

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.n)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``self.shape + (d,)``."""
        return _nodes(self)

    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.nodes() ** 2, axis=-1))

    def to_json(self) -> dict:
        return {"d": self.d, "half_width": self.half_width, "n": self.n}

    @classmethod
    def from_json(cls, obj: dict) -> "GridSpec":
        return cls(d=int(obj["d"]), half_width=float(obj["half_width"]), n=int(obj["n"]))


@functools.lru_cache(maxsize=32)
def _nodes(spec: GridSpec) -> np.ndarray:
    grids = np.meshgrid(*([spec.axis] * spec.d), indexing="ij")
    out = np.stack(grids, axis=-1)
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=32)
def _wavenumber_sq(spec: GridSpec) -> np.ndarray:
    # rfftn layout: full frequencies on leading axes, half spectrum on the last
    full = 2.0 * np.pi * np.fft.fftfreq(spec.n, d=spec.dx)
    half = 2.0 * np.pi * np.fft.rfftfreq(spec.n, d=spec.dx)
    axes = [full] * (spec.d - 1) + [half]
    k2 = sum(k ** 2 for k in np.meshgrid(*axes, indexing="ij"))
    k2.setflags(write=False)
    return k2


@dataclass(frozen=True, eq=False)
class GridField:
    """Real field sampled on a :class:`GridSpec`; a value type.

    ``probability=True`` tags fields constrained to [0, 1].
    """

    spec: GridSpec
    values: np.ndarray = field(repr=False)
    probability: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.spec.shape:
            vals = vals.reshape(self.spec.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, spec: GridSpec, c: float, probability: bool = False) -> "GridField":
        return cls(spec, np.full(spec.shape, float(c)), probability)

    def with_values(self, values, probability=None) -> "GridField":
        prob = self.probability if probability is None else probability
        return GridField(self.spec, values, prob)

    def as_probability(self, tol: float = CLAMP_WARN) -> "GridField":
        """Tag as probability-range, clamping round-off within ``tol``."""
        return GridField(self.spec, clamp_unit(self.values, tol), True)

    def __call__(self, points) -> np.ndarray:
        return interpolate(self, points)

    # arithmetic keeps the grid and drops the probability tag
    def _binary(self, other, op):
        if isinstance(other, GridField):
            check_same_grid(self, other)
            other = other.values
        return GridField(self.spec, op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.spec, -self.values)


def check_same_grid(*fields: GridField) -> None:
    specs = {f.spec for f in fields}
    if len(specs) > 1:
        raise GridMismatch(f"fields live on different grids: {specs}")


def clamp_unit(values: np.ndarray, tol: float = CLAMP_WARN) -> np.ndarray:
    """Clip to [0, 1], raising :class:`RangeViolation` beyond ``tol``."""
    lo, hi = float(values.min()), float(values.max())
    excess = max(-lo, hi - 1.0, 0.0)
    if excess > tol:
        raise RangeViolation(f"values left [0, 1] by {excess:.3e} (> {tol:g})")
    if excess > 0:
        log.debug("clamped probability field by %.3e", excess)
    return np.clip(values, 0.0, 1.0)


def _clamp_propagated(values: np.ndarray) -> np.ndarray:
    excess = max(-float(values.min()), float(values.max()) - 1.0, 0.0)
    if excess > CLAMP_WARN:
        warnings.warn(
            f"probability field clamped by {excess:.3e}; grid probably under-resolved",
            ClampWarning,
            stacklevel=3,
        )
    elif excess > 0:
        log.debug("clamped probability field by %.3e", excess)
    return np.clip(values, 0.0, 1.0)


def heat_values(spec: GridSpec, values: np.ndarray, t: float) -> np.ndarray:
    """Raw-array form of :func:`heat_apply` (no validation, no clamping)."""
    if t == 0:
        return np.array(values, dtype=float)
    axes = tuple(range(spec.d))
    spectrum = np.fft.rfftn(values, axes=axes)
    spectrum *= np.exp(-_wavenumber_sq(spec) * t)
    return np.fft.irfftn(spectrum, s=spec.shape, axes=axes)


def heat_apply(f: GridField, t: float) -> GridField:
    """Periodic heat flow of ``f`` by time ``t`` (generator = Laplacian).

    Mass is preserved exactly (the zero mode is untouched). Probability-range
    fields are clamped back into [0, 1]; a clamp above ``CLAMP_WARN`` emits a
    :class:`ClampWarning`.
    """
    if t < 0:
        raise NegativeTime(f"t must be >= 0, got {t}")
    if t == 0:
        return f
    out = heat_values(f.spec, f.values, t)
    if f.probability:
        out = _clamp_propagated(out)
    return GridField(f.spec, out, f.probability)


def semigroup_S(f: GridField, t: float) -> GridField:
    """Killed heat semigroup S(t) f = exp(-t) (K_t * f)."""
    if t < 0:
        raise NegativeTime(f"t must be >= 0, got {t}")
    if t == 0:
        return f
    g = heat_apply(f, t)
    return GridField(f.spec, math.exp(-t) * g.values, f.probability)


def heat_kernel_values(spec: GridSpec, t: float, center=None) -> np.ndarray:
    """Periodized Gaussian (4 pi t)^(-d/2) exp(-|x|^2 / 4t) sampled on the grid."""
    if t < 0:
        raise NegativeTime(f"t must be > 0, got {t}")
    if t == 0:
        raise ZeroTime("the heat kernel is a Dirac mass at t = 0")
    period = 2.0 * spec.half_width
    # images beyond this offset contribute below exp(-40) relative
    n_img = int(math.ceil(math.sqrt(160.0 * t) / period)) + 1
    offsets = period * np.arange(-n_img, n_img + 1)
    center = np.zeros(spec.d) if center is None else np.broadcast_to(center, (spec.d,))
    out = np.ones(spec.shape)
    for axis in range(spec.d):
        x = spec.axis - center[axis]
        one = np.exp(-((x[:, None] + offsets[None, :]) ** 2) / (4.0 * t)).sum(axis=1)
        one /= math.sqrt(4.0 * math.pi * t)
        shape = [1] * spec.d
        shape[axis] = spec.n
        out = out * one.reshape(shape)
    return out


def heat_kernel_field(spec: GridSpec, t: float) -> GridField:
    """The heat kernel K_t centred at the origin, periodized onto the box."""
    return GridField(spec, heat_kernel_values(spec, t))


def mass(f: GridField) -> float:
    """Integral of the field (rectangle rule, spectrally accurate on periodic data)."""
    return float(np.sum(f.values) * f.spec.cell_volume)


def sup_norm(f: GridField) -> float:
    return float(np.max(np.abs(f.values)))


def l1_norm(f: GridField) -> float:
    return float(np.sum(np.abs(f.values)) * f.spec.cell_volume)


def interpolate(f: GridField, points) -> np.ndarray:
    """Multilinear interpolation at arbitrary points, periodic wrap.

    ``points`` has shape ``(..., d)`` (or ``(...)`` when d = 1).
    """
    spec = f.spec
    pts = np.asarray(points, dtype=float)
    if spec.d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    s = (pts + spec.half_width) / spec.dx
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64)
    out = np.zeros(pts.shape[:-1])
    for corner in range(2 ** spec.d):
        w = np.ones(pts.shape[:-1])
        idx = []
        for axis in range(spec.d):
            bit = (corner >> axis) & 1
            w = w * (frac[..., axis] if bit else 1.0 - frac[..., axis])
            idx.append((base[..., axis] + bit) % spec.n)
        out += w * f.values[tuple(idx)]
    return out


# -- serialization ---------------------------------------------------------

def write_field_csv(f: GridField, path) -> None:
    """Write ``x[,y],value`` rows, one per node, in C order."""
    coords = f.spec.nodes().reshape(-1, f.spec.d)
    names = ["x", "y"][: f.spec.d]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names + ["value"]) + "\n")
        for c, v in zip(coords, f.values.reshape(-1)):
            fh.write(",".join(repr(float(a)) for a in c) + f",{float(v)!r}\n")


def read_field_csv(path, spec: GridSpec) -> GridField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != spec.n ** spec.d:
        raise GridMismatch(f"{path}: {data.shape[0]} rows, grid has {spec.n ** spec.d} nodes")
    return GridField(spec, data[:, -1].reshape(spec.shape))


def save_raw(f: GridField, path) -> None:
    """Little-endian float64 array at ``path`` plus ``path.json`` with the grid."""
    path = Path(path)
    f.values.astype("<f8").tofile(path)
    sidecar = {"grid": f.spec.to_json(), "dtype": "<f8", "order": "C",
               "probability": f.probability}
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2))


def load_raw(path) -> GridField:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    spec = GridSpec.from_json(meta["grid"])
    vals = np.fromfile(path, dtype="<f8").reshape(spec.shape)
    return GridField(spec, vals, bool(meta.get("probability", False)))
