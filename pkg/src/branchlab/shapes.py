"""Closed-form test functions: initial data, killing weights, terminal weights.

Every shape evaluates exactly at arbitrary points (for the particle engine)
and samples onto a grid (for the PDE engine). ``encode`` packs a shape into a
numeric row read by the compiled particle kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .field import GridField, GridSpec

# kind codes shared with branching._weight_value
CONSTANT, GAUSSIAN, BUMP, SMOOTH_INDICATOR = 0, 1, 2, 3

Center = Union[float, Sequence[float]]


def _center(center: Center, d: int) -> np.ndarray:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size == 1:
        return np.full(d, float(c[0]))
    if c.size != d:
        raise ValueError(f"center {tuple(c)} does not match dimension {d}")
    return c


def _points(x) -> np.ndarray:
    # a bare scalar is a single 1-d point; otherwise the last axis is d
    x = np.asarray(x, dtype=float)
    return x.reshape(1) if x.ndim == 0 else x


class Shape:
    """Base class; subclasses define ``_radial`` or override ``__call__``."""

    kind: int

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points of shape ``(..., d)``."""
        x = _points(x)
        d = x.shape[-1]
        r2 = np.sum((x - _center(self.center, d)) ** 2, axis=-1)
        return self._radial(r2)

    def on_grid(self, spec: GridSpec, probability: bool = True) -> GridField:
        vals = self(spec.nodes())
        if probability and vals.max() > 1.0:
            probability = False
        return GridField(spec, vals, probability)

    def encode(self, d: int) -> np.ndarray:
        c = _center(getattr(self, "center", 0.0), d)
        row = np.zeros(6)
        row[0] = self.kind
        row[1:4] = self._params()
        row[4 : 4 + d] = c
        return row

    @property
    def sup(self) -> float:
        raise NotImplementedError

    def scaled(self, s: float) -> "Shape":
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Shape):
    value: float
    kind = CONSTANT

    def __call__(self, x) -> np.ndarray:
        x = _points(x)
        return np.full(x.shape[:-1], float(self.value))

    def _params(self):
        return (self.value, 0.0, 0.0)

    @property
    def sup(self):
        return float(self.value)

    def scaled(self, s):
        return Constant(self.value * s)


@dataclass(frozen=True)
class Gaussian(Shape):
    """peak * exp(-|x - center|^2 / (2 width^2))."""

    center: Center = 0.0
    width: float = 1.0
    peak: float = 1.0
    kind = GAUSSIAN

    def _radial(self, r2):
        return self.peak * np.exp(-r2 / (2.0 * self.width ** 2))

    def _params(self):
        return (self.peak, self.width, 0.0)

    @property
    def sup(self):
        return float(self.peak)

    def scaled(self, s):
        return Gaussian(self.center, self.width, self.peak * s)


@dataclass(frozen=True)
class Bump(Shape):
    """Smooth compactly supported bump, peak * exp(1 - 1/(1 - |x-c|^2/R^2))."""

    center: Center = 0.0
    radius: float = 1.0
    peak: float = 1.0
    kind = BUMP

    def _radial(self, r2):
        s = r2 / self.radius ** 2
        out = np.zeros_like(s)
        inside = s < 1.0
        out[inside] = self.peak * np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return out

    def _params(self):
        return (self.peak, self.radius, 0.0)

    @property
    def sup(self):
        return float(self.peak)

    def scaled(self, s):
        return Bump(self.center, self.radius, self.peak * s)


@dataclass(frozen=True)
class SmoothedIndicator(Shape):
    """Logistic mollification of the indicator of a ball:
    level / (1 + exp((|x - c| - radius) / softness))."""

    center: Center = 0.0
    radius: float = 1.0
    softness: float = 0.1
    level: float = 1.0
    kind = SMOOTH_INDICATOR

    def _radial(self, r2):
        z = (np.sqrt(r2) - self.radius) / self.softness
        return self.level * 0.5 * (1.0 - np.tanh(0.5 * z))

    def _params(self):
        return (self.level, self.radius, self.softness)

    @property
    def sup(self):
        return float(self.level)

    def scaled(self, s):
        return SmoothedIndicator(self.center, self.radius, self.softness, self.level * s)


def shape_from_json(obj: dict) -> Shape:
    """Build a shape from ``{"shape": name, ...params}``."""
    obj = dict(obj)
    name = obj.pop("shape", "gaussian")
    table = {
        "constant": Constant,
        "gaussian": Gaussian,
        "bump": Bump,
        "indicator-smoothed": SmoothedIndicator,
    }
    if name not in table:
        raise ValueError(f"unknown shape {name!r}; expected one of {sorted(table)}")
    for key in ("center",):
        if key in obj and isinstance(obj[key], list):
            obj[key] = tuple(obj[key])
    return table[name](**obj)


def shape_to_json(shape: Shape) -> dict:
    names = {Constant: "constant", Gaussian: "gaussian", Bump: "bump",
             SmoothedIndicator: "indicator-smoothed"}
    out = {"shape": names[type(shape)]}
    for k, v in shape.__dict__.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def support_radius(shape: Shape, rel: float = 1e-10) -> float:
    """Radius beyond which the shape is below ``rel`` times its peak."""
    if isinstance(shape, Constant):
        return math.inf
    if isinstance(shape, Gaussian):
        return shape.width * math.sqrt(2.0 * math.log(1.0 / rel))
    if isinstance(shape, Bump):
        return shape.radius
    if isinstance(shape, SmoothedIndicator):
        return shape.radius + shape.softness * math.log(1.0 / rel)
    raise TypeError(type(shape))
