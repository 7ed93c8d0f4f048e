"""Offspring laws (q_k) of the branching mechanism.

A law is a finitely supported probability vector on k >= 1 with mean strictly
above one. It defines both the reaction term of the evolution equation,

    F(v) = -v + sum_k q_k v^k,

and the number of children a particle leaves when it dies.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Union

import numpy as np

from .errors import (
    DegenerateLinear,
    DomainError,
    NonNormalizable,
    OffspringError,
    SubcriticalMean,
)

#: weights whose sum is further than this from 1 are rejected unless normalize=True
NORMALIZATION_TOL = 1e-6
#: reaction_F clamps arguments this far outside [0, 1]; anything further is an error
CLAMP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class OffspringDistribution:
    """Immutable offspring law with cached moments.

    Use :func:`make_offspring` to build one; the constructor does not validate.
    """

    probs: Mapping[int, float]
    k_max: int
    mean_q: float
    second_moment: float
    cumulative: np.ndarray = field(repr=False)
    p_index: int
    coefficients: np.ndarray = field(repr=False)

    @property
    def q1(self) -> float:
        return self.probs.get(1, 0.0)

    @property
    def decay_rate(self) -> float:
        """Linear decay rate 1 - q_1 of the rescaling v = exp((1 - q_1) t) u."""
        return 1.0 - self.q1

    def pgf(self, v):
        """Generating function sum_k q_k v^k (no domain check)."""
        return np.polynomial.polynomial.polyval(v, self.coefficients)

    def inverse_cdf(self, u):
        """Map uniforms in [0, 1) to offspring numbers, keys in ascending k."""
        idx = np.searchsorted(self.cumulative, u, side="right")
        return np.minimum(idx, self.k_max - 1) + 1

    def to_json(self) -> dict:
        return {str(k): q for k, q in sorted(self.probs.items())}

    def __hash__(self):
        return hash(tuple(sorted(self.probs.items())))

    def __eq__(self, other):
        if not isinstance(other, OffspringDistribution):
            return NotImplemented
        return dict(self.probs) == dict(other.probs)


def _parse_key(key) -> int:
    try:
        k = int(key)
    except (TypeError, ValueError):
        raise OffspringError(f"offspring number {key!r} is not an integer") from None
    if isinstance(key, float) and key != k:
        raise OffspringError(f"offspring number {key!r} is not an integer")
    if k < 1:
        raise OffspringError(
            f"offspring number k={k} not allowed: every q_k is indexed by k >= 1 "
            "(particles never die without descendants)"
        )
    return k


def make_offspring(
    weights: Mapping[Union[int, str], float], normalize: bool = False
) -> OffspringDistribution:
    """Build a validated offspring law.

    Parameters
    ----------
    weights : mapping
        ``k -> weight``; keys may be ints or integer strings (JSON form).
    normalize : bool
        If False (default) the weights must already sum to 1 within
        ``NORMALIZATION_TOL`` and are only rescaled to remove rounding. If True
        any non-negative weights are accepted and normalized.

    Raises
    ------
    NonNormalizable
        All weights zero, or (``normalize=False``) the sum is not close to 1.
    DegenerateLinear
        All mass sits on k = 1, so the equation would be linear.
    SubcriticalMean
        The normalized mean is not strictly above 1.
    """
    raw: dict[int, float] = {}
    for key, w in weights.items():
        k = _parse_key(key)
        w = float(w)
        if not math.isfinite(w) or w < 0:
            raise OffspringError(f"weight for k={k} must be finite and >= 0, got {w}")
        raw[k] = raw.get(k, 0.0) + w

    total = math.fsum(raw.values())
    if total <= 0:
        raise NonNormalizable("offspring weights are all zero")
    if not normalize and abs(total - 1.0) > NORMALIZATION_TOL:
        raise NonNormalizable(
            f"offspring probabilities must satisfy sum q_k = 1, got {total!r}"
        )

    probs = {k: w / total for k, w in sorted(raw.items()) if w > 0}
    if all(k == 1 for k in probs):
        raise DegenerateLinear(
            "q_1 = 1: no branching, the equation reduces to a linear problem"
        )
    mean_q = math.fsum(k * q for k, q in probs.items())
    if not mean_q > 1.0:
        raise SubcriticalMean(f"mean offspring number must exceed 1, got {mean_q!r}")

    k_max = max(probs)
    dense = np.zeros(k_max)
    for k, q in probs.items():
        dense[k - 1] = q
    cumulative = np.cumsum(dense)
    cumulative[-1] = 1.0
    cumulative.setflags(write=False)
    coefficients = np.concatenate([[0.0], dense])
    coefficients.setflags(write=False)

    return OffspringDistribution(
        probs=MappingProxyType(probs),
        k_max=k_max,
        mean_q=mean_q,
        second_moment=math.fsum(k * k * q for k, q in probs.items()),
        cumulative=cumulative,
        p_index=min(k for k in probs if k >= 2),
        coefficients=coefficients,
    )


def offspring_from_json(text_or_obj) -> OffspringDistribution:
    """Parse ``{"k": weight, ...}`` (a JSON string or an already-decoded dict)."""
    obj = json.loads(text_or_obj) if isinstance(text_or_obj, str) else text_or_obj
    if not isinstance(obj, dict):
        raise OffspringError("offspring law must be a JSON object {\"k\": weight}")
    return make_offspring(obj)


def reaction_F(dist: OffspringDistribution, v):
    """Reaction term F(v) = -v + sum_k q_k v^k on [0, 1].

    Arguments up to ``CLAMP_TOL`` outside [0, 1] are clamped; further out is a
    :class:`DomainError`. Works on scalars and arrays.
    """
    arr = np.asarray(v, dtype=float)
    if np.any(arr < -CLAMP_TOL) or np.any(arr > 1.0 + CLAMP_TOL):
        raise DomainError("reaction_F is defined on [0, 1] only")
    arr = np.clip(arr, 0.0, 1.0)
    out = dist.pgf(arr) - arr
    return float(out) if out.ndim == 0 else out


def f_prime_at_one(dist: OffspringDistribution) -> float:
    """F'(1) = sum_k (k - 1) q_k, strictly positive for a valid law."""
    return dist.mean_q - 1.0


def sample_offspring(dist: OffspringDistribution, rng: np.random.Generator, size=None):
    """Draw offspring numbers by inverse CDF; returns an int or an int array."""
    u = rng.random(size)
    k = dist.inverse_cdf(u)
    return int(k) if size is None else k.astype(np.int64)
