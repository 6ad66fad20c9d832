"""Parametric time distributions: exponential, uniform, Pareto and deterministic.

Every variant samples by inverse CDF from a single uniform draw, so each
sampled quantity advances its generator by exactly one step.

Textual syntax (case-insensitive)::

    exp(rate)   uniform(a, b)   pareto(k, a)   det(c)
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Distribution",
    "Exponential",
    "Uniform",
    "Pareto",
    "Deterministic",
    "parse_distribution",
    "substreams",
    "STREAMS",
]

ArrayLike = Union[float, np.ndarray]

# Named per-replication substreams; order fixes the spawn index of each.
STREAMS = ("arrivals", "types", "services", "patience")


class Distribution:
    """Common interface of the four variants."""

    def mean(self) -> float:
        raise NotImplementedError

    def cdf(self, t: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def ppf(self, u: ArrayLike) -> ArrayLike:
        """Inverse CDF on ``u`` in [0, 1)."""
        raise NotImplementedError

    def scalar_ppf(self) -> Callable[[float], float]:
        """A plain-float inverse CDF, for the simulator's inner loop."""
        raise NotImplementedError

    def scaled(self, factor: float) -> "Distribution":
        """The law of ``factor * X``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.ppf(rng.random()))

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.asarray(self.ppf(rng.random(size)), dtype=float)


@dataclass(frozen=True)
class Exponential(Distribution):
    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"exponential rate must be positive and finite, got {self.rate}")

    def mean(self) -> float:
        return 1.0 / self.rate

    def cdf(self, t):
        t = np.maximum(t, 0.0)
        return -np.expm1(-self.rate * t)

    def ppf(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.rate

    def scalar_ppf(self):
        rate = self.rate
        log1p = math.log1p
        return lambda u: -log1p(-u) / rate

    def scaled(self, factor):
        return Exponential(self.rate / factor)

    def __str__(self):
        return f"exp({self.rate!r})"


@dataclass(frozen=True)
class Uniform(Distribution):
    low: float
    high: float

    def __post_init__(self):
        if not (0 <= self.low < self.high and math.isfinite(self.high)):
            raise ValueError(f"uniform needs 0 <= a < b < inf, got ({self.low}, {self.high})")

    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def cdf(self, t):
        return np.clip((np.asarray(t, dtype=float) - self.low) / (self.high - self.low), 0.0, 1.0)

    def ppf(self, u):
        return self.low + (self.high - self.low) * np.asarray(u, dtype=float)

    def scalar_ppf(self):
        low, width = self.low, self.high - self.low
        return lambda u: low + width * u

    def scaled(self, factor):
        return Uniform(self.low * factor, self.high * factor)

    def __str__(self):
        return f"uniform({self.low!r}, {self.high!r})"


@dataclass(frozen=True)
class Pareto(Distribution):
    """``F(t) = 1 - (scale/t)**shape`` for ``t > scale``."""

    scale: float
    shape: float

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"pareto scale must be positive, got {self.scale}")
        # shape <= 1 has an infinite mean, which the staffing formulas cannot use
        if not self.shape > 1:
            raise ValueError(f"pareto shape must exceed 1, got {self.shape}")

    def mean(self) -> float:
        return self.scale * self.shape / (self.shape - 1.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        safe = np.where(t > self.scale, t, self.scale)
        return np.where(t > self.scale, 1.0 - (self.scale / safe) ** self.shape, 0.0)

    def ppf(self, u):
        return self.scale * (1.0 - np.asarray(u, dtype=float)) ** (-1.0 / self.shape)

    def scalar_ppf(self):
        k, e = self.scale, -1.0 / self.shape
        return lambda u: k * (1.0 - u) ** e

    def scaled(self, factor):
        return Pareto(self.scale * factor, self.shape)

    def __str__(self):
        return f"pareto({self.scale!r}, {self.shape!r})"


@dataclass(frozen=True)
class Deterministic(Distribution):
    """Point mass at ``value``; ``inf`` is allowed and means 'never' (patience only)."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"deterministic value must be >= 0, got {self.value}")

    def mean(self) -> float:
        return self.value

    def cdf(self, t):
        return np.where(np.asarray(t, dtype=float) >= self.value, 1.0, 0.0)

    def ppf(self, u):
        return np.full(np.shape(u), self.value, dtype=float) if np.ndim(u) else self.value

    def scalar_ppf(self):
        value = self.value
        return lambda u: value

    def scaled(self, factor):
        return Deterministic(self.value * factor)

    def __str__(self):
        return f"det({self.value!r})"


_SYNTAX = re.compile(r"^\s*([a-z]+)\s*\(\s*([^()]*)\)\s*$", re.IGNORECASE)
_VARIANTS = {
    "exp": (Exponential, 1),
    "exponential": (Exponential, 1),
    "uniform": (Uniform, 2),
    "u": (Uniform, 2),
    "pareto": (Pareto, 2),
    "det": (Deterministic, 1),
    "deterministic": (Deterministic, 1),
}


def parse_distribution(text: str) -> Distribution:
    """Parse ``exp(0.1)``, ``U(0, 10)``, ``Pareto(2,3)``, ``det(inf)`` and friends.

    >>> parse_distribution("Pareto(2, 3)").mean()
    3.0
    """
    match = _SYNTAX.match(text)
    if not match:
        raise ValueError(f"cannot parse distribution {text!r}; expected e.g. 'exp(0.5)'")
    name = match.group(1).lower()
    if name not in _VARIANTS:
        raise ValueError(f"unknown distribution {match.group(1)!r} in {text!r}")
    cls, arity = _VARIANTS[name]
    raw = [p.strip() for p in match.group(2).split(",")] if match.group(2).strip() else []
    if len(raw) != arity:
        raise ValueError(f"{name} takes {arity} parameter(s), got {len(raw)} in {text!r}")
    try:
        params = [float(p) for p in raw]
    except ValueError:
        raise ValueError(f"non-numeric parameter in {text!r}") from None
    return cls(*params)


def substreams(seed: int, replication: int = 0) -> dict:
    """Independent generators for each named stream of one replication.

    Derived with :class:`numpy.random.SeedSequence` spawn keys, so distinct
    ``(seed, replication)`` pairs never share generator state.
    """
    root = np.random.SeedSequence(entropy=seed & ((1 << 64) - 1), spawn_key=(replication,))
    return {name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(STREAMS, root.spawn(len(STREAMS)))}
