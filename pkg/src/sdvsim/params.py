"""Parameter values shared by the behavior DSL and the maneuver configs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class Range:
    """Closed interval of admissible values; ``center`` is the nominal value."""

    lo: float
    hi: float
    center: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"range lower bound {self.lo} exceeds upper bound {self.hi}")

    @classmethod
    def percent(cls, value: float, pct: float) -> "Range":
        a, b = value * (1.0 - pct / 100.0), value * (1.0 + pct / 100.0)
        return cls(min(a, b), max(a, b), value)

    @classmethod
    def between(cls, lo: float, hi: float) -> "Range":
        return cls(lo, hi, 0.5 * (lo + hi))

    def samples(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """``n`` uniformly spaced values including both ends (random draws if ``rng``)."""
        if n <= 1:
            return np.array([self.center])
        if rng is not None:
            return np.sort(rng.uniform(self.lo, self.hi, n))
        return np.linspace(self.lo, self.hi, n)

    def contains(self, v: float, eps: float = 1e-9) -> bool:
        return self.lo - eps <= v <= self.hi + eps

    def scaled(self, factor: float) -> "Range":
        return Range(self.lo * factor, self.hi * factor, self.center * factor)

    def __str__(self) -> str:
        return f"[{self.lo:g}, {self.hi:g}]"


@dataclass(frozen=True)
class Symbol:
    """Bare identifier in the DSL: a tree parameter reference or a named constant."""

    name: str

    def __str__(self) -> str:
        return self.name


Value = Union[float, int, bool, str, Range, Symbol, tuple]


def center(v) -> float:
    return v.center if isinstance(v, Range) else float(v)


def lower(v) -> float:
    return v.lo if isinstance(v, Range) else float(v)


def upper(v) -> float:
    return v.hi if isinstance(v, Range) else float(v)


def sample_values(v, n: int, rng=None) -> np.ndarray:
    if isinstance(v, Range):
        return v.samples(n, rng)
    return np.array([float(v)])


def format_value(v) -> str:
    """DSL text for a value; parsing it back gives an equal value."""
    if isinstance(v, Range):
        if abs(v.center - 0.5 * (v.lo + v.hi)) > 1e-12:
            raise ValueError(f"range {v} with off-center nominal value has no literal form")
        return f"[{v.lo!r}, {v.hi!r}]"
    if isinstance(v, tuple):
        return "(" + ", ".join(format_value(x) for x in v) + ")"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    return repr(v) if isinstance(v, float) else str(v)
