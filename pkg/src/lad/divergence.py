"""Convex generators f, their derivatives, and f-divergences on finite supports.

All logarithms are natural. Every generator satisfies f(1) = 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidDistribution, SupportError

_LOG2 = math.log(2.0)


class DivergenceKind(str, enum.Enum):
    KL = "kl"
    REVERSE_KL = "rkl"
    JEFFREYS = "jeffreys"
    TOTAL_VARIATION = "tv"
    HELLINGER = "hellinger"
    JENSEN_SHANNON = "js"
    FLOWRL_GEN = "flowrl-gen"

    @classmethod
    def parse(cls, value: "str | DivergenceKind") -> "DivergenceKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown divergence {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class DivergenceGenerator:
    kind: DivergenceKind
    domain_lower: float

    def value(self, x):
        return generator_value(self.kind, x)

    def derivative(self, x):
        return generator_derivative(self.kind, x)


def domain_lower(kind: DivergenceKind) -> float:
    """Infimum of the admissible argument (exclusive)."""
    return math.exp(-1.0) if DivergenceKind.parse(kind) is DivergenceKind.FLOWRL_GEN else 0.0


def generator(kind) -> DivergenceGenerator:
    kind = DivergenceKind.parse(kind)
    return DivergenceGenerator(kind, domain_lower(kind))


# Slope f(x)/x as x -> inf; None where unbounded. Used for q_i = 0 < p_i.
_SLOPE_AT_INFINITY = {
    DivergenceKind.KL: None,
    DivergenceKind.REVERSE_KL: 0.0,
    DivergenceKind.JEFFREYS: None,
    DivergenceKind.TOTAL_VARIATION: 1.0,
    DivergenceKind.HELLINGER: 0.5,
    DivergenceKind.JENSEN_SHANNON: 0.5 * _LOG2,
    DivergenceKind.FLOWRL_GEN: None,
}

# f(0+) for kinds defined at zero; used for p_i = 0 < q_i.
_VALUE_AT_ZERO = {
    DivergenceKind.KL: 0.0,
    DivergenceKind.REVERSE_KL: math.inf,
    DivergenceKind.JEFFREYS: math.inf,
    DivergenceKind.TOTAL_VARIATION: 1.0,
    DivergenceKind.HELLINGER: 0.5,
    DivergenceKind.JENSEN_SHANNON: 0.5 * _LOG2,
}


def _checked(kind: DivergenceKind, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    lower = domain_lower(kind)
    bad = ~np.isfinite(arr) | (arr <= lower)
    if np.any(bad):
        first = arr[bad].flat[0]
        raise DomainError(f"{kind.value} generator needs finite x > {lower:.6g}, got {first!r}")
    return arr


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def generator_value(kind, x):
    """Evaluate f(x) elementwise; scalar in, float out."""
    kind = DivergenceKind.parse(kind)
    t = _checked(kind, x)
    if kind is DivergenceKind.KL:
        v = t * np.log(t)
    elif kind is DivergenceKind.REVERSE_KL:
        v = -np.log(t)
    elif kind is DivergenceKind.JEFFREYS:
        v = (t - 1.0) * np.log(t)
    elif kind is DivergenceKind.TOTAL_VARIATION:
        v = np.abs(t - 1.0)
    elif kind is DivergenceKind.HELLINGER:
        v = 0.5 * (np.sqrt(t) - 1.0) ** 2
    elif kind is DivergenceKind.JENSEN_SHANNON:
        v = 0.5 * (t * np.log(t) - (t + 1.0) * np.log((t + 1.0) / 2.0))
    else:
        v = t * np.log(t) ** 2
    return _out(v, x)


def generator_derivative(kind, x):
    """Evaluate f'(x) elementwise. TotalVariation returns the subgradient 0 at x = 1."""
    kind = DivergenceKind.parse(kind)
    t = _checked(kind, x)
    if kind is DivergenceKind.KL:
        d = np.log(t) + 1.0
    elif kind is DivergenceKind.REVERSE_KL:
        d = -1.0 / t
    elif kind is DivergenceKind.JEFFREYS:
        d = np.log(t) + (t - 1.0) / t
    elif kind is DivergenceKind.TOTAL_VARIATION:
        d = np.sign(t - 1.0)
    elif kind is DivergenceKind.HELLINGER:
        s = np.sqrt(t)
        d = (s - 1.0) / (2.0 * s)
    elif kind is DivergenceKind.JENSEN_SHANNON:
        d = 0.5 * np.log(2.0 * t / (t + 1.0))
    else:
        lg = np.log(t)
        d = lg**2 + 2.0 * lg
    return _out(d, x)


def f_divergence(kind, p, q) -> float:
    """D_f(p || q) = sum_i q_i f(p_i / q_i) with 0 f(0/0) := 0.

    Entries with p_i = 0 < q_i use f(0+); entries with q_i = 0 < p_i use the
    perspective limit p_i * lim f(x)/x, which is infinite (an error) for the
    KL, Jeffreys and FlowRL generators.
    """
    kind = DivergenceKind.parse(kind)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidDistribution(f"length mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise InvalidDistribution("negative probability mass")

    both = (p > 0) & (q > 0)
    only_q = (p == 0) & (q > 0)
    only_p = (p > 0) & (q == 0)

    total = float(np.sum(q[both] * generator_value(kind, p[both] / q[both])))
    if np.any(only_q):
        if kind not in _VALUE_AT_ZERO:
            raise DomainError(f"{kind.value} generator undefined at 0 (p_i = 0 where q_i > 0)")
        total += _VALUE_AT_ZERO[kind] * float(np.sum(q[only_q]))
    if np.any(only_p):
        slope = _SLOPE_AT_INFINITY[kind]
        if slope is None:
            raise SupportError(f"p is not absolutely continuous w.r.t. q under {kind.value}")
        total += slope * float(np.sum(p[only_p]))
    return total
