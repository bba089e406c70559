"""Probability vectors, softmax policies, and the two distributions LAD matches.

``advantage_distribution`` is the target P_A(y) = exp(A(y)/eta) / Z_A and
``policy_induced_distribution`` is P_pi(y) = (pi(y)/pi_old(y)) / Z_pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDistribution, SupportError

SUM_TOL = 1e-9


def probvec(x, *, full_support: bool = False) -> np.ndarray:
    """Validate ``x`` as a probability vector and return it as a float array."""
    p = np.asarray(x, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise InvalidDistribution(f"probability vector needs >= 2 entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidDistribution("probability vector has negative or non-finite entries")
    total = p.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise InvalidDistribution(f"probability vector sums to {total!r}")
    if full_support and np.any(p <= 0):
        raise SupportError("distribution must have full support")
    return p


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    return z - math.log(np.exp(z).sum())


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


@dataclass
class LogitPolicy:
    """Softmax policy over arms; ``logits`` are the trainable parameters."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)

    @classmethod
    def uniform(cls, arms: int) -> "LogitPolicy":
        return cls(np.zeros(arms))

    def to_probs(self) -> np.ndarray:
        return softmax(self.logits)


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: float
    std: float


DEFAULT_MIXTURE = (
    MixtureComponent(0.3, 8.0, 3.0),
    MixtureComponent(0.4, 25.0, 3.0),
    MixtureComponent(0.3, 42.0, 3.0),
)

BASELINES = ("uniform", "none")


@dataclass(frozen=True)
class AdvantageSpec:
    """Gaussian-mixture advantage over ``arms`` arms.

    ``advantage_scale`` multiplies the log-mixture table; when left as None it
    equals ``eta`` so that the target is the discretized mixture itself.
    ``baseline="uniform"`` anchors the table so that Z_A = arms, i.e. an arm
    whose target mass equals 1/arms has zero advantage; ``"none"`` keeps the
    raw log-density offset.
    """

    arms: int = 50
    components: tuple[MixtureComponent, ...] = DEFAULT_MIXTURE
    eta: float = 1.0
    advantage_scale: float | None = None
    baseline: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if int(self.arms) != self.arms or self.arms < 2:
            raise InvalidDistribution(f"arms must be an integer >= 2, got {self.arms!r}")
        if not self.components:
            raise InvalidDistribution("mixture needs at least one component")
        for c in self.components:
            if not (c.weight > 0 and c.std > 0 and math.isfinite(c.mean)):
                raise InvalidDistribution(f"bad mixture component {c}")
        wsum = sum(c.weight for c in self.components)
        if abs(wsum - 1.0) > SUM_TOL:
            raise InvalidDistribution(f"mixture weights sum to {wsum!r}, expected 1")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InvalidDistribution(f"eta must be positive, got {self.eta!r}")
        if self.advantage_scale is not None and not self.advantage_scale > 0:
            raise InvalidDistribution("advantage_scale must be positive")
        if self.baseline not in BASELINES:
            raise InvalidDistribution(f"baseline must be one of {BASELINES}, got {self.baseline!r}")

    @property
    def scale(self) -> float:
        return self.eta if self.advantage_scale is None else self.advantage_scale


def log_mixture_density(spec: AdvantageSpec) -> np.ndarray:
    """log of sum_c w_c N(y; mu_c, sigma_c) at integer arms, via log-sum-exp."""
    y = np.arange(spec.arms, dtype=float)[:, None]
    w = np.array([c.weight for c in spec.components])
    mu = np.array([c.mean for c in spec.components])
    sd = np.array([c.std for c in spec.components])
    terms = np.log(w) - 0.5 * ((y - mu) / sd) ** 2 - np.log(sd * math.sqrt(2.0 * math.pi))
    top = terms.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(terms - top).sum(axis=1, keepdims=True))).ravel()


def advantage_table(spec: AdvantageSpec) -> np.ndarray:
    logd = log_mixture_density(spec)
    if spec.baseline == "uniform":
        top = logd.max()
        logd = logd - (top + math.log(np.exp(logd - top).sum())) + math.log(spec.arms)
    table = spec.scale * logd
    if not np.all(np.isfinite(table)):
        raise InvalidDistribution("advantage table has non-finite entries")
    return table


def advantage_distribution(advantages, eta: float) -> np.ndarray:
    a = np.asarray(advantages, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidDistribution("advantages must be finite")
    if not eta > 0:
        raise InvalidDistribution(f"eta must be positive, got {eta!r}")
    return softmax(a / eta)


def policy_induced_distribution(policy, behavior) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    old = np.asarray(behavior, dtype=float)
    if pi.shape != old.shape:
        raise InvalidDistribution(f"length mismatch: {pi.shape} vs {old.shape}")
    if np.any(old <= 0):
        raise SupportError("behavior policy must have full support")
    ratio = pi / old
    return ratio / ratio.sum()


def tempered(probs, temperature: float) -> np.ndarray:
    """probs**(1/T) renormalized; zero entries stay zero."""
    p = np.asarray(probs, dtype=float)
    if not temperature > 0:
        raise InvalidDistribution("temperature must be positive")
    out = np.zeros_like(p)
    nz = p > 0
    logp = np.log(p[nz]) / temperature
    out[nz] = np.exp(logp - logp.max())
    return out / out.sum()


def temperature_sample(probs, temperature: float, count: int, rng_seed) -> np.ndarray:
    """Draw ``count`` i.i.d. arm indices from the tempered distribution."""
    q = tempered(probvec(probs), temperature)
    rng = np.random.default_rng(rng_seed)
    return rng.choice(q.size, size=int(count), p=q)


@dataclass(frozen=True)
class Windows:
    """Boolean arm masks within +-2 std of each mixture mean."""

    masks: tuple = field(default_factory=tuple)

    @classmethod
    def from_spec(cls, spec: AdvantageSpec, width: float = 2.0) -> "Windows":
        y = np.arange(spec.arms)
        return cls(tuple(np.abs(y - c.mean) <= width * c.std for c in spec.components))

    def masses(self, p) -> list[float]:
        p = np.asarray(p, dtype=float)
        return [float(p[m].sum()) for m in self.masks]
