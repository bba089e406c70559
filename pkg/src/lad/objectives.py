"""Training objectives on a softmax policy and their analytic logit gradients.

Every loss is something to minimize. Functions take a ``source`` that is
either a :class:`Batch` (Monte Carlo estimate over arms sampled from the
behavior policy) or a behavior probability vector, in which case the
expectation is enumerated exactly over all arms.

Gradients are with respect to the logits. Where a loss depends on the
logits only through pi, the gradient is the softmax pullback
``pi * (w - <pi, w>)`` of w = dL/dpi, so its entries sum to zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import divergence as dv
from .distribution import LogitPolicy, log_softmax, policy_induced_distribution, softmax
from .errors import InvalidDistribution, SupportError, TractabilityError

ENUMERATION_CAP = 4096
DEFAULT_CLIP_EPSILON = 0.2


class ObjectiveKind(str, enum.Enum):
    LAD = "lad"
    LAD_THEORETICAL = "lad-theoretical"
    GRPO = "grpo"
    VANILLA_PG = "vanilla-pg"
    PPO_CLIP = "ppo-clip"
    FLOWRL = "flowrl"

    @classmethod
    def parse(cls, value) -> "ObjectiveKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown objective {value!r}; expected one of {names}") from None


LAD_KINDS = (ObjectiveKind.LAD, ObjectiveKind.LAD_THEORETICAL)


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: ObjectiveKind
    divergence: dv.DivergenceKind | None = None
    eta: float = 1.0
    kl_weight: float | None = None
    clip_epsilon: float | None = None
    entropy_bonus: float = 0.0
    group_normalize: bool = False
    on_policy: bool = True

    def __post_init__(self):
        kind = ObjectiveKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in LAD_KINDS:
            if self.divergence is None:
                raise InvalidDistribution(f"objective {kind.value} needs a divergence")
            object.__setattr__(self, "divergence", dv.DivergenceKind.parse(self.divergence))
        elif self.divergence is not None:
            raise InvalidDistribution(f"divergence only applies to LAD objectives, not {kind.value}")
        if kind is ObjectiveKind.GRPO:
            if self.kl_weight is None:
                object.__setattr__(self, "kl_weight", 1.0)
            if self.kl_weight < 0:
                raise InvalidDistribution("kl_weight must be nonnegative")
        elif self.kl_weight is not None:
            raise InvalidDistribution("kl_weight only applies to grpo")
        if kind is ObjectiveKind.PPO_CLIP:
            if self.clip_epsilon is None:
                object.__setattr__(self, "clip_epsilon", DEFAULT_CLIP_EPSILON)
            if not self.clip_epsilon > 0:
                raise InvalidDistribution("clip_epsilon must be positive")
        elif self.clip_epsilon is not None:
            raise InvalidDistribution("clip_epsilon only applies to ppo-clip")
        if self.entropy_bonus < 0:
            raise InvalidDistribution("entropy_bonus must be nonnegative")
        if self.entropy_bonus and kind not in (ObjectiveKind.GRPO, ObjectiveKind.VANILLA_PG):
            raise InvalidDistribution("entropy_bonus only applies to grpo and vanilla-pg")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InvalidDistribution(f"eta must be positive, got {self.eta!r}")

    @classmethod
    def lad(cls, divergence, eta: float = 1.0, theoretical: bool = False) -> "ObjectiveConfig":
        kind = ObjectiveKind.LAD_THEORETICAL if theoretical else ObjectiveKind.LAD
        return cls(kind, divergence=divergence, eta=eta)

    @property
    def label(self) -> str:
        if self.kind in LAD_KINDS:
            return f"{self.kind.value}-{self.divergence.value}"
        return self.kind.value

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "eta": self.eta}
        if self.divergence is not None:
            out["divergence"] = self.divergence.value
        if self.kl_weight is not None:
            out["kl_weight"] = self.kl_weight
        if self.clip_epsilon is not None:
            out["clip_epsilon"] = self.clip_epsilon
        if self.kind in (ObjectiveKind.GRPO, ObjectiveKind.VANILLA_PG):
            out["entropy_bonus"] = self.entropy_bonus
            out["group_normalize"] = self.group_normalize
        if self.kind is ObjectiveKind.VANILLA_PG:
            out["on_policy"] = self.on_policy
        return out


@dataclass(frozen=True)
class Batch:
    arm_indices: np.ndarray
    behavior: np.ndarray
    advantages: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.arm_indices, dtype=np.int64)
        adv = np.asarray(self.advantages, dtype=float)
        beh = np.asarray(self.behavior, dtype=float)
        if idx.ndim != 1 or idx.size == 0 or idx.shape != adv.shape:
            raise InvalidDistribution("batch needs equal-length, non-empty indices and advantages")
        if idx.min() < 0 or idx.max() >= beh.size:
            raise InvalidDistribution("arm index out of range")
        object.__setattr__(self, "arm_indices", idx)
        object.__setattr__(self, "advantages", adv)
        object.__setattr__(self, "behavior", beh)

    def __len__(self) -> int:
        return self.arm_indices.size


def group_normalize(batch: Batch) -> Batch:
    """Replace advantages with (a - mean) / max(std, 1e-8) over the group."""
    a = batch.advantages
    return replace(batch, advantages=(a - a.mean()) / max(float(a.std()), 1e-8))


class Evaluation(NamedTuple):
    loss: float
    grad: np.ndarray
    grad_log_z: float = 0.0


# -- helpers ---------------------------------------------------------------


def _logits(policy) -> np.ndarray:
    if isinstance(policy, LogitPolicy):
        return policy.logits
    return np.asarray(policy, dtype=float)


def _pullback(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    return p * (w - np.dot(p, w))


def _score_mean(pi: np.ndarray, idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """mean_i weights_i * (e_{idx_i} - pi), i.e. the averaged weighted score."""
    acc = np.bincount(idx, weights=weights, minlength=pi.size)
    return (acc - weights.sum() * pi) / idx.size


def _behavior(source) -> np.ndarray:
    beh = source.behavior if isinstance(source, Batch) else np.asarray(source, dtype=float)
    if np.any(beh <= 0):
        raise SupportError("behavior policy must have full support")
    return beh


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise TractabilityError(f"exact enumeration over {n} arms exceeds cap {cap}")


def _kl_and_grad_w(pi: np.ndarray, old: np.ndarray):
    log_ratio = np.log(pi) - np.log(old)
    return float(np.dot(pi, log_ratio)), log_ratio


def _entropy_and_grad_w(pi: np.ndarray):
    logp = np.log(pi)
    return float(-np.dot(pi, logp)), -logp


# -- LAD --------------------------------------------------------------------


def _lad_practical(logits, source, adv_table, cfg: ObjectiveConfig) -> Evaluation:
    pi = softmax(logits)
    logpi = log_softmax(logits)
    old = _behavior(source)
    kind, eta = cfg.divergence, cfg.eta
    if isinstance(source, Batch):
        idx, a = source.arm_indices, source.advantages
        log_r = logpi[idx] - np.log(old[idx])
        c = np.exp(log_r - a / eta)
        loss = float(np.mean(np.exp(a / eta) * dv.generator_value(kind, c)))
        grad = _score_mean(pi, idx, dv.generator_derivative(kind, c) * np.exp(log_r))
        return Evaluation(loss, grad)
    a = np.asarray(adv_table, dtype=float)
    c = np.exp(logpi - np.log(old) - a / eta)
    loss = float(np.sum(old * np.exp(a / eta) * dv.generator_value(kind, c)))
    return Evaluation(loss, _pullback(pi, dv.generator_derivative(kind, c)))


def lad_loss_practical(policy, source, adv_table, cfg: ObjectiveConfig) -> float:
    """E_{y~pi_old} e^{A/eta} f((pi/pi_old) e^{-A/eta}), normalization-free."""
    return _lad_practical(_logits(policy), source, adv_table, cfg).loss


def lad_gradient_practical(policy, source, adv_table, cfg: ObjectiveConfig) -> np.ndarray:
    return _lad_practical(_logits(policy), source, adv_table, cfg).grad


def _lad_theoretical(logits, behavior, adv_table, cfg, cap=ENUMERATION_CAP) -> Evaluation:
    if isinstance(behavior, Batch):
        raise TractabilityError("theoretical LAD loss is exact-mode only")
    old = _behavior(behavior)
    _check_cap(old.size, cap)
    p_pi = policy_induced_distribution(softmax(logits), old)
    p_a = softmax(np.asarray(adv_table, dtype=float) / cfg.eta)
    u = p_pi / p_a
    loss = float(np.dot(p_a, dv.generator_value(cfg.divergence, u)))
    # centered score under P_pi: grad log pi(y) - E_{P_pi}[grad log pi] = e_y - P_pi
    return Evaluation(loss, _pullback(p_pi, dv.generator_derivative(cfg.divergence, u)))


def lad_loss_theoretical(policy, behavior, adv_table, cfg, cap: int = ENUMERATION_CAP) -> float:
    """D_f(P_pi || P_A) with both normalizers computed by full enumeration."""
    return _lad_theoretical(_logits(policy), behavior, adv_table, cfg, cap).loss


def lad_gradient_theoretical(policy, behavior, adv_table, cfg, cap: int = ENUMERATION_CAP):
    return _lad_theoretical(_logits(policy), behavior, adv_table, cfg, cap).grad


# -- GRPO / policy gradient ---------------------------------------------------


def _maybe_normalized(source, cfg: ObjectiveConfig | None):
    if cfg is not None and cfg.group_normalize and isinstance(source, Batch):
        return group_normalize(source)
    return source


def _grpo(logits, source, adv_table, cfg: ObjectiveConfig) -> Evaluation:
    pi = softmax(logits)
    old = _behavior(source)
    source = _maybe_normalized(source, cfg)
    kl, kl_w = _kl_and_grad_w(pi, old)
    ent, ent_w = _entropy_and_grad_w(pi)
    if isinstance(source, Batch):
        idx, a = source.arm_indices, source.advantages
        r = pi[idx] / old[idx]
        surrogate = -float(np.mean(r * a))
        grad = _score_mean(pi, idx, -a * r)
    else:
        a = np.asarray(adv_table, dtype=float)
        surrogate = -float(np.dot(pi, a))
        grad = _pullback(pi, -a)
    loss = surrogate + cfg.kl_weight * kl - cfg.entropy_bonus * ent
    grad = grad + _pullback(pi, cfg.kl_weight * kl_w - cfg.entropy_bonus * ent_w)
    return Evaluation(loss, grad)


def grpo_loss(policy, source, adv_table, cfg: ObjectiveConfig) -> float:
    """-E_{pi_old}[(pi/pi_old) A] + kl_weight KL(pi || pi_old) - entropy_bonus H(pi)."""
    return _grpo(_logits(policy), source, adv_table, cfg).loss


def grpo_gradient(policy, source, adv_table, cfg: ObjectiveConfig) -> np.ndarray:
    return _grpo(_logits(policy), source, adv_table, cfg).grad


def _vanilla(logits, source, adv_table, cfg: ObjectiveConfig | None) -> Evaluation:
    pi = softmax(logits)
    bonus = cfg.entropy_bonus if cfg is not None else 0.0
    ent, ent_w = _entropy_and_grad_w(pi)
    if isinstance(source, Batch):
        source = _maybe_normalized(source, cfg)
        idx, a = source.arm_indices, source.advantages
        # score-function surrogate: its gradient is the REINFORCE estimator
        loss = -float(np.mean(a * log_softmax(logits)[idx]))
        grad = _score_mean(pi, idx, -a)
    else:
        a = np.asarray(adv_table, dtype=float)
        loss = -float(np.dot(pi, a))
        grad = _pullback(pi, -a)
    if bonus:
        loss -= bonus * ent
        grad = grad - bonus * _pullback(pi, ent_w)
    return Evaluation(loss, grad)


def vanilla_pg_loss(policy, source, adv_table, cfg: ObjectiveConfig | None = None) -> float:
    return _vanilla(_logits(policy), source, adv_table, cfg).loss


def vanilla_pg_gradient(policy, source, adv_table, cfg: ObjectiveConfig | None = None):
    """Mean of -A(y) grad log pi(y); pass a behavior vector for the exact expectation over pi."""
    return _vanilla(_logits(policy), source, adv_table, cfg).grad


def ppo_gate(ratio, advantage, clip_epsilon: float) -> np.ndarray:
    """1 where the clipped surrogate still passes gradient, else 0."""
    r = np.asarray(ratio, dtype=float)
    a = np.asarray(advantage, dtype=float)
    gate = ((a > 0) & (r <= 1.0 + clip_epsilon)) | ((a < 0) & (r >= 1.0 - clip_epsilon))
    return gate.astype(float)


def _ppo(logits, source, adv_table, cfg: ObjectiveConfig) -> Evaluation:
    pi = softmax(logits)
    old = _behavior(source)
    eps = cfg.clip_epsilon
    if isinstance(source, Batch):
        idx, a = source.arm_indices, source.advantages
        r = pi[idx] / old[idx]
        clipped = np.minimum(r * a, np.clip(r, 1 - eps, 1 + eps) * a)
        gate = ppo_gate(r, a, eps)
        return Evaluation(-float(np.mean(clipped)), _score_mean(pi, idx, -gate * r * a))
    a = np.asarray(adv_table, dtype=float)
    r = pi / old
    clipped = np.minimum(r * a, np.clip(r, 1 - eps, 1 + eps) * a)
    gate = ppo_gate(r, a, eps)
    return Evaluation(-float(np.dot(old, clipped)), _pullback(pi, -gate * a))


def ppo_clip_loss(policy, source, adv_table, cfg: ObjectiveConfig) -> float:
    return _ppo(_logits(policy), source, adv_table, cfg).loss


def ppo_clip_gradient(policy, source, adv_table, cfg: ObjectiveConfig) -> np.ndarray:
    """Gated policy gradient: -sg(ratio, eps) A grad log pi, averaged under pi."""
    return _ppo(_logits(policy), source, adv_table, cfg).grad


# -- FlowRL -------------------------------------------------------------------


def _flowrl(logits, source, adv_table, cfg: ObjectiveConfig, log_z: float) -> Evaluation:
    pi = softmax(logits)
    logpi = log_softmax(logits)
    old = _behavior(source)
    eta = cfg.eta
    if isinstance(source, Batch):
        idx, a = source.arm_indices, source.advantages
        log_r = logpi[idx] - np.log(old[idx])
        r = np.exp(log_r)
        res = log_z + log_r - a / eta
        loss = float(np.mean(r * res**2))
        grad = _score_mean(pi, idx, r * (res**2 + 2.0 * res))
        return Evaluation(loss, grad, float(np.mean(2.0 * r * res)))
    a = np.asarray(adv_table, dtype=float)
    res = log_z + logpi - np.log(old) - a / eta
    loss = float(np.dot(pi, res**2))
    return Evaluation(loss, _pullback(pi, res**2 + 2.0 * res), float(2.0 * np.dot(pi, res)))


def flowrl_loss(policy, source, adv_table, cfg: ObjectiveConfig, log_z: float) -> float:
    """E_{y~pi}[(log_z + log(pi/pi_old) - A/eta)^2] (bandit reduction of FlowRL).

    Sampled mode reweights behavior samples by pi/pi_old.
    """
    return _flowrl(_logits(policy), source, adv_table, cfg, log_z).loss


def flowrl_gradient(policy, source, adv_table, cfg: ObjectiveConfig, log_z: float):
    """Returns (d loss / d logits, d loss / d log_z)."""
    ev = _flowrl(_logits(policy), source, adv_table, cfg, log_z)
    return ev.grad, ev.grad_log_z


def flowrl_optimal_log_z(policy, behavior, adv_table, eta: float) -> float:
    """Closed-form minimizer over log_z: E_pi[A/eta - log(pi/pi_old)]."""
    logits = _logits(policy)
    pi = softmax(logits)
    old = np.asarray(behavior, dtype=float)
    a = np.asarray(adv_table, dtype=float)
    return float(np.dot(pi, a / eta - (log_softmax(logits) - np.log(old))))


# -- dispatch -----------------------------------------------------------------


def evaluate(cfg: ObjectiveConfig, logits, source, adv_table, log_z: float = 0.0,
             cap: int = ENUMERATION_CAP) -> Evaluation:
    """Loss and gradients for any objective kind."""
    logits = _logits(logits)
    kind = cfg.kind
    if kind is ObjectiveKind.LAD:
        return _lad_practical(logits, source, adv_table, cfg)
    if kind is ObjectiveKind.LAD_THEORETICAL:
        return _lad_theoretical(logits, source, adv_table, cfg, cap)
    if kind is ObjectiveKind.GRPO:
        return _grpo(logits, source, adv_table, cfg)
    if kind is ObjectiveKind.VANILLA_PG:
        return _vanilla(logits, source, adv_table, cfg)
    if kind is ObjectiveKind.PPO_CLIP:
        return _ppo(logits, source, adv_table, cfg)
    return _flowrl(logits, source, adv_table, cfg, log_z)
