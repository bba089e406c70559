"""Gradient-based training loop with periodic behavior-policy refreshes."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import divergence as dv
from . import objectives as obj
from .bandit import BanditEnv, collect_batch
from .distribution import (
    entropy,
    policy_induced_distribution,
    softmax,
    temperature_sample,
    total_variation,
)
from .errors import DomainError, InvalidDistribution, NumericalFailure, TractabilityError
from .objectives import Batch, ObjectiveConfig, ObjectiveKind

log = logging.getLogger(__name__)

MODES = ("sampled", "exact")
OPTIMIZERS = ("adam", "sgd")


def default_refresh_steps(steps: int) -> tuple[int, ...]:
    """Two refreshes at even thirds of the run."""
    return tuple(sorted({s for s in (steps // 3, 2 * steps // 3) if 0 < s < steps}))


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveConfig
    steps: int = 4000
    learning_rate: float = 5e-3
    group_size: int = 32
    temperature: float = 1.5
    behavior_refresh_steps: tuple[int, ...] | None = None
    mode: str = "sampled"
    seed: int = 0
    log_every: int = 10
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 100.0
    enumeration_cap: int = obj.ENUMERATION_CAP

    def __post_init__(self):
        if self.steps < 0 or int(self.steps) != self.steps:
            raise InvalidDistribution("steps must be a nonnegative integer")
        if not self.learning_rate > 0:
            raise InvalidDistribution("learning_rate must be positive")
        if self.group_size < 1 or self.log_every < 1:
            raise InvalidDistribution("group_size and log_every must be positive")
        if not self.temperature > 0:
            raise InvalidDistribution("temperature must be positive")
        if self.mode not in MODES:
            raise InvalidDistribution(f"mode must be one of {MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidDistribution(f"optimizer must be one of {OPTIMIZERS}")
        if self.behavior_refresh_steps is None:
            object.__setattr__(self, "behavior_refresh_steps", default_refresh_steps(self.steps))
        refresh = tuple(int(s) for s in self.behavior_refresh_steps)
        if any(b <= a for a, b in zip(refresh, refresh[1:])):
            raise InvalidDistribution("behavior_refresh_steps must be strictly increasing")
        if refresh and (refresh[0] < 0 or refresh[-1] >= max(self.steps, 1)):
            raise InvalidDistribution("behavior_refresh_steps must lie in [0, steps)")
        object.__setattr__(self, "behavior_refresh_steps", refresh)
        if self.objective.kind is ObjectiveKind.LAD_THEORETICAL and self.mode != "exact":
            raise InvalidDistribution("lad-theoretical requires mode = exact")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["objective"] = self.objective.to_dict()
        out["behavior_refresh_steps"] = list(self.behavior_refresh_steps)
        return out


@dataclass
class StepDiagnostics:
    step: int
    loss: float
    loss_theoretical: float | None
    surrogate_gap: float | None
    tv_to_target: float
    kl_to_target: float
    entropy: float
    gamma_hat: float
    delta_hat: float
    mode_masses: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunRecord:
    config: dict
    diagnostics: list[StepDiagnostics]
    final_policy: np.ndarray
    target: np.ndarray
    checkpoints: list[tuple[int, np.ndarray]]
    label: str = ""
    final_log_z: float = 0.0
    clip_events: int = 0

    @property
    def final(self) -> StepDiagnostics:
        return self.diagnostics[-1]

    def policies(self) -> list[np.ndarray]:
        return [softmax(theta) for _, theta in self.checkpoints]


def measure_surrogate_gap(policy, behavior, adv_table, cfg: ObjectiveConfig,
                          cap: int = obj.ENUMERATION_CAP) -> tuple[float, float, float]:
    """|theoretical - practical| LAD loss plus the (gamma_hat, delta_hat) witnesses."""
    behavior = np.asarray(behavior, dtype=float)
    theo = obj.lad_loss_theoretical(policy, behavior, adv_table, cfg, cap=cap)
    prac = obj.lad_loss_practical(policy, behavior, adv_table, cfg)
    pi = softmax(obj._logits(policy))
    gamma_hat = float(np.max(np.abs(adv_table)))
    delta_hat = float(np.max(np.abs(pi / behavior - 1.0)))
    return abs(theo - prac), gamma_hat, delta_hat


def _diagnose(step, loss, theta, theta_old, env: BanditEnv, cfg: TrainConfig) -> StepDiagnostics:
    pi, old = softmax(theta), softmax(theta_old)
    p_pi = policy_induced_distribution(pi, old)
    loss_theo = gap = None
    objective = cfg.objective
    if objective.kind in obj.LAD_KINDS and env.arms <= cfg.enumeration_cap:
        loss_theo = obj.lad_loss_theoretical(theta, old, env.adv_table, objective,
                                             cap=cfg.enumeration_cap)
        gap = abs(loss_theo - obj.lad_loss_practical(theta, old, env.adv_table, objective))
    return StepDiagnostics(
        step=step,
        loss=loss,
        loss_theoretical=loss_theo,
        surrogate_gap=gap,
        tv_to_target=total_variation(p_pi, env.target),
        kl_to_target=dv.f_divergence(dv.DivergenceKind.KL, p_pi, env.target),
        entropy=entropy(pi),
        gamma_hat=float(np.max(np.abs(env.adv_table))),
        delta_hat=float(np.max(np.abs(pi / old - 1.0))),
        mode_masses=env.windows.masses(p_pi),
    )


class _Adam:
    def __init__(self, n, lr, beta1, beta2, eps):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps

    def step(self, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, g):
        return self.lr * g


def train(env: BanditEnv, cfg: TrainConfig, label: str = "", run_config: dict | None = None,
          init_logits=None) -> RunRecord:
    """Train a softmax policy from uniform (or ``init_logits``) on ``env``.

    Diagnostics at step s describe the parameters after s updates; the final
    step is always logged.
    """
    objective = cfg.objective
    if cfg.mode == "exact" and env.arms > cfg.enumeration_cap:
        raise TractabilityError(f"exact mode over {env.arms} arms exceeds cap {cfg.enumeration_cap}")
    n = env.arms
    theta = np.zeros(n) if init_logits is None else np.array(init_logits, dtype=float)
    theta_old = theta.copy()
    log_z = 0.0
    uses_log_z = objective.kind is ObjectiveKind.FLOWRL
    size = n + 1 if uses_log_z else n
    if cfg.optimizer == "adam":
        opt = _Adam(size, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    else:
        opt = _SGD(cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    refresh = set(cfg.behavior_refresh_steps)

    diagnostics: list[StepDiagnostics] = []
    checkpoints: list[tuple[int, np.ndarray]] = []
    clip_events = 0
    for step in range(cfg.steps + 1):
        if step in refresh:
            theta_old = theta.copy()
        old = softmax(theta_old)
        try:
            if cfg.mode == "exact":
                source = old
            elif objective.kind is ObjectiveKind.VANILLA_PG and objective.on_policy:
                pi = softmax(theta)
                idx = temperature_sample(pi, cfg.temperature, cfg.group_size, rng)
                source = Batch(idx, pi, env.adv_table[idx])
            else:
                source = collect_batch(env, old, cfg.temperature, cfg.group_size, rng)
            ev = obj.evaluate(objective, theta, source, env.adv_table, log_z,
                              cap=cfg.enumeration_cap)
            if step % cfg.log_every == 0 or step == cfg.steps:
                diagnostics.append(_diagnose(step, ev.loss, theta, theta_old, env, cfg))
                checkpoints.append((step, theta.copy()))
        except DomainError as exc:
            raise DomainError(f"step {step}: {exc}", step=step) from exc
        if step == cfg.steps:
            break

        grad = np.append(ev.grad, ev.grad_log_z) if uses_log_z else ev.grad
        if not (math.isfinite(ev.loss) and np.all(np.isfinite(grad))):
            raise NumericalFailure(f"non-finite loss or gradient at step {step}", step, theta.copy())
        norm = float(np.linalg.norm(grad))
        if norm > cfg.grad_clip:
            clip_events += 1
            log.debug("step %d: gradient norm %.3g clipped to %.3g", step, norm, cfg.grad_clip)
            grad = grad * (cfg.grad_clip / norm)
        update = opt.step(grad)
        theta = theta - update[:n]
        if uses_log_z:
            log_z -= float(update[n])

    if clip_events:
        log.warning("gradient norm clipping triggered on %d steps", clip_events)
    return RunRecord(
        config=run_config if run_config is not None else {"train": cfg.to_dict()},
        diagnostics=diagnostics,
        final_policy=softmax(theta),
        target=np.array(env.target),
        checkpoints=checkpoints,
        label=label or objective.label,
        final_log_z=log_z,
        clip_events=clip_events,
    )


# -- serialization --------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def steps_csv(record: RunRecord) -> str:
    k = len(record.diagnostics[0].mode_masses) if record.diagnostics else 0
    header = ["step", "loss", "loss_theoretical", "surrogate_gap", "tv_to_target",
              "kl_to_target", "entropy", "gamma_hat", "delta_hat"]
    header += [f"mode_mass_{i}" for i in range(k)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for d in record.diagnostics:
        writer.writerow([str(d.step), _fmt(d.loss), _fmt(d.loss_theoretical), _fmt(d.surrogate_gap),
                         _fmt(d.tv_to_target), _fmt(d.kl_to_target), _fmt(d.entropy),
                         _fmt(d.gamma_hat), _fmt(d.delta_hat)] + [_fmt(m) for m in d.mode_masses])
    return buf.getvalue()


def summary_dict(record: RunRecord) -> dict:
    return {
        "label": record.label,
        "config": record.config,
        "final_policy": record.final_policy.tolist(),
        "target": record.target.tolist(),
        "final": record.final.to_dict(),
        "final_log_z": record.final_log_z,
        "clip_events": record.clip_events,
    }
