"""Finite-difference verification of every analytic gradient in :mod:`lad.objectives`."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import divergence as dv
from . import objectives as obj
from .distribution import policy_induced_distribution, softmax
from .objectives import ObjectiveConfig, ObjectiveKind

DEFAULT_TOLERANCE = 1e-6
DEFAULT_STEP = 1e-5
# instances closer than this to a kink (TV at 1, PPO clip edges) are redrawn
KINK_MARGIN = 1e-3
# the x(log x)^2 generator is only convex above 1/e; keep well clear of that edge
FLOWRL_GEN_FLOOR = 0.5
# denominator floor for the relative error: gradients smaller than this are
# compared absolutely, since central differences carry ~1e-11 roundoff at h=1e-5
SCALE_FLOOR = 1e-3


@dataclass(frozen=True)
class GradCase:
    name: str
    config: ObjectiveConfig
    wrt_log_z: bool = False


@dataclass(frozen=True)
class CaseResult:
    name: str
    instances: int
    max_rel_error: float
    passed: bool


def gradient_cases() -> list[GradCase]:
    cases = []
    for kind in dv.DivergenceKind:
        cases.append(GradCase(f"lad-{kind.value}", ObjectiveConfig.lad(kind)))
        cases.append(GradCase(f"lad-theoretical-{kind.value}", ObjectiveConfig.lad(kind, theoretical=True)))
    cases.append(GradCase("grpo", ObjectiveConfig(ObjectiveKind.GRPO, kl_weight=1.0)))
    cases.append(GradCase("vanilla-pg", ObjectiveConfig(ObjectiveKind.VANILLA_PG)))
    cases.append(GradCase("ppo-clip", ObjectiveConfig(ObjectiveKind.PPO_CLIP)))
    cases.append(GradCase("flowrl", ObjectiveConfig(ObjectiveKind.FLOWRL)))
    cases.append(GradCase("flowrl-log_z", ObjectiveConfig(ObjectiveKind.FLOWRL), wrt_log_z=True))
    return cases


def _generator_args(cfg: ObjectiveConfig, theta, old, adv) -> np.ndarray:
    pi = softmax(theta)
    if cfg.kind is ObjectiveKind.LAD_THEORETICAL:
        return policy_induced_distribution(pi, old) / softmax(adv / cfg.eta)
    return pi / old * np.exp(-adv / cfg.eta)


def _admissible(cfg: ObjectiveConfig, theta, old, adv) -> bool:
    if cfg.kind in obj.LAD_KINDS:
        x = _generator_args(cfg, theta, old, adv)
        if cfg.divergence is dv.DivergenceKind.FLOWRL_GEN and x.min() <= FLOWRL_GEN_FLOOR:
            return False
        if cfg.divergence is dv.DivergenceKind.TOTAL_VARIATION and np.abs(x - 1).min() <= KINK_MARGIN:
            return False
    if cfg.kind is ObjectiveKind.PPO_CLIP:
        r = softmax(theta) / old
        eps = cfg.clip_epsilon
        edges = np.concatenate([np.abs(r - 1 - eps), np.abs(r - 1 + eps)])
        if edges.min() <= KINK_MARGIN or np.abs(adv).min() <= KINK_MARGIN:
            return False
    return True


def random_instance(case: GradCase, rng: np.random.Generator, max_arms: int = 8):
    """Draw (config, logits, behavior, advantages, log_z) away from kinks and domain edges."""
    while True:
        n = int(rng.integers(2, max_arms + 1))
        theta = rng.normal(0.0, 0.5, n)
        old = softmax(rng.normal(0.0, 0.5, n))
        adv = rng.uniform(-1.0, 1.0, n)
        eta = float(rng.uniform(0.5, 2.0))
        log_z = float(rng.normal(0.0, 0.5))
        cfg = obj.replace(case.config, eta=eta)
        if _admissible(cfg, theta, old, adv):
            return cfg, theta, old, adv, log_z


def relative_error(g, fd, floor: float = SCALE_FLOOR) -> float:
    """max|g - fd| / max(max|g|, max|fd|, floor)."""
    g, fd = np.atleast_1d(g), np.atleast_1d(fd)
    scale = max(np.max(np.abs(g)), np.max(np.abs(fd)), floor)
    return float(np.max(np.abs(g - fd)) / scale)


def _instance_error(case: GradCase, cfg, theta, old, adv, log_z, h: float) -> float:
    def loss(t, lz):
        return obj.evaluate(cfg, t, old, adv, log_z=lz).loss

    ev = obj.evaluate(cfg, theta, old, adv, log_z=log_z)
    if case.wrt_log_z:
        fd = (loss(theta, log_z + h) - loss(theta, log_z - h)) / (2 * h)
        return relative_error(ev.grad_log_z, fd)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (loss(theta + e, log_z) - loss(theta - e, log_z)) / (2 * h)
    return relative_error(ev.grad, fd)


def check_case(case: GradCase, rng: np.random.Generator, instances: int = 20, max_arms: int = 8,
               tol: float = DEFAULT_TOLERANCE, h: float = DEFAULT_STEP) -> CaseResult:
    worst = 0.0
    for _ in range(instances):
        cfg, theta, old, adv, log_z = random_instance(case, rng, max_arms)
        err = _instance_error(case, cfg, theta, old, adv, log_z, h)
        worst = err if not np.isfinite(err) else max(worst, err)
        if not np.isfinite(worst):
            break
    return CaseResult(case.name, instances, worst, bool(worst <= tol))


def run_gradcheck(seed: int = 0, instances: int = 20, max_arms: int = 8,
                  tol: float = DEFAULT_TOLERANCE, cases=None) -> list[CaseResult]:
    """One result per case; each case gets its own child stream of ``seed``."""
    cases = gradient_cases() if cases is None else list(cases)
    streams = np.random.SeedSequence(seed).spawn(len(cases))
    return [check_case(c, np.random.default_rng(s), instances, max_arms, tol)
            for c, s in zip(cases, streams)]


def format_report(results: list[CaseResult], elapsed: float | None = None) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  n={r.instances:<3d} max_rel_err={r.max_rel_error:.3e}  "
             f"{'ok' if r.passed else 'FAIL'}" for r in results]
    failed = [r.name for r in results if not r.passed]
    tail = f"{len(results) - len(failed)}/{len(results)} cases passed"
    if elapsed is not None:
        tail += f" in {elapsed:.2f}s"
    lines.append(tail)
    if failed:
        lines.append(f"first failing case: {failed[0]}")
    return "\n".join(lines)


def timed_gradcheck(**kwargs) -> tuple[list[CaseResult], float]:
    start = time.perf_counter()
    results = run_gradcheck(**kwargs)
    return results, time.perf_counter() - start
