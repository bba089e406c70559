"""Post-hoc analyses: match metrics, PCA loss landscapes, eta sweeps, objective comparisons."""

from __future__ import annotations

import csv
import io
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import divergence as dv
from . import objectives as obj
from .bandit import BanditEnv, make_env
from .distribution import (
    AdvantageSpec,
    Windows,
    entropy,
    policy_induced_distribution,
    total_variation,
)
from .errors import DomainError, InvalidDistribution, LADError, LandscapeDegeneracyError, RunFailed
from .objectives import ObjectiveConfig
from .trainer import RunRecord, TrainConfig, train


@dataclass(frozen=True)
class MatchMetrics:
    tv: float
    kl: float
    entropy: float
    mode_masses: list[float]


def match_metrics(policy, behavior, target, windows: Windows | None = None) -> MatchMetrics:
    """Distance of P_pi (from ``policy`` and ``behavior``) to ``target``.

    Entropy is that of the raw policy; mode masses are measured on P_pi.
    """
    p_pi = policy_induced_distribution(policy, behavior)
    masses = windows.masses(p_pi) if windows is not None else []
    return MatchMetrics(
        tv=total_variation(p_pi, target),
        kl=dv.f_divergence(dv.DivergenceKind.KL, p_pi, target),
        entropy=entropy(policy),
        mode_masses=masses,
    )


# -- loss landscape -------------------------------------------------------------


@dataclass
class LandscapeGrid:
    center: np.ndarray
    dir_u: np.ndarray
    dir_v: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    values: np.ndarray  # values[i, j] at (u_axis[i], v_axis[j])
    trajectories: list[tuple[str, np.ndarray]]

    def project(self, logits) -> np.ndarray:
        d = np.asarray(logits, dtype=float) - self.center
        return np.array([d @ self.dir_u, d @ self.dir_v])

    def reconstruct(self, u: float, v: float) -> np.ndarray:
        return self.center + u * self.dir_u + v * self.dir_v

    def to_dict(self) -> dict:
        vals = [[None if not np.isfinite(x) else float(x) for x in row] for row in self.values]
        return {
            "center": self.center.tolist(),
            "dir_u": self.dir_u.tolist(),
            "dir_v": self.dir_v.tolist(),
            "u_axis": self.u_axis.tolist(),
            "v_axis": self.v_axis.tolist(),
            "values": vals,
            "trajectories": [{"label": lab, "points": pts.tolist()} for lab, pts in self.trajectories],
        }


def _axis(spec, coords: np.ndarray, margin: float, resolution: int) -> np.ndarray:
    if spec is not None:
        lo, hi, count = spec
        return np.linspace(float(lo), float(hi), int(count))
    lo, hi = float(coords.min()), float(coords.max())
    pad = margin * max(hi - lo, 1e-6)
    return np.linspace(lo - pad, hi + pad, resolution)


def build_landscape(records: list[RunRecord], env: BanditEnv, objective: ObjectiveConfig,
                    u_range=None, v_range=None, resolution: int = 25,
                    margin: float = 0.25) -> LandscapeGrid:
    """PCA plane through pooled checkpoints, evaluated with the practical LAD loss.

    The behavior policy of the surface is held at the uniform initialization so
    the surface is a fixed function of the logits. ``u_range``/``v_range`` are
    (min, max, count) triples; when omitted they span the projected checkpoints.
    """
    if objective.kind not in obj.LAD_KINDS:
        raise InvalidDistribution("landscape surface needs a LAD objective (divergence and eta)")
    surface_cfg = ObjectiveConfig.lad(objective.divergence, eta=objective.eta)
    pooled = np.array([theta for rec in records for _, theta in rec.checkpoints], dtype=float)
    if pooled.ndim != 2 or pooled.shape[1] != env.arms:
        raise InvalidDistribution("checkpoint dimensions do not match the environment")
    center = pooled.mean(axis=0)
    centered = pooled - center
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size < 2 or s[1] <= 1e-10 * max(s[0], 1.0):
        raise LandscapeDegeneracyError("checkpoint cloud has rank < 2 after centering")
    dirs = []
    for row in vt[:2]:
        # deterministic sign: largest-magnitude entry positive
        dirs.append(row if row[np.argmax(np.abs(row))] > 0 else -row)
    dir_u, dir_v = dirs

    trajectories = [(rec.label, np.array([[(t - center) @ dir_u, (t - center) @ dir_v]
                                          for _, t in rec.checkpoints]))
                    for rec in records]
    proj = np.vstack([pts for _, pts in trajectories])
    u_axis = _axis(u_range, proj[:, 0], margin, resolution)
    v_axis = _axis(v_range, proj[:, 1], margin, resolution)

    behavior = np.full(env.arms, 1.0 / env.arms)
    values = np.empty((u_axis.size, v_axis.size))
    for i, u in enumerate(u_axis):
        for j, v in enumerate(v_axis):
            theta = center + u * dir_u + v * dir_v
            try:
                values[i, j] = obj.lad_loss_practical(theta, behavior, env.adv_table, surface_cfg)
            except DomainError:
                values[i, j] = np.nan
    return LandscapeGrid(center, dir_u, dir_v, u_axis, v_axis, values, trajectories)


# -- multi-run experiments ---------------------------------------------------------


def _train_job(job):
    env, cfg, label, run_config = job
    try:
        return train(env, cfg, label=label, run_config=run_config)
    except LADError as exc:
        raise RunFailed(label, exc) from exc


def _run_all(jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_train_job, jobs))
    return [_train_job(j) for j in jobs]


def eta_seed(seed: int, eta: float) -> int:
    """Seed offset that depends on the eta value only (order-independent)."""
    return (int(seed) + zlib.crc32(repr(float(eta)).encode())) % (2**31)


def sweep_eta(base: AdvantageSpec, etas, cfg: TrainConfig, workers: int = 1,
              run_config: dict | None = None) -> list[tuple[float, RunRecord]]:
    """One run per eta with the advantage table frozen at ``base``'s scale.

    Only the temperature eta varies (target softmax(A/eta) and the objective's
    eta); the table itself is A = base.scale * log(relative mixture mass).
    """
    etas = [float(e) for e in etas]
    if not etas or any(not e > 0 for e in etas):
        raise InvalidDistribution("etas must be a non-empty list of positive values")
    jobs = []
    for eta in etas:
        spec = replace(base, eta=eta, advantage_scale=base.scale)
        run_cfg = replace(cfg, objective=replace(cfg.objective, eta=eta), seed=eta_seed(cfg.seed, eta))
        echo = None
        if run_config is not None:
            echo = {**run_config, "eta": eta, "seed": run_cfg.seed}
        jobs.append((make_env(spec), run_cfg, f"eta={eta:g}", echo))
    return list(zip(etas, _run_all(jobs, workers)))


def compare_objectives(env: BanditEnv, objectives, cfg: TrainConfig, workers: int = 1,
                       run_config: dict | None = None) -> list[tuple[str, RunRecord]]:
    """Train each objective with a shared env and seed.

    ``objectives`` holds ObjectiveConfig values or (label, ObjectiveConfig) pairs.
    """
    pairs = [(o.label, o) if isinstance(o, ObjectiveConfig) else tuple(o) for o in objectives]
    if not pairs:
        raise InvalidDistribution("need at least one objective to compare")
    jobs = [(env, replace(cfg, objective=o), label, run_config) for label, o in pairs]
    return list(zip([p[0] for p in pairs], _run_all(jobs, workers)))


def compare_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "final_tv", "final_kl", "final_entropy", "final_loss"])
    for label, rec in results:
        f = rec.final
        w.writerow([label, repr(f.tv_to_target), repr(f.kl_to_target), repr(f.entropy), repr(f.loss)])
    return buf.getvalue()


def trajectory_distance(a: RunRecord, b: RunRecord) -> np.ndarray:
    """Per logged step TV distance between two runs' raw policies."""
    steps_a = [s for s, _ in a.checkpoints]
    steps_b = [s for s, _ in b.checkpoints]
    if steps_a != steps_b:
        raise InvalidDistribution("runs were logged at different steps")
    return np.array([total_variation(p, q) for p, q in zip(a.policies(), b.policies())])
