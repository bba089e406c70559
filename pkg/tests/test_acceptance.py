"""Acceptance criteria, each at its stated tolerance; one PASS/FAIL line per criterion."""

import json
import math
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lad import divergence as dv
from lad import gradcheck as gc
from lad import objectives as obj
from lad.analysis import sweep_eta, trajectory_distance
from lad.bandit import BanditEnv, make_env
from lad.cli import main
from lad.distribution import AdvantageSpec, MixtureComponent, entropy, softmax, total_variation
from lad.errors import DomainError
from lad.objectives import ObjectiveConfig, ObjectiveKind
from lad.trainer import TrainConfig, measure_surrogate_gap, train

K = dv.DivergenceKind
SEEDS = range(5)
LAD_JS = ObjectiveConfig.lad("js")
GRPO = ObjectiveConfig(ObjectiveKind.GRPO, kl_weight=1.0)
FLOWRL = ObjectiveConfig(ObjectiveKind.FLOWRL)


def report(cid: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}")
    assert ok, f"{cid}: {detail}"


def protocol(objective, seed=0, **kw):
    """50 arms, 4000 steps, lr 5e-3, group 32, T 1.5, eta 1, refreshes at thirds."""
    return TrainConfig(objective, steps=4000, learning_rate=5e-3, group_size=32, temperature=1.5,
                       seed=seed, log_every=100, **kw)


@lru_cache(maxsize=None)
def protocol_run(label: str, seed: int):
    objective = {"lad-js": LAD_JS, "grpo": GRPO, "flowrl": FLOWRL}[label]
    env = make_env(AdvantageSpec())
    start = time.perf_counter()
    rec = train(env, protocol(objective, seed))
    return rec, time.perf_counter() - start


# -- 1. toy distribution matching ------------------------------------------------------


def test_c1_three_mode_recovery():
    env = make_env(AdvantageSpec())
    runs = [protocol_run("lad-js", s) for s in SEEDS]
    tv = float(np.mean([r.final.tv_to_target for r, _ in runs]))
    masses = np.mean([r.final.mode_masses for r, _ in runs], axis=0)
    target = np.array(env.windows.masses(env.target))
    rel = np.abs(masses - target) / target
    slowest = max(t for _, t in runs)
    ok = tv < 0.10 and bool(np.all(rel <= 0.25)) and slowest < 10.0
    report("C1", ok, f"seed-avg TV {tv:.4f} (< 0.10); mode mass rel err "
                     f"{', '.join(f'{x:.3f}' for x in rel)} (<= 0.25); slowest run {slowest:.2f}s (< 10s)")


# -- 2. mode collapse contrast -----------------------------------------------------------


def test_c2_grpo_mode_collapse():
    env = make_env(AdvantageSpec())
    h_target = entropy(env.target)
    hits, details = 0, []
    for s in SEEDS:
        g, _ = protocol_run("grpo", s)
        lad, _ = protocol_run("lad-js", s)
        gap = h_target - g.final.entropy
        ratio = g.final.tv_to_target / lad.final.tv_to_target
        hits += gap >= 0.5 and ratio >= 2.0
        details.append(f"s{s}: dH={gap:.3f} tv_ratio={ratio:.2f}")
    report("C2", hits >= 4, f"{hits}/5 seeds with entropy deficit >= 0.5 nats and TV >= 2x LAD-JS "
                            f"(need 4); {'; '.join(details)}")


# -- 3. FlowRL intermediate ------------------------------------------------------------


def test_c3_flowrl_between_lad_and_grpo():
    hits, details = 0, []
    for s in SEEDS:
        lad = protocol_run("lad-js", s)[0].final.tv_to_target
        g = protocol_run("grpo", s)[0].final.tv_to_target
        f = protocol_run("flowrl", s)[0].final.tv_to_target
        hits += min(lad, g) < f < max(lad, g) and lad < g
        details.append(f"s{s}: lad={lad:.3f} flowrl={f:.3f} grpo={g:.3f}")
    report("C3", hits >= 4, f"{hits}/5 seeds with LAD-JS < FlowRL < GRPO TV (need 4); {'; '.join(details)}")


# -- 4. gradient correctness ------------------------------------------------------------


def test_c4_gradcheck(capsys):
    start = time.perf_counter()
    code = main(["gradcheck"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    results = gc.run_gradcheck(seed=0, instances=20, max_arms=8)
    worst = max(r.max_rel_error for r in results)
    ok = code == 0 and all(r.passed for r in results) and len(results) == 19 and elapsed < 5.0
    report("C4", ok, f"{out.strip().splitlines()[-1]}; worst rel err {worst:.2e} (<= 1e-6); {elapsed:.2f}s (< 5s)")


# -- 5. shared optimum ------------------------------------------------------------------


def shared_optimum_instance(i):
    """Random <=10-arm bandit with a random behavior policy as the initialization.

    The advantages are shifted so that sum pi_old e^{A/eta} = 1, which leaves the
    tilted target unchanged and makes the TV objective's minimizer unique, and
    redrawn until the FlowRL generator's argument starts inside its domain.
    """
    rng = np.random.default_rng(100 + i)
    while True:
        n = int(rng.integers(2, 11))
        a = rng.uniform(-1, 1, n)
        eta = float(rng.uniform(0.5, 2.0))
        init = rng.normal(0, 1, n)
        old = softmax(init)
        a = a - eta * math.log(np.dot(old, np.exp(a / eta)))
        if np.max(a / eta) < math.log(2):
            break
    target = old * np.exp(a / eta)
    target /= target.sum()
    spec = AdvantageSpec(arms=n, components=(MixtureComponent(1.0, 0.0, 1.0),), eta=eta)
    return BanditEnv(spec, a, softmax(a / eta)), init, target, eta


def test_c5_shared_optimum():
    start = time.perf_counter()
    worst = {}
    for i in range(10):
        env, init, target, eta = shared_optimum_instance(i)
        objectives = [ObjectiveConfig.lad(k, eta, t) for k in K for t in (False, True)]
        objectives.append(ObjectiveConfig(ObjectiveKind.GRPO, eta=eta, kl_weight=eta))
        for o in objectives:
            nonsmooth = o.divergence is K.TOTAL_VARIATION
            lr, steps = (5e-3, 4000) if nonsmooth else (0.03, 1500)
            cfg = TrainConfig(o, steps=steps, learning_rate=lr, mode="exact", behavior_refresh_steps=(),
                              log_every=steps)
            tv = total_variation(train(env, cfg, init_logits=init).final_policy, target)
            worst[o.label] = max(worst.get(o.label, 0.0), tv)
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-3 and elapsed < 30.0
    report("C5", ok, f"{len(worst)} objectives x 10 instances; worst TV {worst[top]:.2e} ({top}) (< 1e-3); "
                     f"{elapsed:.1f}s (< 30s)")


# -- 6. surrogate fidelity ----------------------------------------------------------------

C6_TS = (1.0, 0.5, 0.25, 0.125)


def surrogate_instance(rng):
    n = int(rng.integers(2, 11))
    theta_old = rng.normal(0, 0.5, n)
    step = rng.normal(0, 0.1, n)
    adv = rng.uniform(-0.2, 0.2, n)
    eta = float(rng.uniform(0.5, 2.0))
    return theta_old, step, adv, eta


def test_c6_surrogate_shrinkage():
    rng = np.random.default_rng(0)
    clean, total, bad = 0, 0, []
    for kind in K:
        for i in range(10):
            theta_old, step, adv, eta = surrogate_instance(rng)
            old = softmax(theta_old)
            cfg = ObjectiveConfig.lad(kind, eta)
            try:
                gaps = [measure_surrogate_gap(theta_old + t * step, old, t * adv, cfg)[0] for t in C6_TS]
                gap0 = measure_surrogate_gap(theta_old, old, 0.0 * adv, cfg)[0]
            except DomainError:
                gaps, gap0 = [math.inf], math.inf
            total += 1
            mono = all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
            if mono and gap0 <= 1e-12:
                clean += 1
            else:
                bad.append(f"{kind.value}#{i}")
    report("C6", clean == total, f"{clean}/{total} instances with non-increasing gap over t in "
                                 f"{{1, 1/2, 1/4, 1/8}} and gap(0) <= 1e-12"
                                 + (f"; violations: {', '.join(bad)}" if bad else ""))


# -- 7. trajectory agreement ---------------------------------------------------------------


def test_c7_trajectory_agreement():
    env = make_env(AdvantageSpec())

    def run(o):
        return train(env, TrainConfig(o, steps=2000, mode="exact", log_every=10))

    pairs = {}
    for kind in (K.JENSEN_SHANNON, K.HELLINGER):
        pairs[kind.value] = (run(ObjectiveConfig.lad(kind)), run(ObjectiveConfig.lad(kind, theoretical=True)))
    grpo = run(GRPO)
    within = {k: float(trajectory_distance(p, t).max()) for k, (p, t) in pairs.items()}
    apart = min(float(trajectory_distance(grpo, r).max()) for p in pairs.values() for r in p)
    ok = all(v < 0.05 for v in within.values()) and apart > 0.05
    report("C7", ok, "max practical-vs-theoretical TV "
                     + ", ".join(f"{k} {v:.4f}" for k, v in within.items())
                     + f" (< 0.05); GRPO min over LAD runs of max TV {apart:.4f} (> 0.05)")


# -- 8. FlowRL special case -------------------------------------------------------------------


def flowrl_instance(rng, n=8):
    while True:
        old = softmax(rng.normal(0, 0.5, n))
        theta = np.log(old) + rng.uniform(-0.15, 0.15, n)
        r = softmax(theta) / old
        if r.min() > 0.8 and r.max() < 1.2:
            return theta, old, rng.uniform(-1, 1, n)


def linearized_lad(theta, old, adv, eta):
    """Practical LAD under x(log x)^2 with e^{A/eta} replaced by 1 + A/eta."""
    lin = 1 + adv / eta
    return float(np.sum(old * lin * dv.generator_value(K.FLOWRL_GEN, softmax(theta) / old / lin)))


def test_c8_flowrl_special_case():
    rng = np.random.default_rng(0)
    instances = [flowrl_instance(rng) for _ in range(10)]
    errs = {}
    for eta in (100.0, 1000.0):
        cfg = ObjectiveConfig(ObjectiveKind.FLOWRL, eta=eta)
        worst = 0.0
        for theta, old, adv in instances:
            z = obj.flowrl_optimal_log_z(theta, old, adv, eta)
            flow = obj.flowrl_loss(theta, old, adv, cfg, z)
            ref = linearized_lad(theta, old, adv, eta)
            worst = max(worst, abs(flow - ref) / abs(ref))
        errs[eta] = worst
    ok = errs[100.0] <= 5e-2 and errs[1000.0] <= 5e-2 and errs[1000.0] < errs[100.0]
    report("C8", ok, f"max rel err over 10 instances: eta=100 {errs[100.0]:.2e}, eta=1000 {errs[1000.0]:.2e}"
                     " (<= 5e-2, decreasing)")


# -- 9. f-divergence properties ------------------------------------------------------------------


def test_c9_divergence_property_suite():
    rng = np.random.default_rng(9)
    failures, cases = [], 0
    for kind in K:
        lo = dv.domain_lower(kind)
        for i in range(1000):
            cases += 1
            n = int(rng.integers(2, 20))
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            if kind is K.FLOWRL_GEN:
                # keep p/q above 1/e by mixing p toward q
                while np.min(p / q) <= lo:
                    p = 0.5 * (p + q)
            x1, x2 = rng.uniform(lo, 20, 2)
            x1, x2 = x1 + 1e-6, x2 + 1e-6
            lam = rng.uniform()
            f = dv.generator_value
            val = dv.f_divergence(kind, p, q)
            checks = {
                "nonneg": val >= -1e-12,
                "diag": abs(dv.f_divergence(kind, p, p)) <= 1e-12,
                "off-diag": val > 0 or total_variation(p, q) <= 1e-9,
                "convex": f(kind, lam * x1 + (1 - lam) * x2)
                <= lam * f(kind, x1) + (1 - lam) * f(kind, x2) + 1e-12 * (1 + abs(f(kind, x1)) + abs(f(kind, x2))),
                "f(1)=0": f(kind, 1.0) == 0.0,
            }
            failures += [f"{kind.value}#{i}:{name}" for name, ok in checks.items() if not ok]
    report("C9", not failures, f"{cases} randomized cases x 5 properties, {len(failures)} failures"
                               + (f" ({', '.join(failures[:5])})" if failures else ""))


# -- 10. eta sweep sanity ----------------------------------------------------------------------------


def test_c10_eta_sweep(tmp_path):
    etas = [0.5, 1, 2, 4, 8, 16]
    cfg = protocol(LAD_JS)
    first = sweep_eta(AdvantageSpec(), etas, cfg, workers=2)
    second = sweep_eta(AdvantageSpec(), etas, cfg, workers=1)
    same = all(np.array_equal(a.final_policy, b.final_policy) and a.final == b.final
               for (_, a), (_, b) in zip(first, second))
    ent = [rec.final.entropy for _, rec in first]
    violations = sum(b < a for a, b in zip(ent, ent[1:]))
    ok = same and violations <= 1
    report("C10", ok, f"deterministic={same}; final entropies {', '.join(f'{e:.3f}' for e in ent)}; "
                      f"{violations} decreases (<= 1)")


# -- 11. determinism from the echoed summary -----------------------------------------------------------


@pytest.mark.parametrize("command", ["run", "compare", "sweep-eta", "landscape"])
def test_c11_rerun_from_summary(tmp_path, command, capsys):
    a, b = tmp_path / "first", tmp_path / "second"
    assert main([command, "--out", str(a)]) == 0
    assert main([command, "--out", str(b), "--config", str(a / "summary.json")]) == 0
    capsys.readouterr()
    csvs = sorted(p.name for p in a.glob("steps*.csv"))
    identical = bool(csvs) and all((a / n).read_bytes() == (b / n).read_bytes() for n in csvs)
    echoed = json.loads((a / "summary.json").read_text())["config"] == \
        json.loads((b / "summary.json").read_text())["config"]
    report(f"C11[{command}]", identical and echoed,
           f"{len(csvs)} steps csv file(s) byte-identical on rerun from summary.json: {identical}")
