import numpy as np
import pytest

from lad import gradcheck as gc
from lad import objectives as obj
from lad.cli import main


def test_suite_covers_every_objective():
    names = [c.name for c in gc.gradient_cases()]
    assert len(names) == len(set(names)) == 19
    for kind in ("kl", "rkl", "jeffreys", "tv", "hellinger", "js", "flowrl-gen"):
        assert f"lad-{kind}" in names and f"lad-theoretical-{kind}" in names
    assert {"grpo", "vanilla-pg", "ppo-clip", "flowrl", "flowrl-log_z"} <= set(names)


def test_default_suite_passes_quickly():
    results, elapsed = gc.timed_gradcheck()
    assert all(r.passed for r in results), gc.format_report(results)
    assert max(r.max_rel_error for r in results) <= gc.DEFAULT_TOLERANCE
    assert elapsed < 5.0


def test_passes_across_seeds():
    for seed in (1, 17, 2024):
        assert all(r.passed for r in gc.run_gradcheck(seed=seed, instances=5))


def test_instances_respect_margins():
    rng = np.random.default_rng(0)
    for case in gc.gradient_cases():
        for _ in range(20):
            cfg, theta, old, adv, _ = gc.random_instance(case, rng)
            assert 2 <= theta.size <= 8
            assert gc._admissible(cfg, theta, old, adv)


def test_relative_error_floor():
    assert gc.relative_error(np.zeros(3), np.full(3, 1e-11)) == pytest.approx(1e-8, rel=1e-12)
    assert gc.relative_error([2.0, 0.0], [2.0, 1e-6]) == pytest.approx(5e-7, rel=1e-12)


def test_report_format():
    ok = gc.CaseResult("a", 3, 1e-9, True)
    bad = gc.CaseResult("b", 3, 0.5, False)
    text = gc.format_report([ok, bad], 0.1)
    assert "1/2 cases passed in 0.10s" in text
    assert text.splitlines()[-1] == "first failing case: b"


def test_injected_sign_flip_fails_and_names_objective(monkeypatch, capsys):
    real = obj.evaluate

    def flipped(cfg, *args, **kwargs):
        ev = real(cfg, *args, **kwargs)
        if cfg.kind is obj.ObjectiveKind.GRPO:
            return ev._replace(grad=-ev.grad)
        return ev

    monkeypatch.setattr(obj, "evaluate", flipped)
    assert main(["gradcheck", "--set", "gradcheck.instances=3"]) == 1
    captured = capsys.readouterr()
    assert "grpo" in captured.err
    assert "18/19 cases passed" in captured.out
    assert "first failing case: grpo" in captured.out
