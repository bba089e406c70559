"""Command-line entry point: ``lad {run,compare,sweep-eta,landscape,gradcheck}``."""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import re
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from . import __version__
from . import analysis, gradcheck
from .bandit import BanditEnv, make_env
from .distribution import AdvantageSpec, MixtureComponent
from .errors import ConfigError, LADError
from .objectives import ObjectiveConfig
from .trainer import RunRecord, TrainConfig, steps_csv, summary_dict, train

log = logging.getLogger("lad")

TOOL = "lad"
COMMANDS = ("run", "compare", "sweep-eta", "landscape", "gradcheck")
DEFAULT_CONFIG = "default_protocol.json"

OBJECTIVE_KEYS = frozenset({"kind", "divergence", "eta", "kl_weight", "clip_epsilon",
                            "entropy_bonus", "group_normalize", "on_policy"})
COMPARE_ENTRY_KEYS = OBJECTIVE_KEYS | {"label"}
MIXTURE_KEYS = frozenset({"weight", "mean", "std"})
_TRAIN_FIELDS = tuple(f.name for f in fields(TrainConfig) if f.name != "objective")

# dict sections merge key by key over these defaults; list values and the
# objective section are replaced wholesale
DEFAULTS = {
    "env": {
        "arms": 50,
        "mixture": [{"weight": 0.3, "mean": 8.0, "std": 3.0},
                    {"weight": 0.4, "mean": 25.0, "std": 3.0},
                    {"weight": 0.3, "mean": 42.0, "std": 3.0}],
        "advantage_baseline": "uniform",
        "advantage_scale": None,
    },
    "train": {
        "eta": 1.0,
        "steps": 4000,
        "learning_rate": 5e-3,
        "group_size": 32,
        "temperature": 1.5,
        "behavior_refresh_steps": None,
        "mode": "sampled",
        "seed": 0,
        "log_every": 10,
        "optimizer": "adam",
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "grad_clip": 100.0,
        "enumeration_cap": 4096,
    },
    "objective": {"kind": "lad", "divergence": "js"},
    "compare": {
        "objectives": [{"kind": "lad", "divergence": "js"}, {"kind": "grpo", "kl_weight": 1.0},
                       {"kind": "flowrl"}],
        "workers": 1,
    },
    "sweep": {"etas": [0.5, 1, 2, 4, 8, 16], "workers": 1},
    "landscape": {
        "objectives": [{"kind": "lad", "divergence": "js"},
                       {"kind": "lad-theoretical", "divergence": "js"},
                       {"kind": "grpo", "kl_weight": 1.0}],
        "mode": "exact",
        "resolution": 25,
        "margin": 0.25,
        "u_range": None,
        "v_range": None,
        "workers": 1,
    },
    "gradcheck": {"instances": 20, "max_arms": 8, "tolerance": gradcheck.DEFAULT_TOLERANCE},
}
assert set(DEFAULTS["train"]) == {"eta", *_TRAIN_FIELDS}


@dataclass
class ResolvedConfig:
    spec: AdvantageSpec
    train: TrainConfig
    raw: dict  # fully resolved, echo-able config
    options: dict = field(default_factory=dict)


# -- config parsing -------------------------------------------------------------


def _load_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    # a summary.json from an earlier command carries its config under "config"
    if "tool" in data and "config" in data:
        data = data["config"]
    return data


def default_config_text() -> str:
    return resources.files("lad").joinpath("configs", DEFAULT_CONFIG).read_text()


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments; values are parsed as JSON when possible."""
    out = copy.deepcopy(data)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = nxt
        node[parts[-1]] = _parse_value(value)
    return out


def _check_keys(section: dict, allowed, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    for k in section:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in {where}")


def _merge(data: dict) -> dict:
    _check_keys(data, DEFAULTS, "config")
    merged = copy.deepcopy(DEFAULTS)
    for name, section in data.items():
        if name == "objective":
            _check_keys(section, OBJECTIVE_KEYS, "objective")
            merged[name] = copy.deepcopy(section)
            continue
        _check_keys(section, DEFAULTS[name], name)
        merged[name].update(copy.deepcopy(section))
    return merged


def _objective(entry: dict, eta: float, where: str, allowed=OBJECTIVE_KEYS) -> ObjectiveConfig:
    _check_keys(entry, allowed, where)
    body = {k: v for k, v in entry.items() if k != "label"}
    if "kind" not in body:
        raise ConfigError(f"{where}: missing key 'kind'")
    if "eta" in body and body.pop("eta") != eta:
        raise ConfigError(f"{where}.eta disagrees with train.eta={eta}; set eta under train only")
    try:
        return ObjectiveConfig(eta=eta, **body)
    except (LADError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _objective_echo(cfg: ObjectiveConfig) -> dict:
    out = cfg.to_dict()
    out.pop("eta")
    return out


def _labelled(entries, eta: float, where: str) -> list[tuple[str, ObjectiveConfig]]:
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{where} must be a non-empty list")
    pairs = []
    for i, e in enumerate(entries):
        o = _objective(e, eta, f"{where}[{i}]", COMPARE_ENTRY_KEYS)
        pairs.append((str(e.get("label", o.label)), o))
    labels = [p[0] for p in pairs]
    dupes = sorted({x for x in labels if labels.count(x) > 1})
    if dupes:
        raise ConfigError(f"{where}: duplicate labels {dupes}; add a 'label' key to tell runs apart")
    return pairs


def _build(merged: dict) -> ResolvedConfig:
    env, tr = merged["env"], merged["train"]
    try:
        for i, c in enumerate(env["mixture"]):
            _check_keys(c, MIXTURE_KEYS, f"env.mixture[{i}]")
        spec = AdvantageSpec(
            arms=env["arms"],
            components=tuple(MixtureComponent(**c) for c in env["mixture"]),
            eta=tr["eta"],
            advantage_scale=env["advantage_scale"],
            baseline=env["advantage_baseline"],
        )
    except (LADError, ValueError, TypeError) as exc:
        raise ConfigError(f"env: {exc}") from None
    objective = _objective(merged["objective"], spec.eta, "objective")
    kwargs = {k: tr[k] for k in _TRAIN_FIELDS}
    if kwargs["behavior_refresh_steps"] is not None:
        kwargs["behavior_refresh_steps"] = tuple(kwargs["behavior_refresh_steps"])
    try:
        train_cfg = TrainConfig(objective=objective, **kwargs)
    except (LADError, ValueError, TypeError) as exc:
        hint = ""
        if "behavior_refresh_steps" in str(exc):
            hint = " (set train.behavior_refresh_steps=null for refreshes at even thirds)"
        raise ConfigError(f"train: {exc}{hint}") from None

    options = {
        "compare": _labelled(merged["compare"]["objectives"], spec.eta, "compare.objectives"),
        "landscape": _labelled(merged["landscape"]["objectives"], spec.eta, "landscape.objectives"),
    }
    etas = merged["sweep"]["etas"]
    if not isinstance(etas, list) or not etas:
        raise ConfigError("sweep.etas must be a non-empty list")

    raw = copy.deepcopy(merged)
    raw["train"]["behavior_refresh_steps"] = list(train_cfg.behavior_refresh_steps)
    raw["objective"] = _objective_echo(objective)
    for section in ("compare", "landscape"):
        raw[section]["objectives"] = [{"label": lab, **_objective_echo(o)} for lab, o in options[section]]
    return ResolvedConfig(spec, train_cfg, raw, options)


def parse_config(path=None, overrides=(), seed: int | None = None) -> ResolvedConfig:
    """Defaults <- config file (packaged protocol if ``path`` is None) <- overrides <- seed."""
    if path is None:
        data = json.loads(default_config_text())
    else:
        data = _load_json(Path(path))
    data = apply_overrides(data, overrides)
    if seed is not None:
        data.setdefault("train", {})
        if not isinstance(data["train"], dict):
            raise ConfigError("train must be an object")
        data["train"]["seed"] = seed
    return _build(_merge(data))


# -- output plumbing ------------------------------------------------------------


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", label)


class OutputDir:
    def __init__(self, path, force: bool):
        self.path = Path(path)
        self.force = force

    def claim(self, names) -> None:
        """Fail before any work if an output would clobber an existing file."""
        if self.force:
            return
        taken = [n for n in names if (self.path / n).exists()]
        if taken:
            raise ConfigError(f"{self.path}: refusing to overwrite {', '.join(taken)} (use --force)")

    def write(self, name: str, text: str) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / name).write_text(text)


def _summary(command: str, cfg: ResolvedConfig, results) -> str:
    doc = {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "seed": cfg.train.seed,
        "config": cfg.raw,
        "results": results,
    }
    return json.dumps(doc, indent=2, allow_nan=False, default=_json_default) + "\n"


def _json_default(x):
    if hasattr(x, "tolist"):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _record_result(rec: RunRecord) -> dict:
    out = summary_dict(rec)
    out.pop("config")
    return out


def _final_row(rec: RunRecord) -> list[str]:
    f = rec.final
    return [repr(f.tv_to_target), repr(f.kl_to_target), repr(f.entropy), repr(f.loss)]


# -- commands -----------------------------------------------------------------


def cmd_run(cfg: ResolvedConfig, out: OutputDir) -> int:
    out.claim(["steps.csv", "summary.json"])
    rec = train(make_env(cfg.spec), cfg.train, run_config=cfg.raw)
    out.write("steps.csv", steps_csv(rec))
    out.write("summary.json", _summary("run", cfg, _record_result(rec)))
    f = rec.final
    print(f"{rec.label}: tv={f.tv_to_target:.4f} kl={f.kl_to_target:.4f} entropy={f.entropy:.4f}")
    return 0


def cmd_compare(cfg: ResolvedConfig, out: OutputDir) -> int:
    pairs = cfg.options["compare"]
    out.claim(["compare.csv", "summary.json"] + [f"steps_{_safe(lab)}.csv" for lab, _ in pairs])
    results = analysis.compare_objectives(make_env(cfg.spec), pairs, cfg.train,
                                          workers=cfg.raw["compare"]["workers"], run_config=cfg.raw)
    for label, rec in results:
        out.write(f"steps_{_safe(label)}.csv", steps_csv(rec))
    text = analysis.compare_csv(results)
    out.write("compare.csv", text)
    out.write("summary.json", _summary("compare", cfg, {lab: _record_result(r) for lab, r in results}))
    sys.stdout.write(text)
    return 0


def _sweep_label(eta: float) -> str:
    return f"eta_{eta:g}"


def cmd_sweep(cfg: ResolvedConfig, out: OutputDir) -> int:
    etas = [float(e) for e in cfg.raw["sweep"]["etas"]]
    out.claim(["sweep.csv", "summary.json"] + [f"steps_{_safe(_sweep_label(e))}.csv" for e in etas])
    try:
        results = analysis.sweep_eta(cfg.spec, etas, cfg.train, workers=cfg.raw["sweep"]["workers"],
                                     run_config=cfg.raw)
    except ValueError as exc:
        raise ConfigError(f"sweep: {exc}") from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta", "seed", "final_tv", "final_kl", "final_entropy", "final_loss"])
    for eta, rec in results:
        out.write(f"steps_{_safe(_sweep_label(eta))}.csv", steps_csv(rec))
        w.writerow([repr(eta), str(rec.config["seed"])] + _final_row(rec))
    out.write("sweep.csv", buf.getvalue())
    out.write("summary.json", _summary("sweep-eta", cfg,
                                       {_sweep_label(e): _record_result(r) for e, r in results}))
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_landscape(cfg: ResolvedConfig, out: OutputDir) -> int:
    pairs = cfg.options["landscape"]
    ls = cfg.raw["landscape"]
    out.claim(["landscape.json", "summary.json"] + [f"steps_{_safe(lab)}.csv" for lab, _ in pairs])
    try:
        train_cfg = TrainConfig(**{**{k: getattr(cfg.train, k) for k in _TRAIN_FIELDS},
                                   "objective": cfg.train.objective, "mode": ls["mode"]})
    except (LADError, ValueError) as exc:
        raise ConfigError(f"landscape: {exc}") from None
    env: BanditEnv = make_env(cfg.spec)
    results = analysis.compare_objectives(env, pairs, train_cfg, workers=ls["workers"], run_config=cfg.raw)
    grid = analysis.build_landscape([r for _, r in results], env, cfg.train.objective,
                                    u_range=ls["u_range"], v_range=ls["v_range"],
                                    resolution=int(ls["resolution"]), margin=float(ls["margin"]))
    for label, rec in results:
        out.write(f"steps_{_safe(label)}.csv", steps_csv(rec))
    out.write("landscape.json", json.dumps(grid.to_dict(), indent=2, allow_nan=False) + "\n")
    out.write("summary.json", _summary("landscape", cfg, {lab: _record_result(r) for lab, r in results}))
    print(f"landscape: {grid.u_axis.size}x{grid.v_axis.size} grid, {len(results)} trajectories")
    return 0


def cmd_gradcheck(cfg: ResolvedConfig, out: OutputDir | None) -> int:
    """Finite-difference suite over every objective; exit 0 iff all cases pass."""
    gc = cfg.raw["gradcheck"]
    if out is not None:
        out.claim(["summary.json"])
    results, elapsed = gradcheck.timed_gradcheck(seed=cfg.train.seed, instances=int(gc["instances"]),
                                                 max_arms=int(gc["max_arms"]), tol=float(gc["tolerance"]))
    print(gradcheck.format_report(results, elapsed))
    failed = [r for r in results if not r.passed]
    if out is not None:
        rows = [{"case": r.name, "instances": r.instances, "max_rel_error": r.max_rel_error,
                 "passed": r.passed} for r in results]
        out.write("summary.json", _summary("gradcheck", cfg, rows))
    if failed:
        print(f"gradcheck failed: {failed[0].name} (max rel err {failed[0].max_rel_error:.3e})",
              file=sys.stderr)
        return 1
    return 0


_HANDLERS = {"run": cmd_run, "compare": cmd_compare, "sweep-eta": cmd_sweep,
             "landscape": cmd_landscape, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config or an earlier summary.json (default: packaged protocol)")
    common.add_argument("--out", help="output directory (created if absent)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path override, e.g. train.eta=2 (repeatable)")
    common.add_argument("--force", action="store_true", help="overwrite existing output files")
    common.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog=TOOL, description="Advantage-distribution matching on bandits.")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "train one objective; writes steps.csv and summary.json",
        "compare": "train several objectives on a shared env; writes compare.csv",
        "sweep-eta": "one run per eta; writes sweep.csv",
        "landscape": "PCA loss surface with projected trajectories; writes landscape.json",
        "gradcheck": "finite-difference check of every analytic gradient",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, args.overrides, args.seed)
        if args.out is None and args.command != "gradcheck":
            raise ConfigError(f"{args.command} needs --out DIR")
        out = OutputDir(args.out, args.force) if args.out is not None else None
        return _HANDLERS[args.command](cfg, out)
    except (LADError, OSError) as exc:
        print(f"{TOOL}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
