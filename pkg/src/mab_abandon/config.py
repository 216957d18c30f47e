"""Experiment configuration files (YAML).

A config has four sections::

    instance:
      means: [0.9, 0.8]
      abandonment: {model: binary, q00: 1.0, q01: 0.0, q10: 0.0, q11: 0.0}
      initial_state: 1.0
    policies:
      - {kind: ULCB}
      - {kind: UCB, label: ucb}
    sim: {episodes: 20000, runs: 10000, seed: 20240607}
    output: {directory: results/fig4a, formats: [csv]}

General-state instances use ``{model: general, curve: log, c6: 1000,
theta: 0.5}`` or ``{model: general, curve: table, points: [[0, 1], [1, 0]],
theta: 0.5}``. Unknown keys are errors. Errors carry the field path and, when
the config came from a file, the line number.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .model import (ArmSet, AssumptionError, BanditInstance, BinaryAbandonment, GeneralAbandonment,
                    LogCurve, TableCurve)
from .policies import Kind, Orientation, PolicySpec
from .simulator import DEFAULT_SEED, Estimator, SimConfig

FORMATS = ("csv", "json")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: Optional[int] = None,
                 source: Optional[str] = None):
        self.path = path
        self.line = line
        where = f"{source}:" if source else ""
        where += f"{line}: " if line is not None else (" " if source else "")
        super().__init__(f"{where}{path}: {message}" if path else f"{where}{message}")


@dataclass(frozen=True)
class LabeledPolicy:
    label: str
    spec: PolicySpec


@dataclass(frozen=True)
class SimSection:
    episodes: int = 20_000
    runs: int = 10_000
    seed: int = DEFAULT_SEED
    episode_cap: int = 10**6
    estimator: Estimator = Estimator.DECOMPOSITION
    grid_size: int = 1024
    workers: int = 1


@dataclass(frozen=True)
class OutputSection:
    directory: str = "results"
    formats: tuple[str, ...] = ("csv",)


@dataclass(frozen=True)
class ExperimentConfig:
    instance: BanditInstance
    policies: tuple[LabeledPolicy, ...]
    sim: SimSection = field(default_factory=SimSection)
    output: OutputSection = field(default_factory=OutputSection)

    def sim_config(self, policy: LabeledPolicy | str) -> SimConfig:
        if isinstance(policy, str):
            policy = self.policy(policy)
        return SimConfig(self.instance, policy.spec, K=self.sim.episodes, runs=self.sim.runs,
                         master_seed=self.sim.seed, episode_cap=self.sim.episode_cap,
                         estimator=self.sim.estimator, grid_size=self.sim.grid_size)

    def policy(self, label: str) -> LabeledPolicy:
        for p in self.policies:
            if p.label == label:
                return p
        raise KeyError(label)

    @property
    def disc_bins(self) -> tuple[int, ...]:
        return tuple(sorted({p.spec.n_bins for p in self.policies
                             if p.spec.kind in (Kind.DISC_ULCB, Kind.DISC_KL_ULCB)}))

    def with_overrides(self, *, seed=None, runs=None, episodes=None, workers=None,
                       directory=None) -> "ExperimentConfig":
        sim = self.sim
        if seed is not None:
            sim = replace(sim, seed=int(seed))
        if runs is not None:
            sim = replace(sim, runs=int(runs))
        if episodes is not None:
            sim = replace(sim, episodes=int(episodes))
        if workers is not None:
            sim = replace(sim, workers=int(workers))
        _check_sim(sim, {}, None)
        out = self.output if directory is None else replace(self.output, directory=str(directory))
        return replace(self, sim=sim, output=out)


# ---------------------------------------------------------------- parsing

class _Ctx:
    """Field-path bookkeeping plus a path -> line map from the YAML node tree."""

    def __init__(self, lines: dict[str, int], source: Optional[str]):
        self.lines = lines
        self.source = source

    def error(self, path: str, message: str) -> ConfigError:
        line = None
        p = path
        while p:
            if p in self.lines:
                line = self.lines[p]
                break
            p = _parent(p)
        return ConfigError(path, message, line, self.source)


def _parent(path: str) -> str:
    cut = max(path.rfind("."), path.rfind("["))
    return path[:cut] if cut > 0 else ""


def _line_map(node, path: str = "", out: Optional[dict] = None) -> dict[str, int]:
    out = {} if out is None else out
    if node is None:
        return out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{path}.{k.value}" if path else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
            out[key] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, f"{path}[{i}]", out)
    return out


def _mapping(ctx: _Ctx, obj: Any, path: str, allowed: set[str], required: set[str] = frozenset()):
    if not isinstance(obj, dict):
        raise ctx.error(path, f"expected a mapping, got {type(obj).__name__}")
    for key in obj:
        if key not in allowed:
            raise ctx.error(f"{path}.{key}" if path else str(key),
                            f"unknown key (allowed: {', '.join(sorted(allowed))})")
    for key in required:
        if key not in obj:
            raise ctx.error(path, f"missing required key '{key}'")
    return obj


def _number(ctx, obj, path, kind=float, lo=None, hi=None):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ctx.error(path, f"expected a number, got {obj!r}")
    if kind is int:
        if isinstance(obj, float) and not obj.is_integer():
            raise ctx.error(path, f"expected an integer, got {obj!r}")
        obj = int(obj)
    else:
        obj = float(obj)
    if lo is not None and obj < lo:
        raise ctx.error(path, f"must be >= {lo}, got {obj}")
    if hi is not None and obj > hi:
        raise ctx.error(path, f"must be <= {hi}, got {obj}")
    return obj


def _instance(ctx: _Ctx, obj) -> BanditInstance:
    obj = _mapping(ctx, obj, "instance", {"means", "abandonment", "initial_state"},
                   {"means", "abandonment"})
    means = obj["means"]
    if not isinstance(means, list) or not means:
        raise ctx.error("instance.means", "expected a non-empty list of arm means")
    means = [_number(ctx, m, f"instance.means[{i}]") for i, m in enumerate(means)]
    init = _number(ctx, obj.get("initial_state", 1.0), "instance.initial_state", lo=0.0, hi=1.0)
    try:
        arms = ArmSet(tuple(means))
    except AssumptionError as exc:
        raise ctx.error("instance.means", str(exc)) from exc
    ab = obj["abandonment"]
    path = "instance.abandonment"
    if not isinstance(ab, dict) or "model" not in ab:
        raise ctx.error(path, "expected a mapping with 'model: binary' or 'model: general'")
    try:
        if ab["model"] == "binary":
            _mapping(ctx, ab, path, {"model", "q00", "q01", "q10", "q11"}, {"q00", "q01", "q10", "q11"})
            qs = {k: _number(ctx, ab[k], f"{path}.{k}") for k in ("q00", "q01", "q10", "q11")}
            return BanditInstance(arms, BinaryAbandonment(**qs), init)
        if ab["model"] == "general":
            _mapping(ctx, ab, path, {"model", "curve", "c6", "points", "theta"}, {"curve", "theta"})
            theta = _number(ctx, ab["theta"], f"{path}.theta")
            if ab["curve"] == "log":
                if "c6" not in ab:
                    raise ctx.error(path, "log curve needs 'c6'")
                if "points" in ab:
                    raise ctx.error(f"{path}.points", "only table curves take points")
                curve = LogCurve(_number(ctx, ab["c6"], f"{path}.c6"))
            elif ab["curve"] == "table":
                if "points" not in ab:
                    raise ctx.error(path, "table curve needs 'points'")
                if "c6" in ab:
                    raise ctx.error(f"{path}.c6", "only log curves take c6")
                pts = ab["points"]
                if not isinstance(pts, list) or any(not isinstance(p, list) or len(p) != 2 for p in pts):
                    raise ctx.error(f"{path}.points", "expected a list of [s, q] pairs")
                curve = TableCurve(tuple((_number(ctx, s, f"{path}.points[{i}][0]"),
                                          _number(ctx, q, f"{path}.points[{i}][1]"))
                                         for i, (s, q) in enumerate(pts)))
            else:
                raise ctx.error(f"{path}.curve", f"unknown curve {ab['curve']!r} (log | table)")
            return BanditInstance(arms, GeneralAbandonment(curve, theta), init)
        raise ctx.error(f"{path}.model", f"unknown model {ab['model']!r} (binary | general)")
    except AssumptionError as exc:
        raise ctx.error(path, str(exc)) from exc


_POLICY_KEYS = {"label", "kind", "c0", "c1", "c", "orientation", "n_bins", "epsilon", "H",
                "bonus_c", "q_init", "fixed_arm"}


def _policy(ctx: _Ctx, obj, i: int) -> LabeledPolicy:
    path = f"policies[{i}]"
    obj = _mapping(ctx, obj, path, _POLICY_KEYS, {"kind"})
    try:
        kind = Kind(obj["kind"])
    except ValueError:
        raise ctx.error(f"{path}.kind", f"unknown policy kind {obj['kind']!r} "
                                        f"(one of {', '.join(k.value for k in Kind)})") from None
    kw: dict[str, Any] = {}
    for key in ("c0", "c1", "c", "epsilon", "bonus_c", "q_init"):
        if key in obj:
            kw[key] = _number(ctx, obj[key], f"{path}.{key}")
    if obj.get("H") is not None:
        kw["H"] = _number(ctx, obj["H"], f"{path}.H")
    for key in ("n_bins", "fixed_arm"):
        if key in obj:
            kw[key] = _number(ctx, obj[key], f"{path}.{key}", kind=int)
    if "orientation" in obj:
        try:
            kw["orientation"] = Orientation(obj["orientation"])
        except ValueError:
            raise ctx.error(f"{path}.orientation", "expected 'standard' or 'opposite'") from None
    try:
        spec = PolicySpec.make(kind, **kw)
    except ValueError as exc:
        raise ctx.error(path, str(exc)) from exc
    label = obj.get("label")
    if label is not None and not isinstance(label, str):
        raise ctx.error(f"{path}.label", "expected a string")
    return LabeledPolicy(label or "", spec)


def _check_sim(sim: SimSection, obj, ctx: Optional[_Ctx]):
    def fail(key, msg):
        if ctx is None:
            raise ConfigError(f"sim.{key}", msg)
        raise ctx.error(f"sim.{key}", msg)
    for key in ("episodes", "runs", "episode_cap", "workers"):
        if getattr(sim, key) < 1:
            fail(key, "must be >= 1")
    if sim.grid_size < 64:
        fail("grid_size", "must be >= 64")
    if sim.seed < 0 or sim.seed >= 2**64:
        fail("seed", "must be an unsigned 64-bit integer")


def _sim(ctx: _Ctx, obj) -> SimSection:
    obj = _mapping(ctx, obj or {}, "sim", {"episodes", "runs", "seed", "episode_cap", "estimator",
                                           "grid_size", "workers"})
    kw: dict[str, Any] = {}
    for key in ("episodes", "runs", "seed", "episode_cap", "grid_size", "workers"):
        if key in obj:
            kw[key] = _number(ctx, obj[key], f"sim.{key}", kind=int)
    if "estimator" in obj:
        try:
            kw["estimator"] = Estimator(obj["estimator"])
        except ValueError:
            raise ctx.error("sim.estimator", "expected 'decomposition' or 'direct'") from None
    sim = SimSection(**kw)
    _check_sim(sim, obj, ctx)
    return sim


def _output(ctx: _Ctx, obj) -> OutputSection:
    obj = _mapping(ctx, obj or {}, "output", {"directory", "formats"})
    kw: dict[str, Any] = {}
    if "directory" in obj:
        if not isinstance(obj["directory"], str):
            raise ctx.error("output.directory", "expected a string")
        kw["directory"] = obj["directory"]
    if "formats" in obj:
        fmts = obj["formats"]
        if not isinstance(fmts, list) or any(f not in FORMATS for f in fmts):
            raise ctx.error("output.formats", f"expected a list drawn from {list(FORMATS)}")
        kw["formats"] = tuple(dict.fromkeys(fmts))
    return OutputSection(**kw)


def _unique_labels(ctx: _Ctx, policies: list[LabeledPolicy]) -> tuple[LabeledPolicy, ...]:
    taken = {p.label for p in policies if p.label}
    seen: set[str] = set()
    out = []
    for i, p in enumerate(policies):
        label = p.label
        if label:
            if label in seen:
                raise ctx.error(f"policies[{i}].label", f"duplicate label {label!r}")
        else:
            base = p.spec.kind.value
            if p.spec.kind in (Kind.DISC_ULCB, Kind.DISC_KL_ULCB):
                base += f"-n{p.spec.n_bins}"
            if p.spec.orientation is Orientation.OPPOSITE:
                base += "-opposite"
            label, j = base, 2
            while label in taken or label in seen:
                label, j = f"{base}-{j}", j + 1
        seen.add(label)
        out.append(replace(p, label=label))
    return tuple(out)


def from_dict(data: Any, *, lines: Optional[dict[str, int]] = None,
              source: Optional[str] = None) -> ExperimentConfig:
    ctx = _Ctx(lines or {}, source)
    data = _mapping(ctx, data, "", {"instance", "policies", "sim", "output"}, {"instance", "policies"})
    instance = _instance(ctx, data["instance"])
    pols = data["policies"]
    if not isinstance(pols, list) or not pols:
        raise ctx.error("policies", "expected a non-empty list of policy sections")
    policies = _unique_labels(ctx, [_policy(ctx, p, i) for i, p in enumerate(pols)])
    for i, p in enumerate(policies):
        if p.spec.kind.q_learning and not instance.is_binary:
            raise ctx.error(f"policies[{i}].kind", "Q-learning baselines need the binary state model")
        if p.spec.kind is Kind.FIXED and not 0 <= p.spec.fixed_arm < instance.M:
            raise ctx.error(f"policies[{i}].fixed_arm", f"must lie in [0, {instance.M - 1}]")
    return ExperimentConfig(instance, policies, _sim(ctx, data.get("sim")), _output(ctx, data.get("output")))


def loads(text: str, source: Optional[str] = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError("", f"invalid YAML: {getattr(exc, 'problem', exc)}", line, source) from exc
    return from_dict(data, lines=_line_map(node), source=source)


def load(path) -> ExperimentConfig:
    path = Path(path)
    return loads(path.read_text(), source=str(path))


def preset_names() -> list[str]:
    root = resources.files("mab_abandon") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> ExperimentConfig:
    res = resources.files("mab_abandon") / "presets" / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError("", f"unknown preset {name!r} (available: {', '.join(preset_names())})")
    return loads(res.read_text(), source=f"preset:{name}")


# ---------------------------------------------------------------- serialization

def _instance_dict(inst: BanditInstance) -> dict:
    ab = inst.abandonment
    if inst.is_binary:
        ab_d = {"model": "binary", "q00": ab.q00, "q01": ab.q01, "q10": ab.q10, "q11": ab.q11}
    elif isinstance(ab.curve, LogCurve):
        ab_d = {"model": "general", "curve": "log", "c6": ab.curve.c6, "theta": ab.theta}
    elif isinstance(ab.curve, TableCurve):
        ab_d = {"model": "general", "curve": "table",
                "points": [list(p) for p in ab.curve.points], "theta": ab.theta}
    else:
        raise TypeError(f"cannot serialize curve {type(ab.curve).__name__}")
    return {"means": list(inst.arms.means), "abandonment": ab_d, "initial_state": inst.initial_state}


_KIND_FIELDS = {
    Kind.DISC_ULCB: ("n_bins",), Kind.DISC_KL_ULCB: ("n_bins",),
    Kind.Q_EPS: ("epsilon", "q_init"), Kind.Q_UCB: ("H", "bonus_c", "q_init"),
    Kind.FIXED: ("fixed_arm",),
}
_DEFAULT_SPEC = PolicySpec(Kind.UCB)


def _policy_dict(p: LabeledPolicy) -> dict:
    s = p.spec
    out = {"label": p.label, "kind": s.kind.value, "c0": s.c0, "c1": s.c1, "c": s.c,
           "orientation": s.orientation.value}
    # kind-specific fields always, anything else only when set away from its default
    relevant = _KIND_FIELDS.get(s.kind, ())
    for key in ("n_bins", "epsilon", "H", "bonus_c", "q_init", "fixed_arm"):
        value = getattr(s, key)
        if key in relevant or value != getattr(_DEFAULT_SPEC, key):
            out[key] = value
    return out


def to_dict(cfg: ExperimentConfig) -> dict:
    sim = cfg.sim
    return {
        "instance": _instance_dict(cfg.instance),
        "policies": [_policy_dict(p) for p in cfg.policies],
        "sim": {"episodes": sim.episodes, "runs": sim.runs, "seed": sim.seed,
                "episode_cap": sim.episode_cap, "estimator": sim.estimator.value,
                "grid_size": sim.grid_size, "workers": sim.workers},
        "output": {"directory": cfg.output.directory, "formats": list(cfg.output.formats)},
    }


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(copy.deepcopy(to_dict(cfg)), sort_keys=False, default_flow_style=None)


def dump(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
