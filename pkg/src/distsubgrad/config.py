"""Run configuration files: schema, dotted-path overrides and builders for engine objects."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import problem as pb
from .engine import SimConfig
from .mixing import WeightSchedule
from .stochastic import NoiseModel, StepsizeSchedule
from .topology import TopologySchedule, preset_edges

Vector = Union[float, list[float]]
EdgeList = list[tuple[int, int]]

SWEEPABLE = {
    "alpha": "stepsize.a",
    "sigma": "noise.sigma",
    "m": "topology.m",
    "Q": "topology.Q",
    "eta": "weights.eta",
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key of the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SetSpec(_Strict):
    kind: Literal["box", "ball", "simplex", "halfspace", "whole"] = "box"
    lower: Vector | None = None
    upper: Vector | None = None
    center: Vector | None = None
    radius: float | None = None
    dim: int | None = Field(default=None, ge=1)
    normal: Vector | None = None
    offset: float | None = None


class ComponentSpec(_Strict):
    kind: Literal["quadratic", "abs", "hinge"] = "quadratic"
    center: Vector | None = None
    weights: Vector | None = None
    scale: float = Field(default=1.0, ge=0)
    a: Vector | None = None
    b: float = 0.0


class ProblemSpec(_Strict):
    set: SetSpec = SetSpec(kind="box", lower=-1.0, upper=1.0)
    components: list[ComponentSpec] = Field(min_length=1)
    f_star: float | None = None
    x_star: Vector | None = None
    bounds: Vector | None = None


class TopologySpec(_Strict):
    m: int = Field(ge=1)
    kind: Literal["static", "periodic", "random"] = "static"
    preset: str | None = "complete"
    edges: EdgeList | None = None
    pattern: list[Union[str, EdgeList]] | None = None
    Q: int | None = Field(default=None, ge=1)
    symmetric: bool = True
    probability: float = Field(default=0.5, ge=0, le=1)
    seed: int = 0
    require_connected: bool = False


class WeightsSpec(_Strict):
    rule: Literal["metropolis", "equal_neighbor", "explicit"] = "metropolis"
    matrices: list[list[list[float]]] | None = None
    eta: float | None = Field(default=None, gt=0, lt=1)


class NoiseSpec(_Strict):
    kind: Literal["none", "gaussian", "uniform", "biased"] = "none"
    sigma: Vector = 0.0
    radius: Vector = 0.0
    bias: Vector = 0.0
    bias_decay: float = Field(default=0.0, ge=0)


class StepsizeSpec(_Strict):
    kind: Literal["constant", "harmonic", "power"] = "harmonic"
    a: float = Field(default=1.0, ge=0)
    b: float = Field(default=0.0, ge=0)
    p: float = Field(default=1.0, gt=0.5, le=1.0)


class EngineSpec(_Strict):
    horizon: int = Field(default=1000, ge=1)
    initial: list[list[float]] | None = None
    init_seed: int = 0
    seed: int = 0
    replicas: int = Field(default=1, ge=1)
    trace_stride: int = Field(default=1, ge=1)


class OutputSpec(_Strict):
    format: Literal["csv", "json"] = "csv"
    metrics: list[Literal["disagreement", "f_w", "f_z", "p_norm", "eps_norm", "f_y", "z"]] = [
        "disagreement", "f_y", "f_w", "f_z", "p_norm"]
    prefix: str = "run"


class ChecksSpec(_Strict):
    policy: Literal["strict", "abort", "warn", "off"] = "warn"
    displacement: bool = False
    bounds: bool = False
    finite_time: list[int] = Field(default_factory=list)
    eps: float | None = Field(default=None, gt=0)
    tail: float = Field(default=0.1, gt=0, le=1)


class RunConfigFile(_Strict):
    problem: ProblemSpec
    topology: TopologySpec
    weights: WeightsSpec = WeightsSpec()
    noise: NoiseSpec = NoiseSpec()
    stepsize: StepsizeSpec = StepsizeSpec()
    engine: EngineSpec = EngineSpec()
    output: OutputSpec = OutputSpec()
    checks: ChecksSpec = ChecksSpec()

    @model_validator(mode="after")
    def _components_match(self):
        k = len(self.problem.components)
        if k not in (1, self.topology.m):
            raise ValueError(f"problem.components has {k} entries; expected 1 or topology.m = {self.topology.m}")
        return self

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.model_dump(mode="json")).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- loading


def _loc(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))


def validate(raw: dict) -> RunConfigFile:
    try:
        return RunConfigFile.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_loc(err), err["msg"]) from None


def set_path(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        nxt = node.get(key)
        if nxt is None:
            nxt = node[key] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(dotted, f"{key} is not a section")
        node = nxt
    node[keys[-1]] = value


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError("", f"override {item!r} must look like key.path=value")
    key, text = item.split("=", 1)
    return key.strip(), yaml.safe_load(text)


def load_raw(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a mapping with sections")
    return raw


def load_config(path, overrides=()) -> RunConfigFile:
    raw = load_raw(path)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        set_path(raw, key, value)
    return validate(raw)


def with_override(cfg: RunConfigFile, dotted: str, value) -> RunConfigFile:
    raw = copy.deepcopy(cfg.model_dump(mode="json"))
    set_path(raw, dotted, value)
    return validate(raw)


# ---------------------------------------------------------------- builders


def _vec(x, n=None):
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if n is not None and v.shape == (1,) and n > 1:
        v = np.full(n, v[0])
    return v


def build_set(spec: SetSpec) -> pb.ConvexSet:
    need = {"box": ("lower", "upper"), "ball": ("center", "radius"), "simplex": ("dim",),
            "halfspace": ("normal", "offset"), "whole": ("dim",)}[spec.kind]
    for name in need:
        if getattr(spec, name) is None:
            raise ConfigError(f"problem.set.{name}", f"required for a {spec.kind} set")
    try:
        if spec.kind == "box":
            n = spec.dim or max(_vec(spec.lower).size, _vec(spec.upper).size)
            return pb.Box(_vec(spec.lower, n), _vec(spec.upper, n))
        if spec.kind == "ball":
            return pb.Ball(_vec(spec.center, spec.dim), spec.radius)
        if spec.kind == "simplex":
            return pb.Simplex(spec.dim)
        if spec.kind == "halfspace":
            return pb.Halfspace(_vec(spec.normal, spec.dim), spec.offset)
        return pb.WholeSpace(spec.dim)
    except pb.ProblemError as exc:
        raise ConfigError("problem.set", str(exc)) from None


def build_component(spec: ComponentSpec, n: int, where: str) -> pb.Component:
    if spec.kind == "hinge":
        if spec.a is None:
            raise ConfigError(f"{where}.a", "required for a hinge component")
        return pb.Hinge(_vec(spec.a, n), spec.b)
    if spec.center is None:
        raise ConfigError(f"{where}.center", f"required for a {spec.kind} component")
    c = _vec(spec.center, n)
    if spec.kind == "abs":
        return pb.AbsDeviation(c, spec.scale)
    return pb.WeightedQuadratic(c, 1.0 if spec.weights is None else _vec(spec.weights, n))


def build_problem(cfg: RunConfigFile) -> pb.Problem:
    spec, m = cfg.problem, cfg.topology.m
    X = build_set(spec.set)
    comps = [build_component(c, X.dim, f"problem.components.{i}") for i, c in enumerate(spec.components)]
    if len(comps) == 1:
        comps = comps * m
    for i, c in enumerate(comps):
        if c.dim != X.dim:
            raise ConfigError(f"problem.components.{i if len(spec.components) > 1 else 0}",
                              f"dimension {c.dim} does not match the set ({X.dim})")
    declared = None
    if spec.bounds is not None:
        declared = list(_vec(spec.bounds, m))
        if len(declared) != m:
            raise ConfigError("problem.bounds", "give one bound or one per agent")
    try:
        return pb.Problem(comps, X, spec.f_star, None if spec.x_star is None else _vec(spec.x_star, X.dim),
                          declared)
    except pb.ProblemError as exc:
        raise ConfigError("problem", str(exc)) from None


def build_topology(spec: TopologySpec) -> TopologySchedule:
    from .topology import TopologyError
    m = spec.m
    try:
        if spec.kind == "static":
            edges = spec.edges if spec.edges is not None else preset_edges(spec.preset or "complete", m)
            return TopologySchedule.static(m, edges, Q=spec.Q or 1, symmetric=spec.symmetric,
                                           require_connected=spec.require_connected)
        if spec.kind == "periodic":
            if not spec.pattern:
                raise ConfigError("topology.pattern", "required for a periodic topology")
            lists = [preset_edges(e, m) if isinstance(e, str) else e for e in spec.pattern]
            return TopologySchedule.periodic(m, lists, Q=spec.Q, symmetric=spec.symmetric,
                                             require_connected=spec.require_connected)
        return TopologySchedule.random(m, spec.probability, Q=spec.Q or 1, seed=spec.seed,
                                       candidates=spec.edges, symmetric=spec.symmetric)
    except TopologyError as exc:
        raise ConfigError("topology", str(exc)) from None


def build_weights(cfg: RunConfigFile, topo: TopologySchedule) -> WeightSchedule:
    from .mixing import MixingError
    try:
        return WeightSchedule(topo, cfg.weights.rule, cfg.weights.matrices)
    except MixingError as exc:
        raise ConfigError("weights", str(exc)) from None


def build_sim(cfg: RunConfigFile, horizon: int | None = None) -> SimConfig:
    p = build_problem(cfg)
    topo = build_topology(cfg.topology)
    weights = build_weights(cfg, topo)
    try:
        noise = NoiseModel(cfg.noise.kind, p.m, p.dim, sigma=cfg.noise.sigma, radius=cfg.noise.radius,
                           bias=cfg.noise.bias, bias_decay=cfg.noise.bias_decay, seed=cfg.engine.seed)
    except ValueError as exc:
        raise ConfigError("noise", str(exc)) from None
    s = cfg.stepsize
    try:
        steps = StepsizeSchedule(s.kind, s.a, s.b, s.p)
    except ValueError as exc:
        raise ConfigError("stepsize.a", str(exc)) from None
    policy = {"strict": "abort"}.get(cfg.checks.policy, cfg.checks.policy)
    initial = None if cfg.engine.initial is None else np.asarray(cfg.engine.initial, dtype=float)
    if initial is not None and initial.shape != (p.m, p.dim):
        raise ConfigError("engine.initial", f"expected {p.m} rows of length {p.dim}")
    try:
        return SimConfig(p, weights, noise, steps, horizon or cfg.engine.horizon, initial=initial,
                         init_seed=cfg.engine.init_seed, policy=policy, trace_stride=cfg.engine.trace_stride,
                         check_displacement=cfg.checks.displacement)
    except pb.ProblemError as exc:
        raise ConfigError("engine.initial", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("engine.initial" if "initial" in str(exc) else "engine", str(exc)) from None
