"""Scenario files: strict TOML parsing into model objects, and canonical dumps.

A scenario has a ``[system]`` table (arrival rate, customer and server types,
per-edge service laws), an optional ``[design]`` table, an optional
``[simulate]`` table and an optional ``[validate]`` table of tolerances.
Unknown keys anywhere are errors. Probabilities may be written as numbers or
as fraction strings such as ``"1/3"``.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .design import PriorityPartition, QoSTarget
from .distributions import Distribution, Exponential, parse_distribution
from .model import CompatibilityGraph, ModelError, ProbabilityVector, SystemSpec
from .stats import Tolerances

__all__ = [
    "ConfigError",
    "ClassBlock",
    "DesignBlock",
    "SimulateBlock",
    "ScenarioConfig",
    "parse_config",
    "load_config",
    "dump_config",
    "resolve_config_path",
    "fixture_names",
]

DEFAULT_MAX_EVENTS = 200_000_000


class ConfigError(ModelError):
    """Invalid scenario file; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# -- small typed readers -----------------------------------------------------

def _table(data: Any, path: str, allowed: set, required: set = frozenset()) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a table, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(path, f"unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    missing = sorted(required - set(data))
    if missing:
        raise ConfigError(path, f"missing required key(s) {missing}")
    return data


def _number(x: Any, path: str) -> float:
    if isinstance(x, bool):
        raise ConfigError(path, "expected a number, got a boolean")
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, str):
        try:
            return float(Fraction(x.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(path, f"expected a number or fraction string, got {x!r}")


def _integer(x: Any, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(path, f"expected an integer, got {x!r}")
    if minimum is not None and x < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {x}")
    return x


def _string(x: Any, path: str) -> str:
    if not isinstance(x, str):
        raise ConfigError(path, f"expected a string, got {x!r}")
    return x


def _dist(x: Any, path: str) -> Distribution:
    try:
        return parse_distribution(_string(x, path))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _list(x: Any, path: str) -> list:
    if not isinstance(x, list):
        raise ConfigError(path, f"expected an array, got {x!r}")
    return x


def _probabilities(x: Any, path: str, size: int) -> ProbabilityVector:
    values = tuple(_number(v, f"{path}[{k}]") for k, v in enumerate(_list(x, path)))
    if len(values) != size:
        raise ConfigError(path, f"expected {size} entries, got {len(values)}")
    try:
        return ProbabilityVector(values)
    except ModelError as exc:
        raise ConfigError(path, str(exc)) from exc


def _names(x: Any, path: str, index: Dict[str, int], what: str) -> Tuple[int, ...]:
    out = []
    for k, name in enumerate(_list(x, path)):
        name = _string(name, f"{path}[{k}]")
        if name not in index:
            raise ConfigError(f"{path}[{k}]", f"unknown {what} type {name!r}")
        out.append(index[name])
    if not out:
        raise ConfigError(path, "must not be empty")
    return tuple(out)


def _target(block: dict, path: str) -> QoSTarget:
    mode = _string(block.get("mode", ""), f"{path}.mode").lower()
    if mode not in ("ed", "qd", "qed"):
        raise ConfigError(f"{path}.mode", f"expected one of ed, qd, qed, got {mode!r}")
    expected = {"ed": "W", "qd": "T", "qed": None}[mode]
    for key in ("W", "T"):
        if key in block and key != expected:
            raise ConfigError(f"{path}.{key}", f"not used by mode {mode!r}")
    try:
        if mode == "qed":
            return QoSTarget.qed()
        if expected not in block:
            raise ConfigError(path, f"mode {mode!r} needs {expected}")
        return QoSTarget(mode, _number(block[expected], f"{path}.{expected}"))
    except ConfigError:
        raise
    except ModelError as exc:
        raise ConfigError(path, str(exc)) from exc


# -- blocks ------------------------------------------------------------------

@dataclass(frozen=True)
class ClassBlock:
    customers: Tuple[int, ...]
    servers: Tuple[int, ...]
    target: QoSTarget
    beta: ProbabilityVector


@dataclass(frozen=True)
class DesignBlock:
    """``mode`` is ``ed``, ``qd``, ``qed`` or ``diff``."""

    mode: str
    target: Optional[QoSTarget] = None
    beta: Optional[ProbabilityVector] = None
    classes: Tuple[ClassBlock, ...] = ()

    def partition(self) -> PriorityPartition:
        if self.mode != "diff":
            raise ModelError("only a 'diff' design has a priority partition")
        return PriorityPartition(tuple(c.customers for c in self.classes), tuple(c.servers for c in self.classes),
                                 tuple(c.target for c in self.classes), tuple(c.beta for c in self.classes))


@dataclass(frozen=True)
class SimulateBlock:
    customers: int = 100_000
    warmup: int = 20_000
    replications: int = 20
    seed: int = 0
    threads: int = 1
    workforce: Optional[Tuple[int, ...]] = None
    max_events: int = DEFAULT_MAX_EVENTS


@dataclass(frozen=True)
class ScenarioConfig:
    spec: SystemSpec
    design: Optional[DesignBlock] = None
    simulate: SimulateBlock = SimulateBlock()
    tolerances: Tolerances = Tolerances()
    name: str = ""

    def with_arrival_rate(self, rate: float) -> "ScenarioConfig":
        return dataclasses.replace(self, spec=self.spec.with_arrival_rate(rate))


def _parse_system(data: Any) -> SystemSpec:
    sys_t = _table(data, "system", {"lambda", "interarrival", "customers", "servers", "service"},
                   {"lambda", "customers", "servers", "service"})
    lam = _number(sys_t["lambda"], "system.lambda")
    inter = _dist(sys_t["interarrival"], "system.interarrival") if "interarrival" in sys_t else Exponential(1.0)

    c_names, alphas, patience = [], [], []
    for k, c in enumerate(_list(sys_t["customers"], "system.customers")):
        p = f"system.customers[{k}]"
        c = _table(c, p, {"name", "alpha", "patience"}, {"name", "alpha"})
        c_names.append(_string(c["name"], f"{p}.name"))
        alphas.append(_number(c["alpha"], f"{p}.alpha"))
        patience.append(_dist(c.get("patience", "det(inf)"), f"{p}.patience"))
    s_names = [_string(s, f"system.servers[{k}]") for k, s in enumerate(_list(sys_t["servers"], "system.servers"))]
    for names, what in ((c_names, "customers"), (s_names, "servers")):
        if not names:
            raise ConfigError(f"system.{what}", "must not be empty")
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ConfigError(f"system.{what}", f"duplicate names {dup}")
    c_index = {n: i for i, n in enumerate(c_names)}
    s_index = {n: j for j, n in enumerate(s_names)}

    service = {}
    svc = _table(sys_t["service"], "system.service", set(s_names))
    for s_name, row in svc.items():
        row = _table(row, f"system.service.{s_name}", set(c_names))
        for c_name, text in row.items():
            service[(c_index[c_name], s_index[s_name])] = _dist(text, f"system.service.{s_name}.{c_name}")
    try:
        alpha = ProbabilityVector(tuple(alphas))
    except ModelError as exc:
        raise ConfigError("system.customers[*].alpha", str(exc)) from exc
    try:
        graph = CompatibilityGraph(len(c_names), len(s_names), frozenset(service), tuple(c_names), tuple(s_names))
        return SystemSpec(graph, lam, alpha, service, tuple(patience), inter)
    except ModelError as exc:
        raise ConfigError("system", str(exc)) from exc


def _parse_design(data: Any, spec: SystemSpec) -> DesignBlock:
    d = _table(data, "design", {"mode", "W", "T", "beta", "classes"}, {"mode"})
    mode = _string(d["mode"], "design.mode").lower()
    if mode != "diff":
        if "classes" in d:
            raise ConfigError("design.classes", "only allowed with mode = 'diff'")
        if "beta" not in d:
            raise ConfigError("design", "missing required key(s) ['beta']")
        return DesignBlock(mode, _target(d, "design"), _probabilities(d["beta"], "design.beta", spec.J))
    for key in ("W", "T", "beta"):
        if key in d:
            raise ConfigError(f"design.{key}", "set per class when mode = 'diff'")
    c_index = {spec.graph.customer_label(i): i for i in range(spec.I)}
    s_index = {spec.graph.server_label(j): j for j in range(spec.J)}
    classes = []
    for k, c in enumerate(_list(d.get("classes", []), "design.classes")):
        p = f"design.classes[{k}]"
        c = _table(c, p, {"customers", "servers", "mode", "W", "T", "beta"}, {"customers", "servers", "mode", "beta"})
        servers = _names(c["servers"], f"{p}.servers", s_index, "server")
        classes.append(ClassBlock(_names(c["customers"], f"{p}.customers", c_index, "customer"), servers,
                                  _target(c, p), _probabilities(c["beta"], f"{p}.beta", len(servers))))
    if not classes:
        raise ConfigError("design.classes", "mode = 'diff' needs at least one class")
    block = DesignBlock("diff", classes=tuple(classes))
    try:
        block.partition().validate_for(spec.graph)
    except ModelError as exc:
        raise ConfigError("design.classes", str(exc)) from exc
    return block


def _parse_simulate(data: Any, spec: SystemSpec) -> SimulateBlock:
    s = _table(data, "simulate", {f.name for f in dataclasses.fields(SimulateBlock)})
    kw: Dict[str, Any] = {}
    for key, minimum in (("customers", 1), ("warmup", 0), ("replications", 1), ("seed", 0),
                         ("threads", 1), ("max_events", 1)):
        if key in s:
            kw[key] = _integer(s[key], f"simulate.{key}", minimum)
    if "workforce" in s:
        wf = tuple(_integer(n, f"simulate.workforce[{k}]", 1) for k, n in enumerate(_list(s["workforce"], "simulate.workforce")))
        if len(wf) != spec.J:
            raise ConfigError("simulate.workforce", f"expected {spec.J} entries, got {len(wf)}")
        kw["workforce"] = wf
    block = SimulateBlock(**kw)
    if block.warmup >= block.customers:
        raise ConfigError("simulate.warmup", "must be smaller than simulate.customers")
    return block


def parse_config(text: str, name: str = "") -> ScenarioConfig:
    """Parse scenario TOML; raises :class:`ConfigError` with a field path or line number."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"TOML syntax error: {exc}") from exc
    top = _table(data, "", {"name", "system", "design", "simulate", "validate"}, {"system"})
    spec = _parse_system(top["system"])
    design = _parse_design(top["design"], spec) if "design" in top else None
    simulate = _parse_simulate(top["simulate"], spec) if "simulate" in top else SimulateBlock()
    tolerances = Tolerances()
    if "validate" in top:
        v = _table(top["validate"], "validate", {f.name for f in dataclasses.fields(Tolerances)})
        tolerances = Tolerances(**{k: _number(x, f"validate.{k}") for k, x in v.items()})
    return ScenarioConfig(spec, design, simulate, tolerances, _string(top.get("name", name), "name"))


def fixture_names() -> List[str]:
    root = resources.files("fcfsalis") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_config_path(ref: str) -> Path:
    """A filesystem path, or else the name of a bundled fixture (``ex1_ed``)."""
    path = Path(ref)
    if path.exists():
        return path
    stem = ref[:-5] if ref.endswith(".toml") else ref
    bundled = resources.files("fcfsalis") / "fixtures" / f"{stem}.toml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError("", f"no such config file or bundled fixture: {ref!r} (fixtures: {', '.join(fixture_names())})")


def load_config(ref: str) -> ScenarioConfig:
    path = resolve_config_path(ref)
    return parse_config(path.read_text(), name=path.stem)


# -- canonical dump ----------------------------------------------------------

def _target_dict(t: QoSTarget) -> dict:
    out = {"mode": t.regime}
    if t.regime == "ed":
        out["W"] = t.W
    elif t.regime == "qd":
        out["T"] = t.T
    return out


def dump_config(cfg: ScenarioConfig) -> str:
    """Canonical TOML for ``cfg``; ``parse_config(dump_config(c))`` reproduces ``c``."""
    spec, g = cfg.spec, cfg.spec.graph
    system: Dict[str, Any] = {
        "lambda": spec.arrival_rate,
        "interarrival": str(spec.interarrival),
        "customers": [{"name": g.customer_label(i), "alpha": spec.alpha[i], "patience": str(spec.patience[i])}
                      for i in range(spec.I)],
        "servers": [g.server_label(j) for j in range(spec.J)],
        "service": {g.server_label(j): {g.customer_label(i): str(spec.service[(i, j)])
                                        for i in range(spec.I) if g.has_edge(i, j)} for j in range(spec.J)},
    }
    out: Dict[str, Any] = {}
    if cfg.name:
        out["name"] = cfg.name
    out["system"] = system
    d = cfg.design
    if d is not None:
        if d.mode == "diff":
            out["design"] = {"mode": "diff", "classes": [
                {"customers": [g.customer_label(i) for i in c.customers],
                 "servers": [g.server_label(j) for j in c.servers],
                 **_target_dict(c.target), "beta": list(c.beta)} for c in d.classes]}
        else:
            out["design"] = {**_target_dict(d.target), "beta": list(d.beta)}
    sim = {k: v for k, v in dataclasses.asdict(cfg.simulate).items() if v is not None}
    if "workforce" in sim:
        sim["workforce"] = list(sim["workforce"])
    out["simulate"] = sim
    out["validate"] = {k: v for k, v in dataclasses.asdict(cfg.tolerances).items() if v is not None}
    return tomli_w.dumps(out)
