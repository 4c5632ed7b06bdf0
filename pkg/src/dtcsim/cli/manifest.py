"""Campaign manifests: YAML documents validated against a small schema.

Every rejection carries an error code and the 1-based line of the
offending node, so malformed manifests point at the problem.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..evolve import INITIAL_STATES
from ..model import Protocol

TWO_PI = 2 * math.pi
KNOWN_UNITS = ("dimensionless", "MHz")
METHODS = ("auto", "dense-spectral", "krylov")
FORMATS = ("npy", "csv")
DEFAULT_MAX_SITES = {2: 16, 3: 8}
HARD_MAX_SITES = 22


class ManifestError(ValueError):
    def __init__(self, code: str, message: str, line: Optional[int] = None):
        self.code = code
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}[{code}] {message}")


# analysis name -> allowed parameters with defaults
ANALYSES: dict[str, dict[str, Any]] = {
    "trace_rate": {"min_cycle": 40},
    "rate_histogram": {"min_cycle": 40},
    "crystalline_fraction": {"start": 0, "length": None, "exclude_dc": True},
    "phase_boundary": {"threshold": 0.1, "start": 0, "length": None, "exclude_dc": True},
    "peak_heights": {"window": 36},
    "late_time_rate": {"window": 36},
    "stretched_exponential": {"window": 36},
    "saturation": {"window": 36, "level": 0.9},
    "quadratic_rate": {"source": "auto", "min_cycle": 40, "window": 36},
}
RATE_SOURCES = ("auto", "histogram", "median", "late_time")


@dataclass
class Node:
    """A YAML scalar or container value with its source line."""

    value: Any
    line: int


def _to_tree(node: yaml.Node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k)) if not isinstance(k, yaml.ScalarNode) else k.value
            if key in out:
                raise ManifestError("duplicate-key", f"key {key!r} appears twice", k.start_mark.line + 1)
            out[key] = (_to_tree(v), k.start_mark.line + 1)
        return Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return Node([_to_tree(v) for v in node.value], line)
    # resolve the scalar with the safe loader's implicit typing
    return Node(yaml.safe_load(yaml.serialize(node)), line)


def _plain(node: Node):
    if isinstance(node.value, dict):
        return {k: _plain(v) for k, (v, _) in node.value.items()}
    if isinstance(node.value, list):
        return [_plain(v) for v in node.value]
    return node.value


@dataclass
class SweepModel:
    protocol: Protocol
    n: list
    epsilon: list
    jt: Optional[list]
    period: Optional[list]
    alpha: list
    realizations: int
    cycles: int
    observable: Optional[str]
    initial: str
    density: float
    j0: float
    disorder_sigma: float
    units: str
    method: str

    @property
    def t_grid(self) -> list:
        return self.jt if self.protocol is Protocol.TOY else self.period


@dataclass
class AnalysisItem:
    name: str
    params: dict
    line: int


@dataclass
class Manifest:
    campaign: str
    seed: int
    model: SweepModel
    analysis: list
    output: Optional[str]
    storage_format: str
    max_sites: int
    raw: dict = field(repr=False, default_factory=dict)
    source: str = ""

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_seed(self, seed: int) -> "Manifest":
        raw = dict(self.raw)
        raw["seed"] = int(seed)
        m = Manifest(**{**self.__dict__, "seed": int(seed), "raw": raw})
        return m


TOP_KEYS = {"campaign", "seed", "model", "analysis", "output", "storage", "limits"}
MODEL_KEYS = {"protocol", "n", "epsilon", "epsilon_over_pi", "jt", "period", "alpha", "realizations",
              "cycles", "observable", "initial", "density", "j0", "disorder_sigma", "units", "method"}


def _get(mapping: Node, key: str, required: bool = False):
    entry = mapping.value.get(key)
    if entry is None:
        if required:
            raise ManifestError("missing-key", f"required key {key!r} is missing", mapping.line)
        return None
    return entry[0]


def _check_keys(mapping: Node, allowed: set, where: str):
    for key, (_, line) in mapping.value.items():
        if key not in allowed:
            raise ManifestError("unknown-key", f"unknown key {key!r} in {where}", line)


def _mapping(node: Node, where: str) -> Node:
    if not isinstance(node.value, dict):
        raise ManifestError("not-a-mapping", f"{where} must be a mapping", node.line)
    return node


def _number(node: Node, what: str, integer: bool = False) -> float:
    v = node.value
    ok = isinstance(v, int) and not isinstance(v, bool) if integer else (
        isinstance(v, (int, float)) and not isinstance(v, bool))
    if not ok or (not integer and not math.isfinite(v)):
        kind = "an integer" if integer else "a finite number"
        raise ManifestError("bad-type", f"{what} must be {kind}, got {v!r}", node.line)
    return int(v) if integer else float(v)


def _grid(node: Node, what: str, integer: bool = False) -> list:
    items = node.value if isinstance(node.value, list) else [node]
    if isinstance(node.value, list) and not items:
        raise ManifestError("empty-grid", f"sweep grid {what} is empty", node.line)
    return [_number(it, what, integer) for it in items]


def _string(node: Node, what: str, choices=None) -> str:
    if not isinstance(node.value, str):
        raise ManifestError("bad-type", f"{what} must be a string, got {node.value!r}", node.line)
    if choices is not None and node.value not in choices:
        raise ManifestError("bad-choice", f"{what} must be one of {list(choices)}, got {node.value!r}", node.line)
    return node.value


def _positive(values: list, what: str, node: Node, allow_zero: bool = False):
    for v in values:
        if v < 0 or (v == 0 and not allow_zero):
            raise ManifestError("out-of-range", f"{what} must be {'non-negative' if allow_zero else 'positive'}, got {v}", node.line)


def _parse_model(node: Node) -> SweepModel:
    _mapping(node, "model")
    _check_keys(node, MODEL_KEYS, "model")
    pnode = _get(node, "protocol", True)
    name = _string(pnode, "protocol")
    try:
        protocol = Protocol(name)
    except ValueError:
        raise ManifestError("unknown-protocol", f"unknown protocol {name!r}; choose from {[p.value for p in Protocol]}",
                            pnode.line) from None
    n_node = _get(node, "n", True)
    n = _grid(n_node, "n", integer=True)
    _positive(n, "n", n_node)
    if any(k < 2 for k in n):
        raise ManifestError("out-of-range", "n must be at least 2", n_node.line)

    e_node, ep_node = _get(node, "epsilon"), _get(node, "epsilon_over_pi")
    if e_node is not None and ep_node is not None:
        raise ManifestError("conflicting-keys", "give either epsilon or epsilon_over_pi, not both", ep_node.line)
    if e_node is None and ep_node is None:
        raise ManifestError("missing-key", "one of epsilon or epsilon_over_pi is required", node.line)
    eps = _grid(e_node, "epsilon") if e_node is not None else [math.pi * v for v in _grid(ep_node, "epsilon_over_pi")]
    span = e_node or ep_node
    if any(abs(e) >= math.pi for e in eps):
        raise ManifestError("out-of-range", "|epsilon| must be below pi", span.line)

    jt_node, t_node = _get(node, "jt"), _get(node, "period")
    jt = period = None
    if protocol is Protocol.TOY:
        if jt_node is None:
            raise ManifestError("missing-key", "toy-model campaigns need a jt grid", node.line)
        if t_node is not None:
            raise ManifestError("conflicting-keys", "toy-model campaigns take jt, not period", t_node.line)
        jt = _grid(jt_node, "jt")
        _positive(jt, "jt", jt_node)
    else:
        if t_node is None:
            raise ManifestError("missing-key", f"{protocol.value} campaigns need a period grid", node.line)
        if jt_node is not None:
            raise ManifestError("conflicting-keys", "lab-protocol campaigns take period, not jt", jt_node.line)
        period = _grid(t_node, "period")
        _positive(period, "period", t_node)

    a_node = _get(node, "alpha")
    alpha = _grid(a_node, "alpha") if a_node is not None else [0.0]

    def scalar(key, default, integer=False, positive=True):
        nd = _get(node, key)
        if nd is None:
            return default
        v = _number(nd, key, integer)
        _positive([v], key, nd, allow_zero=not positive)
        return v

    realizations = scalar("realizations", 1, integer=True)
    c_node = _get(node, "cycles", True)
    cycles = _number(c_node, "cycles", integer=True)
    _positive([cycles], "cycles", c_node)
    obs_node = _get(node, "observable")
    observable = _string(obs_node, "observable") if obs_node is not None else None
    init_node = _get(node, "initial")
    initial = _string(init_node, "initial", INITIAL_STATES) if init_node is not None else "polarized"
    units_node = _get(node, "units")
    units = _string(units_node, "units", KNOWN_UNITS) if units_node is not None else "dimensionless"
    method_node = _get(node, "method")
    method = _string(method_node, "method", METHODS) if method_node is not None else "auto"
    return SweepModel(protocol, n, eps, jt, period, alpha, realizations, cycles, observable, initial,
                      scalar("density", 1.0), scalar("j0", 1.0), scalar("disorder_sigma", 0.0, positive=False),
                      units, method)


def _parse_analysis(node: Optional[Node], model: SweepModel) -> list[AnalysisItem]:
    if node is None:
        return []
    if not isinstance(node.value, list):
        raise ManifestError("bad-type", "analysis must be a list of analysis names or {name: {params}}", node.line)
    items = []
    for entry in node.value:
        if isinstance(entry.value, str):
            name, params, pline = entry.value, {}, entry.line
        elif isinstance(entry.value, dict) and len(entry.value) == 1:
            (name, (pnode, _)), = entry.value.items()
            pline = pnode.line
            if pnode.value is None:
                params = {}
            elif isinstance(pnode.value, dict):
                params = _plain(pnode)
            else:
                raise ManifestError("bad-type", f"parameters of {name!r} must be a mapping", pnode.line)
        else:
            raise ManifestError("bad-type", "analysis entries are a name or a single-key mapping", entry.line)
        if name not in ANALYSES:
            raise ManifestError("unknown-analysis", f"unknown analysis {name!r}; choose from {sorted(ANALYSES)}", entry.line)
        for key in params:
            if key not in ANALYSES[name]:
                raise ManifestError("unknown-key", f"analysis {name!r} has no parameter {key!r}", pline)
        merged = {**ANALYSES[name], **params}
        _check_requirements(name, merged, model, entry.line)
        items.append(AnalysisItem(name, merged, entry.line))
    return items


def _check_requirements(name: str, params: dict, model: SweepModel, line: int):
    """Each analysis must have the sweep it consumes."""
    need = {
        "rate_histogram": (model.realizations >= 30, "rate_histogram needs realizations >= 30"),
        "phase_boundary": (len(model.epsilon) >= 6, "phase_boundary needs at least 6 epsilon values"),
        "quadratic_rate": (len(model.epsilon) >= 4, "quadratic_rate needs at least 4 epsilon values"),
        "saturation": (len(model.t_grid) >= 5, "saturation needs at least 5 values of jt/period"),
    }
    if name in need and not need[name][0]:
        raise ManifestError("unmet-requirement", need[name][1], line)
    if name == "quadratic_rate" and params["source"] not in RATE_SOURCES:
        raise ManifestError("bad-choice", f"quadratic_rate source must be one of {list(RATE_SOURCES)}", line)
    window = params.get("window")
    if window is not None and (not isinstance(window, int) or window < 8 or window >= model.cycles):
        raise ManifestError("out-of-range", f"window must be an integer in [8, cycles), got {window!r}", line)


def parse_manifest_text(text: str, source: str = "<string>") -> Manifest:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ManifestError("yaml-syntax", f"invalid YAML: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark is not None else None) from None
    if root is None:
        raise ManifestError("empty", "manifest is empty", 1)
    tree = _to_tree(root)
    _mapping(tree, "manifest top level")
    _check_keys(tree, TOP_KEYS, "manifest")
    campaign = _string(_get(tree, "campaign", True), "campaign")
    seed_node = _get(tree, "seed", True)
    seed = _number(seed_node, "seed", integer=True)
    if not 0 <= seed < 2**64:
        raise ManifestError("out-of-range", "seed must be an unsigned 64-bit integer", seed_node.line)
    model = _parse_model(_get(tree, "model", True))

    storage = _get(tree, "storage")
    fmt = "npy"
    if storage is not None:
        _mapping(storage, "storage")
        _check_keys(storage, {"format"}, "storage")
        f_node = _get(storage, "format")
        if f_node is not None:
            fmt = _string(f_node, "storage.format", FORMATS)
    limits = _get(tree, "limits")
    max_sites = DEFAULT_MAX_SITES[model.protocol.local_dim]
    if limits is not None:
        _mapping(limits, "limits")
        _check_keys(limits, {"max_sites"}, "limits")
        ms = _get(limits, "max_sites")
        if ms is not None:
            max_sites = _number(ms, "limits.max_sites", integer=True)
            if not 2 <= max_sites <= HARD_MAX_SITES:
                raise ManifestError("out-of-range", f"limits.max_sites must be in [2, {HARD_MAX_SITES}]", ms.line)
    out_node = _get(tree, "output")
    output = _string(out_node, "output") if out_node is not None else None
    analysis = _parse_analysis(_get(tree, "analysis"), model)
    return Manifest(campaign, seed, model, analysis, output, fmt, max_sites, _plain(tree), source)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError("unreadable", f"cannot read manifest {path}: {exc.strerror}") from None
    return parse_manifest_text(text, str(path))
