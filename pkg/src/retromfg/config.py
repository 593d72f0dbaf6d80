"""
Experiment configuration: YAML file, strict schema, defaults, overrides.

Unknown keys, type mismatches and missing blocks are all collected and
reported together, each with the line it came from.
"""

from __future__ import annotations

import copy
import difflib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from .expr import Expression, ExpressionError

__all__ = ["KINDS", "SCHEMA", "REQUIRED_BLOCKS", "ConfigError", "ExperimentConfig", "parse_config", "load_config", "apply_override"]

KINDS = ("verify-identity", "verify-carleman", "solve-forward", "solve-retro", "stability-sweep", "uniqueness-check")

REQUIRED_BLOCKS = {
    "verify-identity": ("identity",),
    "verify-carleman": ("grid", "carleman"),
    "solve-forward": ("grid", "problem"),
    "solve-retro": ("grid", "problem", "weight"),
    "stability-sweep": ("grid", "problem", "weight", "sweep"),
    "uniqueness-check": ("grid", "problem", "weight"),
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class _Required:
    def __repr__(self):
        return "<required>"


REQUIRED = _Required()


@dataclass(frozen=True)
class Key:
    check: Callable[[Any], Any]
    default: Any = None
    choices: tuple | None = None
    doc: str = ""


def _float(x):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError("expected a number")
    return float(x)


def _opt_float(x):
    return None if x is None else _float(x)


def _int(x):
    if isinstance(x, bool) or not isinstance(x, int):
        raise TypeError("expected an integer")
    return x


def _bool(x):
    if not isinstance(x, bool):
        raise TypeError("expected true or false")
    return x


def _str(x):
    if not isinstance(x, str):
        raise TypeError("expected a string")
    return x


def _expr(x):
    if isinstance(x, bool) or not isinstance(x, (str, int, float)):
        raise TypeError("expected an expression string or a number")
    return str(x)


def _list_of(conv, *, nonempty=True):
    def check(x):
        if not isinstance(x, list):
            raise TypeError("expected a list")
        if nonempty and not x:
            raise TypeError("expected a non-empty list")
        return [conv(v) for v in x]
    return check


def _int_or_list(x):
    return _list_of(_int)(x) if isinstance(x, list) else _int(x)


SCHEMA: dict[str, Any] = {
    "kind": Key(_str, REQUIRED, KINDS, "experiment kind"),
    "seed": Key(_int, 0, doc="master seed for every random family"),
    "output": Key(_str, "out", doc="output directory"),
    "workers": Key(_int, 1, doc="worker processes for independent sweep cells"),
    "grid": {
        "half_widths": Key(_list_of(_float), [1.0], doc="prism half widths A_i; length sets the dimension"),
        "T": Key(_float, 1.0),
        "nodes": Key(_int_or_list, 33, doc="nodes per axis (one value for all axes, or a list)"),
        "time_steps": Key(_int, 32),
    },
    "problem": {
        "beta": Key(_float, 0.1),
        "kappa": Key(_expr, "1"),
        "v_T": Key(_expr, "0.5*cos(pi*x1)"),
        "m_0": Key(_expr, "1 + 0.5*cos(pi*x1)"),
        "normalize_m0": Key(_bool, True, doc="rescale m_0 to unit mass"),
        "c1": Key(_float, 0.0),
        "c2": Key(_float, 0.0),
        "s1": Key(_float, 1.0),
        "s2": Key(_float, 1.0),
        "g0": Key(_expr, "0", doc="manufactured source; may use t"),
        "k0": Key(_float, 0.0),
        "sigma_k": Key(_float, 1.0),
        "linear_solver": Key(_str, "direct", ("direct", "cg")),
        "allow_cfl_violation": Key(_bool, False),
        "damping": Key(_float, 0.5),
        "tol": Key(_float, 1e-8),
        "max_iter": Key(_int, 200),
    },
    "weight": {
        "lambda": Key(_float, 0.05),
        "nu": Key(_float, 3.0),
        "a": Key(_float, 2.0),
        "alpha": Key(_opt_float, None, doc="data penalty; null means 1e3 times the residual scale"),
    },
    "sweep": {
        "delta_grid": Key(_list_of(_float), REQUIRED),
        "seeds": Key(_list_of(_int), [0, 1, 2]),
        "method": Key(_str, "gauss-newton", ("gauss-newton", "gradient")),
        "max_iter": Key(_int, 50),
        "n_inits": Key(_int, 4),
        "delta": Key(_float, 0.0, doc="noise level for solve-retro"),
    },
    "identity": {
        "field": Key(_expr, REQUIRED),
        "bc": Key(_str, "neumann", ("neumann", "dirichlet")),
        "resolutions": Key(_list_of(_int), [17, 33, 65]),
        "exact": Key(_opt_float, None, doc="analytic value of both sides, if known"),
    },
    "carleman": {
        "estimate": Key(_str, "forward", ("forward", "forward_prism", "backward")),
        "family_size": Key(_int, 20),
        "holdout_size": Key(_int, 20),
        "lambda_grid": Key(_list_of(_float), [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]),
        "nu": Key(_float, 3.0),
        "nu_grid": Key(_list_of(_float), [3.0, 4.0, 5.0, 6.0, 7.0, 8.0], doc="searched for the backward estimate"),
        "beta": Key(_float, 1.0),
        "a": Key(_float, 2.0),
        "sigma": Key(_int, 1, (1, 2)),
        "certify": Key(_str, "span", ("span", "members")),
        "max_mode": Key(_int, 4),
        "n_terms": Key(_int, 4),
    },
}

# sweep keys that only some kinds need
_SWEEP_NEEDS_DELTA = ("stability-sweep",)


@dataclass
class ExperimentConfig:
    """Validated configuration with every default filled in."""

    kind: str
    seed: int
    output: str
    workers: int
    blocks: dict = field(default_factory=dict)
    source: str | None = None

    def block(self, name: str) -> dict:
        return self.blocks[name]

    def as_dict(self) -> dict:
        d = dict(kind=self.kind, seed=self.seed, output=self.output, workers=self.workers)
        d.update(copy.deepcopy(self.blocks))
        return d

    @property
    def dim(self) -> int:
        return len(self.blocks["grid"]["half_widths"])


def _lines(node, prefix="", out=None):
    """Map dotted key paths to 1-based line numbers."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            _lines(v, path + ".", out)
    return out


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``dotted.key=value``; the value is read as YAML."""
    if "=" not in assignment:
        raise ConfigError([f"override {assignment!r}: expected key=value"])
    key, _, text = assignment.partition("=")
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError([f"override {assignment!r}: empty key segment"])
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"override {assignment!r}: {p!r} is not a block"])
    node[parts[-1]] = yaml.safe_load(text)


def load_config(path) -> tuple[dict, dict]:
    """Raw mapping and line table of a YAML file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such file"])
    text = path.read_text()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: YAML error: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return raw, _lines(node)


def parse_config(path=None, *, overrides=(), raw: dict | None = None, lines: dict | None = None) -> ExperimentConfig:
    """Validate a config file (or an in-memory mapping) against the schema."""
    if raw is None:
        raw, lines = load_config(path)
    raw = copy.deepcopy(raw)
    lines = dict(lines or {})
    for o in overrides:
        apply_override(raw, o)
        lines[o.partition("=")[0].strip()] = "override"
    errors: list[str] = []

    def where(p):
        ln = lines.get(p)
        return "override" if ln == "override" else (f"line {ln}" if ln else "config")

    def unknown(p, key, valid):
        near = difflib.get_close_matches(key, valid, n=1, cutoff=0.5)
        hint = f"; did you mean {near[0]!r}?" if near else f"; valid keys: {', '.join(valid)}"
        errors.append(f"{where(p)}: unknown key {p!r}{hint}")

    def check_key(p, rule: Key, present: bool, value):
        if not present:
            if rule.default is REQUIRED:
                return REQUIRED
            return copy.deepcopy(rule.default)
        try:
            val = rule.check(value)
        except TypeError as exc:
            errors.append(f"{where(p)}: {p}: {exc}, got {value!r}")
            return None
        if rule.choices is not None and val not in rule.choices:
            errors.append(f"{where(p)}: {p}: {val!r} is not one of {', '.join(map(str, rule.choices))}")
        return val

    top = {}
    for key, value in raw.items():
        if key not in SCHEMA:
            unknown(str(key), str(key), list(SCHEMA))
    for key, rule in SCHEMA.items():
        if isinstance(rule, Key):
            top[key] = check_key(key, rule, key in raw, raw.get(key))
    kind = top.get("kind")
    if kind is REQUIRED:
        errors.append("config: missing required key 'kind'")
        kind = None
    needed = REQUIRED_BLOCKS.get(kind, ())

    blocks = {}
    for name, rule in SCHEMA.items():
        if isinstance(rule, Key):
            continue
        given = raw.get(name)
        if given is None:
            if name in needed:
                errors.append(f"config: missing block {name!r} required by kind {kind!r}")
            if name in needed or name in ("grid",):
                given = {}
            else:
                continue
        if not isinstance(given, dict):
            errors.append(f"{where(name)}: block {name!r} must be a mapping")
            continue
        for key in given:
            if key not in rule:
                unknown(f"{name}.{key}", str(key), list(rule))
        block = {}
        missing = []
        for key, krule in rule.items():
            val = check_key(f"{name}.{key}", krule, key in given, given.get(key))
            if val is REQUIRED:
                missing.append(key)
                val = None
            block[key] = val
        if missing and name == "sweep":
            if kind in _SWEEP_NEEDS_DELTA:
                errors.append(f"{where(name)}: sweep block incomplete: missing {', '.join(missing)}")
        elif missing:
            errors.append(f"{where(name)}: block {name!r} incomplete: missing {', '.join(missing)}")
        blocks[name] = block

    if not errors:
        _semantic_checks(top, blocks, errors, where)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(top["kind"], top["seed"], top["output"], top["workers"], blocks, None if path is None else str(path))


def _semantic_checks(top, blocks, errors, where):
    dim = len(blocks["grid"]["half_widths"])
    nodes = blocks["grid"]["nodes"]
    if isinstance(nodes, list) and len(nodes) != dim:
        errors.append(f"{where('grid.nodes')}: grid.nodes has {len(nodes)} entries for a {dim}-dimensional prism")
    if top["workers"] < 1:
        errors.append(f"{where('workers')}: workers must be at least 1")
    exprs = []
    if "problem" in blocks:
        exprs += [(f"problem.{k}", blocks["problem"][k], k == "g0") for k in ("kappa", "v_T", "m_0", "g0")]
    if "identity" in blocks and blocks["identity"]["field"] is not None:
        exprs.append(("identity.field", blocks["identity"]["field"], False))
    for p, text, allow_t in exprs:
        try:
            Expression(text, dim, allow_t=allow_t)
        except ExpressionError as exc:
            errors.append(f"{where(p)}: {p}: {exc}")
