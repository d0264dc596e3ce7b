"""Experiment configuration: flat ``section.key = value`` files.

Lines are ``key = value``; ``#`` starts a comment.  Keys are validated
against a fixed schema and converted to typed values, so that
``parse(serialize(cfg)) == cfg``.  Arithmetic expressions (``psi`` branches,
prior densities, functionals) use a small grammar: numbers, one variable
(``theta`` or ``a``), ``+ - * / ^``, parentheses, ``sqrt``, ``exp``, ``log``.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .domain import fd_steps
from .exceptions import ConfigError

FUNCTIONS = {"sqrt": np.sqrt, "exp": np.exp, "log": np.log}
VARIABLES = ("theta", "a")
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.UAdd, ast.USub)


@dataclass(frozen=True)
class Expression:
    """Compiled arithmetic expression in one variable, vectorised over numpy arrays."""

    source: str
    variable: str = "theta"
    _code: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ConfigError(f"unknown variable {self.variable!r}; expected one of {VARIABLES}")
        text = self.source.replace("^", "**")
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {self.source!r}: {exc.msg}") from None
        self._check(tree.body)
        object.__setattr__(self, "_code", compile(tree, "<expression>", "eval"))

    def _check(self, node):
        if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARY):
            self._check(node.operand)
        elif isinstance(node, ast.Constant) and type(node.value) in (int, float):
            pass
        elif isinstance(node, ast.Name):
            if node.id != self.variable:
                raise ConfigError(f"unknown name {node.id!r} in {self.source!r}; "
                                  f"the variable here is {self.variable!r}")
        elif (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS
              and len(node.args) == 1 and not node.keywords):
            self._check(node.args[0])
        else:
            raise ConfigError(f"unsupported syntax in {self.source!r}: {type(node).__name__}")

    def __call__(self, value):
        v = np.asarray(value, dtype=float)
        with np.errstate(all="ignore"):
            out = eval(self._code, {"__builtins__": {}, **FUNCTIONS}, {self.variable: v})
        return np.broadcast_to(np.asarray(out, dtype=float), v.shape).copy() if v.ndim else float(out)

    def derivative(self, value):
        """Central difference with the package's step rule."""
        v = np.asarray(value, dtype=float)
        h = fd_steps(v)
        return (self(v + h) - self(v - h)) / (2.0 * h)

    def __str__(self) -> str:
        return self.source


# -- schema ---------------------------------------------------------------------------

def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def conv(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s
    return conv


def _text(s: str) -> str:
    return s


def _expr(variable: str) -> Callable[[str], Expression]:
    return lambda s: Expression(s, variable)


FAMILIES = ("normal-location", "normal-scale", "logistic-location", "squared-mixture")
FISHER_METHODS = ("auto", "analytic", "quadrature", "monte-carlo")

_MODEL_KEYS = {
    "family": _choice(*FAMILIES),
    "lower": _float,
    "upper": _float,
    "excluded": _floats,
    "closable": _bool,
    "fisher": _choice(*FISHER_METHODS),
}
_PRIOR_KEYS = {
    "kind": _choice("uniform", "density", "jeffreys"),
    "density": _expr("theta"),
}
_PSI_KEYS = {
    "map": _text,
    "lipschitz": _float,
    "image.lower": _float,
    "image.upper": _float,
}
_BRANCH_FIELDS = {
    "lower": _float,
    "upper": _float,
    "forward": _expr("theta"),
    "inverse": _expr("a"),
    "derivative": _expr("theta"),
}
_RUN_KEYS = {
    "theta": _floats,
    "a": _floats,
    "n": _int,
    "reps": _int,
    "seed": _int,
    "grid": _int,
    "bandwidth": _text,
    "tolerance": _float,
    "method": _choice(*FISHER_METHODS),
    "path": _choice("auto", "closed-form", "branch-exact", "kernel-mc"),
    "estimator": _choice("mean", "median", "mle"),
    "window": _float,
    "center": _choice("antecedent", "a"),
    "functional": _expr("theta"),
    "bias": _float,
    "kind": _choice("mle", "psi-variance"),
    "lemma": _bool,
    "bootstrap": _int,
}
_OUTPUT_KEYS = {
    "path": _text,
    "format": _choice("json", "csv"),
}

SECTIONS = {
    "model": _MODEL_KEYS,
    "model2": _MODEL_KEYS,
    "prior": _PRIOR_KEYS,
    "prior2": _PRIOR_KEYS,
    "psi": _PSI_KEYS,
    "psi2": _PSI_KEYS,
    "run": _RUN_KEYS,
    "output": _OUTPUT_KEYS,
}
_BRANCH_RE = re.compile(r"^(psi2?)\.branch\.(\d+)\.(\w+)$")
_NAMED_MAP_RE = re.compile(r"^(identity|square|cube|exp|log|affine\(\s*[-+.\deE]+\s*,\s*[-+.\deE]+\s*\)|branches)$")


def _converter(key: str):
    m = _BRANCH_RE.match(key)
    if m:
        fieldname = m.group(3)
        if fieldname not in _BRANCH_FIELDS:
            raise ConfigError(f"unknown branch field; expected one of {sorted(_BRANCH_FIELDS)}", key)
        return _BRANCH_FIELDS[fieldname]
    section, _, rest = key.partition(".")
    if section not in SECTIONS:
        raise ConfigError(f"unknown section; expected one of {sorted(SECTIONS)}", key)
    keys = SECTIONS[section]
    if rest not in keys:
        raise ConfigError(f"unknown key; section '{section}' accepts {sorted(keys)}", key)
    return keys[rest]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated key/value configuration; ``values`` maps dotted keys to typed values."""

    values: dict
    source: str = field(default="<config>", compare=False)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str):
        if key not in self.values:
            raise ConfigError("missing required key", key)
        return self.values[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def has(self, name: str) -> bool:
        return any(k.startswith(name + ".") for k in self.values)

    def branches(self, name: str = "psi") -> list[dict]:
        found: dict[int, dict] = {}
        for k, v in self.values.items():
            m = _BRANCH_RE.match(k)
            if m and m.group(1) == name:
                found.setdefault(int(m.group(2)), {})[m.group(3)] = v
        return [found[i] for i in sorted(found)]

    def with_values(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[k.replace("__", ".")] = v
        return ExperimentConfig(vals, self.source)

    def serialize(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))


def parse(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        naming the offending key (or line) for unknown keys, bad values,
        duplicates or a missing ``model.family``.
    """
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' ({source}, line {lineno})", f"line {lineno}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        conv = _converter(key)
        if key in values:
            raise ConfigError("duplicate key", key)
        try:
            values[key] = conv(value)
        except ConfigError as exc:
            raise ConfigError(str(exc), key) from None
        except ValueError as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", key) from None
    cfg = ExperimentConfig(values, source)
    cfg.require("model.family")
    for name in ("psi", "psi2"):
        if f"{name}.map" in values and not _NAMED_MAP_RE.match(values[f"{name}.map"]):
            raise ConfigError("expected identity, square, cube, exp, log, affine(slope,intercept) or branches",
                              f"{name}.map")
    return cfg


def load(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse(text, source=path)


def affine_parameters(text: str) -> tuple[float, float]:
    inner = text[text.index("(") + 1:text.rindex(")")]
    slope, intercept = (float(v) for v in inner.split(","))
    return slope, intercept

