"""Key-value run configuration.

Grammar, one entry per line::

    # comment (also after a value)
    key = value

Keys are dotted identifiers.  Lists are comma separated (``cells = 16, 16, 16``);
a single number for ``cells``/``lengths`` means the same value on all axes.
Expressions (``eps.expr``, ``mu.expr``, ``experiment.phi``, ``homogenize.f``)
use ``+ - * / **``, parentheses, numbers, the coordinates ``x1 x2 x3``, ``pi``,
the functions ``sin cos exp sqrt abs`` and the two-argument ``max min``.

Recognized keys::

    cells, lengths, topology (box|torus), bc (preset), bc.x1_lo ... bc.x3_hi (t|n)
    eps.expr, mu.expr
    command, seed, backend (dense|iterative)
    spectral.operator (grad|curl|div), cohomology.slot (0-3), decompose.slot (1|2)
    dualnorm.operator (grad|curl|div), input.vector (path)
    experiment.kind (oscillatory|negative-control|homogenize|local)
    experiment.n_list, experiment.tol, experiment.order, experiment.phi,
    experiment.dictionary (sine|polynomial)
    homogenize.a, homogenize.b, homogenize.axis (1-3), homogenize.f
"""

from __future__ import annotations

import ast
import hashlib
import math
import operator
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .derham import FACES, PRESETS, GridError, GridSpec, MaterialField


class ConfigError(ValueError):
    """Config problem with a 1-based line/column location."""

    def __init__(self, message, line=None, column=None, path=None):
        loc = ""
        if line is not None:
            loc = f"{path or '<config>'}:{line}:{column or 1}: "
        super().__init__(loc + message)
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs}
_FUNCS2 = {"max": np.maximum, "min": np.minimum}
_NAMES = ("x1", "x2", "x3", "pi")


class Expression:
    """Parsed arithmetic expression, callable as ``f(x1, x2, x3)``."""

    def __init__(self, text, line=None, column=None, path=None):
        self.text = text
        self._path = path
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            col = (column or 1) + (exc.offset or 1) - 1
            raise ConfigError(f"bad expression {text.strip()!r}: {exc.msg}", line, col, path) from None
        self._check(tree.body, line, column)
        self._tree = tree.body

    def _check(self, node, line, column):
        def fail(msg):
            col = (column or 1) + getattr(node, "col_offset", 0)
            raise ConfigError(msg, line, col, self._path)

        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                fail("operator not allowed in expression")
            self._check(node.left, line, column)
            self._check(node.right, line, column)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNOPS:
                fail("operator not allowed in expression")
            self._check(node.operand, line, column)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in {**_FUNCS, **_FUNCS2}:
                fail(f"unknown function; allowed: {', '.join([*_FUNCS, *_FUNCS2])}")
            nargs = 1 if node.func.id in _FUNCS else 2
            if len(node.args) != nargs or node.keywords:
                fail(f"{node.func.id} takes exactly {nargs} argument{'s' if nargs > 1 else ''}")
            for arg in node.args:
                self._check(arg, line, column)
        elif isinstance(node, ast.Name):
            if node.id not in _NAMES:
                fail(f"unknown name {node.id!r}; allowed: {', '.join(_NAMES)}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                fail("only numeric constants are allowed")
        else:
            fail(f"unsupported syntax ({type(node).__name__})")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Call):
            if node.func.id in _FUNCS2:
                return _FUNCS2[node.func.id](*(self._eval(a, env) for a in node.args))
            return _FUNCS[node.func.id](self._eval(node.args[0], env))
        if isinstance(node, ast.Name):
            return env[node.id]
        return float(node.value)

    def __call__(self, x1, x2, x3):
        x1 = np.asarray(x1, dtype=float)
        env = {"x1": x1, "x2": np.asarray(x2, dtype=float), "x3": np.asarray(x3, dtype=float),
               "pi": math.pi}
        with np.errstate(all="ignore"):
            val = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(x1, x2, x3).shape)

    def __repr__(self):
        return f"Expression({self.text.strip()!r})"


# ---------------------------------------------------------------------------
# key-value parsing
# ---------------------------------------------------------------------------

_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")

COMMANDS = ("spectral", "cohomology", "decompose", "divcurl", "homogenize", "dualnorm")
KINDS = ("oscillatory", "negative-control", "homogenize", "local")
OPERATORS = ("grad", "curl", "div")


@dataclass(frozen=True)
class Entry:
    value: str
    line: int
    column: int


def parse_text(text, path=None):
    """Raw ``key -> Entry`` map; syntax errors carry line/column."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ConfigError("expected 'key = value'", lineno, col, path)
        key_part, value_part = body.split("=", 1)
        key = key_part.strip()
        kcol = len(key_part) - len(key_part.lstrip()) + 1
        if not _KEY.match(key):
            raise ConfigError(f"malformed key {key!r}", lineno, kcol, path)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first set on line {out[key].line})",
                              lineno, kcol, path)
        value = value_part.strip()
        vcol = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno, vcol, path)
        out[key] = Entry(value, lineno, vcol)
    return out


def _int_list(e, path, n=None):
    items = [s.strip() for s in e.value.strip("[]").split(",")]
    try:
        vals = [int(s) for s in items]
    except ValueError:
        raise ConfigError(f"expected integers, got {e.value!r}", e.line, e.column, path) from None
    if n is not None and len(vals) == 1:
        vals = vals * n
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} integers, got {len(vals)}", e.line, e.column, path)
    return vals


def _float_list(e, path, n=None):
    items = [s.strip() for s in e.value.strip("[]").split(",")]
    try:
        vals = [float(s) for s in items]
    except ValueError:
        raise ConfigError(f"expected numbers, got {e.value!r}", e.line, e.column, path) from None
    if n is not None and len(vals) == 1:
        vals = vals * n
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {len(vals)}", e.line, e.column, path)
    return vals


def _choice(e, choices, path):
    if e.value not in choices:
        raise ConfigError(f"expected one of {', '.join(choices)}, got {e.value!r}", e.line, e.column, path)
    return e.value


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    material: MaterialField
    command: Optional[str] = None
    seed: int = 0
    backend: Optional[str] = None
    operator: str = "grad"
    slot: int = 1
    kind: str = "oscillatory"
    n_list: tuple = (1, 2, 4, 8, 16)
    tol: float = 1e-3
    order: int = 3
    dictionary: Optional[str] = None
    phi: Optional[Expression] = None
    theta_a: float = 1.0
    theta_b: float = 10.0
    theta_axis: int = 0
    source: Optional[Expression] = None
    input_vector: Optional[str] = None
    text: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def sha256(self):
        return hashlib.sha256(self.text.encode()).hexdigest()


_KNOWN = {"cells", "lengths", "topology", "bc", "eps.expr", "mu.expr", "command", "seed", "backend",
          "spectral.operator", "dualnorm.operator", "cohomology.slot", "decompose.slot",
          "input.vector", "experiment.kind", "experiment.n_list", "experiment.tol",
          "experiment.order", "experiment.phi", "experiment.dictionary", "homogenize.a", "homogenize.b",
          "homogenize.axis", "homogenize.f"} | {f"bc.{f}" for f in FACES}


def parse_config(text, path=None, base_dir=None):
    entries = parse_text(text, path)
    for key, e in entries.items():
        if key not in _KNOWN:
            raise ConfigError(f"unknown key {key!r}", e.line, 1 + _leading(text, e.line), path)

    def get(key):
        return entries.get(key)

    if get("cells") is None:
        raise ConfigError("missing required key 'cells'", 1, 1, path)
    cells = _int_list(get("cells"), path, 3)
    lengths = _float_list(get("lengths"), path, 3) if get("lengths") else [1.0, 1.0, 1.0]
    topology = _choice(get("topology"), ("box", "torus"), path) if get("topology") else "box"

    bc = None
    if topology == "box":
        preset = get("bc")
        if preset is not None:
            _choice(preset, tuple(PRESETS), path)
            faces = {f: ("t" if f in PRESETS[preset.value] else "n") for f in FACES}
        else:
            faces = {}
        for f in FACES:
            e = get(f"bc.{f}")
            if e is not None:
                faces[f] = _choice(e, ("t", "n", "tangential", "normal"), path)
        missing = [f for f in FACES if f not in faces]
        if missing:
            raise ConfigError(f"boundary map does not cover faces {missing}; set 'bc' or 'bc.<face>'",
                              1, 1, path)
        bc = faces
    else:
        for key in ["bc"] + [f"bc.{f}" for f in FACES]:
            if get(key) is not None:
                e = get(key)
                raise ConfigError("a torus has no boundary conditions", e.line, e.column, path)
    try:
        grid = GridSpec(tuple(cells), tuple(lengths), topology, bc)
    except GridError as exc:
        e = get("cells")
        raise ConfigError(str(exc), e.line, e.column, path) from None

    def expr(key):
        e = get(key)
        return None if e is None else Expression(e.value, e.line, e.column, path)

    material = MaterialField(expr("eps.expr"), expr("mu.expr"))

    kw = {}
    if get("command"):
        kw["command"] = _choice(get("command"), COMMANDS, path)
    if get("seed"):
        kw["seed"] = _int_list(get("seed"), path, 1)[0]
        if kw["seed"] < 0:
            e = get("seed")
            raise ConfigError("seed must be nonnegative", e.line, e.column, path)
    if get("backend"):
        kw["backend"] = _choice(get("backend"), ("dense", "iterative"), path)
    for key in ("spectral.operator", "dualnorm.operator"):
        if get(key):
            kw["operator"] = _choice(get(key), OPERATORS, path)
    for key, allowed in (("cohomology.slot", (0, 1, 2, 3)), ("decompose.slot", (1, 2))):
        if get(key):
            q = _int_list(get(key), path, 1)[0]
            if q not in allowed:
                e = get(key)
                raise ConfigError(f"slot must be one of {allowed}", e.line, e.column, path)
            kw["slot"] = q
    if get("experiment.kind"):
        kw["kind"] = _choice(get("experiment.kind"), KINDS, path)
    if get("experiment.n_list"):
        ns = _int_list(get("experiment.n_list"), path)
        if any(n < 0 for n in ns) or ns != sorted(set(ns)):
            e = get("experiment.n_list")
            raise ConfigError("n_list must be strictly increasing and nonnegative", e.line, e.column, path)
        kw["n_list"] = tuple(ns)
    if get("experiment.tol"):
        kw["tol"] = _float_list(get("experiment.tol"), path, 1)[0]
    if get("experiment.order"):
        kw["order"] = _int_list(get("experiment.order"), path, 1)[0]
    if get("experiment.dictionary"):
        kw["dictionary"] = _choice(get("experiment.dictionary"), ("sine", "polynomial"), path)
    kw["phi"] = expr("experiment.phi")
    if get("homogenize.a"):
        kw["theta_a"] = _float_list(get("homogenize.a"), path, 1)[0]
    if get("homogenize.b"):
        kw["theta_b"] = _float_list(get("homogenize.b"), path, 1)[0]
    for key in ("homogenize.a", "homogenize.b"):
        if get(key) and kw["theta_" + key[-1]] <= 0:
            e = get(key)
            raise ConfigError("coefficients must be positive", e.line, e.column, path)
    if get("homogenize.axis"):
        ax = _int_list(get("homogenize.axis"), path, 1)[0]
        if ax not in (1, 2, 3):
            e = get("homogenize.axis")
            raise ConfigError("axis must be 1, 2 or 3", e.line, e.column, path)
        kw["theta_axis"] = ax - 1
    kw["source"] = expr("homogenize.f")
    if get("input.vector"):
        e = get("input.vector")
        p = e.value
        if base_dir is not None and not os.path.isabs(p):
            p = os.path.join(base_dir, p)
        if not os.path.isfile(p):
            raise ConfigError(f"input vector file not found: {e.value}", e.line, e.column, path)
        kw["input_vector"] = p
    return RunConfig(grid, material, text=text, **kw)


def _leading(text, line):
    raw = text.splitlines()[line - 1]
    return len(raw) - len(raw.lstrip())


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", 1, 1, path) from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8 text ({exc.reason})", 1, 1, path) from None
    return parse_config(text, path, os.path.dirname(os.path.abspath(path)))
