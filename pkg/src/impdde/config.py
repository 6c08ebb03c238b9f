"""JSON configuration files: schema, validation and binding of expressions to a
:class:`~impdde.core.SystemSpec`."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .core import Partition, SystemSpec, validate_spec
from .errors import DomainError
from .exprdsl import DelayRef, EvalError, ExprError, NonlocalRef, Param, StateRef, Var, parse, walk
from .operators import OperatorParams
from .solver import SolveOptions

_NUM = {"type": "number"}
_EXPR = {"type": "string", "minLength": 1}
_EXPR_OR_NUM = {"type": ["string", "number"]}
_VEC = {"type": "array", "items": _NUM}
_EXPRS = {"type": "array", "items": _EXPR, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "impdde system configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["n", "r", "tau", "A", "f", "phi"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "r": {"type": "number", "exclusiveMinimum": 0},
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "grid_step": {"type": "number", "exclusiveMinimum": 0},
        "params": {"type": "object", "additionalProperties": _NUM},
        "A": {"type": "array", "items": {"type": "array", "items": _EXPR_OR_NUM}},
        "f": {"type": "array", "items": _EXPR_OR_NUM},
        "phi": {"type": "array", "items": _EXPR_OR_NUM},
        "impulses": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["t", "s", "G"],
                "properties": {"t": _NUM, "s": _NUM, "G": {"type": "array", "items": _EXPR_OR_NUM}},
            },
        },
        "theta": {"type": "array", "items": _NUM},
        "g": {"type": "array", "items": _EXPR_OR_NUM},
        "constants": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M": _EXPR_OR_NUM, "L": _EXPR_OR_NUM, "N_q": _EXPR_OR_NUM,
                "Psi": _EXPR_OR_NUM, "K": _EXPR_OR_NUM, "h": _EXPR_OR_NUM,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "initial": {"enum": ["phi_tilde", "zero"]},
            },
        },
        "operator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": _VEC, "alpha": _VEC, "beta": _VEC,
                "rho": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

SCENARIOS = ("paper_example", "linear_homogeneous", "pure_delay", "riccati_blowup", "rotation_matrix")


class ConfigError(Exception):
    """Invalid configuration; ``where`` is a JSON path such as ``impulses[0].G[1]``."""

    def __init__(self, where: str, message: str):
        self.where = where
        self.message = message
        super().__init__(f"{where}: {message}" if where else message)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


@dataclass
class DeclaredConstants:
    """Analytic constants from the config; absent entries are ``None``."""

    M: float | None = None
    L: float | None = None
    N_q: float | None = None
    Psi: object = None
    K: object = None
    h: object = None

    def as_mapping(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class LoadedConfig:
    spec: SystemSpec
    grid_step: float | None
    solver: SolveOptions
    operator: OperatorParams
    constants: DeclaredConstants
    params: dict
    raw: dict = field(repr=False, default_factory=dict)
    source: str = ""


# ----------------------------------------------------------------- binding

def _compile(text, slot, where, params):
    try:
        ast = parse(str(text), slot)
    except ExprError as e:
        raise ConfigError(where, str(e)) from None
    for node in walk(ast):
        if isinstance(node, Param) and node.name not in params:
            raise ConfigError(where, f"unknown parameter {node.name!r} at column {node.pos + 1}")
    return ast


def _check_state_indices(ast, n, where):
    for node in walk(ast):
        if isinstance(node, (StateRef, DelayRef)) and not 1 <= node.index <= n:
            raise ConfigError(where, f"state component {node.index} out of range 1..{n} at column {node.pos + 1}")


def _const(text, where, params) -> float:
    ast = _compile(text, "const", where, params)
    try:
        return float(ast.evaluate(params))
    except EvalError as e:
        raise ConfigError(where, str(e)) from None


def _vector_len(items, n, where):
    if len(items) != n:
        raise ConfigError(where, f"expected {n} entries, got {len(items)}")


class _Lazy:
    """Sequence view ``z[i]`` that asks the history for ``h(0)`` only once."""

    def __init__(self, get):
        self._get = get

    def __getitem__(self, i):
        return self._get(i + 1, 0.0)


def _bind_A(rows, n, params):
    _vector_len(rows, n, "A")
    asts = []
    for i, row in enumerate(rows):
        _vector_len(row, n, f"A[{i}]")
        asts.append([_compile(e, "A", f"A[{i}][{j}]", params) for j, e in enumerate(row)])
    const = all(not any(isinstance(x, Var) for x in walk(a)) for row in asts for a in row)

    def A(t):
        env = {**params, "t": float(t)}
        return np.array([[a.evaluate(env) for a in row] for row in asts], dtype=float)

    if const:
        M = A(0.0)
        M.flags.writeable = False
        return lambda t: M
    return A


def _bind_f(exprs, n, r, params):
    _vector_len(exprs, n, "f")
    asts = [_compile(e, "f", f"f[{k}]", params) for k, e in enumerate(exprs)]
    lags = set()
    for k, a in enumerate(asts):
        _check_state_indices(a, n, f"f[{k}]")
        for node in walk(a):
            if isinstance(node, DelayRef):
                try:
                    d = float(node.lag.evaluate(params))
                except EvalError as e:
                    raise ConfigError(f"f[{k}]", str(e)) from None
                if not 0.0 <= d <= r:
                    raise ConfigError(f"f[{k}]", f"lag {d} at column {node.pos + 1} outside [0, r]")
                if d > 0:
                    lags.add(d)

    def f(t, h):
        seen = {}

        def zd(i, d):
            if d not in seen:
                seen[d] = h(-d)
            return seen[d][i - 1]

        env = {**params, "t": float(t), "zd": zd, "z": _Lazy(zd)}
        return np.array([a.evaluate(env) for a in asts], dtype=float)

    return f, tuple(sorted(lags))


def _bind_G(exprs, n, i, ti, si, params):
    where = f"impulses[{i}].G"
    _vector_len(exprs, n, where)
    local = {**params, "ti": ti, "si": si}
    asts = [_compile(e, "G", f"{where}[{k}]", local) for k, e in enumerate(exprs)]
    for k, a in enumerate(asts):
        _check_state_indices(a, n, f"{where}[{k}]")

    def G(t, x):
        env = {**local, "t": float(t), "z": np.asarray(x, dtype=float).reshape(n)}
        return np.array([a.evaluate(env) for a in asts], dtype=float)

    return G


def _bind_g(exprs, n, q, params):
    _vector_len(exprs, n, "g")
    asts = [_compile(e, "g", f"g[{k}]", params) for k, e in enumerate(exprs)]
    for k, a in enumerate(asts):
        for node in walk(a):
            if isinstance(node, NonlocalRef) and not (1 <= node.source <= q and 1 <= node.index <= n):
                raise ConfigError(f"g[{k}]", f"yq({node.source},{node.index}) out of range at column {node.pos + 1}")

    def g(windows):
        def at(s):
            s = np.atleast_1d(np.asarray(s, dtype=float))
            vals = [w(s) for w in windows]
            out = np.empty((len(s), n))
            for m, sm in enumerate(s):
                env = {**params, "t": float(sm), "yq": lambda j, i: vals[j - 1][m, i - 1]}
                out[m] = [a.evaluate(env) for a in asts]
            return out

        return at

    return g


def _bind_phi(exprs, n, params):
    _vector_len(exprs, n, "phi")
    asts = [_compile(e, "phi", f"phi[{k}]", params) for k, e in enumerate(exprs)]

    def phi(t):
        env = {**params, "t": float(t)}
        return np.array([a.evaluate(env) for a in asts], dtype=float)

    return phi


def _bind_constants(raw, params) -> DeclaredConstants:
    out = DeclaredConstants()
    for key in ("M", "L", "N_q"):
        if key in raw:
            v = _const(raw[key], f"constants.{key}", params)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"constants.{key}", f"must be finite and nonnegative, got {v}")
            setattr(out, key, v)
    for key, slot, names in (("Psi", "Psi", ("x",)), ("K", "K", ("u", "v")), ("h", "h", ("t",))):
        if key not in raw:
            continue
        ast = _compile(raw[key], slot, f"constants.{key}", params)

        def fn(*args, _ast=ast, _names=names):
            return float(_ast.evaluate({**params, **dict(zip(_names, map(float, args)))}))

        fn.source = str(raw[key])
        setattr(out, key, fn)
    return out


def _vec_or_zero(raw, key, n):
    v = raw.get(key)
    if v is None:
        return np.zeros(n)
    _vector_len(v, n, f"operator.{key}")
    return np.asarray(v, dtype=float)


def bind(raw: dict, source: str = "") -> LoadedConfig:
    """Validate a parsed JSON document and bind every expression."""
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_path(e.absolute_path), e.message)
    n, r, tau = int(raw["n"]), float(raw["r"]), float(raw["tau"])
    params = {k: float(v) for k, v in raw.get("params", {}).items()}
    for name in ("r", "tau", "ti", "si"):
        if name in params:
            raise ConfigError(f"params.{name}", f"{name!r} is a built-in parameter")
    params.update(r=r, tau=tau)
    imps = raw.get("impulses", [])
    theta = raw.get("theta", [])
    part = Partition(r, tau, tuple((float(d["t"]), float(d["s"])) for d in imps), tuple(float(x) for x in theta))
    viol = part.violations()
    if viol:
        raise ConfigError(viol[0].where, viol[0].message)
    if theta and "g" not in raw:
        raise ConfigError("g", "non-local times theta are given but g is missing")
    if "g" in raw and not theta:
        raise ConfigError("theta", "g is given but theta is empty")
    A = _bind_A(raw["A"], n, params)
    f, lags = _bind_f(raw["f"], n, r, params)
    G = tuple(_bind_G(d["G"], n, i, float(d["t"]), float(d["s"]), params) for i, d in enumerate(imps))
    g = _bind_g(raw["g"], n, len(theta), params) if "g" in raw else None
    phi = _bind_phi(raw["phi"], n, params)
    consts = _bind_constants(raw.get("constants", {}), params)
    spec = SystemSpec(n, part, A, f, phi, G, g, (), lags, consts.as_mapping(), raw.get("name", source))
    try:
        viol = validate_spec(spec)
    except (EvalError, DomainError) as e:
        raise ConfigError("<root>", str(e)) from None
    if viol:
        raise ConfigError(viol[0].where, viol[0].message)
    s = raw.get("solver", {})
    opts = SolveOptions(s.get("tol", 1e-8), s.get("max_iters", 200), s.get("initial", "phi_tilde"))
    o = raw.get("operator", {})
    op = OperatorParams(_vec_or_zero(o, "eta", n), _vec_or_zero(o, "alpha", n), _vec_or_zero(o, "beta", n), o.get("rho", 1.0))
    return LoadedConfig(spec, raw.get("grid_step"), opts, op, consts, params, raw, source)


def scenario_path(name: str):
    return resources.files("impdde.scenarios").joinpath(f"{name}.json")


def read_document(path_or_name) -> tuple[dict, str]:
    p = Path(str(path_or_name))
    if p.is_file():
        text, source = p.read_text(), str(p)
    elif str(path_or_name) in SCENARIOS:
        text, source = scenario_path(str(path_or_name)).read_text(), str(path_or_name)
    else:
        raise ConfigError("", f"no such config file or built-in scenario: {path_or_name}")
    try:
        return json.loads(text), source
    except json.JSONDecodeError as e:
        raise ConfigError("", f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from None


def load_config(path_or_name) -> LoadedConfig:
    raw, source = read_document(path_or_name)
    return bind(raw, source)


def list_scenarios() -> list[dict]:
    out = []
    for name in SCENARIOS:
        raw = json.loads(scenario_path(name).read_text())
        out.append({"name": name, "description": raw.get("description", "")})
    return out
