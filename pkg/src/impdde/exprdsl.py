"""A small arithmetic expression language for defining system functions from text.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;            (* right associative *)
    atom    = number | name | call | "(" expr ")" ;
    call    = name "(" expr { "," expr } ")" ;
    number  = digits [ "." [ digits ] ] [ exponent ] | "." digits [ exponent ] ;
    exponent = ("e" | "E") [ "+" | "-" ] digits ;
    name    = ( letter | "_" ) { letter | digit | "_" } ;

Functions: ``sin cos exp log abs sqrt`` (one argument each).  State access:
``z(i)`` (component i of the current state), ``zd(i, d)`` (component i at lag
d), ``yq(j, i)`` (component i of the j-th non-local input).  Reserved
variables: ``t`` (time), ``x`` / ``u`` / ``v`` (envelope arguments).  Any other
name is a parameter.  Error positions are 1-based columns.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "abs": abs,
    "sqrt": math.sqrt,
}
ACCESSORS = {"z": 1, "zd": 2, "yq": 2}
RESERVED = ("t", "x", "u", "v")

# variables each slot may use, besides parameters
SLOTS: dict[str, frozenset] = {
    "phi": frozenset({"t"}),
    "A": frozenset({"t"}),
    "f": frozenset({"t", "z", "zd"}),
    "G": frozenset({"t", "z"}),
    "g": frozenset({"t", "yq"}),
    "Psi": frozenset({"x"}),
    "K": frozenset({"u", "v"}),
    "h": frozenset({"t"}),
    "const": frozenset(),
    "any": frozenset(RESERVED) | frozenset(ACCESSORS),
}


class ExprError(Exception):
    """Base class; ``offset`` is 0-based, ``column`` 1-based."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        self.column = None if offset is None else offset + 1
        self.bare = message
        if offset is not None:
            message = f"{message} at column {offset + 1}"
        super().__init__(message)


class LexError(ExprError):
    pass


class ParseError(ExprError):
    pass


class EvalError(ExprError):
    pass


# --------------------------------------------------------------------- tokens

@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int

    @property
    def value(self) -> float:
        return float(self.text)


_PUNCT = {"+": "plus", "-": "minus", "*": "star", "/": "slash", "^": "caret",
          "(": "lparen", ")": "rparen", ",": "comma"}
_NUM = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


def tokenize(text: str) -> list[Token]:
    out = []
    k = 0
    while k < len(text):
        ch = text[k]
        if ch.isspace():
            k += 1
            continue
        if ch in _PUNCT:
            out.append(Token(_PUNCT[ch], ch, k))
            k += 1
            continue
        m = _NUM.match(text, k)
        if m:
            if math.isinf(float(m.group(0))):
                raise LexError(f"number {m.group(0)!r} out of range", k)
            out.append(Token("num", m.group(0), k))
            k = m.end()
            continue
        m = _IDENT.match(text, k)
        if m:
            out.append(Token("ident", m.group(0), k))
            k = m.end()
            continue
        raise LexError(f"illegal character {ch!r}", k)
    return out


# ------------------------------------------------------------------------ AST

@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        return self.value


@dataclass(frozen=True)
class Var:
    """Reserved variable: t, x, u or v."""
    name: str
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        try:
            return float(env[self.name])
        except KeyError:
            raise EvalError(f"unbound variable {self.name!r}", self.pos) from None


@dataclass(frozen=True)
class Param:
    name: str
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        try:
            return float(env[self.name])
        except KeyError:
            raise EvalError(f"unbound parameter {self.name!r}", self.pos) from None


@dataclass(frozen=True)
class Neg:
    operand: object
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        return -self.operand.evaluate(env)


def _pow(a: float, b: float, pos: int) -> float:
    try:
        out = a ** b
    except ZeroDivisionError:
        raise EvalError("zero raised to a negative power", pos) from None
    except OverflowError:
        raise EvalError("overflow in power", pos) from None
    if isinstance(out, complex):
        raise EvalError("negative base with fractional exponent", pos)
    return out


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        op = self.op
        if op == "+":
            out = a + b
        elif op == "-":
            out = a - b
        elif op == "*":
            out = a * b
        elif op == "/":
            if b == 0:
                raise EvalError("division by zero", self.pos)
            out = a / b
        else:
            out = _pow(a, b, self.pos)
        if not math.isfinite(out):
            raise EvalError(f"non-finite result of {op!r}", self.pos)
        return out


@dataclass(frozen=True)
class Call:
    func: str
    arg: object
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        x = self.arg.evaluate(env)
        if self.func == "log" and not x > 0:
            raise EvalError(f"log of non-positive value {x}", self.pos)
        if self.func == "sqrt" and x < 0:
            raise EvalError(f"sqrt of negative value {x}", self.pos)
        try:
            return float(FUNCTIONS[self.func](x))
        except (OverflowError, ValueError):
            raise EvalError(f"{self.func} undefined or overflowing at {x}", self.pos) from None


@dataclass(frozen=True)
class StateRef:
    """``z(i)``"""
    index: int
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        try:
            return float(env["z"][self.index - 1])
        except KeyError:
            raise EvalError("no state bound for z(...)", self.pos) from None
        except IndexError:
            raise EvalError(f"state component {self.index} out of range", self.pos) from None


@dataclass(frozen=True)
class DelayRef:
    """``zd(i, d)``; ``lag`` is a constant expression."""
    index: int
    lag: object
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        try:
            access = env["zd"]
        except KeyError:
            raise EvalError("no history bound for zd(...)", self.pos) from None
        return float(access(self.index, self.lag.evaluate(env)))


@dataclass(frozen=True)
class NonlocalRef:
    """``yq(j, i)``"""
    source: int
    index: int
    pos: int = field(default=0, compare=False)

    def evaluate(self, env):
        try:
            access = env["yq"]
        except KeyError:
            raise EvalError("no non-local inputs bound for yq(...)", self.pos) from None
        return float(access(self.source, self.index))


# --------------------------------------------------------------------- parser

_INFIX = {"plus": (10, "+"), "minus": (10, "-"), "star": (20, "*"), "slash": (20, "/"), "caret": (40, "^")}
_UNARY_BP = 30


class _Parser:
    def __init__(self, tokens: list[Token], text_len: int):
        self.tokens = tokens
        self.k = 0
        self.end = text_len

    def peek(self) -> Token | None:
        return self.tokens[self.k] if self.k < len(self.tokens) else None

    def take(self, kind: str | None = None) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of expression", self.end)
        if kind is not None and tok.kind != kind:
            raise ParseError(f"expected {kind}, found {tok.text!r}", tok.offset)
        self.k += 1
        return tok

    def expr(self, min_bp: int = 0):
        left = self.prefix()
        while True:
            tok = self.peek()
            if tok is None or tok.kind not in _INFIX:
                return left
            bp, op = _INFIX[tok.kind]
            if bp <= min_bp:
                return left
            self.k += 1
            right = self.expr(bp - 1 if op == "^" else bp)
            left = BinOp(op, left, right, tok.offset)

    def prefix(self):
        tok = self.take()
        if tok.kind == "num":
            return Num(tok.value, tok.offset)
        if tok.kind == "minus":
            return Neg(self.expr(_UNARY_BP), tok.offset)
        if tok.kind == "lparen":
            inner = self.expr()
            self.take("rparen")
            return inner
        if tok.kind == "ident":
            nxt = self.peek()
            if nxt is not None and nxt.kind == "lparen":
                return self.call(tok)
            if tok.text in FUNCTIONS or tok.text in ACCESSORS:
                raise ParseError(f"{tok.text!r} must be called with arguments", tok.offset)
            if tok.text in RESERVED:
                return Var(tok.text, tok.offset)
            return Param(tok.text, tok.offset)
        raise ParseError(f"unexpected {tok.text!r}", tok.offset)

    def call(self, name: Token):
        self.take("lparen")
        args = []
        if self.peek() is not None and self.peek().kind == "rparen":
            self.k += 1
        else:
            while True:
                args.append(self.expr())
                tok = self.take()
                if tok.kind == "rparen":
                    break
                if tok.kind != "comma":
                    raise ParseError(f"expected ',' or ')', found {tok.text!r}", tok.offset)
        fn = name.text
        if fn in FUNCTIONS:
            want = 1
        elif fn in ACCESSORS:
            want = ACCESSORS[fn]
        else:
            raise ParseError(f"unknown function {fn!r}", name.offset)
        if len(args) != want:
            raise ParseError(f"{fn} requires {want} argument{'s' if want > 1 else ''}, got {len(args)}", name.offset)
        if fn in FUNCTIONS:
            return Call(fn, args[0], name.offset)
        if fn == "z":
            return StateRef(_index(args[0], fn), name.offset)
        if fn == "zd":
            if free_vars(args[1]) - {v for v in free_vars(args[1]) if v.kind == "param"}:
                raise ParseError("zd lag must be a constant expression", args[1].pos)
            return DelayRef(_index(args[0], fn), args[1], name.offset)
        return NonlocalRef(_index(args[0], fn), _index(args[1], fn), name.offset)


def _index(node, fn: str) -> int:
    if not isinstance(node, Num) or node.value != int(node.value) or node.value < 1:
        raise ParseError(f"{fn} index must be a positive integer literal", node.pos)
    return int(node.value)


def parse(source, slot: str = "any"):
    """Parse text (or a token list from :func:`tokenize`) and check slot legality."""
    if isinstance(source, str):
        tokens, end = tokenize(source), len(source)
    else:
        tokens = list(source)
        end = tokens[-1].offset + len(tokens[-1].text) if tokens else 0
    if not tokens:
        raise ParseError("empty expression", 0)
    p = _Parser(tokens, end)
    ast = p.expr()
    if p.peek() is not None:
        tok = p.peek()
        raise ParseError(f"unexpected {tok.text!r}", tok.offset)
    check_slot(ast, slot)
    return ast


# ------------------------------------------------------------------- analysis

@dataclass(frozen=True, order=True)
class FreeVar:
    kind: str  # "var", "param", "z", "zd", "yq"
    name: str = ""
    index: tuple = ()

    def __str__(self):
        if self.kind in ("var", "param"):
            return f"{'param ' if self.kind == 'param' else ''}{self.name}"
        if self.kind == "zd":
            return f"zd({self.index[0]},·)"
        return f"{self.kind}({','.join(map(str, self.index))})"


def _children(node):
    if isinstance(node, (Neg,)):
        return (node.operand,)
    if isinstance(node, BinOp):
        return (node.left, node.right)
    if isinstance(node, Call):
        return (node.arg,)
    if isinstance(node, DelayRef):
        return (node.lag,)
    return ()


def walk(node):
    yield node
    for c in _children(node):
        yield from walk(c)


def free_vars(ast) -> set[FreeVar]:
    out = set()
    for node in walk(ast):
        if isinstance(node, Var):
            out.add(FreeVar("var", node.name))
        elif isinstance(node, Param):
            out.add(FreeVar("param", node.name))
        elif isinstance(node, StateRef):
            out.add(FreeVar("z", "z", (node.index,)))
        elif isinstance(node, DelayRef):
            out.add(FreeVar("zd", "zd", (node.index,)))
        elif isinstance(node, NonlocalRef):
            out.add(FreeVar("yq", "yq", (node.source, node.index)))
    return out


def check_slot(ast, slot: str) -> None:
    allowed = SLOTS[slot]
    for node in walk(ast):
        if isinstance(node, Var) and node.name not in allowed:
            raise ParseError(f"variable {node.name!r} is not allowed in slot {slot}", node.pos)
        for cls, name in ((StateRef, "z"), (DelayRef, "zd"), (NonlocalRef, "yq")):
            if isinstance(node, cls) and name not in allowed:
                raise ParseError(f"{name}(...) is not allowed in slot {slot}", node.pos)


def evaluate(ast, env: Mapping) -> float:
    """Evaluate with ``env`` binding reserved variables, parameters and the
    accessors ``z`` (sequence), ``zd`` (callable ``(i, d)``) and ``yq``
    (callable ``(j, i)``)."""
    return ast.evaluate(env)


def to_source(ast) -> str:
    """Text that parses back to the same tree."""
    if isinstance(ast, Num):
        return repr(float(ast.value))
    if isinstance(ast, (Var, Param)):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{to_source(ast.operand)})"
    if isinstance(ast, BinOp):
        return f"({to_source(ast.left)} {ast.op} {to_source(ast.right)})"
    if isinstance(ast, Call):
        return f"{ast.func}({to_source(ast.arg)})"
    if isinstance(ast, StateRef):
        return f"z({ast.index})"
    if isinstance(ast, DelayRef):
        return f"zd({ast.index}, {to_source(ast.lag)})"
    if isinstance(ast, NonlocalRef):
        return f"yq({ast.source}, {ast.index})"
    raise TypeError(f"not an expression node: {ast!r}")


def compile_expr(text, slot: str = "any", params: Mapping | None = None) -> Callable[..., float]:
    """Parse ``text`` and return ``fn(**bindings)`` evaluating it with ``params`` merged in."""
    ast = parse(str(text), slot)
    base = dict(params or {})

    def fn(**bindings):
        return ast.evaluate({**base, **bindings})

    fn.ast = ast
    return fn
