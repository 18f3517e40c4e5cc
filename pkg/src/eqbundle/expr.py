"""Arithmetic expression DSL for defining systems in config files.

Grammar (frozen, also documented in the CLI README):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

Variables are x1..xn and l1..lm for the declared dimensions; functions are
sin, cos, exp, log, sqrt, abs; numbers are decimal literals with optional
fraction and exponent.  '^' binds tighter than unary minus, so -x1^2 is
-(x1^2).  Every failure carries a byte offset into the source.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ExprDomainError, ExprError, InputError
from .systems import Domain, SystemSpec, first_integral_violation

FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class Const:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    kind: str          # "x" or "l"
    index: int         # 0-based
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    child: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ExprAst:
    """A parsed expression together with its declared dimensions."""

    root: object
    n: int
    m: int
    source: str = field(default="", compare=False)


@dataclass(frozen=True)
class _Token:
    kind: str    # "number" | "ident" | "op" | "end"
    text: str
    pos: int


def _tokenize(source: str) -> list:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            bad = len(source) - len(stripped)
            raise ExprError(f"unexpected character {source[bad]!r}", bad)
        if match.lastgroup == "number":
            tokens.append(_Token("number", match.group("number"), match.start("number")))
        elif match.lastgroup == "ident":
            tokens.append(_Token("ident", match.group("ident"), match.start("ident")))
        else:
            tokens.append(_Token("op", match.group("op"), match.start("op")))
        pos = match.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


_VAR_RE = re.compile(r"^([xl])([1-9][0-9]*)$")


class _Parser:
    def __init__(self, source: str, n: int, m: int):
        self.source = source
        self.n = n
        self.m = m
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            raise ExprError(f"expected {text!r}", tok.pos)
        return self.next()

    def parse(self):
        root = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprError(f"unexpected trailing input {tok.text!r}", tok.pos)
        return root

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            tok = self.next()
            node = Binary(tok.text, node, self.term(), pos=tok.pos)
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            tok = self.next()
            node = Binary(tok.text, node, self.unary(), pos=tok.pos)
        return node

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.next()
            return Unary("-", self.unary(), pos=tok.pos)
        return self.power()

    def power(self):
        node = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.next()
            node = Binary("^", node, self.unary(), pos=tok.pos)
        return node

    def atom(self):
        tok = self.next()
        if tok.kind == "number":
            return Const(float(tok.text), pos=tok.pos)
        if tok.kind == "ident":
            if self.peek().kind == "op" and self.peek().text == "(":
                return self.call(tok)
            return self.variable(tok)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if tok.kind == "end":
            raise ExprError("unexpected end of input", tok.pos)
        raise ExprError(f"unexpected token {tok.text!r}", tok.pos)

    def call(self, name: _Token):
        if name.text not in FUNCTIONS:
            raise ExprError(f"unknown function {name.text!r}", name.pos)
        self.expect_op("(")
        args = [self.expr()]
        while self.peek().kind == "op" and self.peek().text == ",":
            self.next()
            args.append(self.expr())
        self.expect_op(")")
        if len(args) != 1:
            raise ExprError(
                f"function {name.text!r} takes 1 argument, got {len(args)}", name.pos
            )
        return Call(name.text, tuple(args), pos=name.pos)

    def variable(self, tok: _Token):
        match = _VAR_RE.match(tok.text)
        if match is None:
            raise ExprError(
                f"unknown identifier {tok.text!r} (expected x1..x{self.n}, "
                f"l1..l{self.m}, or a function name)",
                tok.pos,
            )
        kind, idx = match.group(1), int(match.group(2))
        limit = self.n if kind == "x" else self.m
        if idx > limit:
            raise ExprError(
                f"variable {tok.text!r} out of range (max {kind}{limit})", tok.pos
            )
        return Var(tok.text, kind, idx - 1, pos=tok.pos)


def parse(source: str, n: int, m: int) -> ExprAst:
    """Parse one expression for a system with n states and m parameters."""
    if not isinstance(source, str) or not source.strip():
        raise InputError("expression source must be a non-empty string")
    if n < 1 or m < 1:
        raise InputError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    return ExprAst(root=_Parser(source, n, m).parse(), n=n, m=m, source=source)


def _check_value(value: float, pos: int, what: str) -> float:
    if not math.isfinite(value):
        raise ExprDomainError(f"{what} produced a non-finite value", pos)
    return value


def _eval_node(node, lam, x) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return float(x[node.index] if node.kind == "x" else lam[node.index])
    if isinstance(node, Unary):
        return -_eval_node(node.child, lam, x)
    if isinstance(node, Binary):
        a = _eval_node(node.left, lam, x)
        b = _eval_node(node.right, lam, x)
        if node.op == "+":
            return _check_value(a + b, node.pos, "addition")
        if node.op == "-":
            return _check_value(a - b, node.pos, "subtraction")
        if node.op == "*":
            return _check_value(a * b, node.pos, "multiplication")
        if node.op == "/":
            if b == 0.0:
                raise ExprDomainError("division by zero", node.pos)
            return _check_value(a / b, node.pos, "division")
        # "^"
        if a < 0.0 and b != math.floor(b):
            raise ExprDomainError(
                "non-integer power of a negative base", node.pos
            )
        if a == 0.0 and b < 0.0:
            raise ExprDomainError("zero raised to a negative power", node.pos)
        try:
            return _check_value(math.pow(a, b), node.pos, "power")
        except OverflowError:
            raise ExprDomainError("power overflow", node.pos) from None
    if isinstance(node, Call):
        arg = _eval_node(node.args[0], lam, x)
        if node.fn == "log" and arg <= 0.0:
            raise ExprDomainError("log of a non-positive value", node.pos)
        if node.fn == "sqrt" and arg < 0.0:
            raise ExprDomainError("sqrt of a negative value", node.pos)
        try:
            return _check_value(FUNCTIONS[node.fn](arg), node.pos, node.fn)
        except (OverflowError, ValueError):
            raise ExprDomainError(f"{node.fn} domain violation", node.pos) from None
    raise TypeError(f"not an AST node: {node!r}")


def eval_ast(ast: ExprAst, lam, x) -> float:
    """Evaluate a parsed expression at (lam, x)."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != ast.n or lam.size != ast.m:
        raise InputError(
            f"dimension mismatch: expression declared n={ast.n}, m={ast.m}; "
            f"got x of length {x.size}, lambda of length {lam.size}"
        )
    return _eval_node(ast.root, lam, x)


def to_source(node) -> str:
    """Canonical fully parenthesized form; reparsing gives an equal AST."""
    if isinstance(node, ExprAst):
        return to_source(node.root)
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        return f"(-{to_source(node.child)})"
    if isinstance(node, Binary):
        return f"({to_source(node.left)}{node.op}{to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.fn}({to_source(node.args[0])})"
    raise TypeError(f"not an AST node: {node!r}")


def build_system_from_config(decl: dict) -> SystemSpec:
    """Build a SystemSpec from a DSL declaration.

    Required keys: n, m, k, f (n expression strings), h (k expression
    strings), domain_box ((n, 2) array-like).  Optional: name,
    parameter_box ((m, 2), default [0.25, 4] per coordinate),
    identity_tolerance (default 1e-8), identity_samples (default 200),
    identity_seed (default 0).

    The declared h must actually be first integrals: the system is
    accepted only when the sampled max |f . grad h_l| stays below
    identity_tolerance, otherwise construction fails naming the worst
    sample.  Derivatives of DSL systems come from finite differences.
    """
    if not isinstance(decl, dict):
        raise InputError("system declaration must be a mapping")
    missing = [key for key in ("n", "m", "k", "f", "h", "domain_box") if key not in decl]
    if missing:
        raise InputError(f"system declaration missing keys: {missing}")
    known = {
        "n", "m", "k", "f", "h", "domain_box", "name", "parameter_box",
        "identity_tolerance", "identity_samples", "identity_seed",
    }
    unknown = sorted(set(decl) - known)
    if unknown:
        raise InputError(f"unknown system declaration keys: {unknown}")

    n, m, k = int(decl["n"]), int(decl["m"]), int(decl["k"])
    f_sources = list(decl["f"])
    h_sources = list(decl["h"])
    if len(f_sources) != n:
        raise InputError(f"expected {n} f-expressions, got {len(f_sources)}")
    if len(h_sources) != k:
        raise InputError(f"expected {k} h-expressions, got {len(h_sources)}")

    f_asts = [parse(src, n, m) for src in f_sources]
    h_asts = [parse(src, n, m) for src in h_sources]

    def f(lam, x):
        return np.array([_eval_node(ast.root, lam, x) for ast in f_asts])

    def h(x):
        lam_dummy = np.zeros(m)
        return np.array([_eval_node(ast.root, lam_dummy, x) for ast in h_asts])

    for ast in h_asts:
        if _uses_parameter(ast.root):
            raise InputError(
                "first integrals must not depend on parameters "
                f"(found one in {ast.source!r})"
            )

    domain = Domain(box=np.asarray(decl["domain_box"], dtype=float))
    parameter_box = np.asarray(
        decl.get("parameter_box", [[0.25, 4.0]] * m), dtype=float
    )
    sys = SystemSpec(
        name=str(decl.get("name", "expr-system")),
        n=n, m=m, k=k, f=f, h=h,
        domain=domain, parameter_box=parameter_box,
        metadata={"f": f_sources, "h": h_sources},
    )

    tolerance = float(decl.get("identity_tolerance", 1e-8))
    samples = int(decl.get("identity_samples", 200))
    seed = int(decl.get("identity_seed", 0))
    worst = first_integral_violation(sys, samples=samples, seed=seed)
    if worst.max_residual > tolerance:
        raise InputError(
            "declared h is not a first integral: max |f . grad h| = "
            f"{worst.max_residual:.3e} > {tolerance:.1e} at lambda = "
            f"{worst.lam.tolist()}, x = {worst.x.tolist()} "
            f"(integral index {worst.integral_index})"
        )
    return sys


def _uses_parameter(node) -> bool:
    if isinstance(node, Var):
        return node.kind == "l"
    if isinstance(node, Unary):
        return _uses_parameter(node.child)
    if isinstance(node, Binary):
        return _uses_parameter(node.left) or _uses_parameter(node.right)
    if isinstance(node, Call):
        return any(_uses_parameter(a) for a in node.args)
    return False
