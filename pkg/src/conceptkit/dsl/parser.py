"""Lexer and recursive-descent parser for ``.acon`` concept files.

The grammar is line oriented; see ``docs/grammar.ebnf`` for the full listing.
Expressions are type checked while they are parsed, so every diagnostic
carries the position of the offending token.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional

from ..concepts import (
    FORCE_MODES,
    FORCE_SYMBOLS,
    SYMMETRY_KINDS,
    AnalyticConcept,
    ConceptIdentity,
    ForceRule,
    GraspFamily,
    ParamSpec,
    PrimitiveSpec,
    StructuralTemplate,
    Symmetry,
    concept_problems,
)
from ..expr import (
    BINARY_TYPES,
    CONSTANTS,
    FUNCTIONS,
    POSE,
    SCALAR,
    VEC3,
    BinOp,
    Call,
    EvalError,
    Neg,
    Num,
    Sym,
    Vec,
    eval_expr,
)
from ..geometry import SIZE_DIMS

MAX_DEPTH = 64

KEYWORDS = {
    "concept", "group", "synopsis", "param", "attach", "primitive", "symmetry",
    "grasp", "force", "theta", "pose", "width", "dir", "end", "in", "default",
    "fixed", "size", "at",
}
RESERVED = KEYWORDS | set(FUNCTIONS) | set(CONSTANTS) | set(FORCE_SYMBOLS) | set(SIZE_DIMS)


class ParseError(Exception):
    """Syntax or static-semantics error at a 1-based (line, column)."""

    def __init__(self, line: int, column: int, message: str, expected=()):
        self.line = max(1, int(line))
        self.column = max(1, int(column))
        self.message = message or "syntax error"
        self.expected = frozenset(expected)
        super().__init__(self.format())

    def format(self, filename: Optional[str] = None) -> str:
        prefix = f"{filename}:" if filename else ""
        text = f"{prefix}{self.line}:{self.column}: {self.message}"
        if self.expected:
            text += f" (expected {', '.join(sorted(self.expected))})"
        return text


class TypeMismatch(ParseError):
    pass


class UnboundSymbol(ParseError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str  # NUM, IDENT, STR, OP, NL, EOF
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"(?:[^"\\\n]|\\["\\n])*")
  | (?P<op>[\[\](),+\-*/])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            ch = text[pos]
            if ch == '"':
                raise ParseError(line, col, "unterminated string literal")
            raise ParseError(line, col, f"unexpected character {ch!r}")
        kind = m.lastgroup
        val = m.group()
        if kind == "nl":
            tokens.append(Token("NL", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind == "num":
            tokens.append(Token("NUM", val, line, col))
        elif kind == "ident":
            tokens.append(Token("IDENT", val, line, col))
        elif kind == "str":
            tokens.append(Token("STR", val, line, col))
        elif kind == "op":
            tokens.append(Token("OP", val, line, col))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


def _unquote(tok: Token) -> str:
    body = tok.text[1:-1]
    return re.sub(r"\\(.)", lambda m: "\n" if m.group(1) == "n" else m.group(1), body)


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.depth = 0

    # -- token helpers -------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "EOF":
            self.i += 1
        return t

    def error(self, message, expected=(), tok=None, cls=ParseError):
        t = tok or self.tok
        return cls(t.line, t.col, message, expected)

    def expect_op(self, op: str) -> Token:
        if self.tok.kind == "OP" and self.tok.text == op:
            return self.advance()
        raise self.error(f"expected {op!r}, found {self._describe()}", {repr(op)})

    def expect_word(self, word: str) -> Token:
        if self.tok.kind == "IDENT" and self.tok.text == word:
            return self.advance()
        raise self.error(f"expected {word!r}, found {self._describe()}", {word})

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.tok.kind == "IDENT":
            return self.advance()
        raise self.error(f"expected {what}, found {self._describe()}", {what})

    def expect_string(self) -> str:
        if self.tok.kind == "STR":
            return _unquote(self.advance())
        raise self.error(f"expected string, found {self._describe()}", {"string"})

    def end_line(self):
        if self.tok.kind == "NL":
            self.advance()
        elif self.tok.kind != "EOF":
            raise self.error(f"expected end of line, found {self._describe()}", {"newline"})

    def skip_blank(self):
        while self.tok.kind == "NL":
            self.advance()

    def _describe(self) -> str:
        t = self.tok
        if t.kind == "EOF":
            return "end of input"
        if t.kind == "NL":
            return "end of line"
        return repr(t.text)

    # -- expressions ---------------------------------------------------------
    def expr(self, env) -> tuple:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.error("expression nested too deeply")
        try:
            node, ty = self.term(env)
            while self.tok.kind == "OP" and self.tok.text in "+-":
                op_tok = self.advance()
                rhs, rty = self.term(env)
                node, ty = self._combine(op_tok, node, ty, rhs, rty)
            return node, ty
        finally:
            self.depth -= 1

    def term(self, env):
        node, ty = self.unary(env)
        while self.tok.kind == "OP" and self.tok.text in "*/":
            op_tok = self.advance()
            rhs, rty = self.unary(env)
            node, ty = self._combine(op_tok, node, ty, rhs, rty)
        return node, ty

    def _combine(self, op_tok, lhs, lty, rhs, rty):
        key = (op_tok.text, lty, rty)
        if key not in BINARY_TYPES:
            raise self.error(f"operator {op_tok.text!r} not defined for {lty} and {rty}",
                             tok=op_tok, cls=TypeMismatch)
        return BinOp(op_tok.text, lhs, rhs), BINARY_TYPES[key]

    def unary(self, env):
        if self.tok.kind == "OP" and self.tok.text == "-":
            op_tok = self.advance()
            self.depth += 1
            if self.depth > MAX_DEPTH:
                raise self.error("expression nested too deeply")
            try:
                node, ty = self.unary(env)
            finally:
                self.depth -= 1
            if ty == POSE:
                raise self.error("cannot negate a pose", tok=op_tok, cls=TypeMismatch)
            return Neg(node), ty
        return self.primary(env)

    def primary(self, env):
        t = self.tok
        if t.kind == "NUM":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise self.error("numeric literal out of range", tok=t)
            return Num(value), SCALAR
        if t.kind == "OP" and t.text == "(":
            self.advance()
            node, ty = self.expr(env)
            self.expect_op(")")
            return node, ty
        if t.kind == "OP" and t.text == "[":
            self.advance()
            items = []
            for k in range(3):
                if k:
                    self.expect_op(",")
                start = self.tok
                node, ty = self.expr(env)
                if ty != SCALAR:
                    raise self.error("vector components must be scalars", tok=start, cls=TypeMismatch)
                items.append(node)
            self.expect_op("]")
            return Vec(tuple(items)), VEC3
        if t.kind == "IDENT":
            self.advance()
            if self.tok.kind == "OP" and self.tok.text == "(":
                return self.call(t, env)
            if t.text in CONSTANTS:
                return Sym(t.text), CONSTANTS[t.text][0]
            if t.text in FUNCTIONS:
                raise self.error(f"function {t.text!r} used without arguments", {"'('"})
            if t.text not in env:
                raise self.error(f"undeclared symbol {t.text!r}", tok=t, cls=UnboundSymbol)
            return Sym(t.text), env[t.text]
        raise self.error(f"expected expression, found {self._describe()}",
                         {"number", "identifier", "'('", "'['", "'-'"})

    def call(self, name_tok, env):
        if name_tok.text not in FUNCTIONS:
            raise self.error(f"unknown function {name_tok.text!r}", tok=name_tok, cls=UnboundSymbol)
        sig, ret, _ = FUNCTIONS[name_tok.text]
        self.expect_op("(")
        args = []
        for k, want in enumerate(sig):
            if k:
                self.expect_op(",")
            start = self.tok
            node, ty = self.expr(env)
            if ty != want:
                raise self.error(f"argument {k + 1} of {name_tok.text}() must be {want}, got {ty}",
                                 tok=start, cls=TypeMismatch)
            args.append(node)
        self.expect_op(")")
        return Call(name_tok.text, tuple(args)), ret

    def typed_expr(self, env, want):
        start = self.tok
        node, ty = self.expr(env)
        if ty != want:
            raise self.error(f"expected a {want} expression, got {ty}", tok=start, cls=TypeMismatch)
        return node

    def constant(self) -> float:
        start = self.tok
        node = self.typed_expr({}, SCALAR)
        try:
            return float(eval_expr(node, {}))
        except EvalError as exc:
            raise self.error(str(exc), tok=start) from None

    # -- declarations --------------------------------------------------------
    def param_decl(self, taken) -> ParamSpec:
        name_tok = self.expect_ident("parameter name")
        name = name_tok.text
        if name in RESERVED:
            raise self.error(f"{name!r} is reserved", tok=name_tok)
        if name in taken:
            raise self.error(f"symbol {name!r} declared twice", tok=name_tok)
        if self.tok.kind == "IDENT" and self.tok.text == "fixed":
            self.advance()
            v = self.constant()
            return ParamSpec(name, v, v, v, fixed=True)
        self.expect_word("in")
        self.expect_op("[")
        lo_tok = self.tok
        lo = self.constant()
        self.expect_op(",")
        hi = self.constant()
        self.expect_op("]")
        if not lo < hi:
            raise self.error(f"empty range for {name!r}", tok=lo_tok)
        if self.tok.kind == "IDENT" and self.tok.text == "default":
            self.advance()
            d_tok = self.tok
            default = self.constant()
            if not lo <= default <= hi:
                raise self.error(f"default of {name!r} outside its range", tok=d_tok)
        else:
            default = 0.5 * (lo + hi)
        return ParamSpec(name, lo, hi, default)

    def parse(self) -> AnalyticConcept:
        header = {}
        params, primitives, symmetries, grasps, forces = [], [], [], [], []
        attach = None
        env = {}
        self.skip_blank()
        first = self.tok
        while self.tok.kind != "EOF":
            kw = self.expect_ident("declaration keyword")
            word = kw.text
            if word in ("concept", "group"):
                if word in header:
                    raise self.error(f"duplicate {word!r} declaration", tok=kw)
                header[word] = self.expect_ident(f"{word} name").text
            elif word == "synopsis":
                if word in header:
                    raise self.error("duplicate 'synopsis' declaration", tok=kw)
                header[word] = self.expect_string()
                if not header[word].strip():
                    raise self.error("synopsis must not be empty", tok=kw)
            elif word == "param":
                p = self.param_decl(env)
                params.append(p)
                env[p.name] = SCALAR
            elif word == "attach":
                if attach is not None:
                    raise self.error("duplicate 'attach' declaration", tok=kw)
                attach = self.typed_expr(env, POSE)
            elif word == "primitive":
                primitives.append(self.primitive_decl(env))
            elif word == "symmetry":
                kind_tok = self.expect_ident("symmetry kind")
                if kind_tok.text not in SYMMETRY_KINDS:
                    raise self.error(f"unknown symmetry kind {kind_tok.text!r}", set(SYMMETRY_KINDS), tok=kind_tok)
                symmetries.append(Symmetry(kind_tok.text, self.typed_expr(env, POSE)))
            elif word == "grasp":
                grasps.append(self.grasp_block(env, kw))
                continue
            elif word == "force":
                forces.append(self.force_block(env, kw))
                continue
            else:
                raise self.error(f"unknown declaration {word!r}",
                                 {"concept", "group", "synopsis", "param", "attach",
                                  "primitive", "symmetry", "grasp", "force"}, tok=kw)
            self.end_line()
            self.skip_blank()
        for word in ("concept", "group", "synopsis"):
            if word not in header:
                raise self.error(f"missing {word!r} declaration", {word}, tok=first)
        concept = AnalyticConcept(
            ConceptIdentity(header["concept"], header["synopsis"], header["group"]),
            StructuralTemplate(tuple(params), tuple(primitives),
                               attach if attach is not None else Sym("identity"), tuple(symmetries)),
            tuple(grasps),
            tuple(forces),
        )
        problems = concept_problems(concept)
        if problems:
            raise self.error("invalid concept: " + "; ".join(problems), tok=first)
        return concept

    def primitive_decl(self, env) -> PrimitiveSpec:
        kind_tok = self.expect_ident("primitive kind")
        if kind_tok.text not in SIZE_DIMS:
            raise self.error(f"unknown primitive kind {kind_tok.text!r}", set(SIZE_DIMS), tok=kind_tok)
        self.expect_word("size")
        sizes = [self.typed_expr(env, SCALAR)]
        while self.tok.kind == "OP" and self.tok.text == ",":
            self.advance()
            sizes.append(self.typed_expr(env, SCALAR))
        if len(sizes) != SIZE_DIMS[kind_tok.text]:
            raise self.error(f"{kind_tok.text} takes {SIZE_DIMS[kind_tok.text]} size values, got {len(sizes)}",
                             tok=kind_tok, cls=TypeMismatch)
        self.expect_word("at")
        return PrimitiveSpec(kind_tok.text, tuple(sizes), self.typed_expr(env, POSE))

    def _block_end(self, kw):
        if self.tok.kind == "EOF":
            raise self.error(f"unterminated {kw.text!r} block", {"end"})

    def grasp_block(self, env, kw) -> GraspFamily:
        name = self.expect_ident("grasp family name")
        if name.text in RESERVED:
            raise self.error(f"{name.text!r} is reserved", tok=name)
        synopsis = self.expect_string()
        self.end_line()
        theta, pose, width = [], None, None
        genv = dict(env)
        while True:
            self.skip_blank()
            self._block_end(kw)
            sub = self.expect_ident("'theta', 'pose', 'width' or 'end'")
            if sub.text == "end":
                break
            if sub.text == "theta":
                p = self.param_decl(genv)
                theta.append(p)
                genv[p.name] = SCALAR
            elif sub.text == "pose" and pose is None:
                pose = self.typed_expr(genv, POSE)
            elif sub.text == "width" and width is None:
                width = self.typed_expr(genv, SCALAR)
            else:
                raise self.error(f"unexpected {sub.text!r} in grasp block",
                                 {"theta", "pose", "width", "end"}, tok=sub)
            self.end_line()
        self.end_line()
        self.skip_blank()
        if pose is None or width is None:
            raise self.error(f"grasp {name.text!r} needs both 'pose' and 'width'", tok=name)
        return GraspFamily(name.text, synopsis, tuple(theta), pose, width)

    def force_block(self, env, kw) -> ForceRule:
        name = self.expect_ident("force rule name")
        if name.text in RESERVED:
            raise self.error(f"{name.text!r} is reserved", tok=name)
        synopsis = self.expect_string()
        mode = "linear"
        if self.tok.kind == "IDENT":
            mode_tok = self.advance()
            if mode_tok.text not in FORCE_MODES:
                raise self.error(f"unknown force mode {mode_tok.text!r}", set(FORCE_MODES), tok=mode_tok)
            mode = mode_tok.text
        self.end_line()
        fenv = dict(env, **FORCE_SYMBOLS)
        direction = None
        while True:
            self.skip_blank()
            self._block_end(kw)
            sub = self.expect_ident("'dir' or 'end'")
            if sub.text == "end":
                break
            if sub.text == "dir" and direction is None:
                direction = self.typed_expr(fenv, VEC3)
            else:
                raise self.error(f"unexpected {sub.text!r} in force block", {"dir", "end"}, tok=sub)
            self.end_line()
        self.end_line()
        self.skip_blank()
        if direction is None:
            raise self.error(f"force {name.text!r} needs a 'dir'", tok=name)
        return ForceRule(name.text, synopsis, direction, mode)


def _position_of_byte(data: bytes, offset: int) -> tuple[int, int]:
    head = data[:offset]
    line = head.count(b"\n") + 1
    return line, offset - (head.rfind(b"\n") + 1) + 1


def parse_concept(text) -> AnalyticConcept:
    """Parse and validate one concept from ``.acon`` source (str or UTF-8 bytes)."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            line, col = _position_of_byte(bytes(text), exc.start)
            raise ParseError(line, col, "invalid UTF-8") from None
    if not isinstance(text, str):
        raise ParseError(1, 1, "concept source must be text")
    return _Parser(text).parse()
