"""Textual program formats.

Four surface forms of the same program:

* flattened  -- ``divide(80,4)|power(12,const_2)|...`` (parse + serialize)
* nested     -- ``sqrt(subtract(power(divide(80, 4), const_2), ...))``
                (parse + serialize; cache refs inlined, duplicated on reuse)
* pre-order  -- operator/operand token list, export only
* sequential -- fully parenthesized infix string, export only

The grammar is documented in docs/formats.md.  Parsers report the character
offset of the first error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .ir import (
    NONE,
    NONE_NAME,
    Cache,
    Const,
    NoneTok,
    Num,
    Operand,
    OperatorRegistry,
    Program,
    SubProgram,
    canonicalize,
)


class FormatKind(str, Enum):
    FLATTENED = "flattened"
    NESTED = "nested"
    PREORDER = "preorder"
    SEQUENTIAL = "sequential"


class FormatSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnsupportedOperatorError(ValueError):
    """Raised when exporting a program that the target format cannot express."""


MAX_NESTING_DEPTH = 64

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>-?\d+(?:\.\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<cache>#\d+)"
    r"|(?P<punct>[(),|]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | cache | punct | end
    text: str
    offset: int


def _lex(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise FormatSyntaxError(f"unexpected character {stripped[0]!r}", len(text) - len(stripped))
        kind = m.lastgroup or "punct"
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Cursor:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            got = repr(tok.text) if tok.kind != "end" else "end of input"
            raise FormatSyntaxError(f"expected {text!r}, got {got}", tok.offset)
        return tok


def _leaf_operand(tok: _Token) -> Operand:
    if tok.kind == "num":
        return Num(tok.text)
    if tok.kind == "cache":
        return Cache(int(tok.text[1:]))
    if tok.kind == "ident":
        return NONE if tok.text == NONE_NAME else Const(tok.text)
    raise FormatSyntaxError(f"expected an operand, got {tok.text!r}", tok.offset)


# --------------------------------------------------------------------------
# flattened


def parse_flattened(text: str) -> Program:
    """Parse ``op(arg,...)|op(arg,...)`` into a Program.

    Whitespace between tokens is ignored.  An empty/blank string is the
    empty program.
    """
    cur = _Cursor(_lex(text))
    subs: list[SubProgram] = []
    if cur.peek().kind == "end":
        return Program(())
    while True:
        subs.append(_parse_call_flat(cur))
        tok = cur.next()
        if tok.kind == "end":
            break
        if tok.text != "|":
            raise FormatSyntaxError(f"expected '|' between sub-programs, got {tok.text!r}", tok.offset)
    return Program(tuple(subs))


def _parse_call_flat(cur: _Cursor) -> SubProgram:
    tok = cur.next()
    if tok.kind != "ident":
        raise FormatSyntaxError(f"expected an operator name, got {tok.text!r}", tok.offset)
    op = tok.text
    cur.expect("(")
    args: list[Operand] = []
    if cur.peek().text != ")":
        while True:
            args.append(_leaf_operand(cur.next()))
            nxt = cur.next()
            if nxt.text == ")":
                break
            if nxt.text != ",":
                raise FormatSyntaxError(f"expected ',' or ')', got {nxt.text!r}", nxt.offset)
    else:
        cur.next()
    return SubProgram(op, tuple(args))


def _render_operand(ref: Operand) -> str:
    if isinstance(ref, Num):
        return ref.text
    if isinstance(ref, Const):
        return ref.name
    if isinstance(ref, Cache):
        return f"#{ref.slot}"
    return NONE_NAME


def serialize_flattened(program: Program) -> str:
    return "|".join(f"{sp.operator}({','.join(_render_operand(r) for r in sp.operands)})" for sp in program)


# --------------------------------------------------------------------------
# nested


def parse_nested(text: str) -> Program:
    """Parse a nested expression; sub-expressions are emitted post-order,
    so the final sub-program is the root.

    Cache tokens are rejected: a standalone nested expression has nothing
    for them to refer to.
    """
    cur = _Cursor(_lex(text))
    root = cur.peek()
    subs: list[SubProgram] = []
    ref = _parse_expr(cur, subs, depth=0)
    end = cur.next()
    if end.kind != "end":
        raise FormatSyntaxError(f"trailing input {end.text!r}", end.offset)
    if not isinstance(ref, Cache) or ref.slot != len(subs) - 1:
        raise FormatSyntaxError("nested expression must be an operator application", root.offset)
    return Program(tuple(subs))


def _parse_expr(cur: _Cursor, subs: list[SubProgram], depth: int) -> Operand:
    if depth > MAX_NESTING_DEPTH:
        raise FormatSyntaxError(f"nesting deeper than {MAX_NESTING_DEPTH}", cur.peek().offset)
    tok = cur.next()
    if tok.kind == "ident" and cur.peek().text == "(":
        cur.expect("(")
        args: list[Operand] = []
        if cur.peek().text == ")":
            cur.next()
        else:
            while True:
                args.append(_parse_expr(cur, subs, depth + 1))
                nxt = cur.next()
                if nxt.text == ")":
                    break
                if nxt.text != ",":
                    raise FormatSyntaxError(f"expected ',' or ')', got {nxt.text!r}", nxt.offset)
        subs.append(SubProgram(tok.text, tuple(args)))
        return Cache(len(subs) - 1)
    if tok.kind == "cache":
        raise FormatSyntaxError("cache references are not allowed in nested form", tok.offset)
    return _leaf_operand(tok)


def to_nested(program: Program) -> str:
    """Inline every cache reference as its defining sub-expression
    (duplicating shared results) and return the root expression.

    Sub-programs not reachable from the final one do not appear.
    """
    if not len(program):
        raise ValueError("cannot render an empty program as a nested expression")
    exprs: list[str] = []
    for sp in program:
        parts = [exprs[r.slot] if isinstance(r, Cache) else _render_operand(r) for r in sp.operands]
        exprs.append(f"{sp.operator}({', '.join(parts)})")
    return exprs[-1]


# --------------------------------------------------------------------------
# tree view shared by the export-only formats


@dataclass(frozen=True)
class _Node:
    operator: str
    children: tuple["_Node | Operand", ...]


def _build_tree(program: Program) -> _Node:
    if not len(program):
        raise ValueError("cannot export an empty program")
    nodes: list[_Node] = []
    for sp in program:
        kids = tuple(nodes[r.slot] if isinstance(r, Cache) else r for r in sp.operands)
        nodes.append(_Node(sp.operator, kids))
    return nodes[-1]


def _expand_squares(node: _Node) -> _Node:
    """Rewrite power(x, const_2) as multiply(x, x).

    The token formats spell squaring as a self-multiplication; applied
    recursively before export.
    """
    kids = tuple(_expand_squares(k) if isinstance(k, _Node) else k for k in node.children)
    if (
        node.operator == "power"
        and len(kids) == 2
        and isinstance(kids[1], Const)
        and kids[1].name == "const_2"
    ):
        return _Node("multiply", (kids[0], kids[0]))
    return _Node(node.operator, kids)


def _check_exportable(node: _Node, registry: OperatorRegistry, fmt: str) -> None:
    spec = registry.get(node.operator)
    if spec is None:
        raise UnsupportedOperatorError(f"unknown operator {node.operator!r}")
    if spec.arity.variadic:
        raise UnsupportedOperatorError(f"{fmt} form cannot express variadic operator {node.operator!r}")
    for k in node.children:
        if isinstance(k, _Node):
            _check_exportable(k, registry, fmt)


def to_preorder(program: Program, registry: OperatorRegistry) -> list[str]:
    """Export as a pre-order token list (operator before its operands).

    Fixed-arity operators only.  Unary operators are padded with a trailing
    ``none`` token so every operator row has a uniform reading.
    """
    root = _expand_squares(_build_tree(canonicalize(program)))
    _check_exportable(root, registry, "pre-order")
    out: list[str] = []

    def walk(node: _Node | Operand) -> None:
        if not isinstance(node, _Node):
            out.append(_render_operand(node))
            return
        out.append(node.operator)
        for k in node.children:
            walk(k)
        if registry[node.operator].arity.minimum == 1:
            out.append(NONE_NAME)

    walk(root)
    return out


_INFIX = {"add": "+", "subtract": "-", "multiply": "*", "divide": "/", "power": "^"}


def to_sequential(program: Program, registry: OperatorRegistry) -> str:
    """Export as a fully parenthesized infix expression.

    Binary operators use +,-,*,/,^; other fixed-arity operators render as
    function calls.  A call's sole binary argument drops its redundant
    parentheses (the call's own parentheses delimit it).
    """
    root = _expand_squares(_build_tree(canonicalize(program)))
    _check_exportable(root, registry, "sequential")

    def render(node: _Node | Operand, bare: bool) -> str:
        if not isinstance(node, _Node):
            return _render_operand(node)
        sym = _INFIX.get(node.operator)
        if sym is not None and len(node.children) == 2:
            body = f"{render(node.children[0], False)}{sym}{render(node.children[1], False)}"
            return body if bare else f"({body})"
        args = ", ".join(render(k, len(node.children) == 1) for k in node.children)
        return f"{node.operator}({args})"

    return render(root, False)


# --------------------------------------------------------------------------
# dispatch helpers for the CLI

PARSERS = {
    FormatKind.FLATTENED: parse_flattened,
    FormatKind.NESTED: parse_nested,
}


def export(program: Program, kind: FormatKind, registry: OperatorRegistry) -> str:
    if kind is FormatKind.FLATTENED:
        return serialize_flattened(program)
    if kind is FormatKind.NESTED:
        return to_nested(program)
    if kind is FormatKind.PREORDER:
        return ",".join(to_preorder(program, registry))
    return to_sequential(program, registry)
