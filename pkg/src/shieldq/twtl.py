"""Parser and static analysis for the bounded time-window fragment.

Concrete syntax::

    formula := term ('.' term)*
    term    := factor ('|' factor)*
    factor  := '[' 'H' '^' INT literal ']' '^' '[' INT ',' INT ']'
             | '(' formula ')'
    literal := '!'? IDENT

``[H^d A]^[a,b]`` asks for ``A`` to be observed at ``d + 1`` consecutive
steps, starting no earlier than ``a`` and (before relaxation) finishing by
``b``.  ``.`` is concatenation, ``|`` disjunction; ``|`` binds tighter.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterator, Union


class TwtlError(ValueError):
    pass


class TwtlSyntaxError(TwtlError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class TwtlSemanticError(TwtlError):
    pass


@dataclass(frozen=True)
class Literal:
    atom: str
    negated: bool = False

    def holds(self, label: frozenset) -> bool:
        return (self.atom in label) != self.negated

    def __str__(self) -> str:
        return ("!" if self.negated else "") + self.atom


@dataclass(frozen=True)
class Hold:
    duration: int
    literal: Literal
    start: int
    end: int

    def __post_init__(self):
        if self.duration < 0 or self.start < 0 or self.end < 0:
            raise TwtlSemanticError(f"negative parameter in {self}")
        if self.start > self.end:
            raise TwtlSemanticError(f"window start {self.start} exceeds end {self.end}")
        if self.duration > self.end - self.start:
            raise TwtlSemanticError(
                f"hold of {self.duration} does not fit in window [{self.start},{self.end}]"
            )

    def __str__(self) -> str:
        return f"[H^{self.duration} {self.literal}]^[{self.start},{self.end}]"


@dataclass(frozen=True)
class Concat:
    left: "Formula"
    right: "Formula"

    def __str__(self) -> str:
        right = f"({self.right})" if isinstance(self.right, Concat) else str(self.right)
        return f"{self.left} . {right}"


@dataclass(frozen=True)
class Disjunct:
    left: "Formula"
    right: "Formula"

    def __str__(self) -> str:
        left = f"({self.left})" if isinstance(self.left, Concat) else str(self.left)
        right = (
            f"({self.right})" if isinstance(self.right, (Concat, Disjunct)) else str(self.right)
        )
        return f"{left} | {right}"


Formula = Union[Hold, Concat, Disjunct]

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|(\S))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # trailing whitespace
            break
        if m.group(1) is not None:
            tokens.append(("INT", m.group(1), m.start(1)))
        elif m.group(2) is not None:
            tokens.append(("IDENT", m.group(2), m.start(2)))
        elif m.group(3) is not None:
            ch = m.group(3)
            if ch not in "[]^(),.|!":
                raise TwtlSyntaxError(f"unexpected character {ch!r}", m.start(3))
            tokens.append((ch, ch, m.start(3)))
        pos = m.end()
    tokens.append(("EOF", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def expect(self, kind: str, value: str | None = None) -> str:
        tok_kind, tok_value, pos = self.tokens[self.i]
        if tok_kind != kind or (value is not None and tok_value != value):
            want = value if value is not None else kind
            got = tok_value or "end of input"
            raise TwtlSyntaxError(f"expected {want!r}, got {got!r}", pos)
        self.i += 1
        return tok_value

    def formula(self) -> Formula:
        node = self.term()
        while self.peek()[0] == ".":
            self.i += 1
            node = Concat(node, self.term())
        return node

    def term(self) -> Formula:
        node = self.factor()
        while self.peek()[0] == "|":
            self.i += 1
            node = Disjunct(node, self.factor())
        return node

    def factor(self) -> Formula:
        kind, _, pos = self.peek()
        if kind == "(":
            self.i += 1
            node = self.formula()
            self.expect(")")
            return node
        if kind != "[":
            raise TwtlSyntaxError("expected '[' or '('", pos)
        self.i += 1
        self.expect("IDENT", "H")
        self.expect("^")
        duration = int(self.expect("INT"))
        negated = False
        if self.peek()[0] == "!":
            self.i += 1
            negated = True
        atom = self.expect("IDENT")
        self.expect("]")
        self.expect("^")
        self.expect("[")
        start = int(self.expect("INT"))
        self.expect(",")
        end = int(self.expect("INT"))
        self.expect("]")
        return Hold(duration, Literal(atom, negated), start, end)


def parse(text: str) -> Formula:
    """Parse formula text into an AST.

    Raises TwtlSyntaxError (with ``.position``) on malformed input and
    TwtlSemanticError when a hold cannot fit in its window.
    """
    if not text or not text.strip():
        raise TwtlSyntaxError("empty formula", 0)
    parser = _Parser(text)
    node = parser.formula()
    kind, value, pos = parser.peek()
    if kind != "EOF":
        raise TwtlSyntaxError(f"unexpected token {value!r}", pos)
    return node


def to_text(ast: Formula) -> str:
    return str(ast)


def holds(ast: Formula) -> Iterator[Hold]:
    if isinstance(ast, Hold):
        yield ast
    else:
        yield from holds(ast.left)
        yield from holds(ast.right)


def time_bound(ast: Formula) -> int:
    """Maximum number of steps needed to satisfy ``ast`` (the episode length T)."""
    if isinstance(ast, Hold):
        return ast.end
    if isinstance(ast, Concat):
        return time_bound(ast.left) + time_bound(ast.right) + 1
    return max(time_bound(ast.left), time_bound(ast.right))


def relax(ast: Formula, tau: int) -> Formula:
    """Shift every window deadline by ``tau`` steps (phi(tau))."""
    if isinstance(ast, Hold):
        return replace(ast, end=ast.end + tau)
    return type(ast)(relax(ast.left, tau), relax(ast.right, tau))


def with_deadline(ast: Formula, end: int) -> Formula:
    """Copy of ``ast`` with every window deadline set to ``end``."""
    if isinstance(ast, Hold):
        return replace(ast, end=end)
    return type(ast)(with_deadline(ast.left, end), with_deadline(ast.right, end))


def literal_alphabet(ast: Formula) -> list[str]:
    return sorted({h.literal.atom for h in holds(ast)})
