"""Text form for expression trees.

Grammar (infix, fully parenthesized on output)::

    sum     := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ['^' signed-integer]
    atom    := number | variable | call '(' sum ')' | '(' sum ')'
    call    := 'exp' | 'square' | 'cube' | 'ln1m'
    variable:= I1 | I2 | l | l1 | l2 | l3 | e | e1 | e2 | e3

``ln1m(x)`` is the saturating log ``-ln(1 - x)``. ``^`` builds an integer
power node; the exponent must round-trip as an integer. ``-`` and ``/``
are sugar: ``a - b`` becomes ``a + (-1)*b`` and a division requires a
constant divisor, which is folded. The spelled-out differences ``(I1-3)``
and ``(I2-3)`` denote the shifted invariants and parse to single
variables, so canonical text round-trips to the identical tree.
"""

from __future__ import annotations

from .expr import (
    Binary,
    Constant,
    Expr,
    Unary,
    Variable,
    round_exponent,
    simplify,
)

_CALLS = {"exp": "exp", "square": "square", "cube": "cube", "ln1m": "ln_x"}
_CALL_NAMES = {v: k for k, v in _CALLS.items()}
_VARIABLES = ("I1", "I2", "l1", "l2", "l3", "e1", "e2", "e3", "l", "e")
#: shifted invariants print as explicit differences
_SHIFTED = {"u1": "I1", "u2": "I2"}


class DslSyntaxError(ValueError):
    """Malformed expression text; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class NonIntegerExponent(DslSyntaxError):
    """``^`` exponent does not round-trip as an integer."""


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_CHARS = set("+-*/^()")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _TOKEN_CHARS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] in ".eE" or (text[j] in "+-" and text[j - 1] in "eE")):
                j += 1
            try:
                float(text[i:j])
            except ValueError:
                raise DslSyntaxError(f"bad number {text[i:j]!r}", i) from None
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise DslSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str):
        kind, val, at = self.next()
        if val != value:
            raise DslSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", at)

    def parse(self) -> Expr:
        e = self.sum()
        kind, val, at = self.peek()
        if kind != "end":
            raise DslSyntaxError(f"unexpected trailing {val!r}", at)
        return e

    def sum(self) -> Expr:
        left = self.term()
        while True:
            kind, val, at = self.peek()
            if val == "+":
                self.next()
                left = Binary("+", left, self.term())
            elif val == "-":
                self.next()
                right = self.term()
                folded = self._shifted_difference(left, right)
                if folded is not None:
                    left = folded
                elif isinstance(right, Constant):
                    left = Binary("+", left, Constant(-right.value))
                else:
                    left = Binary("+", left, Binary("*", Constant(-1.0), right))
            else:
                return left

    @staticmethod
    def _shifted_difference(left: Expr, right: Expr) -> Expr | None:
        if (
            isinstance(left, Variable)
            and left.name in ("I1", "I2")
            and isinstance(right, Constant)
            and right.value == 3.0
        ):
            return Variable("u1" if left.name == "I1" else "u2")
        return None

    def term(self) -> Expr:
        left = self.unary()
        while True:
            kind, val, at = self.peek()
            if val == "*":
                self.next()
                left = Binary("*", left, self.unary())
            elif val == "/":
                self.next()
                divisor = self.unary()
                if not isinstance(divisor, Constant):
                    raise DslSyntaxError("division requires a constant divisor", at)
                if divisor.value == 0.0:
                    raise DslSyntaxError("division by zero", at)
                left = Binary("*", left, Constant(1.0 / divisor.value))
            else:
                return left

    def unary(self) -> Expr:
        kind, val, at = self.peek()
        if val == "-":
            self.next()
            inner = self.unary()
            if isinstance(inner, Constant):
                return Constant(-inner.value)
            return Binary("*", Constant(-1.0), inner)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, at = self.peek()
        if val != "^":
            return base
        self.next()
        sign = 1.0
        kind, val, at = self.peek()
        if val == "-":
            self.next()
            sign = -1.0
        kind, val, at = self.next()
        if kind != "num":
            raise DslSyntaxError("exponent must be a number", at)
        y = sign * float(val)
        if y != float(round_exponent(y)) or abs(y) > 1e9:
            raise NonIntegerExponent(f"exponent {val} is not an integer", at)
        return Binary("pow_int", base, Constant(y))

    def atom(self) -> Expr:
        kind, val, at = self.next()
        if kind == "num":
            return Constant(float(val))
        if kind == "name":
            if val in _CALLS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return Unary(_CALLS[val], arg)
            if val in _VARIABLES:
                return Variable(val)
            raise DslSyntaxError(f"unknown name {val!r}", at)
        if val == "(":
            e = self.sum()
            self.expect(")")
            return e
        raise DslSyntaxError(f"unexpected {val or 'end of input'!r}", at)


def parse_expr(text: str) -> Expr:
    """Parse DSL text into an expression tree."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Printer


def format_constant(value: float) -> str:
    """Shortest decimal that round-trips the double exactly."""
    return repr(float(value))


def format_expr(expr: Expr) -> str:
    """Canonical, fully parenthesized text; ``parse_expr`` inverts it."""
    if isinstance(expr, Constant):
        return format_constant(expr.value)
    if isinstance(expr, Variable):
        if expr.name in _SHIFTED:
            return f"({_SHIFTED[expr.name]} - 3)"
        return expr.name
    if isinstance(expr, Unary):
        return f"{_CALL_NAMES[expr.op]}({format_expr(expr.child)})"
    if expr.op == "pow_int":
        n = round_exponent(expr.right.value) if isinstance(expr.right, Constant) else None
        if n is None:
            raise ValueError("cannot print pow_int with non-constant exponent")
        return f"({format_expr(expr.left)} ^ {n})"
    if expr.op == "+" and isinstance(expr.right, Constant) and expr.right.value < 0:
        return f"({format_expr(expr.left)} - {format_constant(-expr.right.value)})"
    sym = expr.op
    return f"({format_expr(expr.left)} {sym} {format_expr(expr.right)})"


def pretty_expr(expr: Expr, digits: int = 4) -> str:
    """Human-oriented rendering with constants at ``digits`` significant
    digits; not meant to round-trip."""
    if isinstance(expr, Constant):
        return f"{expr.value:.{digits}g}"
    if isinstance(expr, Variable):
        if expr.name in _SHIFTED:
            return f"[{_SHIFTED[expr.name]} - 3]"
        return expr.name
    if isinstance(expr, Unary):
        return f"{_CALL_NAMES[expr.op]}({pretty_expr(expr.child, digits)})"
    if expr.op == "pow_int":
        return f"{pretty_expr(expr.left, digits)}^{round_exponent(expr.right.value)}"
    if expr.op == "+" and isinstance(expr.right, Constant) and expr.right.value < 0:
        return f"{pretty_expr(expr.left, digits)} - {-expr.right.value:.{digits}g}"
    return f"({pretty_expr(expr.left, digits)} {expr.op} {pretty_expr(expr.right, digits)})"


def parse_canonical(text: str) -> Expr:
    """Parse then simplify; the form models are stored in."""
    return simplify(parse_expr(text))
