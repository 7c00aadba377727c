"""Expression trees: evaluation, exact differentiation, simplification,
complexity accounting and grammar constraint checking.

Trees are immutable. A tree is built from four node kinds: ``Constant``,
``Variable``, ``Unary`` and ``Binary``. Two custom operators are supported
besides the usual ones:

* ``ln_x(x) = -ln(1 - x)``, defined for ``x < 1``;
* ``pow_int(x, y) = x ** ceil(y - 0.5)``, i.e. the exponent constant is
  rounded half-down to an integer before the power is taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Mapping, Union

import numpy as np

UNARY_OPS = ("exp", "square", "cube", "ln_x")
BINARY_OPS = ("+", "*", "pow_int")

#: Any intermediate value beyond this magnitude is treated as an overflow.
VALUE_LIMIT = 1e300


class DomainError(ArithmeticError):
    """Evaluation left the operator's domain (log of a non-positive
    argument, 0 to a negative power, overflow past ``VALUE_LIMIT``)."""


class UnknownOperator(ValueError):
    """An operator in the tree is absent from the grammar."""


class UnsupportedNode(ValueError):
    """The tree contains a node the requested operation cannot handle."""


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"constant must be finite, got {self.value!r}")


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise UnknownOperator(f"unknown unary operator {self.op!r}")


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise UnknownOperator(f"unknown binary operator {self.op!r}")


Expr = Union[Constant, Variable, Unary, Binary]


def round_exponent(y: float) -> int:
    """Integer exponent used by ``pow_int``: ceil(y - 0.5), so half
    integers round down (2.5 -> 2, -2.5 -> -3)."""
    return int(math.ceil(y - 0.5))


def nodes(expr: Expr) -> Iterator[Expr]:
    """Yield every node of the tree, parent before children."""
    stack = [expr]
    while stack:
        e = stack.pop()
        yield e
        if isinstance(e, Unary):
            stack.append(e.child)
        elif isinstance(e, Binary):
            stack.append(e.right)
            stack.append(e.left)


def depth(expr: Expr) -> int:
    """Number of nodes on the longest root-to-leaf path (a leaf has depth 1)."""
    if isinstance(expr, Unary):
        return 1 + depth(expr.child)
    if isinstance(expr, Binary):
        return 1 + max(depth(expr.left), depth(expr.right))
    return 1


def variables_of(expr: Expr) -> set[str]:
    return {n.name for n in nodes(expr) if isinstance(n, Variable)}


# ---------------------------------------------------------------------------
# Evaluation


def _guard(v, op: str):
    if isinstance(v, float):
        # nan fails both comparisons
        if not (-VALUE_LIMIT <= v <= VALUE_LIMIT):
            raise DomainError(f"non-finite or overflowing value in {op!r}")
        return v
    m = np.abs(v).max() if getattr(v, "size", 1) else 0.0
    if not (m <= VALUE_LIMIT):
        raise DomainError(f"non-finite or overflowing value in {op!r}")
    return v


def evaluate(expr: Expr, bindings: Mapping[str, float]):
    """Evaluate the tree at the given variable bindings.

    Bindings may hold floats or numpy arrays of a common shape; the result
    has the broadcast shape. Raises :class:`DomainError` whenever any
    element leaves an operator's domain or overflows.
    """
    if isinstance(expr, Constant):
        return expr.value
    if isinstance(expr, Variable):
        try:
            return bindings[expr.name]
        except KeyError:
            raise KeyError(f"unbound variable {expr.name!r}") from None
    with np.errstate(all="ignore"):
        if isinstance(expr, Unary):
            c = evaluate(expr.child, bindings)
            if expr.op == "exp":
                return _guard(np.exp(c), "exp")
            if expr.op == "square":
                return _guard(np.multiply(c, c), "square")
            if expr.op == "cube":
                return _guard(np.multiply(np.multiply(c, c), c), "cube")
            # ln_x(x) = -ln(1 - x), only defined left of 1
            high = c if isinstance(c, float) else np.max(c)
            if high >= 1.0:
                raise DomainError("ln_x argument must be < 1")
            return _guard(-np.log1p(-c), "ln_x")
        left = evaluate(expr.left, bindings)
        right = evaluate(expr.right, bindings)
        if expr.op == "+":
            return _guard(np.add(left, right), "+")
        if expr.op == "*":
            return _guard(np.multiply(left, right), "*")
        if isinstance(expr.right, Constant):
            n = round_exponent(expr.right.value)
        else:
            rv = np.asarray(right)
            if rv.ndim != 0:
                raise UnsupportedNode("pow_int exponent must be a scalar")
            n = round_exponent(float(rv))
        if n < 0 and np.any(np.asarray(left) == 0.0):
            raise DomainError("0 raised to a negative integer power")
        return _guard(np.power(left, n), "pow_int")


def evaluate_masked(expr: Expr, bindings: Mapping[str, float]):
    """Array evaluation that flags bad points instead of raising.

    Returns ``(values, ok)`` where ``ok`` is a boolean mask of the points
    whose value is finite and within range. Used for grid sweeps where a
    few singular cells must not abort the whole surface.
    """
    shape = np.broadcast_shapes(*(np.shape(v) for v in bindings.values())) if bindings else ()

    def rec(e):
        if isinstance(e, Constant):
            return np.broadcast_to(e.value, shape).astype(float)
        if isinstance(e, Variable):
            return np.broadcast_to(np.asarray(bindings[e.name], dtype=float), shape)
        with np.errstate(all="ignore"):
            if isinstance(e, Unary):
                c = rec(e.child)
                if e.op == "exp":
                    return np.exp(c)
                if e.op == "square":
                    return c * c
                if e.op == "cube":
                    return c * c * c
                return np.where(c < 1.0, -np.log1p(-np.minimum(c, 1.0 - 1e-300)), np.nan)
            left, right = rec(e.left), rec(e.right)
            if e.op == "+":
                return left + right
            if e.op == "*":
                return left * right
            if not isinstance(e.right, Constant):
                raise UnsupportedNode("pow_int exponent must be a constant")
            n = round_exponent(e.right.value)
            out = np.power(left, n)
            if n < 0:
                out = np.where(left == 0.0, np.nan, out)
            return out

    values = rec(expr)
    ok = np.isfinite(values) & (np.abs(values) <= VALUE_LIMIT)
    return values, ok


# ---------------------------------------------------------------------------
# Differentiation

# Lean constructors keep derivative trees small without a full simplify pass.


def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Constant) and (v is None or e.value == v)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Constant(a.value + b.value)
    return Binary("+", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Constant(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Constant(a.value * b.value)
    return Binary("*", a, b)


def _pow(base: Expr, n: int) -> Expr:
    if n == 0:
        return Constant(1.0)
    if n == 1:
        return base
    return Binary("pow_int", base, Constant(float(n)))


def differentiate(expr: Expr, var: str) -> Expr:
    """Exact partial derivative of the tree with respect to ``var``.

    ``pow_int`` exponents must be constants (the power rule needs a fixed
    integer); anything else raises :class:`UnsupportedNode`.
    """
    if isinstance(expr, Constant):
        return Constant(0.0)
    if isinstance(expr, Variable):
        return Constant(1.0 if expr.name == var else 0.0)
    if isinstance(expr, Unary):
        du = differentiate(expr.child, var)
        u = expr.child
        if expr.op == "exp":
            return _mul(du, Unary("exp", u))
        if expr.op == "square":
            return _mul(Constant(2.0), _mul(u, du))
        if expr.op == "cube":
            return _mul(Constant(3.0), _mul(Unary("square", u), du))
        # d/dx -ln(1-u) = u' / (1-u) = u' * pow_int(1 + (-1)*u, -1)
        one_minus = _add(Constant(1.0), _mul(Constant(-1.0), u))
        return _mul(du, _pow(one_minus, -1))
    if expr.op == "+":
        return _add(differentiate(expr.left, var), differentiate(expr.right, var))
    if expr.op == "*":
        return _add(
            _mul(differentiate(expr.left, var), expr.right),
            _mul(expr.left, differentiate(expr.right, var)),
        )
    if not isinstance(expr.right, Constant):
        raise UnsupportedNode("pow_int exponent must be a constant")
    n = round_exponent(expr.right.value)
    du = differentiate(expr.left, var)
    return _mul(_mul(Constant(float(n)), _pow(expr.left, n - 1)), du)


@lru_cache(maxsize=65536)
def cached_derivative(expr: Expr, var: str) -> Expr:
    """Memoised ``simplify(differentiate(...))``; trees are hashable."""
    return simplify(differentiate(expr, var))


# ---------------------------------------------------------------------------
# Simplification


def _flatten(op: str, e: Expr) -> list[Expr]:
    if isinstance(e, Binary) and e.op == op:
        return _flatten(op, e.left) + _flatten(op, e.right)
    return [e]


def _try_fold(e: Expr) -> Expr:
    """Replace an all-constant subtree by its value when it evaluates."""
    if all(not isinstance(n, Variable) for n in nodes(e)):
        try:
            return Constant(float(evaluate(e, {})))
        except (DomainError, ValueError, OverflowError):
            return e
    return e


def _gather(op: str, node: Expr) -> tuple[float, Expr | None]:
    """Split an associative ``+``/``*`` chain into (folded constant, rest)."""
    const = 0.0 if op == "+" else 1.0
    rest: list[Expr] = []
    for t in _flatten(op, node):
        if isinstance(t, Constant):
            const = const + t.value if op == "+" else const * t.value
        else:
            rest.append(t)
    if not rest:
        return const, None
    out = rest[0]
    for t in rest[1:]:
        out = Binary(op, out, t)
    return const, out


def _rebuild(op: str, const: float, rest: Expr | None) -> Expr:
    identity = 0.0 if op == "+" else 1.0
    if rest is None:
        return Constant(const)
    if op == "*" and const == 0.0:
        return Constant(0.0)
    if const == identity:
        return rest
    # constants print first in products, last in sums
    return Binary("*", Constant(const), rest) if op == "*" else Binary("+", rest, Constant(const))


def simplify(expr: Expr) -> Expr:
    """Value-preserving cleanup: constant folding, identity elimination
    (``x*1``, ``x*0``, ``x+0``, ``pow_int(x, 1)``), gathering of constants
    across associative ``+``/``*`` chains, and extraction of constant
    factors out of ``exp``/``square``/``cube``/``pow_int`` so equivalent
    parameterizations share one canonical shape. Idempotent.
    """
    if isinstance(expr, (Constant, Variable)):
        return expr
    if isinstance(expr, Unary):
        child = simplify(expr.child)
        if expr.op == "exp" and isinstance(child, Binary) and child.op == "+":
            # exp(x + c) == e^c * exp(x)
            c, rest = _gather("+", child)
            if rest is not None and c != 0.0 and math.isfinite(c):
                factor = math.exp(c) if c < 700 else math.inf
                if math.isfinite(factor) and factor != 0.0:
                    return _rebuild("*", factor, Unary("exp", rest))
        if expr.op == "ln_x" and isinstance(child, Binary) and child.op == "+":
            # -ln(1 - x - c) == -ln(1 - x/(1-c)) - ln(1-c)
            c, rest = _gather("+", child)
            if rest is not None and c != 0.0 and c < 1.0 and math.isfinite(c):
                inner = simplify(_rebuild("*", 1.0 / (1.0 - c), rest))
                return _rebuild("+", -math.log(1.0 - c), Unary("ln_x", inner))
        if expr.op in ("square", "cube") and isinstance(child, Binary) and child.op == "*":
            # square(c * x) == c^2 * square(x), likewise for cube
            c, rest = _gather("*", child)
            if rest is not None and c != 1.0:
                k = 2 if expr.op == "square" else 3
                factor = c**k
                if math.isfinite(factor) and factor != 0.0:
                    return _rebuild("*", factor, Unary(expr.op, rest))
        return _try_fold(Unary(expr.op, child))
    left = simplify(expr.left)
    right = simplify(expr.right)
    if expr.op == "pow_int":
        if not isinstance(right, Constant):
            return Binary("pow_int", left, right)
        n = round_exponent(right.value)
        if n == 0:
            return Constant(1.0)
        if n == 1:
            return left
        if isinstance(left, Binary) and left.op == "*":
            # (c * x)^n == c^n * x^n
            c, rest = _gather("*", left)
            if rest is not None and c != 1.0:
                try:
                    factor = c**n
                except OverflowError:
                    factor = math.inf
                if math.isfinite(factor) and factor != 0.0:
                    return _rebuild("*", factor, Binary("pow_int", rest, Constant(float(n))))
        return _try_fold(Binary("pow_int", left, Constant(float(n))))
    node = Binary(expr.op, left, right)
    const, rest = _gather(expr.op, node)
    if not math.isfinite(const):
        return node  # fold would overflow; leave the tree alone
    if expr.op == "+" and rest is not None:
        rest = _combine_like_terms(rest)
    return _rebuild(expr.op, const, rest)


def _combine_like_terms(chain: Expr) -> Expr | None:
    """Merge additive terms sharing the same non-constant part, so
    ``0.2*x + x`` becomes ``1.2*x``. Returns None when everything cancels."""
    order: list[Expr] = []
    coeffs: dict[Expr, float] = {}
    for t in _flatten("+", chain):
        if isinstance(t, Binary) and t.op == "*":
            c, core = _gather("*", t)
            if core is None:
                c, core = 1.0, t
        else:
            c, core = 1.0, t
        if core not in coeffs:
            order.append(core)
        coeffs[core] = coeffs.get(core, 0.0) + c
    if any(not math.isfinite(c) for c in coeffs.values()):
        return chain
    terms = [_rebuild("*", coeffs[core], core) for core in order if coeffs[core] != 0.0]
    if not terms:
        return None
    out = terms[0]
    for t in terms[1:]:
        out = Binary("+", out, t)
    return out


# ---------------------------------------------------------------------------
# Grammar


@dataclass(frozen=True)
class Grammar:
    """Operator vocabulary and structural limits for candidate trees.

    ``nesting`` maps an operator to the maximum number of occurrences of
    each constrained operator allowed anywhere in its subtree.
    ``exponent_range`` is the closed integer interval for ``pow_int``
    exponents (0 is never sampled). ``allow_negative_constants`` controls
    whether mutation may produce constants below zero.
    """

    variables: tuple[str, ...]
    unary_ops: frozenset = frozenset()
    binary_ops: frozenset = frozenset(("+", "*"))
    op_weights: Mapping[str, int] = field(default_factory=dict)
    variable_weight: int = 1
    constant_weight: int = 1
    max_complexity: int = 100
    max_depth: int = 10
    nesting: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    exponent_range: tuple[int, int] = (-30, 30)
    allow_negative_constants: bool = False

    def __post_init__(self):
        for op, w in self.op_weights.items():
            if not (isinstance(w, int) and w > 0):
                raise ValueError(f"complexity weight for {op!r} must be a positive integer")
        if self.variable_weight <= 0 or self.constant_weight <= 0:
            raise ValueError("variable and constant weights must be positive")

    def weight(self, op: str) -> int:
        try:
            return self.op_weights[op]
        except KeyError:
            raise UnknownOperator(f"operator {op!r} has no complexity weight") from None


def invariant_grammar() -> Grammar:
    """Search space over the shifted invariants u1, u2: polynomial,
    exponential and saturating-log building blocks, non-negative constants."""
    return Grammar(
        variables=("u1", "u2"),
        unary_ops=frozenset(("exp", "square", "cube", "ln_x")),
        binary_ops=frozenset(("+", "*")),
        op_weights={"exp": 2, "ln_x": 2, "square": 3, "cube": 3, "*": 1, "+": 1},
        variable_weight=1,
        constant_weight=1,
        max_complexity=100,
        max_depth=10,
        nesting={
            "ln_x": {"exp": 0, "ln_x": 0, "square": 1, "cube": 1},
            "exp": {"exp": 0, "ln_x": 0, "square": 1, "cube": 1},
            "square": {"exp": 0, "ln_x": 0, "square": 0, "cube": 0},
            "cube": {"exp": 0, "ln_x": 0, "square": 0, "cube": 0},
        },
        allow_negative_constants=False,
    )


def stretch_grammar() -> Grammar:
    """Search space for per-direction stretch terms: signed integer powers
    with positive coefficients."""
    return Grammar(
        variables=("l",),
        unary_ops=frozenset(),
        binary_ops=frozenset(("+", "*", "pow_int")),
        op_weights={"pow_int": 2, "*": 2, "+": 1},
        variable_weight=2,
        constant_weight=1,
        max_complexity=100,
        max_depth=10,
        nesting={"pow_int": {"pow_int": 0}},
        exponent_range=(-30, 30),
        allow_negative_constants=False,
    )


def strain_grammar() -> Grammar:
    """Search space for per-direction strain polynomials; coefficients may
    be negative, admissibility is enforced through the shear-modulus check."""
    return Grammar(
        variables=("e",),
        unary_ops=frozenset(),
        binary_ops=frozenset(("+", "*", "pow_int")),
        op_weights={"pow_int": 2, "*": 2, "+": 1},
        variable_weight=2,
        constant_weight=1,
        max_complexity=100,
        max_depth=10,
        nesting={"pow_int": {"pow_int": 0}},
        exponent_range=(-30, 30),
        allow_negative_constants=True,
    )


def complexity(expr: Expr, grammar: Grammar) -> int:
    """Weighted node count: each node contributes the grammar's weight for
    its kind. Raises :class:`UnknownOperator` for foreign operators."""
    total = 0
    for n in nodes(expr):
        if isinstance(n, Constant):
            total += grammar.constant_weight
        elif isinstance(n, Variable):
            total += grammar.variable_weight
        else:
            total += grammar.weight(n.op)
    return total


@dataclass(frozen=True)
class ConstraintVerdict:
    ok: bool
    violation: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def _count_ops(expr: Expr, op: str) -> int:
    return sum(1 for n in nodes(expr) if isinstance(n, (Unary, Binary)) and n.op == op)


def check_constraints(expr: Expr, grammar: Grammar) -> ConstraintVerdict:
    """Check a tree against the grammar; the verdict carries the first
    violated rule instead of raising."""
    d = depth(expr)
    if d > grammar.max_depth:
        return ConstraintVerdict(False, f"depth {d} exceeds max {grammar.max_depth}")
    try:
        c = complexity(expr, grammar)
    except UnknownOperator as exc:
        return ConstraintVerdict(False, str(exc))
    if c > grammar.max_complexity:
        return ConstraintVerdict(False, f"complexity {c} exceeds max {grammar.max_complexity}")
    for n in nodes(expr):
        if isinstance(n, Variable) and n.name not in grammar.variables:
            return ConstraintVerdict(False, f"variable {n.name!r} not in grammar")
        if isinstance(n, Unary) and n.op not in grammar.unary_ops:
            return ConstraintVerdict(False, f"unary operator {n.op!r} not in grammar")
        if isinstance(n, Binary):
            if n.op not in grammar.binary_ops:
                return ConstraintVerdict(False, f"binary operator {n.op!r} not in grammar")
            if n.op == "pow_int":
                if not isinstance(n.right, Constant):
                    return ConstraintVerdict(False, "pow_int exponent must be a constant")
                k = round_exponent(n.right.value)
                lo, hi = grammar.exponent_range
                if not (lo <= k <= hi):
                    return ConstraintVerdict(False, f"pow_int exponent {k} outside [{lo}, {hi}]")
        if isinstance(n, (Unary, Binary)) and n.op in grammar.nesting:
            limits = grammar.nesting[n.op]
            children = [n.child] if isinstance(n, Unary) else [n.left, n.right]
            for inner, bound in limits.items():
                count = sum(_count_ops(ch, inner) for ch in children)
                if count > bound:
                    return ConstraintVerdict(
                        False, f"{n.op!r} allows {bound} nested {inner!r}, found {count}"
                    )
    return ConstraintVerdict(True)


# ---------------------------------------------------------------------------
# Structural canonicalisation (skeletons and monomial views)


def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by subtrees."""
    if isinstance(expr, Variable):
        return mapping.get(expr.name, expr)
    if isinstance(expr, Unary):
        return Unary(expr.op, substitute(expr.child, mapping))
    if isinstance(expr, Binary):
        return Binary(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))
    return expr


PARAM_PREFIX = "_p"


def parameterize(expr: Expr) -> tuple[Expr, tuple[float, ...]]:
    """Split a tree into its shape and its tunable constants.

    Every constant except ``pow_int`` exponents (those are structural) is
    replaced by a slot variable ``_p0, _p1, ...`` in pre-order; the
    returned values restore the original via :func:`apply_parameters`.
    """
    values: list[float] = []

    def rec(e: Expr) -> Expr:
        if isinstance(e, Constant):
            values.append(e.value)
            return Variable(f"{PARAM_PREFIX}{len(values) - 1}")
        if isinstance(e, Variable):
            return e
        if isinstance(e, Unary):
            return Unary(e.op, rec(e.child))
        if e.op == "pow_int" and isinstance(e.right, Constant):
            return Binary(e.op, rec(e.left), e.right)
        return Binary(e.op, rec(e.left), rec(e.right))

    shape = rec(expr)
    return shape, tuple(values)


def apply_parameters(expr: Expr, values) -> Expr:
    """Inverse of :func:`parameterize` for any value vector."""

    def rec(e: Expr) -> Expr:
        if isinstance(e, Variable) and e.name.startswith(PARAM_PREFIX):
            return Constant(float(values[int(e.name[len(PARAM_PREFIX):])]))
        if isinstance(e, Unary):
            return Unary(e.op, rec(e.child))
        if isinstance(e, Binary):
            return Binary(e.op, rec(e.left), rec(e.right))
        return e

    return rec(expr)


def constant_slots(expr: Expr) -> tuple[float, ...]:
    """The tunable constants of a tree, in :func:`parameterize` order."""
    return parameterize(expr)[1]


def with_constants(expr: Expr, values) -> Expr:
    """The tree with its tunable constants replaced by ``values``."""

    it = iter(values)

    def rec(e: Expr) -> Expr:
        if isinstance(e, Constant):
            return Constant(float(next(it)))
        if isinstance(e, Variable):
            return e
        if isinstance(e, Unary):
            return Unary(e.op, rec(e.child))
        if e.op == "pow_int" and isinstance(e.right, Constant):
            return Binary(e.op, rec(e.left), e.right)
        return Binary(e.op, rec(e.left), rec(e.right))

    return rec(expr)


@lru_cache(maxsize=16384)
def _shape_derivative(shape: Expr, var: str) -> Expr:
    return simplify(differentiate(shape, var))


def fast_derivative(expr: Expr, var: str) -> Expr:
    """Derivative computed on the constant-free shape and re-instantiated.

    Equivalent in value to ``simplify(differentiate(expr, var))`` but the
    symbolic work is shared across all trees of the same shape, which is
    what the constant optimizer and constant mutations produce."""
    shape, values = parameterize(expr)
    return apply_parameters(_shape_derivative(shape, var), values)


def monomials(expr: Expr) -> list[tuple[float, tuple[tuple[str, int], ...]]] | None:
    """View a polynomial tree as a list of ``(coefficient, powers)`` terms,
    powers being sorted ``(variable, exponent)`` pairs. Returns None when
    the tree is not a sum of products of powers (contains exp/ln_x, or a
    pow_int over a non-variable base).
    """
    expanded = _expand(simplify(expr))
    if expanded is None:
        return None
    out: dict[tuple[tuple[str, int], ...], float] = {}
    for coeff, powers in expanded:
        key = tuple(sorted((v, p) for v, p in powers.items() if p != 0))
        out[key] = out.get(key, 0.0) + coeff
    return [(c, k) for k, c in sorted(out.items()) if c != 0.0] or [(0.0, ())]


def _expand(e: Expr) -> list[tuple[float, dict[str, int]]] | None:
    if isinstance(e, Constant):
        return [(e.value, {})]
    if isinstance(e, Variable):
        return [(1.0, {e.name: 1})]
    if isinstance(e, Unary):
        if e.op in ("square", "cube"):
            inner = _expand(e.child)
            if inner is None or len(inner) > 32:
                return None
            k = 2 if e.op == "square" else 3
            acc = [(1.0, {})]
            for _ in range(k):
                acc = _expand_product(acc, inner)
            return acc
        return None
    if e.op == "+":
        l, r = _expand(e.left), _expand(e.right)
        return None if l is None or r is None else l + r
    if e.op == "*":
        l, r = _expand(e.left), _expand(e.right)
        return None if l is None or r is None else _expand_product(l, r)
    if not isinstance(e.right, Constant) or not isinstance(e.left, Variable):
        return None
    n = round_exponent(e.right.value)
    return [(1.0, {e.left.name: n})]


def _expand_product(a, b):
    out = []
    for ca, pa in a:
        for cb, pb in b:
            powers = dict(pa)
            for v, p in pb.items():
                powers[v] = powers.get(v, 0) + p
            out.append((ca * cb, powers))
    return out


def skeleton(expr: Expr) -> str:
    """Canonical shape of a tree with constants blanked out.

    Used to decide whether two models share a mathematical format: the
    tree is simplified, constant multipliers are distributed over sums,
    additive constant terms (pure offsets) are dropped, repeated
    multiplicands and the square/cube shorthands are folded into integer
    powers, and commutative operands are sorted. Constant placeholders
    keep no value, except ``pow_int`` exponents which stay visible.
    """
    return _skel(simplify(expr), top=True)


def _skel(e: Expr, top: bool = False) -> str:
    if isinstance(e, Binary) and e.op == "*":
        # distribute a constant over a sum so c*(a+b) and c*a+c*b agree
        if isinstance(e.left, Constant) and isinstance(e.right, Binary) and e.right.op == "+":
            return _skel(
                Binary("+", Binary("*", e.left, e.right.left), Binary("*", e.left, e.right.right)),
                top,
            )
        if isinstance(e.right, Constant) and isinstance(e.left, Binary) and e.left.op == "+":
            return _skel(
                Binary("+", Binary("*", e.right, e.left.left), Binary("*", e.right, e.left.right)),
                top,
            )
    if isinstance(e, Constant):
        return "C"
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Unary):
        if e.op == "square":
            return f"pow({_skel(e.child)},2)"
        if e.op == "cube":
            return f"pow({_skel(e.child)},3)"
        return f"{e.op}({_skel(e.child)})"
    if e.op == "pow_int":
        return f"pow({_skel(e.left)},{round_exponent(e.right.value)})"
    parts = [_skel(t) for t in _flatten(e.op, e)]
    if e.op == "+":
        if top:
            # additive constants are pure energy offsets with zero stress
            parts = [p for p in parts if p != "C"] or ["C"]
        if len(parts) == 1:
            return parts[0]
        return "add(" + ",".join(sorted(parts)) + ")"
    # fold repeated multiplicands into powers, drop constant factors
    factors = [p for p in parts if p != "C"]
    if not factors:
        return "C"
    counted: dict[str, int] = {}
    for p in factors:
        base, exp = _as_power(p)
        counted[base] = counted.get(base, 0) + exp
    merged = [base if k == 1 else f"pow({base},{k})" for base, k in counted.items() if k != 0]
    if not merged:
        return "C"
    return "mul(" + ",".join(sorted(merged)) + ")" if len(merged) > 1 else merged[0]


def _as_power(p: str) -> tuple[str, int]:
    if p.startswith("pow(") and p.endswith(")"):
        inner = p[4:-1]
        base, _, exp = inner.rpartition(",")
        try:
            return base, int(exp)
        except ValueError:
            pass
    return p, 1


def form_match(a: Expr, b: Expr) -> bool:
    """True when two trees share the same mathematical format.

    Polynomial trees are compared through their expanded power signatures
    (so factored and expanded forms agree); anything else falls back to
    the skeleton comparison. Constant offsets never count.
    """
    ma, mb = monomials(a), monomials(b)
    if ma is not None and mb is not None:
        return {p for _, p in ma if p} == {p for _, p in mb if p}
    return skeleton(a) == skeleton(b)
