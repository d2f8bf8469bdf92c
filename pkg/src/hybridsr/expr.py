"""Expressions as pre-order token traversals.

A traversal is a plain ``tuple`` of token ids drawn from a :class:`TokenLibrary`.
Flat tuples keep the genetic operators cheap (slicing) and make traversals
hashable, so they double as cache keys.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import special

Traversal = tuple  # tuple[int, ...]

BINARY = "binary"
UNARY = "unary"
VARIABLE = "variable"
CONST = "const"
LITERAL = "literal"

CONST_NAME = "const"
EMPTY = -1  # parent/sibling marker used by the policy


def _cube(a):
    return a * a * a


def _expneg(a):
    return np.exp(-a)


def _harmonic(a):
    # H(x) = digamma(x + 1) + Euler-Mascheroni; exact partial sums at integers
    return special.digamma(a + 1.0) + np.euler_gamma


# name -> (arity, numpy implementation)
OPERATORS = {
    "add": (2, np.add),
    "sub": (2, np.subtract),
    "mul": (2, np.multiply),
    "div": (2, np.divide),
    "pow": (2, np.power),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tan": (1, np.tan),
    "tanh": (1, np.tanh),
    "sinh": (1, np.sinh),
    "cosh": (1, np.cosh),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "n2": (1, np.square),
    "n3": (1, _cube),
    "neg": (1, np.negative),
    "inv": (1, np.reciprocal),
    "expneg": (1, _expneg),
    "harmonic": (1, _harmonic),
}

INFIX_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
TRIG_NAMES = frozenset({"sin", "cos", "tan"})
INVERSE_NAMES = {
    "exp": "log",
    "log": "exp",
    "sqrt": "n2",
    "n2": "sqrt",
    "neg": "neg",
    "inv": "inv",
}

BASE_OPERATORS = ("add", "sub", "mul", "div", "sin", "cos", "exp", "log")

_VARIABLE_RE = re.compile(r"x([1-9][0-9]*)$")
_VARIABLE_ALIASES = {"x": "x1", "y": "x2", "z": "x3"}


def literal_name(value: float) -> str:
    """Canonical token name for a numeric literal."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _is_number(name: str) -> bool:
    try:
        float(name)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class Token:
    id: int
    name: str
    kind: str
    arity: int


class TokenLibrary:
    """Ordered token alphabet.

    Ids are positions in ``tokens``. :meth:`extend` only ever appends, so a
    traversal valid in a library stays valid (same ids) in any extension of it.
    """

    def __init__(self, names: Iterable[str]):
        tokens = []
        seen = set()
        for name in names:
            if name in seen:
                raise ValueError(f"duplicate token name {name!r}")
            seen.add(name)
            tokens.append(_make_token(len(tokens), name))
        if not any(tok.arity == 0 for tok in tokens):
            raise ValueError("library needs at least one terminal token")
        self.tokens: tuple[Token, ...] = tuple(tokens)
        self.names = tuple(tok.name for tok in tokens)
        self.index = {tok.name: tok.id for tok in tokens}
        self.arities = tuple(tok.arity for tok in tokens)
        self.arity_array = np.array(self.arities, dtype=np.int64)

        variables = sorted(
            (int(_VARIABLE_RE.match(t.name).group(1)), t.id) for t in tokens if t.kind == VARIABLE
        )
        self.n_variables = len(variables)
        if [v for v, _ in variables] != list(range(1, self.n_variables + 1)):
            raise ValueError("variable tokens must be x1..xn without gaps")
        self.has_const = CONST_NAME in self.index

        self.terminal_ids = tuple(t.id for t in tokens if t.arity == 0)
        self.unary_ids = tuple(t.id for t in tokens if t.arity == 1)
        self.binary_ids = tuple(t.id for t in tokens if t.arity == 2)
        self.operator_ids = self.unary_ids + self.binary_ids
        self.variable_ids = tuple(t.id for t in tokens if t.kind == VARIABLE)
        self.const_id = self.index.get(CONST_NAME, EMPTY)
        self.trig_ids = frozenset(t.id for t in tokens if t.name in TRIG_NAMES)
        self.inverse = {
            self.index[a]: self.index[b]
            for a, b in INVERSE_NAMES.items()
            if a in self.index and b in self.index
        }
        self.by_arity = {0: self.terminal_ids, 1: self.unary_ids, 2: self.binary_ids}

        # per-id evaluation plan: (arity, payload)
        plan = []
        for tok in tokens:
            if tok.kind == VARIABLE:
                plan.append((0, int(tok.name[1:]) - 1))
            elif tok.kind == LITERAL:
                plan.append((0, float(tok.name)))
            elif tok.kind == CONST:
                plan.append((0, None))
            else:
                plan.append((tok.arity, OPERATORS[tok.name][1]))
        self._plan = tuple(plan)

    @classmethod
    def default(cls, n_variables: int = 1, extra: Sequence[str] = ()) -> "TokenLibrary":
        """The base library {+,-,*,/,sin,cos,exp,log} plus x1..xn and extras."""
        names = list(BASE_OPERATORS) + [f"x{i}" for i in range(1, n_variables + 1)]
        names += [n for n in extra if n not in names]
        return cls(names)

    def extend(self, names: Iterable[str]) -> "TokenLibrary":
        new = [n for n in names if n not in self.index]
        if not new:
            return self
        return TokenLibrary(list(self.names) + new)

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, name: str) -> int:
        return self.index[name]

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TokenLibrary) and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"TokenLibrary({list(self.names)!r})"

    def encode(self, names: Iterable[str]) -> Traversal:
        return tuple(self.index[n] for n in names)

    def decode(self, t: Sequence[int]) -> list[str]:
        return [self.names[i] for i in t]


def _make_token(tid: int, name: str) -> Token:
    if name in OPERATORS:
        arity = OPERATORS[name][0]
        return Token(tid, name, BINARY if arity == 2 else UNARY, arity)
    if _VARIABLE_RE.match(name):
        return Token(tid, name, VARIABLE, 0)
    if name == CONST_NAME:
        return Token(tid, name, CONST, 0)
    if _is_number(name):
        return Token(tid, name, LITERAL, 0)
    raise ValueError(f"unknown token name {name!r}")


# ---------------------------------------------------------------------------
# structure


def deficit_trace(t: Sequence[int], lib: TokenLibrary) -> list[int]:
    """Open operand slots after each prefix of ``t``."""
    arities = lib.arities
    d = 1
    out = []
    for tok in t:
        d += arities[tok] - 1
        out.append(d)
    return out


def is_complete(t: Sequence[int], lib: TokenLibrary) -> bool:
    """True iff ``t`` is the pre-order traversal of exactly one tree."""
    if not t:
        return False
    arities = lib.arities
    d = 1
    for tok in t:
        if d <= 0:
            return False
        d += arities[tok] - 1
    return d == 0


def subtree_end(t: Sequence[int], arities: Sequence[int], start: int) -> int:
    """Index one past the subtree rooted at ``t[start]``."""
    need = 1
    j = start
    while need:
        need += arities[t[j]] - 1
        j += 1
    return j


def n_constants(t: Sequence[int], lib: TokenLibrary) -> int:
    cid = lib.const_id
    return sum(1 for tok in t if tok == cid) if cid != EMPTY else 0


def to_tree(t: Sequence[int], lib: TokenLibrary):
    """Nested ``(token_id, [children])`` form of a complete traversal."""
    if not is_complete(t, lib):
        raise ValueError("incomplete traversal")
    pos = 0

    def build():
        nonlocal pos
        tok = t[pos]
        pos += 1
        return (tok, [build() for _ in range(lib.arities[tok])])

    return build()


def from_tree(tree) -> Traversal:
    out = []
    stack = [tree]
    while stack:
        tok, children = stack.pop()
        out.append(tok)
        stack.extend(reversed(children))
    return tuple(out)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalOutput:
    values: np.ndarray
    finite: bool


def evaluate(t: Sequence[int], lib: TokenLibrary, X, consts: Sequence[float] = ()) -> EvalOutput:
    """Evaluate a traversal row-wise on ``X`` (n_rows x n_vars).

    Arithmetic is unprotected; NaN/inf propagate and clear ``finite``.
    """
    if not is_complete(t, lib):
        raise ValueError("cannot evaluate an incomplete traversal")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] < lib.n_variables:
        raise ValueError(f"X has {X.shape[1]} columns, library needs {lib.n_variables}")
    n_const = n_constants(t, lib)
    if len(consts) != n_const:
        raise ValueError(f"traversal has {n_const} constant placeholders, got {len(consts)} values")
    columns = [X[:, j] for j in range(X.shape[1])]
    values = evaluate_columns(t, lib, columns, X.shape[0], consts)
    return EvalOutput(values, bool(np.all(np.isfinite(values))))


def evaluate_columns(t, lib, columns, n_rows, consts=()) -> np.ndarray:
    """Unchecked evaluation core; ``columns`` holds one 1-D array per variable."""
    plan = lib._plan
    stack = []
    ci = len(consts)
    with np.errstate(all="ignore"):
        for tok in reversed(t):
            arity, payload = plan[tok]
            if arity == 2:
                a = stack.pop()
                stack.append(payload(a, stack.pop()))
            elif arity == 1:
                stack.append(payload(stack.pop()))
            elif payload is None:
                ci -= 1
                stack.append(np.full(n_rows, float(consts[ci])))
            elif isinstance(payload, int):
                stack.append(columns[payload])
            else:
                stack.append(np.full(n_rows, payload))
    out = stack[0]
    if len(t) == 1:
        out = np.array(out, dtype=np.float64)
    return out


# ---------------------------------------------------------------------------
# infix I/O


def format_infix(t: Sequence[int], lib: TokenLibrary, consts: Sequence[float] | None = None) -> str:
    """Fully parenthesised infix form; ``consts`` substitutes placeholders."""
    if not is_complete(t, lib):
        raise ValueError("cannot format an incomplete traversal")
    names = lib.names
    stack: list[str] = []
    ci = len(consts) if consts is not None else 0
    for tok in reversed(t):
        name = names[tok]
        arity = lib.arities[tok]
        if arity == 2:
            a = stack.pop()
            b = stack.pop()
            if name in INFIX_SYMBOLS:
                stack.append(f"({a} {INFIX_SYMBOLS[name]} {b})")
            else:
                stack.append(f"{name}({a}, {b})")
        elif arity == 1:
            stack.append(f"{name}({stack.pop()})")
        elif name == CONST_NAME and consts is not None:
            ci -= 1
            stack.append(_format_number(consts[ci]))
        elif _is_number(name):
            stack.append(_format_number(float(name)))
        elif name == "x1" and lib.n_variables == 1:
            stack.append("x")
        else:
            stack.append(name)
    return stack[0]


def _format_number(v: float) -> str:
    s = literal_name(v)
    return f"({s})" if s.startswith("-") else s


class InfixSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownSymbolError(ValueError):
    def __init__(self, symbol: str):
        super().__init__(f"unknown symbol {symbol!r}")
        self.symbol = symbol


_TOKEN_RE = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(\S))")


def _tokenize(s: str):
    out = []
    pos = 0
    while pos < len(s):
        m = _TOKEN_RE.match(s, pos)
        if m is None:  # only trailing whitespace left
            break
        num, ident, sym = m.groups()
        start = m.start(m.lastindex)
        if num is not None:
            out.append(("num", num, start))
        elif ident is not None:
            out.append(("id", ident, start))
        else:
            if sym not in "+-*/^(),":
                raise InfixSyntaxError(f"unexpected character {sym!r}", start)
            out.append(("op", sym, start))
        pos = m.end()
    out.append(("end", "", len(s)))
    return out


class _Parser:
    """Recursive descent over ``+ - * / ^``, unary minus and calls.

    Produces a small AST: ("num", v) | ("var", name) | ("call", name, args).
    """

    def __init__(self, s: str):
        self.toks = _tokenize(s)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise InfixSyntaxError(f"expected {value!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise InfixSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("call", "add" if op == "+" else "sub", [node, self.term()])
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("call", "mul" if op == "*" else "div", [node, self.unary()])
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            child = self.unary()
            if child[0] == "num":
                return ("num", -child[1])
            return ("call", "neg", [child])
        if self.peek()[0] == "op" and self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            pos = self.take()[2]
            exponent = self.unary()
            return _expand_power(base, exponent, pos)
        return base

    def atom(self):
        kind, value, pos = self.take()
        if kind == "num":
            return ("num", float(value))
        if kind == "id":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take(",")
                    args.append(self.expr())
                self.take(")")
                if value not in OPERATORS:
                    raise UnknownSymbolError(value)
                if OPERATORS[value][0] != len(args):
                    raise InfixSyntaxError(f"{value} takes {OPERATORS[value][0]} argument(s)", pos)
                return ("call", value, args)
            return ("var", _VARIABLE_ALIASES.get(value, value))
        if kind == "op" and value == "(":
            node = self.expr()
            self.take(")")
            return node
        raise InfixSyntaxError("unexpected end of input" if kind == "end" else f"unexpected {value!r}", pos)


def _constant_value(node):
    if node[0] == "num":
        return node[1]
    if node[0] == "var":
        return None
    args = [_constant_value(a) for a in node[2]]
    if any(a is None for a in args):
        return None
    with np.errstate(all="ignore"):
        return float(OPERATORS[node[1]][1](*[np.float64(a) for a in args]))


def _expand_power(base, exponent, pos):
    value = _constant_value(exponent)
    if value is None or not math.isfinite(value):
        return ("call", "pow", [base, exponent])
    if value.is_integer():
        n = int(value)
        if n == 0:
            return ("num", 1.0)
        node = base
        for _ in range(abs(n) - 1):
            node = ("call", "mul", [node, base])
        if n < 0:
            node = ("call", "div", [("num", 1.0), node])
        return node
    return ("call", "pow", [base, ("num", value)])


def _ast_names(node, out):
    kind = node[0]
    if kind == "num":
        out.append(literal_name(node[1]))
    elif kind == "var":
        out.append(node[1])
    else:
        out.append(node[1])
        for a in node[2]:
            _ast_names(a, out)
    return out


def parse_infix(s: str, lib: TokenLibrary) -> Traversal:
    """Parse an infix string into a traversal over ``lib``.

    ``^`` with an integer exponent expands to repeated multiplication. Names
    missing from ``lib`` raise :class:`UnknownSymbolError`.
    """
    names = _ast_names(_Parser(s).parse(), [])
    missing = [n for n in names if n not in lib.index]
    if missing:
        raise UnknownSymbolError(missing[0])
    return tuple(lib.index[n] for n in names)


def parse_infix_extended(s: str, lib: TokenLibrary) -> tuple[TokenLibrary, Traversal]:
    """Like :func:`parse_infix`, appending any missing literals/operators to ``lib``."""
    names = _ast_names(_Parser(s).parse(), [])
    for n in names:
        if n not in lib.index:
            try:
                _make_token(0, n)
            except ValueError:
                raise UnknownSymbolError(n) from None
    ext = lib.extend(dict.fromkeys(names))
    return ext, tuple(ext.index[n] for n in names)
