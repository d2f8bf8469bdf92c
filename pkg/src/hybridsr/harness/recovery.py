"""Symbolic-recovery oracle.

The verdict comes from a numeric screen: candidate and truth must agree to
1e-10 (absolute near zero, relative elsewhere) at 1000 points drawn from
the training domain widened by 10% on each side. Points where either side is
non-finite are skipped, which confines the screen to the functions' common
domain of definition. A sympy simplification of the difference runs as a
second, informational stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import sympy

from ..expr import TokenLibrary, Traversal, evaluate_columns, to_tree

log = logging.getLogger(__name__)

SCREEN_POINTS = 1000
MIN_VALID = 500
TOLERANCE = 1e-10
WIDEN = 0.10
SCREEN_SEED = 20240607


@dataclass(frozen=True)
class Verdict:
    recovered: bool
    n_valid: int
    max_error: float
    symbolic: bool | None = None

    def __bool__(self) -> bool:
        return self.recovered


def _screen_points(domain: Sequence[tuple[float, float]], widen: float) -> list[np.ndarray]:
    rng = np.random.default_rng(SCREEN_SEED)
    cols = []
    for lo, hi in domain:
        pad = widen * (hi - lo)
        cols.append(rng.uniform(lo - pad, hi + pad, size=SCREEN_POINTS))
    return cols


def _compare(candidate, cand_lib, cand_consts, truth, truth_lib, columns) -> tuple[int, float, bool]:
    a = evaluate_columns(candidate, cand_lib, columns, SCREEN_POINTS, cand_consts)
    b = evaluate_columns(truth, truth_lib, columns, SCREEN_POINTS, ())
    ok = np.isfinite(a) & np.isfinite(b)
    n_valid = int(ok.sum())
    if n_valid == 0:
        return 0, float("inf"), False
    a, b = a[ok], b[ok]
    with np.errstate(over="ignore", invalid="ignore"):
        err = np.abs(a - b)
        scaled = err / np.maximum(1.0, np.abs(b))
    worst = float(np.max(scaled))
    return n_valid, worst, bool(np.all(scaled <= TOLERANCE))


def numeric_screen(
    candidate: Traversal,
    truth: Traversal,
    domain: Sequence[tuple[float, float]],
    cand_lib: TokenLibrary,
    truth_lib: TokenLibrary | None = None,
    consts: Sequence[float] = (),
) -> Verdict:
    truth_lib = truth_lib or cand_lib
    n_vars = max(cand_lib.n_variables, truth_lib.n_variables)
    domain = list(domain)
    if len(domain) == 1 and n_vars > 1:
        domain = domain * n_vars
    if len(domain) < n_vars:
        raise ValueError("domain has fewer intervals than variables")
    n_valid, worst, ok = 0, float("inf"), False
    # fall back to the unwidened domain when the extension leaves too few points
    for widen in (WIDEN, 0.0):
        n_valid, worst, ok = _compare(candidate, cand_lib, tuple(consts), truth, truth_lib,
                                      _screen_points(domain, widen))
        if n_valid >= MIN_VALID:
            return Verdict(ok, n_valid, worst)
    return Verdict(False, n_valid, worst)


_SYMPY_UNARY = {
    "sin": sympy.sin, "cos": sympy.cos, "tan": sympy.tan, "tanh": sympy.tanh,
    "sinh": sympy.sinh, "cosh": sympy.cosh, "exp": sympy.exp, "log": sympy.log,
    "sqrt": sympy.sqrt, "n2": lambda a: a ** 2, "n3": lambda a: a ** 3,
    "neg": lambda a: -a, "inv": lambda a: 1 / a, "expneg": lambda a: sympy.exp(-a),
    "harmonic": sympy.harmonic,
}
_SYMPY_BINARY = {
    "add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b, "pow": lambda a, b: a ** b,
}


def to_sympy(t: Traversal, lib: TokenLibrary, consts: Sequence[float] = ()):
    """Sympy expression for ``t``; variables are real symbols x1..xn."""
    consts = list(consts)

    def build(node):
        tid, children = node
        tok = lib.tokens[tid]
        if tok.kind == "variable":
            return sympy.Symbol(tok.name, real=True)
        if tok.kind == "literal":
            return sympy.nsimplify(float(tok.name), rational=True)
        if tok.kind == "const":
            value = consts.pop(0)
            return sympy.Integer(int(value)) if float(value).is_integer() else sympy.Float(value)
        args = [build(c) for c in children]
        if tok.arity == 1:
            return _SYMPY_UNARY[tok.name](*args)
        return _SYMPY_BINARY[tok.name](*args)

    return build(to_tree(t, lib))


def symbolic_check(candidate, cand_lib, truth, truth_lib, consts=()) -> bool | None:
    """True when sympy reduces candidate - truth to zero, None if it errors."""
    try:
        diff = to_sympy(candidate, cand_lib, consts) - to_sympy(truth, truth_lib)
        return bool(sympy.simplify(diff) == 0)
    except Exception as exc:  # sympy raises a wide variety of errors
        log.debug("symbolic check failed: %s", exc)
        return None


def is_recovered(
    candidate: Traversal,
    truth: Traversal,
    domain: Sequence[tuple[float, float]],
    cand_lib: TokenLibrary,
    truth_lib: TokenLibrary | None = None,
    consts: Sequence[float] = (),
    symbolic: bool = False,
) -> Verdict:
    """Numeric-screen verdict, optionally annotated with the sympy check."""
    truth_lib = truth_lib or cand_lib
    verdict = numeric_screen(candidate, truth, domain, cand_lib, truth_lib, consts)
    if symbolic and verdict.recovered:
        sym = symbolic_check(candidate, cand_lib, truth, truth_lib, consts)
        log.info("numeric screen passed; symbolic check: %s", sym)
        verdict = Verdict(verdict.recovered, verdict.n_valid, verdict.max_error, sym)
    return verdict
