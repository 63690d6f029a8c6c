"""SMT-LIB 2 export of per-cell counterexample queries, plus a reparser.

Each cell becomes a standalone script for a delta-complete solver over
nonlinear reals: bounded variable declarations, one define-fun per expression
node (topological order, shared subterms emitted once), and the assertion
that the absolute residual exceeds the cell bound.  min and abs are encoded
with ite; sin/cos/sqrt follow the transcendental vocabulary of delta-complete
backends.  Output text is a pure function of the inputs, so re-emission is
byte-identical.

The reparser evaluates an emitted script numerically, which lets tests close
the loop: emitted formula == exported expression to float precision.
"""

from __future__ import annotations

import math
from decimal import Decimal
from pathlib import Path

import numpy as np

from .certify import Cell
from .expr import (
    ExprTree,
    K_ABS,
    K_ADD,
    K_CONST,
    K_COS,
    K_MAX,
    K_MIN,
    K_MUL,
    K_NEG,
    K_SIN,
    K_SQRT,
    K_SUB,
    K_VAR,
)

__all__ = ["export_smtlib", "write_cell_files", "parse_script", "SmtModel"]


def _smt_decimal(v: float) -> str:
    """Exact positional decimal of a float's shortest round-trip repr."""
    if not math.isfinite(v):
        raise ValueError(f"cannot emit non-finite constant {v}")
    if v < 0.0 or (v == 0.0 and math.copysign(1.0, v) < 0.0):
        return f"(- {_smt_decimal(-v)})"
    s = format(Decimal(repr(v)), "f")
    if "." not in s:
        s += ".0"
    return s


def export_smtlib(expr: ExprTree, cell: Cell, rho: float, delta: float) -> str:
    """SMT-LIB 2 script asserting exists x in cell with |expr(x)| > rho."""
    lines = [
        "(set-logic QF_NRA)",
        f"(set-option :precision {_smt_decimal(delta)})",
    ]
    d = cell.box.dim
    names = [f"x{i + 1}" for i in range(d)]
    for i, name in enumerate(names):
        lines.append(f"(declare-fun {name} () Real)")
    for i, name in enumerate(names):
        lines.append(f"(assert (<= {_smt_decimal(float(cell.box.lo[i]))} {name}))")
        lines.append(f"(assert (<= {name} {_smt_decimal(float(cell.box.hi[i]))}))")

    ref = [""] * expr.n_nodes
    emitted = 0
    for i in range(expr.n_nodes):
        k = int(expr.kind[i])
        if k == K_CONST:
            ref[i] = _smt_decimal(float(expr.value[i]))
            continue
        if k == K_VAR:
            ref[i] = names[int(expr.value[i])]
            continue
        a = ref[expr.a[i]]
        b = ref[expr.b[i]] if expr.b[i] >= 0 else None
        if k == K_ADD:
            body = f"(+ {a} {b})"
        elif k == K_SUB:
            body = f"(- {a} {b})"
        elif k == K_MUL:
            body = f"(* {a} {b})"
        elif k == K_NEG:
            body = f"(- {a})"
        elif k == K_SIN:
            body = f"(sin {a})"
        elif k == K_COS:
            body = f"(cos {a})"
        elif k == K_SQRT:
            body = f"(sqrt {a})"
        elif k == K_MIN:
            body = f"(ite (<= {a} {b}) {a} {b})"
        elif k == K_MAX:
            body = f"(ite (<= {a} {b}) {b} {a})"
        elif k == K_ABS:
            body = f"(ite (<= 0.0 {a}) {a} (- {a}))"
        else:
            raise ValueError(f"unknown node kind {k}")
        name = f"n{emitted}"
        emitted += 1
        lines.append(f"(define-fun {name} () Real {body})")
        ref[i] = name

    lines.append(f"(define-fun residual () Real {ref[expr.output]})")
    lines.append(f"(define-fun query () Real (ite (<= 0.0 residual) residual (- residual)))")
    lines.append(f"(assert (> query {_smt_decimal(rho)}))")
    lines.append("(check-sat)")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"


def write_cell_files(expr: ExprTree, cells, rho: float, delta: float, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for cell in cells:
        p = out_dir / f"cell_{cell.index}.smt2"
        with open(p, "w") as f:
            f.write(export_smtlib(expr, cell, rho, delta))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Reparser


def _tokenize(text: str):
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _read_sexprs(tokens):
    out = []
    pos = 0

    def read():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while tokens[pos] != ")":
                items.append(read())
            pos += 1
            return items
        return tok

    while pos < len(tokens):
        out.append(read())
    return out


class SmtModel:
    """Numeric model of a reparsed script: variables, bounds, defined terms."""

    def __init__(self, variables, bounds, defs, assertion_rho):
        self.variables = variables
        self.bounds = bounds
        self.defs = defs
        self.assertion_rho = assertion_rho

    def eval_symbol(self, symbol: str, x: np.ndarray) -> float:
        env = {name: float(x[i]) for i, name in enumerate(self.variables)}

        def ev(node):
            # define-funs are evaluated in emission (topological) order below,
            # so recursion here only descends one definition body at a time.
            if isinstance(node, str):
                if node in env:
                    return env[node]
                return float(node)
            op = node[0]
            if op == "+":
                return ev(node[1]) + ev(node[2])
            if op == "-":
                if len(node) == 2:
                    return -ev(node[1])
                return ev(node[1]) - ev(node[2])
            if op == "*":
                return ev(node[1]) * ev(node[2])
            if op == "sin":
                return math.sin(ev(node[1]))
            if op == "cos":
                return math.cos(ev(node[1]))
            if op == "sqrt":
                return math.sqrt(ev(node[1]))
            if op == "ite":
                return ev(node[2]) if ev_bool(node[1]) else ev(node[3])
            raise ValueError(f"unknown operator {op!r}")

        def ev_bool(node):
            op = node[0]
            if op == "<=":
                return ev(node[1]) <= ev(node[2])
            if op == ">=":
                return ev(node[1]) >= ev(node[2])
            if op == "<":
                return ev(node[1]) < ev(node[2])
            if op == ">":
                return ev(node[1]) > ev(node[2])
            raise ValueError(f"unknown predicate {op!r}")

        for name, body in self.defs.items():
            env[name] = ev(body)
        if symbol not in env:
            raise ValueError(f"undefined symbol in script: {symbol!r}")
        return env[symbol]

    def eval_residual(self, x: np.ndarray) -> float:
        return self.eval_symbol("residual", np.asarray(x, dtype=np.float64))

    def eval_query(self, x: np.ndarray) -> float:
        return self.eval_symbol("query", np.asarray(x, dtype=np.float64))


def _to_number(node) -> float:
    if isinstance(node, str):
        return float(node)
    if node[0] == "-" and len(node) == 2:
        return -_to_number(node[1])
    raise ValueError(f"not a numeric literal: {node}")


def parse_script(text: str) -> SmtModel:
    """Parse an emitted script back into an evaluable model (round-trip check)."""
    forms = _read_sexprs(_tokenize(text))
    variables = []
    bounds = {}
    defs = {}
    rho = None
    for form in forms:
        head = form[0]
        if head == "declare-fun":
            variables.append(form[1])
            bounds[form[1]] = [-math.inf, math.inf]
        elif head == "define-fun":
            defs[form[1]] = form[4] if len(form) > 4 else form[-1]
        elif head == "assert":
            body = form[1]
            if body[0] == "<=" and isinstance(body[1], (str, list)) and isinstance(body[2], str) and body[2] in bounds:
                bounds[body[2]][0] = _to_number(body[1])
            elif body[0] == "<=" and isinstance(body[1], str) and body[1] in bounds:
                bounds[body[1]][1] = _to_number(body[2])
            elif body[0] == ">":
                rho = _to_number(body[2])
    if rho is None:
        raise ValueError("script has no residual-bound assertion")
    return SmtModel(variables=variables, bounds=bounds, defs=defs, assertion_rho=rho)
