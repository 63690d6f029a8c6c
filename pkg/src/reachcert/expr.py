"""Exact expression DAGs for learned value functions and their residuals.

A tree is a flat, topologically ordered node table with structural sharing
(hash-consing), so repeated subterms are stored once.  Exported networks use
only {const, var, add, mul, sin}; residual assembly adds {sub, neg, cos, sqrt,
min, max, abs}.  Division is deliberately absent: nothing in the pipeline
needs it, and its absence keeps interval semantics total.

Symbolic differentiation is supported on the smooth subset (everything except
sqrt/min/max/abs), which is exactly what gradients of exported networks need.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["ExprTree", "ExprBuilder", "KINDS", "eval_points", "load_tree", "dump_tree"]

# Node kind codes.  a/b are child node ids (-1 when unused); value holds the
# constant for CONST and the variable index for VAR.
K_CONST = 0
K_VAR = 1
K_ADD = 2
K_SUB = 3
K_MUL = 4
K_NEG = 5
K_SIN = 6
K_COS = 7
K_SQRT = 8
K_MIN = 9
K_MAX = 10
K_ABS = 11

KINDS = {
    K_CONST: "const",
    K_VAR: "var",
    K_ADD: "add",
    K_SUB: "sub",
    K_MUL: "mul",
    K_NEG: "neg",
    K_SIN: "sin",
    K_COS: "cos",
    K_SQRT: "sqrt",
    K_MIN: "min",
    K_MAX: "max",
    K_ABS: "abs",
}
KIND_CODES = {v: k for k, v in KINDS.items()}

_UNARY = (K_NEG, K_SIN, K_COS, K_SQRT, K_ABS)
_BINARY = (K_ADD, K_SUB, K_MUL, K_MIN, K_MAX)
_SMOOTH = (K_CONST, K_VAR, K_ADD, K_SUB, K_MUL, K_NEG, K_SIN, K_COS)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExprTree:
    """Immutable expression DAG; nodes are topologically ordered (children first)."""

    kind: np.ndarray  # int8
    a: np.ndarray  # int32 child ids, -1 when unused
    b: np.ndarray  # int32
    value: np.ndarray  # float64 payload for const/var nodes
    output: int
    n_vars: int

    @property
    def n_nodes(self) -> int:
        return int(self.kind.size)

    def eval(self, x) -> np.ndarray:
        return eval_points(self, x)

    def to_json(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            k = int(self.kind[i])
            if k == K_CONST:
                nodes.append(["const", float(self.value[i])])
            elif k == K_VAR:
                nodes.append(["var", int(self.value[i])])
            elif k in _UNARY:
                nodes.append([KINDS[k], int(self.a[i])])
            else:
                nodes.append([KINDS[k], int(self.a[i]), int(self.b[i])])
        return {"version": FORMAT_VERSION, "n_vars": self.n_vars, "output": self.output, "nodes": nodes}

    @staticmethod
    def from_json(d: dict) -> "ExprTree":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported expression format version {d.get('version')!r}")
        b = ExprBuilder(n_vars=int(d["n_vars"]))
        ids = []
        for row in d["nodes"]:
            name = row[0]
            k = KIND_CODES[name]
            if k == K_CONST:
                ids.append(b.const(float(row[1])))
            elif k == K_VAR:
                ids.append(b.var(int(row[1])))
            elif k in _UNARY:
                ids.append(b._node(k, ids[int(row[1])], -1, 0.0))
            else:
                ids.append(b._node(k, ids[int(row[1])], ids[int(row[2])], 0.0))
        return b.freeze(ids[int(d["output"])])


class ExprBuilder:
    """Growable node table with hash-consing; freeze() yields an ExprTree."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self._kind: list[int] = []
        self._a: list[int] = []
        self._b: list[int] = []
        self._value: list[float] = []
        self._memo: dict = {}

    def _node(self, kind: int, a: int, b: int, value: float) -> int:
        key = (kind, a, b, np.float64(value).tobytes())
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        nid = len(self._kind)
        self._kind.append(kind)
        self._a.append(a)
        self._b.append(b)
        self._value.append(value)
        self._memo[key] = nid
        return nid

    # -- leaves ------------------------------------------------------------
    def const(self, v: float) -> int:
        return self._node(K_CONST, -1, -1, float(v))

    def var(self, i: int) -> int:
        if not 0 <= i < self.n_vars:
            raise ValueError(f"variable index {i} out of range for {self.n_vars} variables")
        return self._node(K_VAR, -1, -1, float(i))

    # -- operations ----------------------------------------------------------
    def add(self, x: int, y: int) -> int:
        return self._node(K_ADD, x, y, 0.0)

    def sub(self, x: int, y: int) -> int:
        return self._node(K_SUB, x, y, 0.0)

    def mul(self, x: int, y: int) -> int:
        return self._node(K_MUL, x, y, 0.0)

    def neg(self, x: int) -> int:
        return self._node(K_NEG, x, -1, 0.0)

    def sin(self, x: int) -> int:
        return self._node(K_SIN, x, -1, 0.0)

    def cos(self, x: int) -> int:
        return self._node(K_COS, x, -1, 0.0)

    def sqrt(self, x: int) -> int:
        return self._node(K_SQRT, x, -1, 0.0)

    def min(self, x: int, y: int) -> int:
        return self._node(K_MIN, x, y, 0.0)

    def max(self, x: int, y: int) -> int:
        return self._node(K_MAX, x, y, 0.0)

    def abs(self, x: int) -> int:
        return self._node(K_ABS, x, -1, 0.0)

    def dot(self, coeffs, ids) -> int:
        """Left-folded sum of coeff*node products, skipping exact zeros."""
        acc = None
        for c, nid in zip(coeffs, ids):
            c = float(c)
            if c == 0.0:
                continue
            term = nid if c == 1.0 else self.mul(self.const(c), nid)
            acc = term if acc is None else self.add(acc, term)
        return self.const(0.0) if acc is None else acc

    def affine(self, coeffs, ids, bias: float) -> int:
        s = self.dot(coeffs, ids)
        if float(bias) == 0.0:
            return s
        return self.add(s, self.const(float(bias)))

    # -- graph surgery -------------------------------------------------------
    def import_tree(self, tree: ExprTree, var_map: list[int] | None = None) -> int:
        """Copy a tree into this builder; var_map substitutes node ids for variables."""
        ids = np.empty(tree.n_nodes, dtype=np.int64)
        for i in range(tree.n_nodes):
            k = int(tree.kind[i])
            if k == K_CONST:
                ids[i] = self.const(float(tree.value[i]))
            elif k == K_VAR:
                v = int(tree.value[i])
                ids[i] = self.var(v) if var_map is None else var_map[v]
            elif k in _UNARY:
                ids[i] = self._node(k, int(ids[tree.a[i]]), -1, 0.0)
            else:
                ids[i] = self._node(k, int(ids[tree.a[i]]), int(ids[tree.b[i]]), 0.0)
        return int(ids[tree.output])

    def diff(self, root: int, var: int) -> int:
        """Derivative node of ``root`` with respect to variable ``var``.

        Defined on the smooth kind subset; raises on sqrt/min/max/abs, which
        never appear under a derivative in this pipeline.
        """
        memo: dict[int, int] = {}

        order = self._reachable(root)
        for nid in order:
            k = self._kind[nid]
            if k == K_CONST:
                memo[nid] = self.const(0.0)
            elif k == K_VAR:
                memo[nid] = self.const(1.0 if int(self._value[nid]) == var else 0.0)
            elif k == K_ADD:
                memo[nid] = self.add(memo[self._a[nid]], memo[self._b[nid]])
            elif k == K_SUB:
                memo[nid] = self.sub(memo[self._a[nid]], memo[self._b[nid]])
            elif k == K_NEG:
                memo[nid] = self.neg(memo[self._a[nid]])
            elif k == K_MUL:
                a, bb = self._a[nid], self._b[nid]
                memo[nid] = self.add(self.mul(memo[a], bb), self.mul(a, memo[bb]))
            elif k == K_SIN:
                a = self._a[nid]
                memo[nid] = self.mul(self.cos(a), memo[a])
            elif k == K_COS:
                a = self._a[nid]
                memo[nid] = self.neg(self.mul(self.sin(a), memo[a]))
            else:
                raise ValueError(f"cannot differentiate through {KINDS[k]!r}")
        return memo[root]

    def _reachable(self, root: int) -> list[int]:
        seen = set()
        order = []
        stack = [root]
        while stack:
            nid = stack.pop()
            if nid in seen:
                continue
            seen.add(nid)
            a, bb = self._a[nid], self._b[nid]
            if a >= 0:
                stack.append(a)
            if bb >= 0:
                stack.append(bb)
            order.append(nid)
        order.sort()
        return order

    def freeze(self, output: int) -> ExprTree:
        """Extract the subgraph reachable from ``output`` as an immutable tree."""
        order = self._reachable(output)
        remap = {old: new for new, old in enumerate(order)}
        n = len(order)
        kind = np.empty(n, dtype=np.int8)
        a = np.empty(n, dtype=np.int32)
        b = np.empty(n, dtype=np.int32)
        value = np.empty(n, dtype=np.float64)
        for new, old in enumerate(order):
            kind[new] = self._kind[old]
            a[new] = remap[self._a[old]] if self._a[old] >= 0 else -1
            b[new] = remap[self._b[old]] if self._b[old] >= 0 else -1
            value[new] = self._value[old]
        for arr in (kind, a, b, value):
            arr.setflags(write=False)
        return ExprTree(kind=kind, a=a, b=b, value=value, output=remap[output], n_vars=self.n_vars)


def _last_uses(tree: ExprTree) -> np.ndarray:
    """Index of the final consumer of each node (for freeing intermediates)."""
    death = np.arange(tree.n_nodes, dtype=np.int64)
    for i in range(tree.n_nodes):
        if tree.a[i] >= 0:
            death[tree.a[i]] = i
        if tree.b[i] >= 0:
            death[tree.b[i]] = i
    death[tree.output] = tree.n_nodes
    return death


_EVAL_CHUNK = 65536


def eval_points(tree: ExprTree, x) -> np.ndarray:
    """Evaluate the tree at points ``x`` of shape (..., n_vars) in float64."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, tree.n_vars)
    outs = []
    for start in range(0, pts.shape[0], _EVAL_CHUNK):
        outs.append(_eval_chunk(tree, pts[start : start + _EVAL_CHUNK]))
    out = np.concatenate(outs) if len(outs) != 1 else outs[0]
    if single:
        return out[0]
    return out.reshape(x.shape[:-1])


def _eval_chunk(tree: ExprTree, pts: np.ndarray) -> np.ndarray:
    death = _last_uses(tree)
    vals: list = [None] * tree.n_nodes
    kind, a, b, value = tree.kind, tree.a, tree.b, tree.value
    for i in range(tree.n_nodes):
        k = kind[i]
        if k == K_CONST:
            v = np.full(pts.shape[0], value[i])
        elif k == K_VAR:
            v = pts[:, int(value[i])]
        elif k == K_ADD:
            v = vals[a[i]] + vals[b[i]]
        elif k == K_SUB:
            v = vals[a[i]] - vals[b[i]]
        elif k == K_MUL:
            v = vals[a[i]] * vals[b[i]]
        elif k == K_NEG:
            v = -vals[a[i]]
        elif k == K_SIN:
            v = np.sin(vals[a[i]])
        elif k == K_COS:
            v = np.cos(vals[a[i]])
        elif k == K_SQRT:
            v = np.sqrt(vals[a[i]])
        elif k == K_MIN:
            v = np.minimum(vals[a[i]], vals[b[i]])
        elif k == K_MAX:
            v = np.maximum(vals[a[i]], vals[b[i]])
        elif k == K_ABS:
            v = np.abs(vals[a[i]])
        else:
            raise ValueError(f"unknown node kind {k}")
        vals[i] = v
        if a[i] >= 0 and death[a[i]] == i:
            vals[a[i]] = None
        if b[i] >= 0 and death[b[i]] == i and b[i] != a[i]:
            vals[b[i]] = None
    return vals[tree.output]


def dump_tree(tree: ExprTree, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(tree.to_json(), f)
        f.write("\n")


def load_tree(path: str | Path) -> ExprTree:
    with open(path) as f:
        return ExprTree.from_json(json.load(f))
