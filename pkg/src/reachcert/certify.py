"""Per-cell counterexample search and certificate assembly.

The query per cell is existential: is there a point x in the cell with
|R(x)| > rho?  Branch-and-bound with rigorous enclosures decides it with
delta-weakened semantics:

* UNSAT is exact: every box was pruned because a sound upper bound on |R|
  over it is <= rho, so sup |R| <= rho over the cell.
* DELTA_SAT returns a concrete witness whose pointwise |R| exceeds rho-delta.
* When neither is reachable within the box budget or the width floor, the
  search raises IndeterminateError rather than guessing.

Certificates aggregate per-cell verdicts: the residual bound is the max of
the per-cell bounds over UNSAT cells, and the value-error bound eps_val is
derived by the route's conversion formula.  A single DELTA_SAT cell voids
eps_val; a single indeterminate cell marks the certificate incomplete.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Interval, ProblemSpec, SpecError, StateBox, spec_hash
from .dynamics import candidate_controls, get_system, invariance_margin
from .expr import ExprBuilder, ExprTree, eval_points
from .intervals import enclosure_hi
from .net import NetParams, export_expr
from .residuals import eps_val_from_operator, eps_val_from_slack
from .dynamics import SIMPSON_SUBINTERVALS, SIMPSON_WEIGHTS

__all__ = [
    "Cell",
    "Verdict",
    "Certificate",
    "IndeterminateError",
    "CertifyOptions",
    "partition_roi",
    "certify_cell",
    "certify_roi",
    "build_residual_tree",
    "load_certificate",
]


class IndeterminateError(RuntimeError):
    """The search exhausted its budget or precision without a sound verdict."""


@dataclass(frozen=True)
class Cell:
    """One partition element with its residual bound; tau is the forward-mode slab."""

    index: int
    box: StateBox
    rho: float
    tau: Optional[Interval] = None

    def __post_init__(self):
        if self.rho < 0.0:
            raise SpecError(f"per-cell bound must be >= 0, got {self.rho}")


@dataclass(frozen=True)
class Verdict:
    status: str  # "UNSAT" | "DELTA_SAT"
    witness: Optional[np.ndarray]
    proven_sup: Optional[float]
    boxes_explored: int


@dataclass
class CertifyOptions:
    width_floor: float = 1e-6
    budget: int = 1_000_000
    chunk: int = 4096
    use_taylor: bool = True


@dataclass
class Certificate:
    route: str
    spec_hash: str
    lam: float
    gamma: float
    delta: float
    cells: list
    verdicts: list
    bound: Optional[float]
    eps_0: Optional[float]
    eps_val: Optional[float]
    wall_time: float
    complete: bool

    @property
    def all_unsat(self) -> bool:
        return self.complete and all(v.status == "UNSAT" for v in self.verdicts)

    def witnesses(self) -> np.ndarray:
        pts = [v.witness for v in self.verdicts if v.status == "DELTA_SAT" and v.witness is not None]
        return np.array(pts) if pts else np.empty((0, self.cells[0].box.dim))

    def to_json(self) -> dict:
        cells = []
        for cell, v in zip(self.cells, self.verdicts):
            row = {
                "box": cell.box.to_json(),
                "rho": cell.rho,
                "status": v.status,
                "proven_sup": v.proven_sup,
                "boxes": v.boxes_explored,
            }
            if v.witness is not None:
                row["witness"] = [float(w) for w in v.witness]
            cells.append(row)
        doc = {
            "route": self.route,
            "spec_hash": self.spec_hash,
            "lambda": self.lam,
            "gamma": self.gamma,
            "delta": self.delta,
            "cells": cells,
            "eps_0": self.eps_0,
            "eps_val": self.eps_val,
            "wall_time": self.wall_time,
            "complete": self.complete,
        }
        doc["varsigma" if self.route == "a" else "eps_pde"] = self.bound
        return doc

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")


def load_certificate(path: str | Path) -> Certificate:
    """Load and revalidate a certificate; inconsistent derived fields are errors."""
    with open(path) as f:
        doc = json.load(f)
    route = doc["route"]
    cells = []
    verdicts = []
    for i, row in enumerate(doc["cells"]):
        cells.append(Cell(index=i, box=StateBox.from_json(row["box"]), rho=float(row["rho"])))
        w = row.get("witness")
        verdicts.append(
            Verdict(
                status=row["status"],
                witness=np.asarray(w, dtype=np.float64) if w is not None else None,
                proven_sup=row["proven_sup"],
                boxes_explored=int(row["boxes"]),
            )
        )
    cert = Certificate(
        route=route,
        spec_hash=doc["spec_hash"],
        lam=float(doc["lambda"]),
        gamma=float(doc["gamma"]),
        delta=float(doc["delta"]),
        cells=cells,
        verdicts=verdicts,
        bound=doc["varsigma" if route == "a" else "eps_pde"],
        eps_0=doc["eps_0"],
        eps_val=doc.get("eps_val"),
        wall_time=float(doc["wall_time"]),
        complete=bool(doc["complete"]),
    )
    _validate_certificate(cert)
    return cert


def _derived_fields(cert: Certificate):
    unsat_rhos = [c.rho for c, v in zip(cert.cells, cert.verdicts) if v.status == "UNSAT"]
    all_unsat = cert.complete and len(unsat_rhos) == len(cert.cells)
    bound = max(unsat_rhos) if unsat_rhos else None
    if not all_unsat:
        return bound, None
    if cert.route == "a":
        eps_val = bound / (1.0 - cert.gamma)
    else:
        eps_val = max(bound / cert.lam, cert.eps_0 or 0.0)
    return bound, eps_val


def _validate_certificate(cert: Certificate) -> None:
    bound, eps_val = _derived_fields(cert)
    if cert.bound != bound:
        raise SpecError(f"certificate bound {cert.bound!r} does not match recomputed {bound!r}")
    if eps_val is None:
        if cert.eps_val is not None:
            raise SpecError("certificate carries eps_val despite non-UNSAT cells")
    elif cert.eps_val != eps_val:
        raise SpecError(f"certificate eps_val {cert.eps_val!r} does not match recomputed {eps_val!r}")
    for cell, v in zip(cert.cells, cert.verdicts):
        if v.status == "DELTA_SAT" and v.witness is None:
            raise SpecError("DELTA_SAT cell without witness")
        if v.status == "UNSAT" and (v.proven_sup is None or v.proven_sup > cell.rho):
            raise SpecError("UNSAT cell with missing or out-of-bound proven_sup")


def partition_roi(domain: StateBox, cells_per_axis: int) -> list[Cell]:
    """Regular grid of axis-aligned cells exactly tiling ``domain``.

    Shared faces reuse identical endpoint bits (one edge array per axis).
    """
    if cells_per_axis < 1:
        raise SpecError(f"cells_per_axis must be >= 1, got {cells_per_axis}")
    d = domain.dim
    edges = []
    for i in range(d):
        e = domain.lo[i] + (domain.hi[i] - domain.lo[i]) * np.arange(cells_per_axis + 1) / cells_per_axis
        e[0] = domain.lo[i]
        e[-1] = domain.hi[i]
        edges.append(e)
    cells = []
    for flat in range(cells_per_axis**d):
        idx = np.unravel_index(flat, (cells_per_axis,) * d)
        lo = np.array([edges[i][idx[i]] for i in range(d)])
        hi = np.array([edges[i][idx[i] + 1] for i in range(d)])
        cells.append(Cell(index=flat, box=StateBox(lo, hi), rho=0.0))
    return cells


def _query_tree(rtree: ExprTree) -> ExprTree:
    b = ExprBuilder(rtree.n_vars)
    return b.freeze(b.abs(b.import_tree(rtree)))


def _dense_probe(box_lo: np.ndarray, box_hi: np.ndarray) -> np.ndarray:
    """3^d probe grid inside a box (corners, face centers, center)."""
    d = box_lo.size
    axes = [np.array([box_lo[i], box_lo[i] + 0.5 * (box_hi[i] - box_lo[i]), box_hi[i]]) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def certify_cell(
    rtree: ExprTree,
    cell: Cell,
    delta: float,
    options: CertifyOptions | None = None,
) -> Verdict:
    """Decide sup |R| <= rho over the cell by interval branch-and-bound.

    ``rtree`` is the residual expression; the absolute value is applied
    internally.  Deterministic: identical inputs explore identical boxes and
    return identical verdicts and witnesses.
    """
    if not delta > 0.0:
        raise SpecError(f"delta must be positive, got {delta}")
    opts = options or CertifyOptions()
    qtree = _query_tree(rtree)
    rho = cell.rho
    thresh = rho - delta

    stack_lo = cell.box.lo[None, :].copy()
    stack_hi = cell.box.hi[None, :].copy()
    boxes_explored = 0
    proven_sup = -math.inf

    while stack_lo.shape[0] > 0:
        take = min(opts.chunk, stack_lo.shape[0])
        blo = stack_lo[-take:]
        bhi = stack_hi[-take:]
        stack_lo = stack_lo[:-take]
        stack_hi = stack_hi[:-take]
        boxes_explored += take
        if boxes_explored > opts.budget:
            raise IndeterminateError(
                f"cell {cell.index}: box budget {opts.budget} exhausted with "
                f"{stack_lo.shape[0] + take} boxes outstanding"
            )

        mids = blo + 0.5 * (bhi - blo)
        mid_vals = eval_points(qtree, mids)
        worst = int(np.argmax(mid_vals))
        if mid_vals[worst] > thresh:
            return Verdict(
                status="DELTA_SAT",
                witness=mids[worst].copy(),
                proven_sup=None,
                boxes_explored=boxes_explored,
            )

        enc_lo, enc_hi = enclosure_hi(qtree, blo, bhi, use_taylor=opts.use_taylor)
        pruned = enc_hi <= rho
        if np.any(pruned):
            proven_sup = max(proven_sup, float(np.max(enc_hi[pruned])))
        alive = ~pruned
        if not np.any(alive):
            continue
        blo = blo[alive]
        bhi = bhi[alive]

        widths = bhi - blo
        at_floor = np.max(widths, axis=1) < opts.width_floor
        if np.any(at_floor):
            for j in np.nonzero(at_floor)[0]:
                probe = _dense_probe(blo[j], bhi[j])
                pv = eval_points(qtree, probe)
                best = int(np.argmax(pv))
                if pv[best] > thresh:
                    return Verdict(
                        status="DELTA_SAT",
                        witness=probe[best].copy(),
                        proven_sup=None,
                        boxes_explored=boxes_explored,
                    )
            raise IndeterminateError(
                f"cell {cell.index}: enclosure precision exhausted at width floor "
                f"{opts.width_floor} without a pointwise violation"
            )

        # Split the widest dimension (ties resolve to the lowest index).
        axis = np.argmax(widths, axis=1)
        mid = blo[np.arange(blo.shape[0]), axis] + 0.5 * (
            bhi[np.arange(blo.shape[0]), axis] - blo[np.arange(blo.shape[0]), axis]
        )
        left_hi = bhi.copy()
        left_hi[np.arange(blo.shape[0]), axis] = mid
        right_lo = blo.copy()
        right_lo[np.arange(blo.shape[0]), axis] = mid
        stack_lo = np.concatenate([stack_lo, blo, right_lo])
        stack_hi = np.concatenate([stack_hi, left_hi, bhi])

    return Verdict(status="UNSAT", witness=None, proven_sup=proven_sup, boxes_explored=boxes_explored)


# ---------------------------------------------------------------------------
# Residual expression assembly


def _h_expr(b: ExprBuilder, xvars: list[int], spec: ProblemSpec) -> int:
    sq = None
    for xv in xvars:
        term = b.mul(xv, xv)
        sq = term if sq is None else b.add(sq, term)
    norm = b.sqrt(sq)
    return b.min(b.const(0.0), b.mul(b.const(spec.cost.alpha), b.sub(norm, b.const(spec.cost.r_g))))


def build_residual_tree(W, spec: ProblemSpec, route: str) -> ExprTree:
    """Closed-form residual expression R(x) for the requested route.

    Route B (stationary): R = lam*W - h - min_u <grad W, f>, gradients by
    symbolic differentiation of the exported tree.  Route A: the explicit
    one-step defect min_u {c(x,u) + gamma*W(flow(x,u,sigma))} - W(x), with the
    one-step cost realized by the same Simpson rule as the numeric pipeline.
    """
    tree = export_expr(W) if isinstance(W, NetParams) else W
    if not isinstance(tree, ExprTree):
        raise SpecError("certification needs NetParams or an exported ExprTree")
    if not spec.stationary:
        raise SpecError("residual trees are built for the stationary specialization only")
    system = get_system(spec.system)
    d = spec.state_dim
    if tree.n_vars != d:
        raise SpecError(f"tree has {tree.n_vars} inputs, problem has {d} state dimensions")
    b = ExprBuilder(n_vars=d)
    xvars = [b.var(i) for i in range(d)]
    w = b.import_tree(tree)

    if route == "b":
        if system.ham_expr is None:
            raise SpecError(f"system {system.name!r} has no symbolic Hamiltonian")
        gvars = [b.diff(w, v) for v in range(d)]
        ham = system.ham_expr(b, xvars, gvars, spec.control_lo, spec.control_hi)
        r = b.sub(b.sub(b.mul(b.const(spec.lam), w), _h_expr(b, xvars, spec)), ham)
        return b.freeze(r)

    if route == "a":
        if system.flow_expr is None:
            raise SpecError(f"system {system.name!r} has no symbolic flow")
        sigma = spec.sigma
        n = SIMPSON_SUBINTERVALS
        best = None
        for u in candidate_controls(spec):
            # One-step discounted cost by composite Simpson on the exact flow.
            acc = None
            for k in range(n + 1):
                r_k = sigma * k / n
                coeff = (sigma / (3.0 * n)) * SIMPSON_WEIGHTS[k] * math.exp(-spec.lam * r_k)
                y = system.flow_expr(b, xvars, u, r_k)
                term = b.mul(b.const(coeff), _h_expr(b, y, spec))
                acc = term if acc is None else b.add(acc, term)
            y_end = system.flow_expr(b, xvars, u, sigma)
            w_end = b.import_tree(tree, var_map=y_end)
            cand = b.add(acc, b.mul(b.const(spec.gamma), w_end))
            best = cand if best is None else b.min(best, cand)
        return b.freeze(b.sub(best, w))

    raise SpecError(f"unknown route {route!r}; expected 'a' or 'b'")


def _certify_cell_worker(payload):
    rtree_json, cell_box, cell_rho, index, delta, opts = payload
    tree = ExprTree.from_json(rtree_json)
    cell = Cell(index=index, box=StateBox.from_json(cell_box), rho=cell_rho)
    try:
        v = certify_cell(tree, cell, delta, opts)
        return index, "ok", v
    except IndeterminateError as e:
        return index, "indeterminate", str(e)


def certify_roi(
    W,
    spec: ProblemSpec,
    route: str,
    rho: float,
    delta: float,
    cells_per_axis: int = 4,
    threads: int = 1,
    options: CertifyOptions | None = None,
) -> Certificate:
    """Partition the certification domain, decide every cell, aggregate a certificate.

    Route B works on the full ROI; route A on the invariance-shrunk ROI.  All
    cells carry the same uniform ``rho``.  Cells run in parallel when threads
    exceeds 1; the result is a deterministic reduction sorted by cell index.
    """
    t0 = time.monotonic()
    opts = options or CertifyOptions()
    rtree = build_residual_tree(W, spec, route)
    domain = spec.roi if route == "b" else invariance_margin(spec)
    cells = [
        Cell(index=c.index, box=c.box, rho=float(rho))
        for c in partition_roi(domain, cells_per_axis)
    ]

    results: dict[int, Verdict] = {}
    indeterminate: dict[int, str] = {}
    if threads > 1 and len(cells) > 1:
        payloads = [
            (rtree.to_json(), c.box.to_json(), c.rho, c.index, delta, opts) for c in cells
        ]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for index, status, out in pool.map(_certify_cell_worker, payloads):
                if status == "ok":
                    results[index] = out
                else:
                    indeterminate[index] = out
    else:
        for c in cells:
            try:
                results[c.index] = certify_cell(rtree, c, delta, opts)
            except IndeterminateError as e:
                indeterminate[c.index] = str(e)

    verdicts = []
    for c in cells:
        if c.index in results:
            verdicts.append(results[c.index])
        else:
            verdicts.append(Verdict(status="INDETERMINATE", witness=None, proven_sup=None, boxes_explored=0))

    complete = not indeterminate
    wall = 0.0 if os.environ.get("SOURCE_DATE_EPOCH") else time.monotonic() - t0
    cert = Certificate(
        route=route,
        spec_hash=spec_hash(spec),
        lam=spec.lam,
        gamma=spec.gamma,
        delta=delta,
        cells=cells,
        verdicts=verdicts,
        bound=None,
        eps_0=0.0 if route == "b" else None,
        eps_val=None,
        wall_time=wall,
        complete=complete,
    )
    cert.bound, cert.eps_val = _derived_fields(cert)
    # Cross-check the conversion against the residuals-module formulas.
    if cert.eps_val is not None:
        ref = (
            eps_val_from_operator(cert.bound, spec)
            if route == "a"
            else eps_val_from_slack(cert.bound, cert.eps_0, spec.lam)
        )
        assert cert.eps_val == ref
    return cert
