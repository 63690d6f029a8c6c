"""Backward-reachable-set enclosures from a certified value-error bound.

With |W_hat - W| <= eps_val uniformly, thresholding the candidate at
-eps_val (strictly) and +eps_val (non-strictly) brackets the strict negative
sublevel set of the true value, i.e. the backward-reachable set.  Both masks
are rasterized on a grid; validation compares against the grid oracle,
excluding a configurable boundary rim where the oracle's clamped
interpolation biases values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SpecError, StateBox
from .grid import GridField, grid_points
from . import net as _net

__all__ = ["EnclosurePair", "BracketReport", "bracket", "validate_bracket", "export_masks"]


@dataclass(frozen=True)
class EnclosurePair:
    """Inner/outer reachable-set masks on a grid; inner is always a subset of outer."""

    shape: tuple
    roi: StateBox
    inner: np.ndarray
    outer: np.ndarray
    eps_val: float

    def __post_init__(self):
        if self.inner.shape != tuple(self.shape) or self.outer.shape != tuple(self.shape):
            raise SpecError("mask shapes do not match the grid shape")
        if np.any(self.inner & ~self.outer):
            raise SpecError("inner mask escapes the outer mask")


def _values_on_grid(W, shape, roi: StateBox) -> np.ndarray:
    if isinstance(W, np.ndarray):
        if W.shape != tuple(shape):
            raise SpecError(f"value field shape {W.shape} does not match {shape}")
        return np.asarray(W, dtype=np.float64)
    if isinstance(W, GridField):
        return W.values
    field = GridField.zeros(shape, roi)
    pts = grid_points(field)
    if isinstance(W, _net.NetParams):
        vals = _net.forward(W, pts)
    elif callable(W):
        vals = np.asarray(W(pts), dtype=np.float64)
    else:
        vals = np.asarray(W.value(pts), dtype=np.float64)
    return vals.reshape(tuple(shape))


def bracket(W, eps_val: float, shape, roi: StateBox) -> EnclosurePair:
    """Rasterized sublevel masks: inner = {W < -eps_val}, outer = {W <= +eps_val}."""
    if eps_val < 0.0:
        raise SpecError(f"eps_val must be >= 0, got {eps_val}")
    vals = _values_on_grid(W, shape, roi)
    return EnclosurePair(
        shape=tuple(shape),
        roi=roi,
        inner=vals < -eps_val,
        outer=vals <= eps_val,
        eps_val=float(eps_val),
    )


@dataclass(frozen=True)
class BracketReport:
    """Node-level inclusion violations against the oracle's negative set."""

    inner_violations: np.ndarray  # (k, dim) node indices where inner but oracle >= 0
    outer_violations: np.ndarray  # (k, dim) node indices where oracle < 0 but not outer
    rim: int
    oracle_zero: float
    nodes_checked: int

    @property
    def ok(self) -> bool:
        return self.inner_violations.size == 0 and self.outer_violations.size == 0


def validate_bracket(
    pair: EnclosurePair,
    oracle: GridField,
    rim: int = 1,
    oracle_zero: float | None = None,
) -> BracketReport:
    """Check inner <= {oracle negative} <= outer on grid nodes, rim excluded.

    The oracle's negative set uses a numerical zero of -10x(grid tolerance
    scale) by default so solver noise near zero is not classified as target
    membership; pass ``oracle_zero`` to override.
    """
    if pair.shape != oracle.shape:
        raise SpecError(f"mask shape {pair.shape} does not match oracle shape {oracle.shape}")
    if oracle_zero is None:
        oracle_zero = -1e-5
    neg = oracle.values < oracle_zero
    keep = np.zeros(pair.shape, dtype=bool)
    core = tuple(slice(rim, n - rim) for n in pair.shape)
    keep[core] = True
    bad_inner = pair.inner & ~neg & keep
    bad_outer = neg & ~pair.outer & keep
    return BracketReport(
        inner_violations=np.argwhere(bad_inner),
        outer_violations=np.argwhere(bad_outer),
        rim=rim,
        oracle_zero=float(oracle_zero),
        nodes_checked=int(keep.sum()),
    )


def export_masks(pair: EnclosurePair, oracle: GridField | None, path: str | Path, report: BracketReport | None = None) -> None:
    """Plot-ready CSV of masks (and oracle sign), plus a JSON summary sidecar."""
    path = Path(path)
    field = GridField.zeros(pair.shape, pair.roi)
    pts = grid_points(field)
    neg = None
    if oracle is not None:
        zero = report.oracle_zero if report is not None else -1e-5
        neg = (oracle.values < zero).ravel()
    d = pair.roi.dim
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = [f"x{i + 1}" for i in range(d)] + ["inner", "outer"]
        if neg is not None:
            header.append("oracle_neg")
        writer.writerow(header)
        inner = pair.inner.ravel()
        outer = pair.outer.ravel()
        for idx in range(pts.shape[0]):
            row = [repr(float(c)) for c in pts[idx]] + [int(inner[idx]), int(outer[idx])]
            if neg is not None:
                row.append(int(neg[idx]))
            writer.writerow(row)
    summary = {
        "shape": list(pair.shape),
        "roi": pair.roi.to_json(),
        "eps_val": pair.eps_val,
        "inner_count": int(pair.inner.sum()),
        "outer_count": int(pair.outer.sum()),
    }
    if report is not None:
        summary.update(
            {
                "rim": report.rim,
                "oracle_zero": report.oracle_zero,
                "nodes_checked": report.nodes_checked,
                "inner_violations": report.inner_violations.tolist(),
                "outer_violations": report.outer_violations.tolist(),
            }
        )
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
