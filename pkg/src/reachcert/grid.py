"""Semi-Lagrangian grid solver for the discounted travel-cost value function.

Serves as the numerical ground truth W_num: a dense value field on a
rectangular grid, produced by iterating the one-step discounted Bellman
operator to its fixed point (stationary mode) or forward in steps of sigma.
Backtracked query points are clamped to the region of interest, which biases
a one-node rim near the boundary; downstream validation excludes that rim.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ProblemSpec, SpecError, StateBox
from .dynamics import SystemSpec, candidate_controls, flow_step, get_system, one_step_cost

__all__ = [
    "GridField",
    "NonconvergenceError",
    "grid_axes",
    "grid_points",
    "interp",
    "sweep",
    "solve_stationary",
    "solve_forward",
    "export_csv",
]


class NonconvergenceError(RuntimeError):
    """Fixed-point iteration failed to meet its tolerance within the iteration cap."""


@dataclass(frozen=True)
class GridField:
    """Dense scalar field on a rectangular grid over ``roi``.

    ``values`` has shape ``shape`` (points per dimension, C order matching
    axis order).  ``sup_change`` is the sup-norm change of the last sweep.
    """

    shape: tuple
    roi: StateBox
    values: np.ndarray
    iteration_count: int = 0
    sup_change: float = math.inf

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != tuple(self.shape):
            raise SpecError(f"values shape {v.shape} does not match grid shape {self.shape}")
        if not np.all(np.isfinite(v)):
            raise SpecError("grid field contains non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))

    @staticmethod
    def zeros(shape, roi: StateBox) -> "GridField":
        return GridField(shape=tuple(shape), roi=roi, values=np.zeros(tuple(shape)))


def grid_axes(field: GridField) -> list[np.ndarray]:
    return [np.linspace(field.roi.lo[i], field.roi.hi[i], field.shape[i]) for i in range(field.roi.dim)]


def grid_points(field: GridField) -> np.ndarray:
    """All node coordinates, shape (prod(shape), dim), C order."""
    axes = grid_axes(field)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _interp_weights(field: GridField, x: np.ndarray):
    """Clamped multilinear interpolation stencil: corner flat indices and weights."""
    x = np.asarray(x, dtype=np.float64)
    d = field.roi.dim
    pts = x.reshape(-1, d)
    idx0 = []
    frac = []
    for i in range(d):
        n = field.shape[i]
        lo = field.roi.lo[i]
        hi = field.roi.hi[i]
        step = (hi - lo) / (n - 1)
        t = np.clip((pts[:, i] - lo) / step, 0.0, n - 1.0)
        i0 = np.minimum(t.astype(np.int64), n - 2)
        idx0.append(i0)
        frac.append(t - i0)
    strides = np.array(np.zeros(field.shape).strides) // 8  # element strides, C order
    corners = []
    weights = []
    for corner in range(1 << d):
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        w = np.ones(pts.shape[0])
        for i in range(d):
            hi_side = (corner >> i) & 1
            flat += (idx0[i] + hi_side) * strides[i]
            w = w * (frac[i] if hi_side else (1.0 - frac[i]))
        corners.append(flat)
        weights.append(w)
    return np.stack(corners), np.stack(weights)


def interp(field: GridField, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of the field; queries outside the ROI are clamped."""
    x = np.asarray(x, dtype=np.float64)
    corners, weights = _interp_weights(field, x)
    vals = np.sum(field.values.ravel()[corners] * weights, axis=0)
    return vals.reshape(x.shape[:-1])


class _SweepCache:
    """Per-(spec, grid) precomputation: candidate controls, one-step costs, stencils."""

    def __init__(self, field: GridField, spec: ProblemSpec, system: SystemSpec):
        self.spec = spec
        pts = grid_points(field)
        self.ucands = candidate_controls(spec)
        self.costs = []
        self.stencils = []
        for u in self.ucands:
            ub = np.broadcast_to(u, (pts.shape[0], u.size))
            self.costs.append(one_step_cost(pts, ub, spec, system))
            y = flow_step(system, pts, ub, spec.sigma)
            self.stencils.append(_interp_weights(field, y))

    def apply(self, values: np.ndarray) -> np.ndarray:
        flat = values.ravel()
        best = None
        for c, (corners, weights) in zip(self.costs, self.stencils):
            cand = c + self.spec.gamma * np.sum(flat[corners] * weights, axis=0)
            best = cand if best is None else np.minimum(best, cand)
        return best.reshape(values.shape)


def sweep(field: GridField, spec: ProblemSpec, _cache: _SweepCache | None = None) -> GridField:
    """One application of the discrete Bellman operator to the whole field.

    W'(x) = min over candidate controls u of one-step cost + gamma * interp(W, flow(x,u,sigma)).
    Reads only the previous field and writes a fresh one (Jacobi update).
    """
    if _cache is None:
        _cache = _SweepCache(field, spec, get_system(spec.system))
    new_values = _cache.apply(field.values)
    change = float(np.max(np.abs(new_values - field.values)))
    return replace(field, values=new_values, iteration_count=field.iteration_count + 1, sup_change=change)


def _iteration_cap(tol: float, gamma: float) -> int:
    return max(8, int(math.ceil(10.0 * math.log(tol) / math.log(gamma))))


def solve_stationary(spec: ProblemSpec, shape, tol: float = 1e-6, max_iter: int | None = None) -> GridField:
    """Iterate sweeps from W = 0 until the fixed point is within ``tol`` (sup norm).

    The stopping threshold on the per-sweep change is tol*(1-gamma)/gamma, which
    by the contraction property guarantees distance at most tol from the fixed
    point.  Raises NonconvergenceError beyond the iteration cap.
    """
    if not (tol > 0.0):
        raise SpecError(f"tolerance must be positive, got {tol}")
    field = GridField.zeros(shape, spec.roi)
    cache = _SweepCache(field, spec, get_system(spec.system))
    threshold = tol * (1.0 - spec.gamma) / spec.gamma
    cap = max_iter if max_iter is not None else _iteration_cap(tol, spec.gamma)
    for _ in range(cap):
        field = sweep(field, spec, _cache=cache)
        if field.sup_change <= threshold:
            return field
    raise NonconvergenceError(
        f"stationary solve did not reach sup-change {threshold:g} in {cap} sweeps "
        f"(last change {field.sup_change:g})"
    )


def solve_forward(spec: ProblemSpec, shape, n_steps: int) -> list[GridField]:
    """Forward-in-tau slices W[0] = 0, W[k+1] = sweep(W[k]) at tau_k = k*sigma."""
    if n_steps * spec.sigma > spec.horizon + 1e-12:
        raise SpecError(f"{n_steps} steps of {spec.sigma} exceed horizon {spec.horizon}")
    field = GridField.zeros(shape, spec.roi)
    cache = _SweepCache(field, spec, get_system(spec.system))
    slices = [field]
    for _ in range(n_steps):
        field = sweep(field, spec, _cache=cache)
        slices.append(field)
    return slices


def export_csv(field: GridField, path: str | Path, sidecar: dict | None = None) -> None:
    """Row-major CSV of node coordinates and values, plus a JSON sidecar."""
    path = Path(path)
    pts = grid_points(field)
    d = field.roi.dim
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i + 1}" for i in range(d)] + ["w"])
        for row, v in zip(pts, field.values.ravel()):
            writer.writerow([repr(float(c)) for c in row] + [repr(float(v))])
    meta = {
        "shape": list(field.shape),
        "roi": field.roi.to_json(),
        "iterations": field.iteration_count,
        "sup_change": field.sup_change,
    }
    if sidecar:
        meta.update(sidecar)
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
