"""Concrete control systems, goal-band running cost, Hamiltonian and one-step cost.

The primary system is the planar double integrator (position/velocity, bounded
acceleration); a one-dimensional integrator is registered for micro-tests.
Both are control-affine with exact constant-control flow maps, so all one-step
quantities are closed form.

All operations are pure and accept batched states: arrays of shape (..., n)
for states and (..., m) for controls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import CostSpec, ProblemSpec, SpecError, StateBox

__all__ = [
    "SystemSpec",
    "HamiltonianEval",
    "InfeasibleInvarianceError",
    "get_system",
    "register_system",
    "flow_step",
    "running_cost",
    "hamiltonian",
    "one_step_cost",
    "candidate_controls",
    "invariance_margin",
    "shrink_roi",
    "SIMPSON_SUBINTERVALS",
    "SIMPSON_WEIGHTS",
]


class InfeasibleInvarianceError(SpecError):
    """The region of interest is too small for one-step forward invariance."""


@dataclass(frozen=True)
class SystemSpec:
    """A control-affine system dx/dt = drift(x) + G u with optional exact flow.

    ``flow`` maps (x, u, dt) to the state reached under constant control u; when
    absent, a single Heun (second-order) step is used instead.  ``margins`` gives
    the per-dimension worst-case displacement over a step of length dt, used to
    shrink the region of interest for one-step forward invariance.
    """

    name: str
    state_dim: int
    control_dim: int
    vector_field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    drift: Callable[[np.ndarray], np.ndarray]
    control_matrix: np.ndarray  # constant G, shape (state_dim, control_dim)
    flow: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = None
    margins: Optional[Callable[[StateBox, np.ndarray, np.ndarray, float], np.ndarray]] = None
    # Symbolic hooks for the certifier: the Hamiltonian drift/control term
    # min_u <g, f(x,u)> and the exact constant-control flow as expression nodes.
    ham_expr: Optional[Callable] = None
    flow_expr: Optional[Callable] = None

    def growth_bound(self, roi: StateBox, ulo: np.ndarray, uhi: np.ndarray) -> float:
        """Bound M_f on ||f(x,u)|| over roi x control box (corner evaluation)."""
        corners = _box_corners(roi.lo, roi.hi)
        ucorners = _box_corners(np.asarray(ulo, float), np.asarray(uhi, float))
        best = 0.0
        for u in ucorners:
            f = self.vector_field(corners, np.broadcast_to(u, (corners.shape[0], self.control_dim)))
            best = max(best, float(np.max(np.linalg.norm(f, axis=-1))))
        return best


def _box_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = lo.size
    grid = np.stack(np.meshgrid(*[[lo[i], hi[i]] for i in range(d)], indexing="ij"), axis=-1)
    return grid.reshape(-1, d)


@dataclass(frozen=True)
class HamiltonianEval:
    """Minimum of p . f(x,u) over corner controls and the attaining control."""

    value: float
    u_star: np.ndarray


# ---------------------------------------------------------------------------
# Built-in systems


def _di_field(x, u):
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (2,), dtype=np.float64)
    out[..., 0] = x[..., 1]
    out[..., 1] = u[..., 0]
    return out


def _di_flow(x, u, dt):
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (2,), dtype=np.float64)
    a = u[..., 0]
    out[..., 0] = x[..., 0] + x[..., 1] * dt + a * (dt * dt * 0.5)
    out[..., 1] = x[..., 1] + a * dt
    return out


def _di_margins(roi, ulo, uhi, dt):
    vmax = max(abs(float(roi.lo[1])), abs(float(roi.hi[1])))
    amax = max(abs(float(ulo[0])), abs(float(uhi[0])))
    return np.array([vmax * dt + 0.5 * dt * dt * amax, dt * amax])


def _di_ham_expr(b, xvars, gvars, ulo, uhi):
    drift = b.mul(gvars[0], xvars[1])
    lo = b.mul(gvars[1], b.const(float(ulo[0])))
    hi = b.mul(gvars[1], b.const(float(uhi[0])))
    return b.add(drift, b.min(lo, hi))


def _di_flow_expr(b, xvars, u, dt):
    a = float(u[0])
    dt = float(dt)
    return [
        b.affine([1.0, dt], [xvars[0], xvars[1]], a * dt * dt * 0.5),
        b.affine([1.0], [xvars[1]], a * dt),
    ]


def _si_field(x, u):
    return u.astype(np.float64) + 0.0 * x


def _si_flow(x, u, dt):
    return x + u * dt


def _si_margins(roi, ulo, uhi, dt):
    amax = max(abs(float(ulo[0])), abs(float(uhi[0])))
    return np.array([dt * amax])


def _si_ham_expr(b, xvars, gvars, ulo, uhi):
    lo = b.mul(gvars[0], b.const(float(ulo[0])))
    hi = b.mul(gvars[0], b.const(float(uhi[0])))
    return b.min(lo, hi)


def _si_flow_expr(b, xvars, u, dt):
    return [b.affine([1.0], [xvars[0]], float(u[0]) * float(dt))]


_REGISTRY: dict[str, SystemSpec] = {}


def register_system(system: SystemSpec) -> None:
    _REGISTRY[system.name] = system


def get_system(name: str) -> SystemSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise SpecError(f"unknown system {name!r}; registered: {sorted(_REGISTRY)}")


register_system(
    SystemSpec(
        name="double_integrator",
        state_dim=2,
        control_dim=1,
        vector_field=_di_field,
        drift=lambda x: np.stack([x[..., 1], np.zeros_like(x[..., 1])], axis=-1),
        control_matrix=np.array([[0.0], [1.0]]),
        flow=_di_flow,
        margins=_di_margins,
        ham_expr=_di_ham_expr,
        flow_expr=_di_flow_expr,
    )
)

register_system(
    SystemSpec(
        name="integrator_1d",
        state_dim=1,
        control_dim=1,
        vector_field=_si_field,
        drift=lambda x: np.zeros_like(x),
        control_matrix=np.array([[1.0]]),
        flow=_si_flow,
        margins=_si_margins,
        ham_expr=_si_ham_expr,
        flow_expr=_si_flow_expr,
    )
)


# ---------------------------------------------------------------------------
# Operations


def flow_step(system: SystemSpec, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """State after holding control ``u`` for ``dt``; exact flow when available.

    Systems without an exact flow take one Heun step, which is consistent with
    a second-order semi-Lagrangian discretization for dt up to the Bellman step.
    """
    if dt < 0.0:
        raise SpecError(f"flow_step needs dt >= 0, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if system.flow is not None:
        return system.flow(x, u, dt)
    k1 = system.vector_field(x, u)
    k2 = system.vector_field(x + dt * k1, u)
    return x + (0.5 * dt) * (k1 + k2)


def running_cost(x: np.ndarray, cost: CostSpec) -> np.ndarray:
    """Goal-band cost: -alpha*(r_g - ||x||) inside the target ball, 0 outside.

    ||.|| is the Euclidean norm of the full state.  The result lies in
    [-alpha*r_g, 0]; it is zero off target and strictly negative on target.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.sqrt(np.sum(x * x, axis=-1))
    return np.minimum(0.0, cost.alpha * (r - cost.r_g))


def hamiltonian(x: np.ndarray, p: np.ndarray, spec: ProblemSpec, system: SystemSpec | None = None) -> HamiltonianEval:
    """min over corner controls of p . f(x, u), with the attaining corner.

    Exact over the whole control box for control-affine systems.  Per-channel
    ties (zero inner product with a control column) resolve to the lower bound.
    """
    if system is None:
        system = get_system(spec.system)
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise SpecError("costate must be finite")
    base = float(np.dot(p, system.drift(x)))
    g = p @ system.control_matrix  # (m,)
    u_star = np.where(g >= 0.0, spec.control_lo, spec.control_hi)
    value = base + float(np.sum(np.minimum(g * spec.control_lo, g * spec.control_hi)))
    return HamiltonianEval(value=value, u_star=u_star)


def hamiltonian_values(x: np.ndarray, p: np.ndarray, spec: ProblemSpec, system: SystemSpec | None = None) -> np.ndarray:
    """Batched Hamiltonian drift/control term: min_u p . f(x,u) for x,p of shape (N, n)."""
    if system is None:
        system = get_system(spec.system)
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    base = np.sum(p * system.drift(x), axis=-1)
    g = p @ system.control_matrix
    return base + np.sum(np.minimum(g * spec.control_lo, g * spec.control_hi), axis=-1)


# Composite-Simpson panel count for the one-step discounted cost integral.
SIMPSON_SUBINTERVALS = 8

SIMPSON_WEIGHTS = np.array([1.0, 4.0, 2.0, 4.0, 2.0, 4.0, 2.0, 4.0, 1.0])


def one_step_cost(
    x: np.ndarray,
    u: np.ndarray,
    spec: ProblemSpec,
    system: SystemSpec | None = None,
    tau: float = 0.0,
) -> np.ndarray:
    """Discounted running cost accumulated over one step of length sigma.

    Integrates e^(-lam*r) h(y(r)) along the constant-u trajectory from x with
    composite Simpson quadrature on SIMPSON_SUBINTERVALS panels of the exact
    flow.  ``tau`` is accepted for the generic time-indexed interface; the
    built-in cost is time-invariant.  The result is <= 0 and bounded below by
    -alpha*r_g*(1-gamma)/lam.
    """
    del tau
    if system is None:
        system = get_system(spec.system)
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    sigma = spec.sigma
    n = SIMPSON_SUBINTERVALS
    rs = sigma * np.arange(n + 1) / n
    acc = 0.0
    for k, r in enumerate(rs):
        y = flow_step(system, x, u, float(r))
        acc = acc + (SIMPSON_WEIGHTS[k] * np.exp(-spec.lam * r)) * running_cost(y, spec.cost)
    return (sigma / (3.0 * n)) * acc


def candidate_controls(spec: ProblemSpec) -> np.ndarray:
    """Constant-control candidates for the one-step Bellman minimization.

    Per channel: {lo, midpoint, hi}.  The endpoints realize the bang-bang
    minimum of the control-affine Hamiltonian; the midpoint admits coasting,
    without which no constant one-step policy can hold a state fixed (the
    stationary-origin value would be unattainable).  Returns (3^m, m).
    """
    cols = []
    for j in range(spec.control_dim):
        lo = spec.control_lo[j]
        hi = spec.control_hi[j]
        cols.append(np.array([lo, lo + 0.5 * (hi - lo), hi]))
    grid = np.stack(np.meshgrid(*cols, indexing="ij"), axis=-1)
    return grid.reshape(-1, spec.control_dim)


def shrink_roi(roi: StateBox, system: SystemSpec, ulo: np.ndarray, uhi: np.ndarray, sigma: float) -> StateBox:
    """Shrink ``roi`` by the worst-case one-step displacement under any constant control."""
    if sigma == 0.0:
        return roi
    if system.margins is not None:
        m = system.margins(roi, np.asarray(ulo, float), np.asarray(uhi, float), sigma)
    else:
        m = np.full(roi.dim, system.growth_bound(roi, ulo, uhi) * sigma)
    try:
        return roi.shrink(m)
    except SpecError:
        raise InfeasibleInvarianceError(
            f"roi of widths {roi.widths} cannot absorb one-step margins {m}"
        )


def invariance_margin(spec: ProblemSpec, system: SystemSpec | None = None) -> StateBox:
    """Inner box from which every one-step constant-control trajectory stays in the ROI."""
    if system is None:
        system = get_system(spec.system)
    return shrink_roi(spec.roi, system, spec.control_lo, spec.control_hi, spec.sigma)
