"""Residual definitions and the conversion from certified residuals to value error.

Two routes produce a uniform value-error bound eps_val:

* Route A: the one-step operator defect |T W - W| on an invariance-shrunk
  region; eps_val = bound / (1 - gamma) by contraction.
* Route B: the pointwise HJB defect; stationary canonical form
  R(x) = lam*W(x) - h(x) - min_u <grad W(x), f(x,u)>, with eps_val =
  max(eps_pde/lam, eps_0).  The forward-in-tau form adds the dtau term and an
  initial-slice mismatch; plugging a stationary W into it recovers the
  stationary form unchanged.

Adding a constant eps to any candidate shifts the residual by exactly lam*eps
(the gradient and minimization terms are shift-invariant), which is what makes
uniform value error interchangeable with constant residual slack;
``offset_identity_check`` verifies that algebra to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import ProblemSpec, SpecError, StateBox
from .dynamics import (
    candidate_controls,
    flow_step,
    get_system,
    hamiltonian_values,
    invariance_margin,
    one_step_cost,
    running_cost,
)
from . import net as _net

__all__ = [
    "ResidualBound",
    "ValueFn",
    "NetValueFn",
    "TreeValueFn",
    "CallableValueFn",
    "residual_route_b_stationary",
    "residual_route_b_forward",
    "residual_route_a",
    "eps_val_from_operator",
    "eps_val_from_slack",
    "offset_identity_check",
]


@dataclass(frozen=True)
class ResidualBound:
    """Certified residual bound for one route; only the route's fields are set."""

    kind: str  # "operator" | "pde"
    domain: StateBox
    varsigma: Optional[float] = None
    eps_pde: Optional[float] = None
    eps_0: Optional[float] = None

    def __post_init__(self):
        if self.kind == "operator":
            if self.varsigma is None or self.varsigma < 0.0:
                raise SpecError("operator bound needs varsigma >= 0")
            if self.eps_pde is not None or self.eps_0 is not None:
                raise SpecError("operator bound must not carry PDE fields")
        elif self.kind == "pde":
            if self.eps_pde is None or self.eps_pde < 0.0 or self.eps_0 is None or self.eps_0 < 0.0:
                raise SpecError("pde bound needs eps_pde >= 0 and eps_0 >= 0")
            if self.varsigma is not None:
                raise SpecError("pde bound must not carry an operator field")
        else:
            raise SpecError(f"unknown residual kind {self.kind!r}")

    def eps_val(self, spec: ProblemSpec) -> float:
        if self.kind == "operator":
            return eps_val_from_operator(self.varsigma, spec)
        return eps_val_from_slack(self.eps_pde, self.eps_0, spec.lam)


class ValueFn:
    """Candidate value function: value, spatial gradient, constant shift."""

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def shifted(self, eps: float) -> "ValueFn":
        return _Shifted(self, eps)


class _Shifted(ValueFn):
    def __init__(self, base: ValueFn, eps: float):
        self._base = base
        self._eps = float(eps)

    def value(self, x):
        return self._base.value(x) + self._eps

    def grad(self, x):
        return self._base.grad(x)


class NetValueFn(ValueFn):
    def __init__(self, params):
        self.params = params

    def value(self, x):
        return _net.forward(self.params, x)

    def grad(self, x):
        return _net.grad_x(self.params, x)

    def shifted(self, eps: float) -> "NetValueFn":
        return NetValueFn(self.params.shifted(eps))


class TreeValueFn(ValueFn):
    """Value/gradient of an exported expression tree via symbolic differentiation."""

    def __init__(self, tree):
        from .expr import ExprBuilder

        self.tree = tree
        b = ExprBuilder(n_vars=tree.n_vars)
        root = b.import_tree(tree)
        self._grad_trees = [b.freeze(b.diff(root, v)) for v in range(tree.n_vars)]

    def value(self, x):
        return self.tree.eval(x)

    def grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        parts = [g.eval(x) for g in self._grad_trees]
        return np.stack(parts, axis=-1)


class CallableValueFn(ValueFn):
    """Wrap a plain function; gradient defaults to central differences."""

    def __init__(self, f: Callable, grad: Callable | None = None, fd_step: float = 1e-6):
        self._f = f
        self._grad = grad
        self._fd = fd_step

    def value(self, x):
        return self._f(np.asarray(x, dtype=np.float64))

    def grad(self, x):
        if self._grad is not None:
            return self._grad(np.asarray(x, dtype=np.float64))
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cols = []
        for j in range(x.shape[-1]):
            dx = np.zeros_like(x)
            dx[:, j] = self._fd
            cols.append((self._f(x + dx) - self._f(x - dx)) / (2.0 * self._fd))
        g = np.stack(cols, axis=-1)
        return g[0] if g.shape[0] == 1 and np.asarray(x).ndim == 1 else g


def _as_value_fn(W) -> ValueFn:
    if isinstance(W, ValueFn):
        return W
    if isinstance(W, _net.NetParams):
        return NetValueFn(W)
    from .expr import ExprTree

    if isinstance(W, ExprTree):
        return TreeValueFn(W)
    if callable(W):
        return CallableValueFn(W)
    raise SpecError(f"cannot interpret {type(W).__name__} as a value function")


def residual_route_b_stationary(W, x, spec: ProblemSpec) -> np.ndarray:
    """Stationary HJB defect lam*W - h - min_u <grad W, f> at states ``x``."""
    vf = _as_value_fn(W)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, spec.state_dim)
    vals = vf.value(pts)
    grads = np.asarray(vf.grad(pts)).reshape(-1, spec.state_dim)
    ham = hamiltonian_values(pts, grads, spec)
    out = spec.lam * np.asarray(vals).reshape(-1) - running_cost(pts, spec.cost) - ham
    return float(out[0]) if single else out.reshape(x.shape[:-1])


def residual_route_b_forward(W, tau: float, x, spec: ProblemSpec) -> np.ndarray:
    """Forward HJB defect dtau W - (h + min_u <grad W, f>) + lam*W.

    ``W`` must expose value(tau, x), grad_x(tau, x) and dtau(tau, x); the
    stationary residual is recovered for any time-constant candidate.
    """
    if not (0.0 < tau <= spec.horizon + 1e-12):
        raise SpecError(f"tau must lie in (0, horizon], got {tau}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, spec.state_dim)
    vals = np.asarray(W.value(tau, pts)).reshape(-1)
    grads = np.asarray(W.grad_x(tau, pts)).reshape(-1, spec.state_dim)
    dtau = np.asarray(W.dtau(tau, pts)).reshape(-1)
    ham = running_cost(pts, spec.cost) + hamiltonian_values(pts, grads, spec)
    out = dtau - ham + spec.lam * vals
    return float(out[0]) if single else out.reshape(x.shape[:-1])


def residual_route_a(W, x, spec: ProblemSpec) -> np.ndarray:
    """One-step operator defect |min_u {c(x,u) + gamma W(flow(x,u,sigma))} - W(x)|.

    Only defined on the invariance-shrunk region of interest, where every
    candidate one-step trajectory stays inside the ROI.
    """
    system = get_system(spec.system)
    inner = invariance_margin(spec, system)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, spec.state_dim)
    if not all(inner.contains(p, slack=1e-12) for p in pts):
        raise SpecError("route A residual queried outside the invariance-shrunk ROI")
    vf = _as_value_fn(W)
    best = None
    for u in candidate_controls(spec):
        ub = np.broadcast_to(u, (pts.shape[0], u.size))
        cand = one_step_cost(pts, ub, spec, system) + spec.gamma * np.asarray(
            vf.value(flow_step(system, pts, ub, spec.sigma))
        ).reshape(-1)
        best = cand if best is None else np.minimum(best, cand)
    out = np.abs(best - np.asarray(vf.value(pts)).reshape(-1))
    return float(out[0]) if single else out.reshape(x.shape[:-1])


def eps_val_from_operator(varsigma: float, spec: ProblemSpec) -> float:
    """Value-error bound varsigma / (1 - gamma) from an operator-residual bound."""
    if varsigma < 0.0:
        raise SpecError(f"operator residual bound must be >= 0, got {varsigma}")
    return varsigma / (1.0 - spec.gamma)


def eps_val_from_slack(eps_pde: float, eps_0: float, lam: float) -> float:
    """Value-error bound max(eps_pde/lam, eps_0) from PDE slack and initial mismatch."""
    if eps_pde < 0.0 or eps_0 < 0.0:
        raise SpecError("slack bounds must be >= 0")
    if not lam > 0.0:
        raise SpecError(f"discount rate must be positive, got {lam}")
    return max(eps_pde / lam, eps_0)


def offset_identity_check(W, eps: float, samples, spec: ProblemSpec) -> float:
    """max over samples of |R(W + eps) - R(W) - lam*eps| for the stationary residual.

    The identity is exact algebra (constant shifts leave gradients and the
    minimization untouched), so the return value is rounding noise only.
    """
    vf = _as_value_fn(W)
    r0 = residual_route_b_stationary(vf, samples, spec)
    r1 = residual_route_b_stationary(vf.shifted(eps), samples, spec)
    return float(np.max(np.abs(r1 - r0 - spec.lam * eps)))
