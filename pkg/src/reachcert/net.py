"""Sinusoidal MLP value approximator, its analytic gradient, and the trainer.

The network is a SIREN: every hidden layer computes sin(w0 * (W h + b)) with
the frequency-scaled initialization (first layer U(-1/fan_in, 1/fan_in),
deeper layers U(+-sqrt(6/fan_in)/w0)); the output layer is linear.  Training
minimizes a temporal-difference loss against a Polyak-averaged target network
plus the squared stationary HJB residual, with Adam updates.  Everything is
float64 and deterministic given the seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ProblemSpec, SpecError
from .dynamics import candidate_controls, flow_step, get_system, one_step_cost, running_cost
from .expr import ExprBuilder, ExprTree

__all__ = [
    "NetParams",
    "ReplayBuffer",
    "TrainSchedule",
    "TrainingDivergedError",
    "init",
    "forward",
    "grad_x",
    "bellman_target",
    "train",
    "export_expr",
    "save_params",
    "load_params",
    "DESK_SCHEDULE",
    "PAPER_SCHEDULE",
]

WEIGHTS_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the loss trace up to the failure."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class NetParams:
    """Layer weights/biases of the sinusoidal MLP plus its frequency and init seed."""

    sizes: tuple
    w0: float
    seed: int
    weights: tuple  # tuple of (out, in) float64 arrays
    biases: tuple  # tuple of (out,) float64 arrays

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "NetParams":
        return replace(
            self,
            weights=tuple(w.copy() for w in self.weights),
            biases=tuple(b.copy() for b in self.biases),
        )

    def shifted(self, eps: float) -> "NetParams":
        """Network computing W(x) + eps (constant added to the output bias)."""
        biases = tuple(b.copy() for b in self.biases)
        biases[-1][...] = biases[-1] + eps
        return replace(self, biases=biases)


def init(seed: int, sizes=(2, 40, 40, 1), w0: float = 30.0) -> NetParams:
    """Frequency-scaled uniform initialization, deterministic given ``seed``."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise SpecError(f"invalid layer sizes {sizes}")
    if sizes[-1] != 1:
        raise SpecError("the value network must have a scalar output")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if layer == 0:
            bound = 1.0 / fan_in
        else:
            bound = math.sqrt(6.0 / fan_in) / w0
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetParams(sizes=sizes, w0=float(w0), seed=int(seed), weights=tuple(weights), biases=tuple(biases))


# Fused float64 sine/cosine for the training hot loop.  NumPy's float64 trig
# on common builds is scalar libm; a Cody-Waite reduction with the classic
# fdlibm minimax kernels, jit-compiled elementwise, is ~4x faster and accurate
# to ~1e-13 for training-scale arguments.  Exported-network evaluation and
# everything the certifier touches keep np.sin/np.cos.
_FAST_TRIG_RANGE = 1e6

try:
    import numba as _numba

    @_numba.njit(parallel=False, fastmath=False, cache=False)
    def _nb_sincos(x, s_out, c_out):  # pragma: no cover - exercised via _fast_sincos
        for i in range(x.size):
            xi = x[i]
            n = np.rint(xi * 0.6366197723675814)
            r = (xi - n * 1.5707963267948966) - n * 6.123233995736766e-17
            z = r * r
            sp = 1.58969099521155010221e-10
            sp = sp * z + -2.50507602534068634195e-08
            sp = sp * z + 2.75573137070700676789e-06
            sp = sp * z + -1.98412698298579493134e-04
            sp = sp * z + 8.33333333332248946124e-03
            sp = sp * z + -1.66666666666666324348e-01
            s = r + (r * z) * sp
            cp = -1.13596475577881948265e-11
            cp = cp * z + 2.08757232129817482790e-09
            cp = cp * z + -2.75573143513906633035e-07
            cp = cp * z + 2.48015872894767294178e-05
            cp = cp * z + -1.38888888888741095749e-03
            cp = cp * z + 4.16666666666666019037e-02
            c = 1.0 - 0.5 * z + (z * z) * cp
            q = np.int64(n) & 3
            if q == 0:
                s_out[i] = s
                c_out[i] = c
            elif q == 1:
                s_out[i] = c
                c_out[i] = -s
            elif q == 2:
                s_out[i] = -s
                c_out[i] = -c
            else:
                s_out[i] = -c
                c_out[i] = s

except ImportError:  # pragma: no cover
    _nb_sincos = None


def _fast_sincos(x: np.ndarray):
    """(sin x, cos x) in float64; |error| <~ 2e-13 for |x| <= 1e6."""
    if (
        _nb_sincos is None
        or x.size == 0
        or not np.all(np.isfinite(x))
        or np.max(np.abs(x)) > _FAST_TRIG_RANGE
    ):
        return np.sin(x), np.cos(x)
    x = np.ascontiguousarray(x)
    s = np.empty_like(x)
    c = np.empty_like(x)
    _nb_sincos(x.ravel(), s.ravel(), c.ravel())
    return s, c


def _fast_sin(x: np.ndarray) -> np.ndarray:
    return _fast_sincos(x)[0]


def _forward_fast(weights, biases, w0: float, x: np.ndarray) -> np.ndarray:
    h = x
    for W, b in zip(weights[:-1], biases[:-1]):
        h = _fast_sin(w0 * (h @ W.T + b))
    return h @ weights[-1][0] + biases[-1][0]


def _forward_cached(params: NetParams, x: np.ndarray):
    """Forward pass keeping pre-activation caches for backprop."""
    h = x
    pre = []
    sin_h = []
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        a = h @ W.T + b
        pre.append(a)
        h = np.sin(params.w0 * a)
        sin_h.append(h)
    out = h @ params.weights[-1].T + params.biases[-1]
    return out[..., 0], pre, sin_h


def forward(params: NetParams, x) -> np.ndarray:
    """Network value at ``x`` (shape (..., in_dim)); scalar for a single point."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, params.sizes[0])
    out, _, _ = _forward_cached(params, pts)
    if single:
        return float(out[0])
    return out.reshape(x.shape[:-1])


def grad_x(params: NetParams, x) -> np.ndarray:
    """Analytic gradient of the network output with respect to its input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, params.sizes[0])
    _, pre, _ = _forward_cached(params, pts)
    w0 = params.w0
    t = np.broadcast_to(params.weights[-1][0], (pts.shape[0], params.sizes[-2])).copy()
    for a, W in zip(reversed(pre), reversed(params.weights[:-1])):
        t = (t * (w0 * np.cos(w0 * a))) @ W
    if single:
        return t[0]
    return t.reshape(x.shape[:-1] + (params.sizes[0],))


def bellman_target(target, x, spec: ProblemSpec, system=None) -> np.ndarray:
    """One-step discounted lookahead under the target value function.

    min over candidate constant controls of one-step cost plus gamma times the
    target at the flowed state (stationary form: no time index).  ``target``
    is NetParams or any callable mapping points to values.
    """
    if system is None:
        system = get_system(spec.system)
    if isinstance(target, NetParams):
        tp = target
        target = lambda pts: forward(tp, pts)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, spec.state_dim)
    best = None
    for u in candidate_controls(spec):
        ub = np.broadcast_to(u, (pts.shape[0], u.size))
        cand = one_step_cost(pts, ub, spec, system) + spec.gamma * np.asarray(
            target(flow_step(system, pts, ub, spec.sigma))
        ).reshape(-1)
        best = cand if best is None else np.minimum(best, cand)
    if single:
        return float(best[0])
    return best.reshape(x.shape[:-1])


@dataclass
class ReplayBuffer:
    """States drawn uniformly over the ROI plus injected counterexamples.

    Sampling weights default to 1; counterexample batches carry a higher
    weight.  Sampling is deterministic given ``seed``.
    """

    capacity: int
    seed: int
    states: np.ndarray = field(default=None)  # type: ignore[assignment]
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.states is None:
            self.states = np.empty((0, 0))
        if self.weights is None:
            self.weights = np.empty((0,))

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def fill_uniform(self, spec: ProblemSpec, n: int) -> None:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))
        pts = rng.uniform(spec.roi.lo, spec.roi.hi, size=(n, spec.state_dim))
        self.add(pts, weight=1.0, roi=spec.roi)

    def add(self, states: np.ndarray, weight: float = 1.0, roi=None) -> None:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if roi is not None:
            states = roi.clamp(states)
        if self.size == 0:
            self.states = states.copy()
            self.weights = np.full(states.shape[0], float(weight))
        else:
            self.states = np.concatenate([self.states, states])
            self.weights = np.concatenate([self.weights, np.full(states.shape[0], float(weight))])
        if self.size > self.capacity:
            self.states = self.states[-self.capacity :]
            self.weights = self.weights[-self.capacity :]

    def sampler(self):
        """Fresh deterministic index sampler over the current contents."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 2, self.size]))
        if np.all(self.weights == self.weights[0]):
            n = self.size

            def draw(batch: int) -> np.ndarray:
                return rng.integers(0, n, size=batch)

        else:
            cdf = np.cumsum(self.weights)
            cdf /= cdf[-1]

            def draw(batch: int) -> np.ndarray:
                return np.searchsorted(cdf, rng.random(batch), side="right")

        return draw


@dataclass(frozen=True)
class TrainSchedule:
    """Trainer hyperparameters; the defaults are the desk-scale settings."""

    iterations: int = 20000
    batch_size: int = 4096
    lr: float = 3e-3
    lr_min: float = 1e-5
    cosine_decay: bool = True
    target_tau: float = 5e-3
    w_td: float = 1.0
    w_hjb: float = 1.0
    w_sob: float = 0.0
    buffer_size: int = 262144
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    trace_every: int = 200

    def __post_init__(self):
        if self.w_sob != 0.0:
            raise SpecError("the Sobolev loss weight is a no-op and must stay 0")
        if self.iterations < 0 or self.batch_size <= 0:
            raise SpecError("schedule needs iterations >= 0 and batch_size > 0")


DESK_SCHEDULE = TrainSchedule()
PAPER_SCHEDULE = TrainSchedule(iterations=100000, batch_size=163840, buffer_size=4000000)


def _lr_at(schedule: TrainSchedule, it: int) -> float:
    if not schedule.cosine_decay or schedule.iterations <= 1:
        return schedule.lr
    t = it / (schedule.iterations - 1)
    return schedule.lr_min + 0.5 * (schedule.lr - schedule.lr_min) * (1.0 + math.cos(math.pi * t))


def train(
    params: NetParams,
    spec: ProblemSpec,
    schedule: TrainSchedule,
    buffer: ReplayBuffer | None = None,
    seed: int = 0,
):
    """TD + HJB-residual training; returns (new params, loss trace).

    The loss is w_td * mean[(W(x) - bellman_target(theta-, x))^2]
    + w_hjb * mean[R(x)^2] with R the stationary HJB residual of the online
    network (endpoint control selector detached).  Target parameters follow
    the online ones with Polyak factor ``target_tau`` per step.
    """
    system = get_system(spec.system)
    if buffer is None:
        buffer = ReplayBuffer(capacity=schedule.buffer_size, seed=seed)
        buffer.fill_uniform(spec, schedule.buffer_size)
    if buffer.size == 0:
        raise SpecError("replay buffer is empty")

    params = params.copy()
    if schedule.iterations == 0:
        return params, []

    # Precompute control-independent quantities over the buffer.
    ucands = candidate_controls(spec)
    X = buffer.states
    costs = np.empty((ucands.shape[0], X.shape[0]))
    flows = np.empty((ucands.shape[0],) + X.shape)
    for k, u in enumerate(ucands):
        ub = np.broadcast_to(u, (X.shape[0], u.size))
        costs[k] = one_step_cost(X, ub, spec, system)
        flows[k] = flow_step(system, X, ub, spec.sigma)
    h_all = running_cost(X, spec.cost)

    w0 = params.w0
    lam = spec.lam
    gamma = spec.gamma
    if len(params.sizes) != 4:
        raise SpecError("the trainer supports exactly two hidden layers")
    if spec.system != "double_integrator":
        raise SpecError("the HJB-residual loss is implemented for the double integrator")
    ulo = float(spec.control_lo[0])
    uhi = float(spec.control_hi[0])

    theta = [a.copy() for a in params.weights] + [a.copy() for a in params.biases]
    target = [a.copy() for a in theta]
    m = [np.zeros_like(a) for a in theta]
    v = [np.zeros_like(a) for a in theta]
    draw = buffer.sampler()
    trace = []
    nL = len(params.weights)

    for it in range(schedule.iterations):
        idx = draw(schedule.batch_size)
        xb = X[idx]
        B = xb.shape[0]

        # TD target under the frozen target network.
        y = None
        for k in range(ucands.shape[0]):
            cand = costs[k, idx] + gamma * _forward_fast(target[:nL], target[nL:], w0, flows[k, idx])
            y = cand if y is None else np.minimum(y, cand)

        TW1, TW2, TW3 = theta[0], theta[1], theta[2]
        tb1, tb2, tb3 = theta[3], theta[4], theta[5]

        A1 = xb @ TW1.T + tb1
        Z1, C1 = _fast_sincos(w0 * A1)
        A2 = Z1 @ TW2.T + tb2
        Z2, C2 = _fast_sincos(w0 * A2)
        w = Z2 @ TW3[0] + tb3[0]

        # Input gradient G = dW/dx for the residual term.
        T2 = (w0 * C2) * TW3[0]
        M1 = T2 @ TW2
        T1 = (w0 * C1) * M1
        G = T1 @ TW1

        drift = G[:, 0] * xb[:, 1]
        Rres = lam * w - h_all[idx] - (drift + np.minimum(G[:, 1] * ulo, G[:, 1] * uhi))
        ustar = np.where(G[:, 1] >= 0.0, ulo, uhi)

        td_err = w - y
        loss_td = float(np.mean(td_err**2))
        loss_hjb = float(np.mean(Rres**2))
        if not (math.isfinite(loss_td) and math.isfinite(loss_hjb)):
            raise TrainingDivergedError(f"loss diverged at iteration {it}", trace)
        if it % schedule.trace_every == 0 or it == schedule.iterations - 1:
            trace.append((it, loss_td, loss_hjb))

        q = (2.0 / B) * schedule.w_hjb * Rres
        e_out = (2.0 / B) * schedule.w_td * td_err + q * lam

        # Plain output backprop (TD path and the lam*W part of the residual).
        dW3 = (e_out @ Z2)[None, :]
        db3 = np.array([e_out.sum()])
        dZ2 = e_out[:, None] * TW3[0]
        dA2 = dZ2 * (w0 * C2)
        dW2 = dA2.T @ Z1
        db2 = dA2.sum(axis=0)
        dZ1 = dA2 @ TW2
        dA1 = dZ1 * (w0 * C1)

        # Gradient-path backprop: J = sum_b P_b . G_b with P = -q * f(x, ustar).
        P = np.empty_like(G)
        P[:, 0] = -q * xb[:, 1]
        P[:, 1] = -q * ustar
        dW1 = T1.T @ P
        dT1 = P @ TW1.T
        dM1 = dT1 * (w0 * C1)
        dA1 += dT1 * (w0 * M1) * (-w0 * Z1)  # through C1 = cos(w0 A1)
        dW2 += T2.T @ dM1
        dT2 = dM1 @ TW2.T
        dW3 += (dT2 * (w0 * C2)).sum(axis=0)[None, :]
        dA2_g = dT2 * (w0 * TW3[0]) * (-w0 * Z2)  # through C2 = cos(w0 A2)
        dW2 += dA2_g.T @ Z1
        db2 += dA2_g.sum(axis=0)
        dA1 += (dA2_g @ TW2) * (w0 * C1)

        dW1 += dA1.T @ xb
        db1 = dA1.sum(axis=0)

        grads = [dW1, dW2, dW3, db1, db2, db3]
        lr = _lr_at(schedule, it)
        b1c = 1.0 - schedule.adam_beta1 ** (it + 1)
        b2c = 1.0 - schedule.adam_beta2 ** (it + 1)
        for p, g, mi, vi in zip(theta, grads, m, v):
            mi += (1.0 - schedule.adam_beta1) * (g - mi)
            vi += (1.0 - schedule.adam_beta2) * (g * g - vi)
            p -= lr * (mi / b1c) / (np.sqrt(vi / b2c) + schedule.adam_eps)

        for t_arr, p_arr in zip(target, theta):
            t_arr += schedule.target_tau * (p_arr - t_arr)

    out = NetParams(
        sizes=params.sizes,
        w0=w0,
        seed=params.seed,
        weights=tuple(a.copy() for a in theta[:nL]),
        biases=tuple(a.copy() for a in theta[nL:]),
    )
    return out, trace


def export_expr(params: NetParams) -> ExprTree:
    """Exact closed-form expression of the network: affine maps and sin nodes only.

    The tree evaluates equal to ``forward`` up to summation-order rounding
    (within 1e-12); the frequency w0 appears as an explicit constant factor
    inside every sine argument.
    """
    b = ExprBuilder(n_vars=params.sizes[0])
    layer = [b.var(i) for i in range(params.sizes[0])]
    w0c = b.const(params.w0)
    for W, bias in zip(params.weights[:-1], params.biases[:-1]):
        layer = [b.sin(b.mul(w0c, b.affine(W[j], layer, bias[j]))) for j in range(W.shape[0])]
    out = b.affine(params.weights[-1][0], layer, params.biases[-1][0])
    return b.freeze(out)


def save_params(params: NetParams, path: str | Path, meta: dict | None = None) -> None:
    doc = {
        "version": WEIGHTS_FORMAT_VERSION,
        "sizes": list(params.sizes),
        "w0": params.w0,
        "seed": params.seed,
        "layers": [
            {"W": [[float(v) for v in row] for row in W], "b": [float(v) for v in bias]}
            for W, bias in zip(params.weights, params.biases)
        ],
        "meta": meta or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_params(path: str | Path) -> NetParams:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != WEIGHTS_FORMAT_VERSION:
        raise SpecError(f"unsupported weights format version {doc.get('version')!r}")
    weights = tuple(np.asarray(layer["W"], dtype=np.float64) for layer in doc["layers"])
    biases = tuple(np.asarray(layer["b"], dtype=np.float64) for layer in doc["layers"])
    return NetParams(
        sizes=tuple(doc["sizes"]),
        w0=float(doc["w0"]),
        seed=int(doc["seed"]),
        weights=weights,
        biases=biases,
    )
