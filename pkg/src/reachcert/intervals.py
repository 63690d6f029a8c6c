"""Rigorous enclosures for expression DAGs over boxes.

Two inclusion functions, both vectorized over batches of boxes:

* ``eval_tree_intervals``: the natural interval extension with outward
  rounding on every inexact primitive (1 ulp for +,-,*, sqrt; 4 ulps for
  sin/cos on top of exact critical-point range analysis).  Squares are
  recognized structurally (mul with identical children) and use the tightened
  square rule; when the squared endpoint has at most 26 significant bits the
  square is exact and no bump is applied, so suprema like max x^2 = 1 on
  [-1,1] are proved exactly.
* ``eval_tree_taylor``: a first-order Taylor form (value, gradient in the box
  variables, interval remainder) expanded at the box midpoint.  Affine
  operations are exact on the linear part, so the wrapping that cripples the
  natural extension on wide networks disappears; each nonlinearity contributes
  a second-order remainder.  Floating-point error is folded into the remainder
  with a generous per-node slack factor.

Both return bounds valid for the real-valued semantics of the DAG and for any
round-to-nearest float64 evaluation of it.
"""

from __future__ import annotations

import numpy as np

from .config import Interval, StateBox
from .expr import (
    ExprTree,
    K_ABS,
    K_ADD,
    K_CONST,
    K_COS,
    K_MIN,
    K_MAX,
    K_MUL,
    K_NEG,
    K_SIN,
    K_SQRT,
    K_SUB,
    K_VAR,
    _last_uses,
)

__all__ = ["eval_interval", "eval_tree_intervals", "eval_tree_taylor", "enclosure_hi"]

_TINY = 1e-300
_SPLIT = 134217729.0  # 2**27 + 1, Dekker split constant
# Per-node relative slack absorbing round-to-nearest error in the Taylor form
# (covers a few dozen flops per node with a wide margin).
_FP_SLACK = 64.0 * 2.0**-53

_HALF_PI = np.pi / 2.0
_TWO_PI = 2.0 * np.pi
# Slightly shrunk lower bound on 2*pi: any argument interval at least this
# wide surely spans a full period.
_TWO_PI_LO = 6.283185307179586


def _up(x):
    return np.nextafter(x, np.inf)


def _dn(x):
    return np.nextafter(x, -np.inf)


def _bump_out(lo, hi, ulps: int):
    pad_lo = ulps * np.spacing(np.abs(lo)) + _TINY
    pad_hi = ulps * np.spacing(np.abs(hi)) + _TINY
    return lo - pad_lo, hi + pad_hi


def _square_exact(m):
    """True where m*m is exactly representable (mantissa of m fits 26 bits)."""
    c = m * _SPLIT
    mh = c - (c - m)
    return (mh == m) & (np.abs(m) < 1e150)


def _isq(lo, hi):
    """Tightened square rule with exactness-aware outward rounding."""
    big = np.maximum(np.abs(lo), np.abs(hi))
    small = np.maximum(0.0, np.maximum(lo, -hi))
    hi_out = big * big
    hi_out = np.where(_square_exact(big), hi_out, _up(hi_out))
    lo_out = small * small
    lo_out = np.where(_square_exact(small), lo_out, _dn(lo_out))
    return lo_out, hi_out


def _imul(alo, ahi, blo, bhi):
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return _dn(lo), _up(hi)


def _contains_critical(lo, hi, offset: float):
    """Conservatively test whether [lo, hi] contains offset + 2*pi*k for some integer k."""
    pad = 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi))) + _TINY
    a = lo - pad
    b = hi + pad
    k = np.ceil((a - offset) / _TWO_PI)
    crit = k * _TWO_PI + offset
    return crit <= b


def _isin(lo, hi):
    width = hi - lo
    sa = np.sin(lo)
    sb = np.sin(hi)
    out_lo = np.minimum(sa, sb)
    out_hi = np.maximum(sa, sb)
    out_lo, out_hi = _bump_out(out_lo, out_hi, 4)
    out_hi = np.where(_contains_critical(lo, hi, _HALF_PI), 1.0, out_hi)
    out_lo = np.where(_contains_critical(lo, hi, -_HALF_PI), -1.0, out_lo)
    full = ~(width < _TWO_PI_LO)  # also catches nan widths
    out_lo = np.where(full, -1.0, np.maximum(out_lo, -1.0))
    out_hi = np.where(full, 1.0, np.minimum(out_hi, 1.0))
    bad = ~np.isfinite(lo) | ~np.isfinite(hi)
    return np.where(bad, np.nan, out_lo), np.where(bad, np.nan, out_hi)


def _icos(lo, hi):
    width = hi - lo
    ca = np.cos(lo)
    cb = np.cos(hi)
    out_lo = np.minimum(ca, cb)
    out_hi = np.maximum(ca, cb)
    out_lo, out_hi = _bump_out(out_lo, out_hi, 4)
    out_hi = np.where(_contains_critical(lo, hi, 0.0), 1.0, out_hi)
    out_lo = np.where(_contains_critical(lo, hi, np.pi), -1.0, out_lo)
    full = ~(width < _TWO_PI_LO)
    out_lo = np.where(full, -1.0, np.maximum(out_lo, -1.0))
    out_hi = np.where(full, 1.0, np.minimum(out_hi, 1.0))
    bad = ~np.isfinite(lo) | ~np.isfinite(hi)
    return np.where(bad, np.nan, out_lo), np.where(bad, np.nan, out_hi)


def _isqrt(lo, hi):
    return _dn(np.sqrt(np.maximum(lo, 0.0))), _up(np.sqrt(np.maximum(hi, 0.0)))


def eval_tree_intervals(tree: ExprTree, box_lo: np.ndarray, box_hi: np.ndarray):
    """Natural interval extension of ``tree`` over boxes (N, n_vars) -> (lo, hi) of shape (N,)."""
    box_lo = np.atleast_2d(np.asarray(box_lo, dtype=np.float64))
    box_hi = np.atleast_2d(np.asarray(box_hi, dtype=np.float64))
    death = _last_uses(tree)
    vals: list = [None] * tree.n_nodes
    kind, a, b, value = tree.kind, tree.a, tree.b, tree.value
    n_pts = box_lo.shape[0]
    for i in range(tree.n_nodes):
        k = kind[i]
        if k == K_CONST:
            c = np.full(n_pts, value[i])
            v = (c, c.copy())
        elif k == K_VAR:
            j = int(value[i])
            v = (box_lo[:, j].copy(), box_hi[:, j].copy())
        elif k == K_ADD:
            (l1, h1), (l2, h2) = vals[a[i]], vals[b[i]]
            v = (_dn(l1 + l2), _up(h1 + h2))
        elif k == K_SUB:
            (l1, h1), (l2, h2) = vals[a[i]], vals[b[i]]
            v = (_dn(l1 - h2), _up(h1 - l2))
        elif k == K_MUL:
            if a[i] == b[i]:
                v = _isq(*vals[a[i]])
            else:
                (l1, h1), (l2, h2) = vals[a[i]], vals[b[i]]
                v = _imul(l1, h1, l2, h2)
        elif k == K_NEG:
            l1, h1 = vals[a[i]]
            v = (-h1, -l1)
        elif k == K_SIN:
            v = _isin(*vals[a[i]])
        elif k == K_COS:
            v = _icos(*vals[a[i]])
        elif k == K_SQRT:
            v = _isqrt(*vals[a[i]])
        elif k == K_MIN:
            (l1, h1), (l2, h2) = vals[a[i]], vals[b[i]]
            v = (np.minimum(l1, l2), np.minimum(h1, h2))
        elif k == K_MAX:
            (l1, h1), (l2, h2) = vals[a[i]], vals[b[i]]
            v = (np.maximum(l1, l2), np.maximum(h1, h2))
        elif k == K_ABS:
            l1, h1 = vals[a[i]]
            v = (np.maximum(0.0, np.maximum(l1, -h1)), np.maximum(-l1, h1))
        else:
            raise ValueError(f"unknown node kind {k}")
        vals[i] = v
        if a[i] >= 0 and death[a[i]] == i:
            vals[a[i]] = None
        if b[i] >= 0 and death[b[i]] == i and b[i] != a[i]:
            vals[b[i]] = None
    return vals[tree.output]


def eval_interval(expr: ExprTree, box: StateBox) -> Interval:
    """Single-box inclusion function: an Interval provably containing expr(x) for all x in box."""
    lo, hi = eval_tree_intervals(expr, box.lo[None, :], box.hi[None, :])
    return Interval(float(lo[0]), float(hi[0]))


# ---------------------------------------------------------------------------
# First-order Taylor form


class _TForm:
    """Batched Taylor form: value in c + g.(x-mid) +- r for x in the source box."""

    __slots__ = ("c", "g", "r")

    def __init__(self, c, g, r):
        self.c = c
        self.g = g
        self.r = r


def _slack(c, gdot, r):
    return r + _FP_SLACK * (np.abs(c) + gdot + r) + _TINY


def _gdot(g, hw):
    return np.sum(np.abs(g) * hw, axis=-1)


def eval_tree_taylor(tree: ExprTree, box_lo: np.ndarray, box_hi: np.ndarray):
    """Taylor-form enclosure of ``tree`` over boxes (N, n_vars) -> (lo, hi) of shape (N,).

    Expansion point is the box midpoint; gradients stay exact symbols of the
    box variables so affine layers add no wrapping.  Intended for narrow boxes
    where the natural extension is too loose; for wide boxes the nonlinear
    remainders fall back to interval hulls internally.
    """
    box_lo = np.atleast_2d(np.asarray(box_lo, dtype=np.float64))
    box_hi = np.atleast_2d(np.asarray(box_hi, dtype=np.float64))
    n_pts, d = box_lo.shape
    mid = box_lo + 0.5 * (box_hi - box_lo)
    hw = _up(np.maximum(box_hi - mid, mid - box_lo))

    death = _last_uses(tree)
    vals: list = [None] * tree.n_nodes
    kind, a, b, value = tree.kind, tree.a, tree.b, tree.value

    def hull_form(lo, hi):
        c = lo + 0.5 * (hi - lo)
        r = _up(np.maximum(hi - c, c - lo))
        return _TForm(c, np.zeros((n_pts, d)), r)

    def to_range(t: _TForm):
        rad = _up(_gdot(t.g, hw) + t.r)
        return _dn(t.c - rad), _up(t.c + rad)

    for i in range(tree.n_nodes):
        k = kind[i]
        if k == K_CONST:
            v = _TForm(np.full(n_pts, value[i]), np.zeros((n_pts, d)), np.zeros(n_pts))
        elif k == K_VAR:
            j = int(value[i])
            g = np.zeros((n_pts, d))
            g[:, j] = 1.0
            v = _TForm(mid[:, j].copy(), g, np.zeros(n_pts))
        elif k == K_ADD:
            t1, t2 = vals[a[i]], vals[b[i]]
            c = t1.c + t2.c
            g = t1.g + t2.g
            v = _TForm(c, g, _slack(c, _gdot(g, hw), t1.r + t2.r))
        elif k == K_SUB:
            t1, t2 = vals[a[i]], vals[b[i]]
            c = t1.c - t2.c
            g = t1.g - t2.g
            v = _TForm(c, g, _slack(c, _gdot(g, hw), t1.r + t2.r))
        elif k == K_NEG:
            t1 = vals[a[i]]
            v = _TForm(-t1.c, -t1.g, t1.r)
        elif k == K_MUL:
            t1 = vals[a[i]]
            t2 = vals[b[i]]
            L1 = _gdot(t1.g, hw)
            L2 = _gdot(t2.g, hw)
            if a[i] == b[i]:
                c = t1.c * t1.c
                g = (2.0 * t1.c)[:, None] * t1.g
                r = 2.0 * np.abs(t1.c) * t1.r + (L1 + t1.r) ** 2
            else:
                c = t1.c * t2.c
                g = t1.c[:, None] * t2.g + t2.c[:, None] * t1.g
                r = t1.r * (np.abs(t2.c) + L2 + t2.r) + t2.r * (np.abs(t1.c) + L1) + L1 * L2
            v = _TForm(c, g, _slack(c, _gdot(g, hw), r))
        elif k in (K_SIN, K_COS):
            t1 = vals[a[i]]
            delta = _up(_gdot(t1.g, hw) + t1.r)
            if k == K_SIN:
                c = np.sin(t1.c)
                slope = np.cos(t1.c)
            else:
                c = np.cos(t1.c)
                slope = -np.sin(t1.c)
            g = slope[:, None] * t1.g
            # Taylor remainder delta^2/2, plus 4 ulps for the libm evaluations.
            r = _slack(c, _gdot(g, hw), t1.r + 0.5 * delta * delta + 8.0 * np.spacing(1.0))
            tay = _TForm(c, g, r)
            in_lo, in_hi = to_range(t1)
            hull = hull_form(*(_isin(in_lo, in_hi) if k == K_SIN else _icos(in_lo, in_hi)))
            v = _choose(tay, hull, hw)
        elif k == K_SQRT:
            t1 = vals[a[i]]
            delta = _up(_gdot(t1.g, hw) + t1.r)
            amin = t1.c - delta
            in_lo, in_hi = to_range(t1)
            hull = hull_form(*_isqrt(in_lo, in_hi))
            safe = amin > 0.0
            amin_s = np.where(safe, amin, 1.0)
            c = np.sqrt(np.maximum(t1.c, 0.0))
            inv = 0.5 / np.where(safe, c, 1.0)
            g = inv[:, None] * t1.g
            r = inv * t1.r + (delta * delta) / (8.0 * amin_s * np.sqrt(amin_s))
            tay = _TForm(np.where(safe, c, hull.c), np.where(safe[:, None], g, hull.g),
                         np.where(safe, _slack(c, _gdot(g, hw), r), hull.r))
            v = _choose(tay, hull, hw)
        elif k in (K_MIN, K_MAX):
            t1, t2 = vals[a[i]], vals[b[i]]
            lo1, hi1 = to_range(t1)
            lo2, hi2 = to_range(t2)
            if k == K_MIN:
                hull = hull_form(np.minimum(lo1, lo2), np.minimum(hi1, hi2))
                take1 = hi1 <= lo2
                take2 = hi2 <= lo1
            else:
                hull = hull_form(np.maximum(lo1, lo2), np.maximum(hi1, hi2))
                take1 = lo1 >= hi2
                take2 = lo2 >= hi1
            c = np.where(take1, t1.c, np.where(take2, t2.c, hull.c))
            g = np.where(take1[:, None], t1.g, np.where(take2[:, None], t2.g, hull.g))
            r = np.where(take1, t1.r, np.where(take2, t2.r, hull.r))
            v = _TForm(c, g, r)
        elif k == K_ABS:
            t1 = vals[a[i]]
            lo1, hi1 = to_range(t1)
            pos = lo1 >= 0.0
            neg = hi1 <= 0.0
            hull = hull_form(np.maximum(0.0, np.maximum(lo1, -hi1)), np.maximum(-lo1, hi1))
            c = np.where(pos, t1.c, np.where(neg, -t1.c, hull.c))
            g = np.where(pos[:, None], t1.g, np.where(neg[:, None], -t1.g, hull.g))
            r = np.where(pos | neg, t1.r, hull.r)
            v = _TForm(c, g, r)
        else:
            raise ValueError(f"unknown node kind {k}")
        vals[i] = v
        if a[i] >= 0 and death[a[i]] == i:
            vals[a[i]] = None
        if b[i] >= 0 and death[b[i]] == i and b[i] != a[i]:
            vals[b[i]] = None
    return to_range(vals[tree.output])


def _choose(tay: _TForm, hull: _TForm, hw):
    """Prefer the Taylor form; fall back to the hull only when the Taylor
    remainder alone is worse than the hull radius.  The linear part is kept
    whenever possible because it cancels against other paths downstream,
    which a hull can never do."""
    use_t = tay.r <= hull.r
    return _TForm(
        np.where(use_t, tay.c, hull.c),
        np.where(use_t[:, None], tay.g, hull.g),
        np.where(use_t, tay.r, hull.r),
    )


def enclosure_hi(tree: ExprTree, box_lo: np.ndarray, box_hi: np.ndarray, use_taylor: bool = True):
    """Upper bound of |tree| per box: min of the natural and Taylor enclosures."""
    lo_n, hi_n = eval_tree_intervals(tree, box_lo, box_hi)
    if not use_taylor:
        return lo_n, hi_n
    lo_t, hi_t = eval_tree_taylor(tree, box_lo, box_hi)
    return np.maximum(lo_n, lo_t), np.minimum(hi_n, hi_t)
