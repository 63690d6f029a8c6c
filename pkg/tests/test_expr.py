import json

import numpy as np
import pytest

from reachcert.expr import ExprBuilder, ExprTree, dump_tree, load_tree


def build_sample_tree():
    b = ExprBuilder(n_vars=2)
    x, y = b.var(0), b.var(1)
    inner = b.add(b.mul(b.const(2.0), x), b.mul(y, y))
    return b, b.freeze(b.add(b.sin(inner), b.mul(b.const(0.5), b.cos(x))))


def ref_fn(pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.sin(2.0 * x + y * y) + 0.5 * np.cos(x)


def test_eval_matches_reference(rng):
    _, tree = build_sample_tree()
    pts = rng.uniform(-3, 3, size=(500, 2))
    assert tree.eval(pts) == pytest.approx(ref_fn(pts), abs=1e-14)
    single = tree.eval(pts[0])
    assert single == pytest.approx(ref_fn(pts[:1])[0])


def test_hash_consing_dedupes():
    b = ExprBuilder(n_vars=1)
    x = b.var(0)
    a1 = b.add(x, b.const(1.0))
    a2 = b.add(b.var(0), b.const(1.0))
    assert a1 == a2


def test_json_roundtrip_bit_exact(rng):
    _, tree = build_sample_tree()
    doc = tree.to_json()
    back = ExprTree.from_json(json.loads(json.dumps(doc)))
    assert back.to_json() == doc
    pts = rng.uniform(-2, 2, size=(100, 2))
    assert np.array_equal(back.eval(pts), tree.eval(pts))


def test_dump_and_load(tmp_path, rng):
    _, tree = build_sample_tree()
    p = tmp_path / "t.json"
    dump_tree(tree, p)
    back = load_tree(p)
    pts = rng.uniform(-2, 2, size=(50, 2))
    assert np.array_equal(back.eval(pts), tree.eval(pts))


def test_freeze_prunes_unreachable():
    b = ExprBuilder(n_vars=1)
    x = b.var(0)
    used = b.sin(x)
    b.mul(x, b.const(42.0))  # dead node
    tree = b.freeze(used)
    assert tree.n_nodes == 2
    assert not any(v == 42.0 for v in tree.value)


def test_diff_matches_finite_differences(rng):
    b = ExprBuilder(n_vars=2)
    x, y = b.var(0), b.var(1)
    expr = b.mul(b.sin(b.mul(x, y)), b.add(x, b.cos(b.sub(x, y))))
    dx = b.freeze(b.diff(expr, 0))
    dy = b.freeze(b.diff(expr, 1))
    f = b.freeze(expr)
    pts = rng.uniform(-2, 2, size=(200, 2))
    h = 1e-6
    for var, g in [(0, dx), (1, dy)]:
        dp = pts.copy()
        dm = pts.copy()
        dp[:, var] += h
        dm[:, var] -= h
        fd = (f.eval(dp) - f.eval(dm)) / (2 * h)
        assert g.eval(pts) == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_diff_rejects_nonsmooth():
    b = ExprBuilder(n_vars=1)
    s = b.sqrt(b.var(0))
    with pytest.raises(ValueError):
        b.diff(s, 0)


def test_import_tree_with_substitution(rng):
    _, tree = build_sample_tree()
    b = ExprBuilder(n_vars=2)
    # Substitute x -> x + 1, y -> 2y.
    x, y = b.var(0), b.var(1)
    sub = b.import_tree(tree, var_map=[b.add(x, b.const(1.0)), b.mul(b.const(2.0), y)])
    shifted = b.freeze(sub)
    pts = rng.uniform(-2, 2, size=(100, 2))
    moved = np.stack([pts[:, 0] + 1.0, 2.0 * pts[:, 1]], axis=-1)
    assert shifted.eval(pts) == pytest.approx(tree.eval(moved), abs=1e-13)


def test_min_max_abs_sqrt_eval(rng):
    b = ExprBuilder(n_vars=2)
    x, y = b.var(0), b.var(1)
    tree = b.freeze(b.min(b.abs(x), b.max(y, b.sqrt(b.mul(x, x)))))
    pts = rng.uniform(-2, 2, size=(200, 2))
    want = np.minimum(np.abs(pts[:, 0]), np.maximum(pts[:, 1], np.abs(pts[:, 0])))
    assert tree.eval(pts) == pytest.approx(want, abs=1e-14)


def test_var_index_validation():
    b = ExprBuilder(n_vars=2)
    with pytest.raises(ValueError):
        b.var(2)
