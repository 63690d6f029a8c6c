import numpy as np
import pytest

from reachcert import net
from reachcert.certify import (
    Cell,
    CertifyOptions,
    IndeterminateError,
    build_residual_tree,
    certify_cell,
    certify_roi,
    load_certificate,
    partition_roi,
)
from reachcert.config import SpecError, StateBox
from reachcert.expr import ExprBuilder
from reachcert.residuals import NetValueFn, residual_route_a, residual_route_b_stationary


def square_tree():
    b = ExprBuilder(n_vars=1)
    return b.freeze(b.mul(b.var(0), b.var(0)))


def unit_box():
    return StateBox([-1.0], [1.0])


def zero_net(sizes=(2, 8, 8, 1)):
    p = net.init(seed=0, sizes=sizes)
    return net.NetParams(
        sizes=p.sizes,
        w0=p.w0,
        seed=p.seed,
        weights=tuple(np.zeros_like(w) for w in p.weights),
        biases=tuple(np.zeros_like(b) for b in p.biases),
    )


def test_partition_roi_examples(paper_spec):
    cells = partition_roi(paper_spec.roi, 4)
    assert len(cells) == 16
    for c in cells:
        assert c.box.widths == pytest.approx([1.25, 1.25], abs=0.0)
    one = partition_roi(paper_spec.roi, 1)
    assert len(one) == 1 and one[0].box == paper_spec.roi


def test_partition_tiles_exactly(paper_spec):
    cells = partition_roi(paper_spec.roi, 3)
    # Shared faces reuse identical endpoint bits and the union covers the ROI.
    los = sorted({float(c.box.lo[0]) for c in cells})
    his = sorted({float(c.box.hi[0]) for c in cells})
    assert los[0] == paper_spec.roi.lo[0] and his[-1] == paper_spec.roi.hi[0]
    assert los[1:] == his[:-1]
    with pytest.raises(SpecError):
        partition_roi(paper_spec.roi, 0)


def test_certify_cell_square_examples():
    tree = square_tree()
    v = certify_cell(tree, Cell(0, unit_box(), rho=2.0), delta=1e-8)
    assert v.status == "UNSAT" and v.proven_sup <= 1.0 and v.boxes_explored == 1

    v = certify_cell(tree, Cell(0, unit_box(), rho=0.5), delta=1e-8)
    assert v.status == "DELTA_SAT"
    assert v.witness[0] ** 2 > 0.5 - 1e-8

    # Boundary case: the supremum equals the bound; the tightened square rule
    # makes the enclosure exact so pruning still succeeds.
    v = certify_cell(tree, Cell(0, unit_box(), rho=1.0), delta=1e-8)
    assert v.status == "UNSAT" and v.proven_sup == 1.0


def test_certify_cell_deterministic():
    tree = square_tree()
    a = certify_cell(tree, Cell(0, unit_box(), rho=0.5), delta=1e-8)
    b = certify_cell(tree, Cell(0, unit_box(), rho=0.5), delta=1e-8)
    assert a.status == b.status and a.boxes_explored == b.boxes_explored
    assert np.array_equal(a.witness, b.witness)


def test_certify_cell_monotone_in_rho():
    b = ExprBuilder(n_vars=2)
    x, y = b.var(0), b.var(1)
    tree = b.freeze(b.add(b.sin(b.mul(b.const(3.0), x)), b.mul(y, y)))
    box = StateBox([-1.0, -1.0], [1.0, 1.0])
    statuses = []
    for rho in [0.5, 1.0, 1.5, 2.0, 2.5]:
        v = certify_cell(tree, Cell(0, box, rho=rho), delta=1e-8)
        statuses.append(v.status)
    # Once UNSAT, larger rho stays UNSAT.
    first_unsat = statuses.index("UNSAT") if "UNSAT" in statuses else len(statuses)
    assert all(s == "UNSAT" for s in statuses[first_unsat:])
    assert statuses[0] == "DELTA_SAT" and statuses[-1] == "UNSAT"


def test_certify_cell_budget_exhaustion():
    b = ExprBuilder(n_vars=2)
    # Highly oscillatory target at a bound just below the supremum forces deep search.
    tree = b.freeze(b.sin(b.mul(b.const(200.0), b.add(b.var(0), b.mul(b.var(1), b.var(1))))))
    box = StateBox([-1.0, -1.0], [1.0, 1.0])
    with pytest.raises(IndeterminateError):
        certify_cell(tree, Cell(0, box, rho=0.99999999), delta=1e-12, options=CertifyOptions(budget=64))


def test_certify_cell_rejects_bad_delta():
    with pytest.raises(SpecError):
        certify_cell(square_tree(), Cell(0, unit_box(), rho=1.0), delta=0.0)


def test_route_b_tree_matches_numeric_residual(paper_spec, small_net, rng):
    rtree = build_residual_tree(small_net, paper_spec, "b")
    pts = rng.uniform(-2.5, 2.5, size=(300, 2))
    sym = rtree.eval(pts)
    num = residual_route_b_stationary(NetValueFn(small_net), pts, paper_spec)
    assert sym == pytest.approx(num, abs=1e-11)


def test_route_a_tree_matches_numeric_residual(paper_spec, small_net, rng):
    rtree = build_residual_tree(small_net, paper_spec, "a")
    lo = np.array([-2.37375, -2.45]) + 1e-6
    hi = -lo
    pts = rng.uniform(lo, hi, size=(200, 2))
    sym = np.abs(rtree.eval(pts))
    num = residual_route_a(NetValueFn(small_net), pts, paper_spec)
    assert sym == pytest.approx(num, abs=1e-11)


def test_certify_roi_zero_candidate_has_counterexample(paper_spec):
    # The zero function violates the PDE inside the target band, where the
    # residual equals -h and reaches 0.5 at the origin.
    cert = certify_roi(zero_net(), paper_spec, "b", rho=0.1, delta=1e-8, cells_per_axis=2)
    assert not cert.all_unsat
    assert cert.eps_val is None
    wit = cert.witnesses()
    assert wit.shape[0] >= 1
    assert np.any(np.linalg.norm(wit, axis=1) < 0.5)
    for cell, v in zip(cert.cells, cert.verdicts):
        if v.status == "DELTA_SAT":
            r = residual_route_b_stationary(NetValueFn(zero_net()), v.witness, paper_spec)
            assert abs(r) > cell.rho - cert.delta


def test_certify_roi_coarse_bound_single_prune(paper_spec, small_net):
    # A bound above the one-shot interval estimate prunes each cell immediately.
    from reachcert.intervals import eval_interval

    rtree = build_residual_tree(small_net, paper_spec, "b")
    coarse = max(
        abs(v)
        for c in partition_roi(paper_spec.roi, 2)
        for v in (eval_interval(_absify(rtree), c.box).lo, eval_interval(_absify(rtree), c.box).hi)
    )
    cert = certify_roi(small_net, paper_spec, "b", rho=coarse * 1.01, delta=1e-8, cells_per_axis=2)
    assert cert.all_unsat
    assert all(v.boxes_explored == 1 for v in cert.verdicts)
    assert cert.eps_val == pytest.approx(coarse * 1.01 / paper_spec.lam)


def _absify(tree):
    b = ExprBuilder(tree.n_vars)
    return b.freeze(b.abs(b.import_tree(tree)))


def test_certify_roi_route_a_domain_is_shrunk(paper_spec, small_net):
    cert = certify_roi(small_net, paper_spec, "a", rho=10.0, delta=1e-8, cells_per_axis=2)
    assert cert.all_unsat
    los = np.array([c.box.lo for c in cert.cells]).min(axis=0)
    his = np.array([c.box.hi for c in cert.cells]).max(axis=0)
    assert los == pytest.approx([-2.37375, -2.45], abs=1e-12)
    assert his == pytest.approx([2.37375, 2.45], abs=1e-12)
    assert cert.eps_val == pytest.approx(10.0 / (1.0 - paper_spec.gamma), rel=1e-12)


def test_certificate_roundtrip_and_validation(paper_spec, small_net, tmp_path):
    cert = certify_roi(small_net, paper_spec, "b", rho=5.0, delta=1e-8, cells_per_axis=2)
    path = tmp_path / "cert.json"
    cert.save(path)
    back = load_certificate(path)
    assert back.eps_val == cert.eps_val
    assert back.bound == cert.bound
    assert [v.status for v in back.verdicts] == [v.status for v in cert.verdicts]

    import json

    doc = json.loads(path.read_text())
    doc["eps_val"] = 123.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(SpecError):
        load_certificate(bad)


def test_certify_roi_parallel_matches_serial(paper_spec, small_net):
    a = certify_roi(small_net, paper_spec, "b", rho=5.0, delta=1e-8, cells_per_axis=2, threads=1)
    b = certify_roi(small_net, paper_spec, "b", rho=5.0, delta=1e-8, cells_per_axis=2, threads=2)
    assert [v.status for v in a.verdicts] == [v.status for v in b.verdicts]
    assert [v.boxes_explored for v in a.verdicts] == [v.boxes_explored for v in b.verdicts]
    assert a.eps_val == b.eps_val
