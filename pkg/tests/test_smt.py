import numpy as np
import pytest

from reachcert.certify import Cell, build_residual_tree, partition_roi
from reachcert.config import StateBox
from reachcert.expr import ExprBuilder
from reachcert.smt import export_smtlib, parse_script, write_cell_files


def residual_cell(paper_spec, small_net):
    rtree = build_residual_tree(small_net, paper_spec, "b")
    cell = Cell(index=0, box=StateBox([-2.5, -2.5], [0.0, 0.0]), rho=0.1)
    return rtree, cell


def test_export_is_wellformed_and_reparses(paper_spec, small_net):
    rtree, cell = residual_cell(paper_spec, small_net)
    text = export_smtlib(rtree, cell, rho=0.1, delta=1e-8)
    assert text.startswith("(set-logic QF_NRA)")
    assert "(check-sat)" in text and text.endswith("(exit)\n")
    model = parse_script(text)
    assert model.variables == ["x1", "x2"]
    assert model.bounds["x1"] == [-2.5, 0.0]
    assert model.assertion_rho == 0.1


def test_reparsed_expression_matches_tree(paper_spec, small_net, rng):
    rtree, cell = residual_cell(paper_spec, small_net)
    text = export_smtlib(rtree, cell, rho=0.1, delta=1e-8)
    model = parse_script(text)
    pts = rng.uniform(cell.box.lo, cell.box.hi, size=(100, 2))
    tree_vals = rtree.eval(pts)
    for x, want in zip(pts, tree_vals):
        assert model.eval_residual(x) == pytest.approx(want, abs=1e-12)
        assert model.eval_query(x) == pytest.approx(abs(want), abs=1e-12)


def test_reemission_byte_identical(paper_spec, small_net):
    rtree, cell = residual_cell(paper_spec, small_net)
    a = export_smtlib(rtree, cell, rho=0.1, delta=1e-8)
    b = export_smtlib(rtree, cell, rho=0.1, delta=1e-8)
    assert a == b


def test_decimal_literals_are_exact():
    b = ExprBuilder(n_vars=1)
    tree = b.freeze(b.mul(b.const(1e-8), b.add(b.var(0), b.const(-0.1))))
    cell = Cell(index=0, box=StateBox([-1.0], [1.0]), rho=1e-8)
    text = export_smtlib(tree, cell, rho=1e-8, delta=1e-8)
    # Numeric literals are positional decimals, never scientific notation.
    for token in text.replace("(", " ").replace(")", " ").split():
        if token[0].isdigit():
            assert "e" not in token and "E" not in token
            float(token)  # parses back exactly
    model = parse_script(text)
    assert model.assertion_rho == 1e-8
    x = np.array([0.5])
    assert model.eval_residual(x) == pytest.approx(1e-8 * (0.5 - 0.1), abs=1e-20)


def test_write_cell_files(tmp_path, paper_spec, small_net):
    rtree = build_residual_tree(small_net, paper_spec, "b")
    cells = partition_roi(paper_spec.roi, 2)
    paths = write_cell_files(rtree, cells, rho=0.1, delta=1e-8, out_dir=tmp_path / "smt2")
    assert [p.name for p in paths] == [f"cell_{i}.smt2" for i in range(4)]
    for p in paths:
        model = parse_script(p.read_text())
        assert model.assertion_rho == 0.1


def test_min_and_abs_encoding_roundtrip(rng):
    b = ExprBuilder(n_vars=2)
    x, y = b.var(0), b.var(1)
    tree = b.freeze(b.min(b.abs(b.sub(x, y)), b.sqrt(b.mul(y, y))))
    cell = Cell(index=0, box=StateBox([-2.0, -2.0], [2.0, 2.0]), rho=0.25)
    text = export_smtlib(tree, cell, rho=0.25, delta=1e-8)
    model = parse_script(text)
    pts = rng.uniform(-2, 2, size=(50, 2))
    for p in pts:
        want = min(abs(p[0] - p[1]), abs(p[1]))
        assert model.eval_residual(p) == pytest.approx(want, abs=1e-13)
