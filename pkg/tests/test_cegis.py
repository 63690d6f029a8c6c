import numpy as np
import pytest

from reachcert import net
from reachcert.cegis import COUNTEREXAMPLE_WEIGHT, run_cegis
from reachcert.certify import CertifyOptions
from reachcert.config import SpecError
from reachcert.residuals import NetValueFn, residual_route_b_stationary

FAST = net.TrainSchedule(iterations=40, batch_size=256, buffer_size=2048, trace_every=50)


def test_max_rounds_validation(paper_spec):
    with pytest.raises(SpecError):
        run_cegis(paper_spec, "b", rho=0.1, delta=1e-8, max_rounds=0, schedule=FAST)


def test_certifiable_at_loose_bound_single_round(paper_spec):
    # A bound far above the coarse residual range certifies in one round.
    params, cert, report = run_cegis(
        paper_spec, "b", rho=50.0, delta=1e-8, max_rounds=3, schedule=FAST, seed=4
    )
    assert report.final_status == "CERTIFIED"
    assert len(report.rounds) == 1
    assert cert.all_unsat and cert.eps_val == pytest.approx(50.0)
    assert report.rounds[0].counterexamples.shape[0] == 0


def test_exhausted_is_reported_not_raised(paper_spec):
    params, cert, report = run_cegis(
        paper_spec,
        "b",
        rho=1e-6,  # unreachable bound at desk scale
        delta=1e-8,
        max_rounds=2,
        schedule=FAST,
        seed=4,
        options=CertifyOptions(budget=20_000),
    )
    assert report.final_status == "EXHAUSTED"
    assert len(report.rounds) == 2
    # Every recorded counterexample violates the round's bound minus delta
    # against that round's network; the last round's are checkable directly.
    last = report.rounds[-1]
    assert last.counterexamples.shape[0] >= 1
    for w in last.counterexamples:
        r = residual_route_b_stationary(NetValueFn(params), w, paper_spec)
        assert abs(r) > 1e-6 - 1e-8


def test_counterexample_enrichment_deterministic(paper_spec):
    out1 = run_cegis(
        paper_spec, "b", rho=1e-6, delta=1e-8, max_rounds=2, schedule=FAST, seed=4,
        options=CertifyOptions(budget=20_000),
    )
    out2 = run_cegis(
        paper_spec, "b", rho=1e-6, delta=1e-8, max_rounds=2, schedule=FAST, seed=4,
        options=CertifyOptions(budget=20_000),
    )
    for wa, wb in zip(out1[0].weights + out1[0].biases, out2[0].weights + out2[0].biases):
        assert np.array_equal(wa, wb)
    assert out1[2].to_json() == out2[2].to_json()


def test_buffer_enrichment_weights(paper_spec):
    from reachcert.cegis import _enrich
    from reachcert.net import ReplayBuffer

    buf = ReplayBuffer(capacity=10_000, seed=0)
    buf.fill_uniform(paper_spec, 100)
    witnesses = np.array([[0.0, 0.0], [1.0, 1.0]])
    _enrich(buf, witnesses, paper_spec, seed=0, round_index=0)
    assert buf.size == 100 + 2 * 65  # witness + 64 neighbors each
    assert np.all(buf.weights[-130:] == COUNTEREXAMPLE_WEIGHT)
    assert np.all(buf.states >= paper_spec.roi.lo) and np.all(buf.states <= paper_spec.roi.hi)


def test_report_serialization(paper_spec, tmp_path):
    _, _, report = run_cegis(
        paper_spec, "b", rho=50.0, delta=1e-8, max_rounds=1, schedule=FAST, seed=4
    )
    report.save(tmp_path / "report.json")
    report.save_counterexamples_csv(tmp_path / "cx.csv")
    import json

    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["final_status"] == "CERTIFIED"
    header = (tmp_path / "cx.csv").read_text().splitlines()[0]
    assert header.startswith("round,x1")
