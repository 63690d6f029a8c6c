import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reachcert.config import (
    CostSpec,
    Interval,
    ProblemSpec,
    SpecError,
    StateBox,
    derive_gamma,
    dump_config,
    load_config,
    spec_hash,
)


def test_derive_gamma_paper_value():
    assert derive_gamma(1.0, 0.05) == pytest.approx(0.9512294245, abs=1e-9)


def test_derive_gamma_closed_form():
    assert derive_gamma(2.0, 0.5) == pytest.approx(math.exp(-1.0), rel=1e-15)


@pytest.mark.parametrize("lam,sigma", [(1.0, 0.0), (0.0, 0.05), (-1.0, 0.05), (1.0, -0.1)])
def test_derive_gamma_rejects_nonpositive(lam, sigma):
    with pytest.raises(SpecError):
        derive_gamma(lam, sigma)


@given(
    lam=st.floats(0.01, 50.0),
    sigma=st.floats(0.001, 5.0),
    dl=st.floats(0.001, 1.0),
    ds=st.floats(0.001, 1.0),
)
def test_derive_gamma_monotone_decreasing(lam, sigma, dl, ds):
    g = derive_gamma(lam, sigma)
    assert derive_gamma(lam + dl, sigma) <= g
    assert derive_gamma(lam, sigma + ds) <= g


def test_interval_validation():
    assert Interval(-1.0, 2.0).width == 3.0
    with pytest.raises(SpecError):
        Interval(1.0, 0.0)
    with pytest.raises(SpecError):
        Interval(0.0, math.inf)


def test_statebox_split_exact_endpoint_reuse():
    box = StateBox([-1.0, 0.3], [2.0, 0.9])
    left, right = box.split(0)
    assert left.hi[0] == right.lo[0]
    assert left.lo[0] == box.lo[0] and right.hi[0] == box.hi[0]
    assert np.array_equal(left.lo, box.lo) and np.array_equal(right.hi, box.hi)
    assert np.all(left.lo <= left.hi) and np.all(right.lo <= right.hi)


def test_statebox_rejects_bad_bounds():
    with pytest.raises(SpecError):
        StateBox([1.0], [0.0])
    with pytest.raises(SpecError):
        StateBox([0.0, 1.0], [1.0])


def test_costspec_validation():
    with pytest.raises(SpecError):
        CostSpec(alpha=0.0, r_g=0.5)
    with pytest.raises(SpecError):
        CostSpec(alpha=1.0, r_g=-1.0)


def test_preset_matches_experiment_table(paper_spec):
    assert paper_spec.lam == 1.0
    assert paper_spec.sigma == 0.05
    assert paper_spec.gamma == pytest.approx(0.9512294245, abs=1e-9)
    assert paper_spec.cost.alpha == 1.0 and paper_spec.cost.r_g == 0.5
    assert np.array_equal(paper_spec.roi.lo, [-2.5, -2.5])
    assert np.array_equal(paper_spec.roi.hi, [2.5, 2.5])
    assert np.array_equal(paper_spec.control_lo, [-1.0])
    assert np.array_equal(paper_spec.control_hi, [1.0])
    assert paper_spec.stationary


def test_gamma_is_rederived_within_one_ulp(paper_spec):
    assert paper_spec.gamma == math.exp(-paper_spec.lam * paper_spec.sigma)
    assert 0.0 < paper_spec.gamma < 1.0


def test_config_roundtrip_bit_exact(paper_spec, tmp_path):
    path = tmp_path / "cfg.json"
    dump_config(paper_spec, path)
    loaded = load_config(path)
    assert loaded == paper_spec
    assert spec_hash(loaded) == spec_hash(paper_spec)


def test_stale_gamma_rejected_on_load(paper_spec, tmp_path):
    doc = paper_spec.to_json()
    doc["gamma"] = doc["gamma"] * (1.0 + 1e-9)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(SpecError):
        load_config(path)


def test_invalid_configs_rejected(paper_spec):
    base = paper_spec.to_json()

    def variant(**kw):
        doc = json.loads(json.dumps(base))
        doc.pop("gamma")
        doc.update(kw)
        return doc

    with pytest.raises(SpecError):
        ProblemSpec.from_json(variant(sigma=3.0))  # sigma > horizon
    with pytest.raises(SpecError):
        ProblemSpec.from_json(variant(control={"lo": [1.0], "hi": [1.0]}))
    with pytest.raises(SpecError):
        ProblemSpec.from_json(variant(roi={"lo": [0.0, 0.0], "hi": [0.0, 1.0]}))
    with pytest.raises(SpecError):
        ProblemSpec.from_json({"lambda": 1.0})


def test_unknown_preset_and_missing_file():
    with pytest.raises(SpecError):
        load_config("no-such-preset-or-file.json")
