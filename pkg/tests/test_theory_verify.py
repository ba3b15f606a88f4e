import json
import math

import numpy as np
import pytest
from scipy import stats

from lsc.linalg_core import make_rng
from lsc.theory_verify import (VerificationReport, init_equivalence_check, kostlan_check, kostlan_mean,
                               kostlan_top_variance_check, pascal_bound_check, pascal_shape_check,
                               path_identity_check, psd_superadditivity_check)


def test_kostlan_mean_is_chi_mean():
    for k in (1, 2, 5, 8):
        assert kostlan_mean(k) == pytest.approx(stats.chi(k).mean(), rel=1e-12)
    assert kostlan_mean(8) == pytest.approx(2.7416, abs=1e-4)


def test_kostlan_check_reports_every_k():
    reps = kostlan_check(4, 1000, make_rng(0))
    assert [r.claim for r in reps] == [f"kostlan_real_n4_k{k}" for k in range(1, 5)]
    assert all(r.samples == 1000 and r.tolerance == 0.03 for r in reps)
    with pytest.raises(ValueError):
        kostlan_check(65, 1000, make_rng(0))
    with pytest.raises(ValueError):
        kostlan_check(4, 10, make_rng(0))


def test_kostlan_variance_small():
    rep = kostlan_top_variance_check((2, 8), 2000, make_rng(1))
    assert rep.comparison == "upper" and rep.passed


def test_report_serialization():
    r = VerificationReport("x", 1, 2, 0.5, 0.5, 0.1, True, 0.0)
    d = json.loads(r.to_json())
    assert d["pass"] is True and "passed" not in d
    assert set(d) == {"claim", "n", "samples", "observed", "predicted", "tolerance", "pass", "seconds",
                      "comparison", "note"}


def test_orthogonal_init_exactly_one():
    rep = init_equivalence_check("orthogonal", 16, "linear", 50, make_rng(0))
    assert rep.passed and abs(rep.observed - 1) < 1e-8
    with pytest.raises(ValueError):
        init_equivalence_check("lecun", 8, "linear", 5, make_rng(0))


def test_pascal_checks_small():
    assert pascal_bound_check(3, 10, 1.0).passed
    assert pascal_shape_check(3, 10, 0.5).passed
    assert pascal_shape_check(4, 12, 0.8).passed
    with pytest.raises(ValueError):
        pascal_bound_check(3, 10, 0.7)


def test_path_identities_small():
    assert path_identity_check(20, 10).passed


def test_psd_small():
    rep = psd_superadditivity_check(3, 20, make_rng(0))
    assert rep.passed and rep.observed == 0


def test_determinism_of_reports():
    a = [r.observed for r in kostlan_check(4, 1000, make_rng(9))]
    b = [r.observed for r in kostlan_check(4, 1000, make_rng(9))]
    assert a == b
