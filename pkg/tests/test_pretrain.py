import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lsc.cells import CellSpec, make_cell
from lsc.errors import ConfigError, DegenerateRadiusWarning
from lsc.linalg_core import make_rng, spectral_radius, spectral_radii
from lsc.pretrain import (PretrainConfig, apply_kappa, gaussian_batches, kappa, measure_radii, pascal_step_bound,
                          pretrain_run, radius_grad, radius_loss, shuffle_tensors, weighted_targets)
from lsc.stack import build_stack, init_stack_params, stack_forward, transition_jacobians


def test_radius_loss_examples():
    assert radius_loss([0.5, 0.5], 0.5) == 0
    assert radius_loss([0.0, 1.0], 0.5) == 0.5
    assert radius_loss([1.5], 1.0) == 0.25
    with pytest.raises(ValueError):
        radius_loss([], 1.0)


def test_kappa_examples():
    assert kappa(2.0, 1.0) == 0.85
    assert kappa(1.0, 1.0) == 1.0
    assert kappa(0.95, 1.0) == pytest.approx(1 / 0.95)
    with pytest.warns(DegenerateRadiusWarning):
        assert kappa(0.0, 1.0) == 1.15


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e3), st.floats(1e-6, 1e3), st.floats(0.1, 2.0))
def test_kappa_monotone_decreasing(r1, r2, target):
    lo, hi = sorted((r1, r2))
    assert kappa(lo, target) >= kappa(hi, target)
    assert 0.85 <= kappa(lo, target) <= 1.15


def test_apply_kappa_rnn(rng):
    spec = CellSpec("rnn", 4, 3)
    p = make_cell(spec).init_params(rng)
    assert all(np.array_equal(v, apply_kappa(spec, p, 1.0, 1.0)[k]) for k, v in p.items())
    q = apply_kappa(spec, p, 0.9, 1.0)
    assert np.allclose(q["W_rec"], 0.9 * p["W_rec"]) and np.array_equal(q["W_in"], p["W_in"])


def test_apply_kappa_pascal_rescales_radius_exactly():
    spec = CellSpec("pascal", 1, 1, rho=0.8)
    p = make_cell(spec).init_params(make_rng(0))
    q = apply_kappa(spec, p, 0.9, 0.9)
    cell = make_cell(spec)
    z = np.zeros((1, 1))
    assert spectral_radius(cell.jac_time(q, z, z)[0]) == pytest.approx(0.9 * 0.8, rel=1e-15)


def test_apply_kappa_alif_mapping(rng):
    spec = CellSpec("alif", 3, 2)
    p = make_cell(spec).init_params(rng)
    q = apply_kappa(spec, p, 1.1, 0.9)
    for name in ("W_in", "b_theta", "beta"):
        assert np.allclose(q[name], 0.9 * p[name])
    assert np.allclose(q["W_rec"], 1.1 * p["W_rec"])
    for name in ("tau_y", "tau_theta"):
        assert np.allclose(q[name], np.maximum(1.1 * p[name], 0.1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_shuffle_preserves_multiset(seed):
    rng = make_rng(seed)
    p = make_cell(CellSpec("gru", 4, 3)).init_params(rng)
    q = shuffle_tensors(p, rng)
    for k in p:
        assert q[k].shape == p[k].shape
        assert np.array_equal(np.sort(q[k].ravel()), np.sort(p[k].ravel()))


def test_shuffle_replay_and_frozen():
    p = {"a": np.arange(10.0), "b": np.arange(5.0), "one": np.array([3.0])}
    q1 = shuffle_tensors(p, make_rng(4), frozen=("b",))
    q2 = shuffle_tensors(p, make_rng(4), frozen=("b",))
    assert all(np.array_equal(q1[k], q2[k]) for k in p)
    assert np.array_equal(q1["b"], p["b"]) and q1["one"][0] == 3.0


def test_shuffle_keeps_radius_distribution():
    """Two-sample KS on 200 seeds per side of an i.i.d. (Glorot) recurrent matrix.

    The samples come from disjoint seeds so that they are independent, as KS assumes.
    """
    spec = CellSpec("alif", 16, 4)
    before = [spectral_radius(make_cell(spec).init_params(make_rng(s))["W_rec"], method="lapack")
              for s in range(200)]
    after = []
    for seed in range(200, 400):
        rng = make_rng(seed)
        w = make_cell(spec).init_params(rng)["W_rec"]
        after.append(spectral_radius(shuffle_tensors({"w": w}, rng)["w"], method="lapack"))
    assert stats.ks_2samp(before, after).pvalue > 0.01


def test_weighted_targets():
    assert weighted_targets(4, 4) == (0.5, 0.5)
    assert weighted_targets(100, 3) == (100 / 103, 3 / 103)
    assert sum(weighted_targets(7, 2)) == pytest.approx(1.0)


def test_pascal_gradient_is_hand_derivative():
    st_ = build_stack("pascal", 2, 1, 1, rho=0.7)
    params = init_stack_params(st_, make_rng(0))
    x = np.zeros((4, 1, 1))
    grads, info = radius_grad(st_, params, x, 0.5, mode="eigen_adjoint")
    # every layer has 4 time and 4 depth Jacobians equal to rho * I
    for g in grads:
        assert g["rho"][0] == pytest.approx(8 * 2 * (0.7 - 0.5), rel=1e-12)
    at_target, _ = radius_grad(st_, init_stack_params(build_stack("pascal", 2, 1, 1, rho=0.5), make_rng(0)),
                               x, 0.5)
    assert all(g["rho"][0] == 0 for g in at_target)


@pytest.mark.parametrize("kind,kw", [("rnn", {"activation": "sigmoid"}), ("gru", {}), ("lstm", {})])
def test_eigen_adjoint_matches_finite_difference(kind, kw):
    rng = make_rng(5)
    st_ = build_stack(kind, 2, 4, 3, **kw)
    params = init_stack_params(st_, rng)
    x = rng.standard_normal((3, 2, 3))
    ga, _ = radius_grad(st_, params, x, 0.5, mode="eigen_adjoint")
    gf, _ = radius_grad(st_, params, x, 0.5, mode="finite_difference")
    for la, lf in zip(ga, gf):
        for k in lf:
            scale = max(np.max(np.abs(lf[k])), 1e-8)
            assert np.max(np.abs(la[k] - lf[k])) / scale < 1e-4, (kind, k)


def test_pretrain_config_validation():
    with pytest.raises(ConfigError):
        PretrainConfig(target=0.5, eps=0.6)
    with pytest.raises(ConfigError):
        PretrainConfig(kappa_clip=(1.05, 1.2))
    with pytest.raises(ConfigError):
        PretrainConfig(grad_mode="newton")


@pytest.mark.parametrize("start", [0.011, 0.3, 2.0, 7.5, 99.0])
def test_pascal_kappa_only_within_step_bound(start):
    st_ = build_stack("pascal", 3, 1, 1, rho=start)
    params = init_stack_params(st_, make_rng(0))
    cfg = PretrainConfig(target=1.0, grad_mode="kappa_only", max_steps=200)
    out, rep = pretrain_run(st_, params, cfg, gaussian_batches(5, 2, 1))
    assert rep.converged
    assert rep.steps_taken <= pascal_step_bound(start, 1.0)
    assert abs(out.layers[0]["rho"][0] - 1.0) <= 0.02


def test_already_converged_stops_at_step_one():
    st_ = build_stack("pascal", 2, 1, 1, rho=0.5)
    params = init_stack_params(st_, make_rng(0))
    out, rep = pretrain_run(st_, params, PretrainConfig(target=0.5, grad_mode="kappa_only"), gaussian_batches(3, 2, 1))
    assert rep.converged and rep.steps_taken == 1
    assert out.layers[0]["rho"][0] == 0.5


def test_pretrain_trace_and_replay(tmp_path):
    def once(path):
        st_ = build_stack("rnn", 2, 4, 3)
        params = init_stack_params(st_, make_rng(2))
        _, rep = pretrain_run(st_, params, PretrainConfig(target=0.5, max_steps=15, seed=2),
                              gaussian_batches(5, 4, 3))
        rep.write_trace(path)
        return rep

    a, b = once(tmp_path / "a.csv"), once(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header == ["step", "mean_rho", "std_rho", "ema_std", "loss",
                      "kappa_time_l1", "kappa_time_l2", "kappa_depth_l1", "kappa_depth_l2"]
    assert a.converged == b.converged


def test_alif_defaults_to_kappa_only():
    st_ = build_stack("alif", 2, 4, 3)
    params = init_stack_params(st_, make_rng(0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRadiusWarning)
        _, rep = pretrain_run(st_, params, PretrainConfig(target=0.5, max_steps=3), gaussian_batches(4, 2, 3))
    assert rep.grad_mode == "kappa_only"


def test_measure_radii_shapes(rng):
    st_ = build_stack("lstm", 2, 3, 2)
    params = init_stack_params(st_, rng)
    run = stack_forward(st_, params, rng.standard_normal((4, 5, 2)))
    rt, rd = measure_radii(transition_jacobians(st_, params, run))
    assert rt.shape == rd.shape == (2, 4, 5)
    assert np.all(rt >= 0)
