"""Acceptance criteria 1-11, one PASS/FAIL line each (also summarized at the end of the run).

Run alone with ``python3 tests/test_acceptance.py``.
"""
import json
import os
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from _support import fd_jacobian, random_run, record, rel_err
from lsc.cells import CellSpec, jac_depth, make_cell
from lsc.errors import DegenerateRadiusWarning
from lsc.grid_gradient import brute_force_paths, grid_jacobian, growth_regime, path_count, total_path_bound
from lsc.linalg_core import make_rng
from lsc.pretrain import PretrainConfig, gaussian_batches, pascal_step_bound, pretrain_run
from lsc.stack import build_stack, init_stack_params, transition_jacobians
from lsc.tasks import TaskSpec
from lsc.theory_verify import (halfrho_linear_bound_check, init_equivalence_check, kostlan_check, kostlan_mean,
                               kostlan_top_variance_check, pascal_bound_check, psd_superadditivity_check)
from lsc.training import RunConfig, train_seed


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.s = time.perf_counter() - self.t0


def test_c1a_pascal_binomial_at_unit_rho():
    with Timer() as tm:
        rep = pascal_bound_check(10, 100, 1.0)
    ok = rep.passed and tm.s < 10
    record("C1a PascalRNN rho=1 binomial", ok, f"max rel dev {rep.observed:.3g} (< 1e-6), {tm.s:.2f}s")
    assert ok


def test_c1b_pascal_constant_at_half_rho():
    with Timer() as tm:
        rep = pascal_bound_check(10, 100, 0.5)
    ok = rep.passed and tm.s < 10
    record("C1b PascalRNN rho=0.5 constant", ok,
           f"max rel dev from constant {rep.observed:.3g} (< 1e-9), {rep.note}, {tm.s:.2f}s")
    assert ok


def test_c2_grid_equals_path_enumeration():
    rng = make_rng(2)
    kinds = [("pascal", {}), ("rnn", {"activation": "sigmoid"}), ("gru", {}), ("lstm", {}), ("alif", {})]
    worst, runs = 0.0, 0
    with Timer() as tm:
        for i in range(50):
            kind, kw = kinds[i % 5]
            T, L, w = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
            stack, params, run = random_run(kind, rng, T, L, w, channels=2, **kw)
            grid = transition_jacobians(stack, params, run)
            for tp in range(T + 1):
                for l in range(1, L + 1):
                    d = np.max(np.abs(grid_jacobian(grid, tp, l) - brute_force_paths(grid, tp, l)))
                    worst = max(worst, float(d))
            runs += 1
    ok = worst < 1e-10 and tm.s < 60
    record("C2 grid DP == path enumeration", ok, f"{runs} runs, max abs dev {worst:.3g}, {tm.s:.2f}s")
    assert ok


def test_c3_path_combinatorics():
    with Timer() as tm:
        recurrence = all(path_count(a - b, b) == path_count(a - b, b - 1) + path_count(a - b - 1, b)
                         for a in range(1, 61) for b in range(1, a))
        closed = True
        for T in range(1, 31):
            for dl in range(31):
                try:
                    total_path_bound(T, dl)  # raises when closed form and double sum differ
                except ArithmeticError:
                    closed = False
        regimes = (growth_regime([total_path_bound(T, 5) for T in range(10, 201, 10)]),
                   growth_regime([total_path_bound(5, d) for d in range(10, 201, 10)]),
                   growth_regime([total_path_bound(100 * k, k) for k in range(1, 21)]))
    ok = recurrence and closed and regimes == ("subexponential", "subexponential", "exponential") and tm.s < 5
    record("C3 path combinatorics", ok,
           f"recurrence={recurrence}, closed form={closed}, regimes (i)/(ii)/(iii)={regimes}, {tm.s:.2f}s")
    assert ok


def test_c4a_kostlan_top_modulus():
    with Timer() as tm:
        top = kostlan_check(8, 5000, make_rng(4))[-1]
    ok = top.passed and tm.s < 120
    record("C4a Kostlan n=8 top modulus", ok,
           f"mean {top.observed:.4f} vs {kostlan_mean(8):.4f}, rel dev "
           f"{abs(top.observed / top.predicted - 1):.3f} (< 0.03), {tm.s:.2f}s")
    assert ok


def test_c4b_kostlan_top_variance_decreases():
    with Timer() as tm:
        rep = kostlan_top_variance_check((4, 16, 64), 5000, make_rng(5))
    ok = rep.passed and tm.s < 120
    record("C4b top-modulus variance decreasing", ok, f"max one-sided F p-value {rep.observed:.3g}, "
           f"{rep.note}, {tm.s:.2f}s")
    assert ok


@pytest.mark.parametrize("scheme,activation,salt", [("glorot", "linear", 1), ("he", "relu", 2),
                                                    ("orthogonal", "linear", 3)])
def test_c5_init_equivalence(scheme, activation, salt):
    with Timer() as tm:
        rep = init_equivalence_check(scheme, 32, activation, 2000, make_rng(np.random.SeedSequence([5, salt])))
    ok = rep.passed and tm.s < 120
    record(f"C5 {scheme}/{activation} radius", ok,
           f"{rep.note} {rep.observed:.6f} vs 1 (tol {rep.tolerance:g}), {tm.s:.2f}s")
    assert ok


def _jac_errors(spec, below_spec, rng, points=100, per_draw=10):
    """Worst relative error of jac_time and jac_depth against central differences."""
    cell = make_cell(spec)
    bc = make_cell(below_spec) if below_spec else None
    worst_t = worst_d = 0.0
    for _ in range(points // per_draw):
        params = cell.init_params(rng)
        prev = rng.standard_normal((per_draw, cell.n_state))
        if spec.kind == "alif":
            prev[:, cell.n:] = np.abs(prev[:, cell.n:])
        width_below = bc.n_state if bc else cell.m
        bstate = rng.standard_normal((per_draw, width_below))
        if below_spec is not None and below_spec.kind == "alif":
            bstate[:, bc.n:] = np.abs(bstate[:, bc.n:])
        feed = bc.output if bc else (lambda s: s)
        jt = cell.jac_time(params, prev, feed(bstate))
        jd = jac_depth(spec, params, prev, bstate, below_spec)
        worst_t = max(worst_t, rel_err(jt, fd_jacobian(lambda x: cell.step(params, x, feed(bstate)), prev)))
        worst_d = max(worst_d, rel_err(jd, fd_jacobian(lambda s: cell.step(params, prev, feed(s)), bstate)))
    return worst_t, worst_d


def test_c6_jacobians_against_finite_differences():
    rng = make_rng(6)
    smooth = {
        "pascal": (CellSpec("pascal", 4, 4, rho=0.9), CellSpec("pascal", 4, 4, rho=0.9)),
        "rnn-sigmoid": (CellSpec("rnn", 5, 4), CellSpec("rnn", 4, 3)),
        "rnn-swish": (CellSpec("rnn", 5, 4, activation="swish"), CellSpec("rnn", 4, 3, activation="swish")),
        "gru": (CellSpec("gru", 5, 4), CellSpec("gru", 4, 3)),
        "lstm": (CellSpec("lstm", 4, 3), CellSpec("lstm", 3, 2)),
    }
    alif = (CellSpec("alif", 4, 3, relaxed=True), CellSpec("alif", 3, 2, relaxed=True))
    parts, ok = [], True
    with Timer() as tm:
        for name, (top, below) in smooth.items():
            et, ed = _jac_errors(top, None, rng)
            _, ed2 = _jac_errors(top, below, rng)
            e = max(et, ed, ed2)
            ok &= e < 1e-6
            parts.append(f"{name} {e:.1e}")
        et, ed = _jac_errors(alif[0], None, rng)
        _, ed2 = _jac_errors(*alif, rng)
        e = max(et, ed, ed2)
        ok &= e < 1e-5
        parts.append(f"alif-relaxed {e:.1e}")
    ok &= tm.s < 60
    record("C6 Jacobians vs central FD (100 points/cell)", ok, ", ".join(parts) + f", {tm.s:.2f}s")
    assert ok


def test_c7a_pascal_kappa_only_step_bound():
    stack = build_stack("pascal", 3, 1, 1, rho=2.0)
    params = init_stack_params(stack, make_rng(7))
    with Timer() as tm:
        out, rep = pretrain_run(stack, params, PretrainConfig(target=1.0, grad_mode="kappa_only"),
                                gaussian_batches(10, 4, 1), make_rng(7))
    bound = pascal_step_bound(2.0, 1.0)
    ok = rep.converged and rep.steps_taken <= bound and tm.s < 300
    record("C7a PascalRNN kappa-only 2.0 -> 1", ok,
           f"converged={rep.converged} in {rep.steps_taken} steps (bound {bound}), "
           f"final rho {rep.final.mean_rho:.4f}, {tm.s:.2f}s")
    assert ok


def test_c7b_gru_pretraining_to_half():
    stack = build_stack("gru", 2, 8, 4)
    params = init_stack_params(stack, make_rng(1))
    with Timer() as tm:
        _, rep = pretrain_run(stack, params, PretrainConfig(target=0.5, max_steps=500, seed=1),
                              gaussian_batches(10, 8, 4))
    f = rep.final
    ok = (rep.converged and abs(f.mean_rho - 0.5) <= 0.02 and f.std_rho < 0.2 and f.ema_std < 0.2
          and rep.steps_taken <= 500 and tm.s < 300)
    record("C7b GRU depth 2 width 8 -> 0.5", ok,
           f"converged={rep.converged} at step {rep.steps_taken}, mean {f.mean_rho:.4f}, std {f.std_rho:.3f}, "
           f"EMA {f.ema_std:.3f}, grad {rep.grad_mode}, {tm.s:.2f}s")
    assert ok


def test_c8_variance_growth_separation():
    with Timer() as tm:
        half, unit = halfrho_linear_bound_check((25, 50, 100, 200), depth_ratio=0.1, batch=256, seed=8)
    ok = half.passed and unit.passed and tm.s < 300
    record("C8 update-variance growth exponents", ok,
           f"rho=0.5 exponent {half.observed:.3f} (<= 1.2), rho=1 exponent {unit.observed:.1f} (> 2), {tm.s:.2f}s")
    assert ok


def test_c9_psd_determinant():
    with Timer() as tm:
        rep = psd_superadditivity_check(6, 1000, make_rng(9))
    ok = rep.passed and tm.s < 10
    record("C9 PSD determinant properties", ok, f"{int(rep.observed)} violations in 1000 pairs "
           f"({rep.note}), {tm.s:.2f}s")
    assert ok


def test_c10_pretraining_training_benefit():
    task = TaskSpec(kind="synthetic_rowsum", T=20, channels=4, classes=4, n_train=512, n_val=128, n_test=256)
    base = dict(task=task, cell="rnn", activation="sigmoid", depth=2, width=32, max_epochs=200,
                early_stop_patience=10, seeds=[0, 1, 2, 3])
    acc = {}
    with Timer() as tm:
        for name, pre in (("baseline", None), ("rho_t=0.5", PretrainConfig(target=0.5))):
            cfg = RunConfig(**base, pretrain=pre)
            acc[name] = np.array([train_seed(cfg, s).test["accuracy"] for s in cfg.seeds])
    pre_m, base_m = acc["rho_t=0.5"].mean(), acc["baseline"].mean()
    ok = pre_m >= base_m and tm.s < 900
    record("C10 rowsum: pre-trained >= baseline", ok,
           f"pre-trained {pre_m:.4f} +- {acc['rho_t=0.5'].std():.4f} vs baseline {base_m:.4f} "
           f"+- {acc['baseline'].std():.4f} over 4 seeds, {tm.s:.1f}s")
    assert ok


def _cli(args, cwd):
    env = {**os.environ, "LSC_SEED": "5"}
    return subprocess.run([sys.executable, "-m", "lsc", *args], cwd=cwd, env=env, capture_output=True)


def test_c11_determinism(tmp_path):
    (tmp_path / "run.ini").write_text(
        "[run]\ndepth = 1\nwidth = 4\nmax_epochs = 2\nseeds = [0, 1]\noutput_dir = \"out\"\n\n"
        "[task]\nT = 5\nn_train = 32\nn_val = 16\nn_test = 16\n\n[pretrain]\ntarget = 0.5\nmax_steps = 5\n")
    commands = [
        ["verify", "--claim", "kostlan", "--seed", "7", "--no-timing"],
        ["verify", "--claim", "psd", "--samples", "50", "--no-timing"],
        ["pascal", "--depth", "4", "--time", "20", "--rho", "0.5", "--out", "curve.csv"],
        ["pretrain", "--cell", "rnn", "--depth", "2", "--width", "4", "--max-steps", "20", "--out", "pre"],
        ["train", "--config", "run.ini"],
        ["report", "out"],
    ]
    artifacts = ["curve.csv", "pre/pretrain_trace.csv", "pre/pretrain_summary.json", "out/aggregate.json",
                 "out/metrics_seed0.csv", "out/metrics_seed1.csv", "out/result_seed0.json"]
    snapshots = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        d.mkdir()
        (d / "run.ini").write_text((tmp_path / "run.ini").read_text())
        outs = [_cli(c, d) for c in commands]
        snapshots.append(([(o.returncode, o.stdout) for o in outs], [(d / a).read_bytes() for a in artifacts]))
    same = snapshots[0] == snapshots[1]
    record("C11 bit-identical replay", same, f"{len(commands)} commands, {len(artifacts)} artifact files")
    assert same


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
