"""Numerical checks of the stability theory, each returning machine-readable reports."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .errors import PreconditionError
from .grid_gradient import causal_path_count, norm_curve, update_variance
from .linalg_core import (InitScheme, determinant, exact_determinant, exact_matmul, init_matrix, make_rng,
                          random_psd, spectral_radii)
from .pretrain import PretrainConfig, gaussian_batches, pretrain_run
from .stack import build_stack, init_stack_params, stack_forward, transition_jacobians

__all__ = [
    "VerificationReport",
    "kostlan_mean",
    "kostlan_check",
    "kostlan_top_variance_check",
    "init_equivalence_check",
    "pascal_bound_check",
    "pascal_shape_check",
    "psd_superadditivity_check",
    "halfrho_linear_bound_check",
    "path_identity_check",
]


@dataclass
class VerificationReport:
    """One claim's outcome.

    ``comparison`` says how ``observed`` is judged against ``predicted``:
    ``"two_sided"`` (relative when ``predicted`` is non-zero, else absolute),
    ``"upper"`` (observed <= predicted + tolerance) or ``"lower"``
    (observed > predicted - tolerance).
    """

    claim: str
    n: int
    samples: int
    observed: float
    predicted: float
    tolerance: float
    passed: bool
    seconds: float
    comparison: str = "two_sided"
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _judge(observed, predicted, tolerance, comparison="two_sided") -> bool:
    if not math.isfinite(observed):
        return False
    if comparison == "upper":
        return observed <= predicted + tolerance
    if comparison == "lower":
        return observed > predicted - tolerance
    if predicted != 0:
        return abs(observed - predicted) / abs(predicted) <= tolerance
    return abs(observed - predicted) <= tolerance


def _report(claim, n, samples, observed, predicted, tolerance, t0, comparison="two_sided", note=""):
    observed = float(observed)
    return VerificationReport(claim, int(n), int(samples), observed, float(predicted), float(tolerance),
                              _judge(observed, predicted, tolerance, comparison),
                              round(time.perf_counter() - t0, 6), comparison, note)


# ---------------------------------------------------------------- Kostlan

def kostlan_mean(k: int) -> float:
    """``sqrt(2) * Gamma((k+1)/2) / Gamma(k/2)``, the mean of a chi variable with k dof."""
    return math.sqrt(2.0) * math.exp(gammaln((k + 1) / 2) - gammaln(k / 2))


def _gaussian_moduli(n, samples, rng, ensemble, chunk=1000):
    out = []
    left = samples
    while left > 0:
        m = min(chunk, left)
        if ensemble == "real":
            a = rng.standard_normal((m, n, n))
        elif ensemble == "complex":
            a = (rng.standard_normal((m, n, n)) + 1j * rng.standard_normal((m, n, n))) / math.sqrt(2)
        else:
            raise ValueError("ensemble must be 'real' or 'complex'")
        out.append(np.sort(np.abs(np.linalg.eigvals(a)), axis=-1))
        left -= m
    return np.concatenate(out)


def kostlan_check(n: int, samples: int, rng: np.random.Generator, ensemble: str = "real",
                  tolerance: float = 0.03) -> list[VerificationReport]:
    """Mean of the k-th smallest eigenvalue modulus against the chi mean, for every k."""
    if n > 64:
        raise ValueError("n must be <= 64")
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    t0 = time.perf_counter()
    mods = _gaussian_moduli(n, samples, rng, ensemble)
    means = mods.mean(axis=0)
    return [_report(f"kostlan_{ensemble}_n{n}_k{k}", n, samples, means[k - 1], kostlan_mean(k), tolerance, t0,
                    note="k-th smallest modulus (order statistic)")
            for k in range(1, n + 1)]


def kostlan_top_variance_check(ns=(4, 16, 64), samples: int = 5000, rng=None,
                               ensemble: str = "real", alpha: float = 0.05) -> VerificationReport:
    """Variance of the largest modulus must fall as n grows.

    Each consecutive pair is tested with a one-sided F test (H1: variance
    decreases); the observed value is the largest p-value over the pairs.
    """
    rng = make_rng(0) if rng is None else rng
    t0 = time.perf_counter()
    variances = []
    for n in ns:
        top = _gaussian_moduli(n, samples, rng, ensemble)[:, -1]
        variances.append(float(np.var(top, ddof=1)))
    pvals = []
    for v_prev, v_next in zip(variances, variances[1:]):
        f = v_prev / v_next
        pvals.append(float(stats.f.sf(f, samples - 1, samples - 1)))
    note = "variances " + ", ".join(f"n={n}: {v:.4f}" for n, v in zip(ns, variances))
    return _report(f"kostlan_top_variance_{ensemble}", max(ns), samples, max(pvals), 0.0, alpha, t0,
                   comparison="upper", note=note)


# ------------------------------------------------- init / stability link

def init_equivalence_check(scheme: str, n: int, activation: str, samples: int,
                           rng: np.random.Generator, tolerance: float | None = None) -> VerificationReport:
    """Mean radius of ``W diag(H(y))^k`` (k=0 linear, k=1 relu) for a weight init scheme.

    ``scheme`` is ``"glorot"`` (variance 1/n), ``"he"`` (variance 2/n) or
    ``"orthogonal"``. Pre-activations ``y`` are standard normal, hence symmetric.
    Orthogonal/linear is judged per sample, through its worst radius.
    """
    if activation not in ("linear", "relu"):
        raise ValueError("activation must be 'linear' or 'relu'")
    schemes = {"glorot": InitScheme.glorot_uniform(), "he": InitScheme.he_normal(),
               "orthogonal": InitScheme.orthogonal()}
    if scheme not in schemes:
        raise ValueError(f"scheme must be one of {sorted(schemes)}")
    t0 = time.perf_counter()
    mats = np.stack([init_matrix(schemes[scheme], n, n, rng) for _ in range(samples)])
    if activation == "relu":
        mask = (rng.standard_normal((samples, n)) >= 0).astype(float)
        mats = mats * mask[:, None, :]
    radii = spectral_radii(mats)
    if scheme == "orthogonal" and activation == "linear":
        observed = float(radii[np.argmax(np.abs(radii - 1.0))])
        tol = 1e-8 if tolerance is None else tolerance
        note = "worst sample radius"
    else:
        observed = float(radii.mean())
        tol = (0.05 if activation == "linear" else 0.07) if tolerance is None else tolerance
        note = "mean radius"
    return _report(f"init_{scheme}_{activation}", n, samples, observed, 1.0, tol, t0, note=note)


# --------------------------------------------------------------- Pascal

def _pascal_grid(L: int, T: int, rho: float, width: int = 1):
    st = build_stack("pascal", L, width, width, rho=rho)
    params = init_stack_params(st, make_rng(0))
    run = stack_forward(st, params, np.zeros((T, width)))
    return transition_jacobians(st, params, run)


def pascal_bound_check(L: int, T: int, rho: float, norm=2) -> VerificationReport:
    """Backward Jacobian norms into layer 1: binomial for rho=1, flat for rho=0.5."""
    if L > 12 or T > 200:
        raise ValueError("need L <= 12 and T <= 200")
    if rho not in (0.5, 1.0):
        raise ValueError("rho must be 0.5 or 1")
    t0 = time.perf_counter()
    curve = norm_curve(_pascal_grid(L, T, rho), norm)
    if rho == 1.0:
        return _report(f"pascal_binomial_L{L}_T{T}", L, T + 1, curve.dev_binomial, 0.0, 1e-6, t0,
                       note=f"c1={curve.c1!r}")
    return _report(f"pascal_constant_L{L}_T{T}", L, T + 1, curve.dev_constant, 0.0, 1e-9, t0,
                   note=f"c2={curve.c2!r}")


def pascal_shape_check(L: int, T: int, rho: float, norm=2) -> VerificationReport:
    """Curve against ``rho^dt * C(dt, L-1)``, valid for every rho."""
    t0 = time.perf_counter()
    curve = norm_curve(_pascal_grid(L, T, rho), norm)
    dt = T - curve.t
    expected = np.array([rho ** d * causal_path_count(int(d), L - 1) for d in dt])
    live = expected > 0
    dev = float(np.max(np.abs(curve.value[live] - expected[live]) / expected[live]))
    if np.any(curve.value[~live] != 0):
        dev = math.inf
    return _report(f"pascal_shape_L{L}_T{T}_rho{rho}", L, T + 1, dev, 0.0, 1e-9, t0)


def path_identity_check(max_a: int = 60, max_T: int = 30) -> VerificationReport:
    """Pascal recurrence of the path count and the closed form of the total bound."""
    from .grid_gradient import path_count, total_path_bound
    t0 = time.perf_counter()
    bad = 0
    for a in range(1, max_a + 1):
        for b in range(1, a):
            if path_count(a - b, b) != path_count(a - b, b - 1) + path_count(a - b - 1, b):
                bad += 1
    for T in range(1, max_T + 1):
        for dl in range(max_T + 1):
            try:
                total_path_bound(T, dl)
            except ArithmeticError:
                bad += 1
    return _report("path_identities", max_a, max_a * max_a + max_T * (max_T + 1), bad, 0, 0, t0)


# ------------------------------------------------------------------ PSD

def psd_superadditivity_check(n: int, samples: int, rng: np.random.Generator,
                              tol: float = 1e-9) -> VerificationReport:
    """Count pairs breaking ``det(A+B) >= det A + det B`` or ``det(AB) = det A det B``.

    The float inputs are exact binary rationals, so the determinants are
    evaluated exactly and the tolerances only absorb the final comparison.
    Wishart draws are often ill-conditioned (cond ~ 1e8), which costs the
    float path about 1e-6 relative accuracy on ``det(AB)``; its violation
    count is kept in the note.
    """
    if n > 16:
        raise ValueError("n must be <= 16")
    t0 = time.perf_counter()
    bad = float_bad = 0
    for _ in range(samples):
        a, b = random_psd(n, rng), random_psd(n, rng)
        da, db = exact_determinant(a), exact_determinant(b)
        if exact_determinant(a + b) < da + db - Fraction(tol):
            bad += 1
        prod = da * db
        if abs(exact_determinant(exact_matmul(a, b)) - prod) > Fraction(tol) * max(abs(prod), 1):
            bad += 1
        fa, fb = determinant(a), determinant(b)
        if determinant(a + b) < fa + fb - tol:
            float_bad += 1
        if abs(determinant(a @ b) - fa * fb) > tol * max(abs(fa * fb), 1.0):
            float_bad += 1
    return _report(f"psd_determinant_n{n}", n, samples, bad, 0, 0, t0,
                   note=f"float64 LU path violations: {float_bad}")


# --------------------------------------------------- update variance

def _pascal_update_variance(L, T, target, batch, rng, start_rho=0.8):
    st = build_stack("pascal", L, 1, 1, rho=start_rho)
    params = init_stack_params(st, rng)
    cfg = PretrainConfig(target=target, grad_mode="kappa_only", max_steps=100, shuffle=True)
    params, rep = pretrain_run(st, params, cfg, gaussian_batches(4, 2, 1), rng)
    if not rep.converged:
        raise PreconditionError(f"pre-training to {target} did not converge (L={L}, T={T})")
    run = stack_forward(st, params, rng.standard_normal((T, batch, 1)))
    var = update_variance(st, params, run, np.ones_like(run.outputs), 1)["rho"][0]
    return float(var)


def halfrho_linear_bound_check(T_list=(25, 50, 100, 200), depth_ratio: float = 0.1,
                               batch: int = 256, seed: int = 0) -> list[VerificationReport]:
    """Growth in T of the layer-1 update variance for pre-trained PascalRNN twins.

    Depth grows jointly with time, ``L = max(1, round(depth_ratio * T))``. The
    exponent is the slope of log-variance against log T.
    """
    out = []
    Ts = np.array(T_list, dtype=float)
    for target, claim, predicted, comparison in ((0.5, "halfrho_exponent", 1.2, "upper"),
                                                 (1.0, "unitrho_exponent", 2.0, "lower")):
        t0 = time.perf_counter()
        rng = make_rng(seed)
        v = [_pascal_update_variance(max(1, round(depth_ratio * T)), int(T), target, batch, rng) for T in T_list]
        slope = float(np.polyfit(np.log(Ts), np.log(v), 1)[0])
        note = "variances " + ", ".join(f"T={int(T)}: {x:.4g}" for T, x in zip(T_list, v))
        out.append(_report(claim, int(max(T_list)), batch, slope, predicted, 0.0, t0, comparison, note))
    return out
