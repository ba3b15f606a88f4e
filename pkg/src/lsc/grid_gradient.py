"""The time x depth gradient grid.

``J[t', l]`` below always means ``d h[T, L] / d h[t', l]`` for a fixed top cell
``(T, L)``; layers are 1-based in this module. Every backward step moves one
time step down, and a depth move also drops one layer, so the number of
lattice paths from ``(T, L)`` to ``(t', l)`` is ``C(T - t', L - l)``.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .errors import SizeError, StatisticsError
from .linalg_core import frobenius_norm, induced_norm
from .stack import JacobianGrid, StackConfig, StackParams, StackRun, backprop, readout_vjp, transition_jacobians

__all__ = [
    "grid_jacobians",
    "grid_jacobian",
    "brute_force_paths",
    "path_count",
    "causal_path_count",
    "log_path_count",
    "total_path_bound",
    "growth_regime",
    "BoundCurve",
    "norm_curve",
    "decomposed_updates",
    "reverse_mode_updates",
    "update_variance",
    "CovarianceReport",
    "decaying_covariance",
]


# ------------------------------------------------------------- grid DP

def grid_jacobians(grid: JacobianGrid, sample: int = 0, top: tuple[int, int] | None = None) -> list[np.ndarray]:
    """All ``J[t', l]`` for one sample by dynamic programming.

    Returns a list indexed by ``l - 1`` of arrays ``(T_top + 1, n_state(L_top), n_state(l))``.
    Cells that cannot reach the top are exactly zero.
    """
    T, L = (grid.T, grid.L) if top is None else top
    if not (1 <= T <= grid.T and 1 <= L <= grid.L):
        raise IndexError(f"top cell ({T}, {L}) outside the grid")
    sizes = [grid.time[l][0, sample].shape[0] for l in range(L)]
    n_top = sizes[-1]
    J = [np.zeros((T + 1, n_top, sizes[l])) for l in range(L)]
    J[L - 1][T] = np.eye(n_top)
    for tp in range(T - 1, -1, -1):
        for l in range(L - 1, -1, -1):
            acc = J[l][tp + 1] @ grid.time[l][tp, sample]
            if l + 1 < L:
                acc = acc + J[l + 1][tp + 1] @ grid.depth[l + 1][tp, sample]
            J[l][tp] = acc
    return J


def grid_jacobian(grid: JacobianGrid, t_prime: int, l: int, sample: int = 0) -> np.ndarray:
    if not (0 <= t_prime <= grid.T and 1 <= l <= grid.L):
        raise IndexError(f"(t'={t_prime}, l={l}) outside the grid")
    return grid_jacobians(grid, sample)[l - 1][t_prime]


def brute_force_paths(grid: JacobianGrid, t_prime: int, l: int, sample: int = 0,
                      limit: int = 10**6) -> np.ndarray:
    """Sum over every monotone lattice path of the product of transition derivatives."""
    T, L = grid.T, grid.L
    if not (0 <= t_prime <= T and 1 <= l <= L):
        raise IndexError(f"(t'={t_prime}, l={l}) outside the grid")
    dt, dl = T - t_prime, L - l
    n_top = grid.time[L - 1][0, sample].shape[0]
    n_l = grid.time[l - 1][0, sample].shape[0]
    total = np.zeros((n_top, n_l))
    if dl > dt:
        return total
    if math.comb(dt, dl) > limit:
        raise SizeError(f"{math.comb(dt, dl)} paths exceed the limit of {limit}")
    for depth_steps in itertools.combinations(range(dt), dl):
        prod = np.eye(n_top)
        layer = L
        drops = set(depth_steps)
        for k in range(dt):
            t = T - k  # the transition entering step t
            if k in drops:
                prod = prod @ grid.depth[layer - 1][t - 1, sample]
                layer -= 1
            else:
                prod = prod @ grid.time[layer - 1][t - 1, sample]
        total += prod
    return total


# ------------------------------------------------------- combinatorics

def path_count(dt: int, dl: int) -> int:
    """Shortest lattice paths across a ``dt x dl`` rectangle: ``C(dt + dl, dt)``."""
    if dt < 0 or dl < 0:
        raise ValueError("dt and dl must be >= 0")
    return math.comb(dt + dl, dt)


def causal_path_count(dt: int, dl: int) -> int:
    """Paths in the causal grid, where a depth move also costs a time step."""
    if dt < 0 or dl < 0:
        raise ValueError("dt and dl must be >= 0")
    return math.comb(dt, dl) if dl <= dt else 0


def log_path_count(dt: int, dl: int) -> float:
    """``log C(dt + dl, dt)`` through log-gamma, for sizes past exact evaluation."""
    return math.lgamma(dt + dl + 1) - math.lgamma(dt + 1) - math.lgamma(dl + 1)


def total_path_bound(T: int, dl: int) -> Fraction:
    """``C(T + dl + 2, T) / T``, checked against its double-sum definition."""
    if T < 1 or dl < 0:
        raise ValueError("need T >= 1 and dl >= 0")
    closed = Fraction(math.comb(T + dl + 2, T), T)
    # sum over t of sum over d <= t of C(dl + d, d), the inner sum kept as a running total
    inner = outer = 0
    for t in range(T + 1):
        inner += math.comb(dl + t, t)
        outer += inner
    double = Fraction(outer, T)
    if closed != double:
        raise ArithmeticError(f"closed form {closed} != double sum {double} at T={T}, dl={dl}")
    return closed


def _log(v) -> float:
    if isinstance(v, Fraction):
        return math.log(v.numerator) - math.log(v.denominator)
    return math.log(v)


def growth_regime(values, window: int = 5, tol: float = 0.05) -> str:
    """Classify an evenly sampled positive sequence as exponential or subexponential.

    Exponential means the successive log-differences settle on a positive
    constant: over the last ``window`` differences they stay positive and
    their spread is within ``tol`` of their mean.
    """
    vals = list(values)
    if len(vals) < 10:
        raise ValueError("need at least 10 samples")
    logs = np.array([_log(v) for v in vals])
    d = np.diff(logs)[-window:]
    if np.min(d) <= 0:
        return "subexponential"
    spread = (np.max(d) - np.min(d)) / np.mean(d)
    return "exponential" if spread <= tol else "subexponential"


# --------------------------------------------------------- bound curves

def _norm(m: np.ndarray, which) -> float:
    return frobenius_norm(m) if which == "fro" else induced_norm(m, which)


@dataclass
class BoundCurve:
    """Norms of ``J[t', 1]`` with the tightest binomial and constant envelopes.

    ``c1`` scales the path-count shape ``C(T - t', L - 1)``; ``c2`` is a flat
    level. ``dev_*`` is the largest relative gap between curve and envelope.
    """

    t: np.ndarray
    value: np.ndarray
    shape: np.ndarray
    c1: float
    c2: float
    dev_binomial: float
    dev_constant: float
    norm: object = 2

    @property
    def kind(self) -> str:
        return "binomial" if self.dev_binomial <= self.dev_constant else "constant"

    @property
    def bound_binomial(self) -> np.ndarray:
        return self.c1 * self.shape

    @property
    def bound_constant(self) -> np.ndarray:
        return np.full_like(self.value, self.c2)

    def rows(self):
        for t, v, b1, b2 in zip(self.t, self.value, self.bound_binomial, self.bound_constant):
            yield {"t": int(t), "value": float(v), "bound_binomial": float(b1), "bound_constant": float(b2)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["t", "value", "bound_binomial", "bound_constant"])
            w.writeheader()
            for r in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def norm_curve(grid: JacobianGrid, norm=2, sample: int = 0) -> BoundCurve:
    T, L = grid.T, grid.L
    J1 = grid_jacobians(grid, sample)[0]
    t = np.arange(T + 1)
    value = np.array([_norm(J1[tp], norm) for tp in t])
    shape = np.array([float(causal_path_count(T - tp, L - 1)) for tp in t])
    live = shape > 0
    if np.any(value[~live] != 0):
        dev_b, c1 = math.inf, float(np.max(value[live] / shape[live]))
    else:
        ratios = value[live] / shape[live]
        c1 = float(np.max(ratios))
        dev_b = float(np.max(np.abs(ratios - c1) / c1)) if c1 > 0 else math.inf
    c2 = float(np.max(value))
    dev_c = float(np.max(np.abs(value - c2)) / c2) if c2 > 0 else math.inf
    return BoundCurve(t, value, shape, c1, c2, dev_b, dev_c, norm)


# ------------------------------------------------- update decomposition

def decomposed_updates(stack: StackConfig, params: StackParams, run: StackRun,
                       g_outputs: np.ndarray, layer: int) -> dict[str, np.ndarray]:
    """Per-sample parameter update of ``layer`` (1-based) assembled term by term.

    For every output step ``t`` the row vector ``dloss/do_t . do_t/dh[t, L]`` is
    carried down its own copy of the grid recursion, giving
    ``dloss/do_t . J^{t,L}[t', l]`` separately per ``t``; each is then contracted
    with the immediate parameter derivative of ``h[t', l]``. Returns arrays with
    a leading batch axis.
    """
    L, T, B = stack.depth, run.T, run.batch
    if not 1 <= layer <= L:
        raise IndexError(f"layer {layer} outside 1..{L}")
    grid = transition_jacobians(stack, params, run)
    top_cot, _ = readout_vjp(stack, params, run, g_outputs)
    cells = stack.cells
    lo = layer - 1
    # nxt[l] has shape (T_top, B, n_state(l)): one row vector per output step
    nxt = [None] * L
    total: dict[str, np.ndarray] = {}

    def add(g):
        for k, v in g.items():
            total[k] = total[k] + v if k in total else v.copy()

    for tp in range(T, -1, -1):
        cur = [None] * L
        for l in range(L - 1, lo - 1, -1):
            u = np.zeros((T, B, cells[l].n_state))
            if tp < T:
                if nxt[l] is not None:
                    u += np.einsum("kbi,bij->kbj", nxt[l], grid.time[l][tp])
                if l + 1 < L and nxt[l + 1] is not None:
                    u += np.einsum("kbi,bij->kbj", nxt[l + 1], grid.depth[l + 1][tp])
            if l == L - 1 and tp >= 1:
                u[tp - 1] += top_cot[tp]
            cur[l] = u
        u_sum = cur[lo].sum(axis=0)
        cell, p = cells[lo], params.layers[lo]
        if tp >= 1:
            add(cell.step_vjp(p, run.states[lo][tp - 1], run.below(tp, lo, cells), u_sum, per_sample=True)[2])
        else:
            add(cell.initial_state_vjp(p, u_sum, per_sample=True))
        nxt = cur
    for k, v in params.layers[lo].items():
        if k not in total:
            total[k] = np.zeros((B,) + v.shape)
    return total


def reverse_mode_updates(stack: StackConfig, params: StackParams, run: StackRun,
                         g_outputs: np.ndarray, layer: int) -> dict[str, np.ndarray]:
    """Same quantity by one ordinary reverse sweep; the oracle for the decomposition."""
    cot, _ = readout_vjp(stack, params, run, g_outputs)
    cots = [None] * (stack.depth - 1) + [cot]
    grads, _ = backprop(stack, params, run, cots, per_sample=True)
    return grads[layer - 1]


def update_variance(stack: StackConfig, params: StackParams, run: StackRun,
                    g_outputs: np.ndarray, layer: int) -> dict[str, np.ndarray]:
    """Element-wise variance across the batch of the decomposed update."""
    if run.batch < 2:
        raise StatisticsError("update variance needs a batch of at least 2 samples")
    upd = decomposed_updates(stack, params, run, g_outputs, layer)
    return {k: np.var(v, axis=0, ddof=1) for k, v in upd.items()}


# ------------------------------------------------------------ covariance

@dataclass
class CovarianceReport:
    lags: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray
    p_value: np.ndarray
    undefined: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    q: int = 1


def decaying_covariance(series, q: int = 1) -> CovarianceReport:
    """Covariance, Pearson correlation and two-sided p-value of ``a[:, t]**q``
    against ``a[:, 0]**q``; rows are independent samples, columns are steps."""
    a = np.asarray(series, dtype=float)
    if a.ndim != 2:
        raise ValueError("series must be (samples, steps)")
    if q not in (1, 2):
        raise ValueError("only q in {1, 2} is supported")
    n, T = a.shape
    if n < 20:
        raise StatisticsError("need at least 20 samples per step")
    a = a ** q
    c = a - a.mean(axis=0)
    cov = (c * c[:, :1]).sum(axis=0) / (n - 1)
    sd = np.sqrt((c * c).sum(axis=0) / (n - 1))
    undefined = (sd == 0) | (sd[0] == 0)
    corr = np.full(T, np.nan)
    pval = np.full(T, np.nan)
    ok = ~undefined
    corr[ok] = np.clip(cov[ok] / (sd[ok] * sd[0]), -1.0, 1.0)
    r = corr[ok]
    with np.errstate(divide="ignore"):
        tstat = r * np.sqrt((n - 2) / np.maximum(1.0 - r * r, 0.0))
    pval[ok] = np.where(np.abs(r) >= 1.0, 0.0, 2.0 * stats.t.sf(np.abs(tstat), n - 2))
    return CovarianceReport(np.arange(T), cov, corr, pval, undefined, q)
