"""Pre-training a recurrent stack so its transition derivatives hit a target radius.

Each step measures the spectral radius of every time and depth Jacobian over a
batch, optionally takes an AdaBelief step on the squared radius error, then
rescales every layer by the clipped ratio ``kappa = target / radius`` and
shuffles the entries of each learnable tensor.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cells import make_cell
from .errors import ConfigError, DegenerateRadiusWarning, NumericalError, SizeError
from .linalg_core import make_rng, pad_square, spectral_radii
from .optim import AdaBelief
from .stack import (JacobianGrid, StackConfig, StackParams, StackRun, backprop, stack_forward,
                    transition_jacobians)

__all__ = [
    "radius_loss",
    "kappa",
    "apply_kappa",
    "shuffle_tensors",
    "weighted_targets",
    "measure_radii",
    "radius_grad",
    "default_grad_mode",
    "gaussian_batches",
    "PretrainConfig",
    "RadiusStats",
    "PretrainReport",
    "pretrain_run",
    "pascal_step_bound",
]

GRAD_MODES = ("kappa_only", "finite_difference", "eigen_adjoint")


def radius_loss(radii, target) -> float:
    r = np.asarray(radii, dtype=float)
    if r.size == 0:
        raise ValueError("radius list is empty")
    return float(np.sum((r - target) ** 2))


def kappa(rho: float, target: float, clip=(0.85, 1.15)) -> float:
    lo, hi = clip
    if rho <= 1e-12:
        warnings.warn(f"radius {rho:g} is degenerate; using kappa={hi}", DegenerateRadiusWarning,
                      stacklevel=2)
        return hi
    return float(min(max(target / rho, lo), hi))


def apply_kappa(spec, params: dict, kappa_time: float, kappa_depth: float) -> dict:
    """Scale input-side tensors by ``kappa_depth`` and recurrent-side ones by ``kappa_time``."""
    cell = make_cell(spec)
    out = {k: v.copy() for k, v in params.items()}
    if spec.kind == "pascal":
        out["rho"] = out["rho"] * math.sqrt(kappa_time * kappa_depth)
        return out
    for name in cell.input_side:
        out[name] = out[name] * kappa_depth
    for name in cell.recurrent_side:
        out[name] = out[name] * kappa_time
    return cell.clamp(out)


def shuffle_tensors(params: dict, rng: np.random.Generator, frozen=()) -> dict:
    """Permute the entries of every learnable tensor independently."""
    out = {}
    for name in sorted(params):
        v = params[name]
        if name in frozen:
            out[name] = v.copy()
        else:
            out[name] = rng.permutation(v.ravel()).reshape(v.shape)
    return {k: out[k] for k in params}


def weighted_targets(T: int, L: int) -> tuple[float, float]:
    if T < 1 or L < 1:
        raise ValueError("T and L must be >= 1")
    return T / (T + L), L / (T + L)


def _targets(target) -> tuple[float, float]:
    if isinstance(target, (tuple, list)):
        return float(target[0]), float(target[1])
    return float(target), float(target)


def measure_radii(grid: JacobianGrid) -> tuple[np.ndarray, np.ndarray]:
    """Radii of every Jacobian; both arrays are ``(L, T, B)``."""
    rt = np.stack([spectral_radii(j) for j in grid.time])
    rd = np.stack([spectral_radii(j) for j in grid.depth])
    return rt, rd


def _check_finite(rt, rd):
    for name, r in (("time", rt), ("depth", rd)):
        bad = np.argwhere(~np.isfinite(r))
        if bad.size:
            where = [(name, int(l) + 1, int(t) + 1, int(b)) for l, t, b in bad[:10]]
            raise NumericalError(f"non-finite radius at (kind, layer, t, sample) {where}", where=where)


# ------------------------------------------------------------ gradients

def default_grad_mode(kind: str) -> str:
    return "kappa_only" if kind == "alif" else "eigen_adjoint"


def _add(acc: dict, g: dict):
    for k, v in g.items():
        acc[k] = acc[k] + v if k in acc else v.copy()


def _eigen_adjoint(stack: StackConfig, params: StackParams, run: StackRun, grid: JacobianGrid,
                   targets, degenerate_tol: float = 1e-8):
    cells = stack.cells
    L, T = stack.depth, run.T
    for l in range(1, L):
        if cells[l - 1].spec.kind == "alif":
            raise ConfigError("eigen_adjoint does not support ALIF layers feeding upward; use kappa_only")
    cots = [np.zeros((T + 1, run.batch, c.n_state)) for c in cells]
    grads: list[dict] = [dict() for _ in cells]
    n_degenerate = 0
    tgt = _targets(targets)
    for l, cell in enumerate(cells):
        p = params.layers[l]
        for which, mats, target in (("time", grid.time[l], tgt[0]), ("input", grid.depth[l], tgt[1])):
            r, c = mats.shape[-2:]
            lam, V = np.linalg.eig(pad_square(mats))
            try:
                W = np.linalg.inv(V)
            except np.linalg.LinAlgError:
                W = np.linalg.pinv(V)
            mod = np.abs(lam)
            top = np.argmax(mod, axis=-1)
            lam_top = np.take_along_axis(lam, top[..., None], -1)
            rho = np.abs(lam_top)[..., 0]
            dist = np.abs(lam - lam_top)
            order = np.argsort(dist, axis=-1, kind="stable")
            member = np.take_along_axis(dist, order, -1) < degenerate_tol
            count = member.sum(axis=-1)
            n_degenerate += int(np.sum(count > 1))
            coef = np.where(rho > 0, 2.0 * (rho - target) / np.where(rho > 0, rho, 1.0), 0.0)
            for k in range(int(count.max())):
                j = order[..., k]
                weight = member[..., k] / count * coef
                lam_j = np.take_along_axis(lam, j[..., None], -1)[..., 0]
                v = np.take_along_axis(V, j[..., None, None], -1)[..., 0]
                w = np.take_along_axis(W, j[..., None, None], -2)[..., 0, :]
                a = (weight * np.conj(lam_j))[..., None] * w
                pairs = ((a.real[..., :r], v.real[..., :c]), (-a.imag[..., :r], v.imag[..., :c]))
                for t in range(1, T + 1):
                    prev = run.states[l][t - 1]
                    below = run.below(t, l, cells)
                    for u_, v_ in pairs:
                        uu, vv = u_[t - 1], v_[t - 1]
                        if not np.any(uu) or not np.any(vv):
                            continue
                        if which == "input" and l > 0:
                            vv = np.einsum("bij,bj->bi", cells[l - 1].output_jac(run.states[l - 1][t - 1]), vv)
                        gp, gprev, gbelow = cell.jac_bilinear_grad(p, prev, below, which, uu, vv)
                        _add(grads[l], gp)
                        cots[l][t - 1] += gprev
                        if l > 0:
                            cots[l - 1][t - 1] += cells[l - 1].output_vjp(run.states[l - 1][t - 1], gbelow)
    bp, _ = backprop(stack, params, run, cots)
    for l in range(L):
        _add(grads[l], bp[l])
    return grads, n_degenerate


def _loss_at(stack, params, inputs, targets) -> float:
    run = stack_forward(stack, params, inputs)
    rt, rd = measure_radii(transition_jacobians(stack, params, run))
    tt, td = _targets(targets)
    return radius_loss(rt, tt) + radius_loss(rd, td)


def _finite_difference(stack, params: StackParams, inputs, targets, step=1e-4, limit=5000):
    count = sum(v.size for p in params.layers for v in p.values())
    if count > limit:
        raise SizeError(f"finite differences limited to {limit} parameters, stack has {count}")
    grads = []
    for l, p in enumerate(params.layers):
        g = {}
        for name in p:
            arr = p[name]
            out = np.zeros_like(arr)
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = _loss_at(stack, params, inputs, targets)
                flat[i] = orig - step
                fm = _loss_at(stack, params, inputs, targets)
                flat[i] = orig
                out.reshape(-1)[i] = (fp - fm) / (2 * step)
            g[name] = out
        grads.append(g)
    return grads


def radius_grad(stack: StackConfig, params: StackParams, inputs, targets, mode: str = "eigen_adjoint"):
    """Gradient of the radius loss w.r.t. every tensor of every layer.

    Returns ``(grads, info)`` where ``grads`` is a per-layer list of dicts and
    ``info`` reports the loss and how many Jacobians had a repeated dominant
    eigenvalue (those use the average over the dominant cluster).
    """
    if mode == "finite_difference":
        grads = _finite_difference(stack, params, inputs, targets)
        return grads, {"loss": _loss_at(stack, params, inputs, targets), "degenerate": 0}
    if mode != "eigen_adjoint":
        raise ValueError(f"unknown gradient mode {mode!r}")
    run = stack_forward(stack, params, inputs)
    grid = transition_jacobians(stack, params, run)
    grads, n_deg = _eigen_adjoint(stack, params, run, grid, targets)
    rt, rd = measure_radii(grid)
    tt, td = _targets(targets)
    return grads, {"loss": radius_loss(rt, tt) + radius_loss(rd, td), "degenerate": n_deg}


# ------------------------------------------------------------- the loop

def gaussian_batches(T: int, batch: int, channels: int, std: float = 1.0) -> Callable:
    """Sample source drawing ``(T, batch, channels)`` Gaussian inputs."""
    def draw(rng: np.random.Generator) -> np.ndarray:
        return std * rng.standard_normal((T, batch, channels))
    return draw


@dataclass
class PretrainConfig:
    target: float | tuple[float, float] = 1.0
    eps: float = 0.02
    std_threshold: float = 0.2
    ema_window: int = 10
    kappa_clip: tuple[float, float] = (0.85, 1.15)
    learning_rate: float = 3.14e-3
    weight_decay: float = 1e-4
    max_steps: int = 500
    shuffle: bool = True
    grad_mode: str | None = None  # None picks a default per cell kind
    seed: int = 0

    def __post_init__(self):
        tt, td = _targets(self.target)
        if not (0 < self.eps < min(tt, td)):
            raise ConfigError("need 0 < eps < target")
        lo, hi = self.kappa_clip
        if not lo < 1 < hi:
            raise ConfigError("kappa clip must straddle 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.ema_window < 1:
            raise ConfigError("ema_window must be >= 1")
        if self.grad_mode is not None and self.grad_mode not in GRAD_MODES:
            raise ConfigError(f"grad_mode must be one of {GRAD_MODES}")


@dataclass
class RadiusStats:
    step: int
    mean_rho: float
    std_rho: float
    ema_std: float
    loss: float
    mean_time: float
    mean_depth: float
    layer_time: list[float]
    layer_depth: list[float]

    def criteria(self, cfg: PretrainConfig) -> tuple[bool, bool, bool]:
        if isinstance(cfg.target, (tuple, list)):
            tt, td = _targets(cfg.target)
            ok_mean = abs(self.mean_time - tt) <= cfg.eps and abs(self.mean_depth - td) <= cfg.eps
        else:
            ok_mean = abs(self.mean_rho - cfg.target) <= cfg.eps
        return ok_mean, self.std_rho < cfg.std_threshold, self.ema_std < cfg.std_threshold


@dataclass
class PretrainReport:
    steps_taken: int
    converged: bool
    final: RadiusStats
    history: list[RadiusStats] = field(default_factory=list)
    kappa_history: list[tuple[list[float], list[float]]] = field(default_factory=list)
    degenerate: int = 0
    grad_mode: str = "kappa_only"

    @property
    def loss_history(self) -> list[float]:
        return [s.loss for s in self.history]

    def trace_rows(self):
        L = len(self.final.layer_time)
        for i, s in enumerate(self.history):
            kt, kd = self.kappa_history[i] if i < len(self.kappa_history) else ([1.0] * L, [1.0] * L)
            row = {"step": s.step, "mean_rho": s.mean_rho, "std_rho": s.std_rho,
                   "ema_std": s.ema_std, "loss": s.loss}
            row.update({f"kappa_time_l{l + 1}": kt[l] for l in range(L)})
            row.update({f"kappa_depth_l{l + 1}": kd[l] for l in range(L)})
            yield row

    def write_trace(self, path) -> None:
        rows = list(self.trace_rows())
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    def summary(self) -> dict:
        f = self.final
        return {"steps_taken": self.steps_taken, "converged": self.converged,
                "mean_rho": f.mean_rho, "std_rho": f.std_rho, "ema_std": f.ema_std,
                "mean_time": f.mean_time, "mean_depth": f.mean_depth,
                "degenerate": self.degenerate, "grad_mode": self.grad_mode}


def _stats(step, rt, rd, targets, prev_ema, window) -> RadiusStats:
    tt, td = _targets(targets)
    # one k per (kind, layer, t); its radius is the batch mean
    dev = np.concatenate([(rt.mean(axis=2) - tt).ravel(), (rd.mean(axis=2) - td).ravel()])
    std = float(np.std(dev))
    alpha = 2.0 / (window + 1)
    ema = std if prev_ema is None else prev_ema + alpha * (std - prev_ema)
    allr = np.concatenate([rt.ravel(), rd.ravel()])
    return RadiusStats(
        step=step,
        mean_rho=float(allr.mean()),
        std_rho=std,
        ema_std=float(ema),
        loss=radius_loss(rt, tt) + radius_loss(rd, td),
        mean_time=float(rt.mean()),
        mean_depth=float(rd.mean()),
        layer_time=[float(x) for x in rt.mean(axis=(1, 2))],
        layer_depth=[float(x) for x in rd.mean(axis=(1, 2))],
    )


def pretrain_run(stack: StackConfig, params: StackParams, config: PretrainConfig,
                 batch_source: Callable[[np.random.Generator], np.ndarray],
                 rng: np.random.Generator | None = None) -> tuple[StackParams, PretrainReport]:
    """Run the pre-training loop; returns the new parameters and a report."""
    rng = make_rng(config.seed) if rng is None else rng
    cells = stack.cells
    mode = config.grad_mode
    if mode is None:
        kinds = {c.spec.kind for c in cells}
        mode = "kappa_only" if "alif" in kinds else default_grad_mode(cells[0].spec.kind)
    params = params.copy()
    opt = None
    if mode != "kappa_only":
        opt = AdaBelief(lr=config.learning_rate, weight_decay=config.weight_decay)
    tt, td = _targets(config.target)
    history: list[RadiusStats] = []
    kappas = []
    degenerate = 0
    ema = None
    converged = False
    for step in range(1, config.max_steps + 1):
        inputs = batch_source(rng)
        run = stack_forward(stack, params, inputs)
        grid = transition_jacobians(stack, params, run)
        rt, rd = measure_radii(grid)
        _check_finite(rt, rd)
        stats = _stats(step, rt, rd, config.target, ema, config.ema_window)
        ema = stats.ema_std
        history.append(stats)
        if all(stats.criteria(config)):
            converged = True
            break
        if step == config.max_steps:
            break
        if opt is not None:
            grads, _ = _eigen_adjoint(stack, params, run, grid, config.target) if mode == "eigen_adjoint" \
                else (_finite_difference(stack, params, inputs, config.target), 0)
            flat_p, flat_g = {}, {}
            for l, cell in enumerate(cells):
                for name in cell.trainable(params.layers[l]):
                    flat_p[(l, name)] = params.layers[l][name]
                    flat_g[(l, name)] = grads[l][name]
            if not all(np.all(np.isfinite(g)) for g in flat_g.values()):
                raise NumericalError(f"non-finite radius gradient at step {step}")
            opt.step(flat_p, flat_g)
            params.layers = [cell.clamp(p) for cell, p in zip(cells, params.layers)]
        kt_row, kd_row = [], []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateRadiusWarning)
            for l, cell in enumerate(cells):
                kt = kappa(float(rt[l].mean()), tt, config.kappa_clip)
                kd = kappa(float(rd[l].mean()), td, config.kappa_clip)
                kt_row.append(kt)
                kd_row.append(kd)
                new = apply_kappa(cell.spec, params.layers[l], kt, kd)
                if config.shuffle:
                    new = shuffle_tensors(new, rng, frozen=cell.frozen)
                params.layers[l] = new
        n_deg = sum(1 for w in caught if issubclass(w.category, DegenerateRadiusWarning))
        if n_deg:
            degenerate += n_deg
            warnings.warn(f"step {step}: {n_deg} degenerate layer radii", DegenerateRadiusWarning,
                          stacklevel=2)
        kappas.append((kt_row, kd_row))
    report = PretrainReport(len(history), converged, history[-1], history, kappas, degenerate, mode)
    return params, report


def pascal_step_bound(rho_start: float, rho_target: float, high: float = 1.15) -> int:
    """Steps within which kappa-only pre-training of a PascalRNN must converge."""
    return math.ceil(abs(math.log(rho_start / rho_target)) / math.log(high)) + 2
